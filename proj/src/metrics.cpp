#include "handsoff/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include "handsoff/errors.hpp"

namespace handsoff {

float iou(const Box& a, const Box& b) {
    const float ix = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
    const float iy = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
    if (ix <= 0.0f || iy <= 0.0f) {
        return 0.0f;
    }
    const float inter = ix * iy;
    const float area_a = (a.x_max - a.x_min) * (a.y_max - a.y_min);
    const float area_b = (b.x_max - b.x_min) * (b.y_max - b.y_min);
    return inter / (area_a + area_b - inter);
}

Box corner_box(const Detection& det) {
    return Box{det.x_min(), det.y_min(), det.x_max(), det.y_max()};
}

float iou(const Detection& a, const Detection& b) { return iou(corner_box(a), corner_box(b)); }

Box to_pixel_box(const GroundTruthBox& gt, int image_width, int image_height) {
    const float w = static_cast<float>(image_width);
    const float h = static_cast<float>(image_height);
    return Box{(gt.cx - 0.5f * gt.w) * w, (gt.cy - 0.5f * gt.h) * h, (gt.cx + 0.5f * gt.w) * w,
               (gt.cy + 0.5f * gt.h) * h};
}

std::vector<MatchedDetection> match_detections(const std::vector<Detection>& dets,
                                               const std::vector<LabeledBox>& gts,
                                               float iou_threshold) {
    std::vector<int> order(dets.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (dets[a].confidence != dets[b].confidence) {
            return dets[a].confidence > dets[b].confidence;
        }
        return dets[a].image_id < dets[b].image_id;
    });

    // Ground truth grouped by image for the inner scan.
    std::unordered_map<std::string, std::vector<int>> gt_by_image;
    for (size_t i = 0; i < gts.size(); ++i) {
        gt_by_image[gts[i].image_id].push_back(static_cast<int>(i));
    }
    std::vector<char> gt_used(gts.size(), 0);

    std::vector<MatchedDetection> out;
    out.reserve(dets.size());
    for (int idx : order) {
        const Detection& det = dets[idx];
        MatchedDetection match;
        match.det = det;

        int best_gt = -1;
        float best_iou = 0.0f;
        auto it = gt_by_image.find(det.image_id);
        if (it != gt_by_image.end()) {
            const Box det_box = corner_box(det);
            for (int gi : it->second) {
                if (gt_used[gi] || gts[gi].class_id != det.class_id) {
                    continue;
                }
                const float overlap = iou(det_box, gts[gi].box);
                if (overlap > best_iou) {
                    best_iou = overlap;
                    best_gt = gi;
                }
            }
        }
        if (best_gt >= 0 && best_iou >= iou_threshold) {
            gt_used[best_gt] = 1;
            match.is_true_positive = true;
            match.matched_iou = best_iou;
        }
        out.push_back(std::move(match));
    }
    return out;
}

ApResult average_precision(const std::vector<MatchedDetection>& matches, int total_gt,
                           ApMode mode) {
    ApResult result;
    if (total_gt == 0 && matches.empty()) {
        return result; // nothing to measure against
    }
    result.defined = true;
    if (matches.empty()) {
        result.value = 0.0;
        return result;
    }

    std::vector<int> order(matches.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return matches[a].det.confidence > matches[b].det.confidence;
    });

    // One PR point per distinct confidence value, from the cumulative counts
    // after that value's whole tie group.
    int tp = 0;
    int fp = 0;
    for (size_t i = 0; i < order.size(); ++i) {
        const MatchedDetection& m = matches[order[i]];
        m.is_true_positive ? ++tp : ++fp;
        const bool group_end = i + 1 == order.size() ||
                               matches[order[i + 1]].det.confidence != m.det.confidence;
        if (group_end) {
            PrPoint point;
            point.threshold = m.det.confidence;
            point.precision = static_cast<double>(tp) / (tp + fp);
            point.recall = total_gt > 0 ? static_cast<double>(tp) / total_gt : 0.0;
            result.points.push_back(point);
        }
    }

    if (total_gt == 0) {
        result.value = 0.0; // detections but nothing to find: every one is false
        return result;
    }

    // Precision envelope: best precision at this recall or beyond.
    std::vector<double> envelope(result.points.size());
    double running = 0.0;
    for (size_t i = result.points.size(); i-- > 0;) {
        running = std::max(running, result.points[i].precision);
        envelope[i] = running;
    }

    if (mode == ApMode::all_point) {
        double ap = 0.0;
        double prev_recall = 0.0;
        for (size_t i = 0; i < result.points.size(); ++i) {
            ap += (result.points[i].recall - prev_recall) * envelope[i];
            prev_recall = result.points[i].recall;
        }
        result.value = ap;
    } else {
        double sum = 0.0;
        for (int step = 0; step <= 10; ++step) {
            const double target = step / 10.0;
            double best = 0.0;
            for (size_t i = 0; i < result.points.size(); ++i) {
                if (result.points[i].recall + 1e-9 >= target) {
                    best = envelope[i];
                    break; // envelope is non-increasing; first hit is the max
                }
            }
            sum += best;
        }
        result.value = sum / 11.0;
    }
    return result;
}

double mean_average_precision(const std::vector<ApResult>& per_class) {
    double sum = 0.0;
    int defined = 0;
    for (const ApResult& ap : per_class) {
        if (ap.defined) {
            sum += ap.value;
            ++defined;
        }
    }
    if (defined == 0) {
        throw DataError("mean average precision is undefined: no class has ground truth "
                        "or detections");
    }
    return sum / defined;
}

EvalReport evaluate(const std::vector<Detection>& dets, const std::vector<LabeledBox>& gts,
                    float iou_threshold, ApMode mode) {
    EvalReport report;
    report.iou_threshold = iou_threshold;
    report.mode = mode;
    report.total_gt = static_cast<int>(gts.size());

    std::set<int> class_ids;
    for (const Detection& det : dets) class_ids.insert(det.class_id);
    for (const LabeledBox& gt : gts) class_ids.insert(gt.class_id);

    std::vector<MatchedDetection> all_matches = match_detections(dets, gts, iou_threshold);
    for (const MatchedDetection& m : all_matches) {
        m.is_true_positive ? ++report.true_positives : ++report.false_positives;
    }

    std::vector<ApResult> aps;
    for (int class_id : class_ids) {
        std::vector<MatchedDetection> class_matches;
        for (const MatchedDetection& m : all_matches) {
            if (m.det.class_id == class_id) {
                class_matches.push_back(m);
            }
        }
        int class_gt = 0;
        for (const LabeledBox& gt : gts) {
            if (gt.class_id == class_id) {
                ++class_gt;
            }
        }
        ApResult ap = average_precision(class_matches, class_gt, mode);
        aps.push_back(ap);
        report.per_class.emplace_back(class_id, std::move(ap));
    }
    report.map_value = mean_average_precision(aps);
    return report;
}

std::string format_eval_report(const EvalReport& report) {
    std::ostringstream out;
    for (const auto& [class_id, ap] : report.per_class) {
        if (ap.defined) {
            out << detail::strformat("class %d AP: %.2f%%\n", class_id, ap.value * 100.0);
        } else {
            out << detail::strformat("class %d AP: undefined (no ground truth, no detections)\n",
                                     class_id);
        }
    }
    out << detail::strformat("mAP: %.2f%%\n", report.map_value * 100.0);
    out << detail::strformat("true positives: %d\nfalse positives: %d\nground truth boxes: %d\n",
                             report.true_positives, report.false_positives, report.total_gt);
    out << detail::strformat("iou threshold: %.2f\n", report.iou_threshold);
    out << detail::strformat("interpolation: %s\n",
                             report.mode == ApMode::all_point ? "all-point" : "11-point");
    return out.str();
}

std::string pr_csv(const std::vector<PrPoint>& points) {
    std::ostringstream out;
    out << "threshold,precision,recall\n";
    for (const PrPoint& p : points) {
        out << detail::strformat("%.6f,%.6f,%.6f\n", p.threshold, p.precision, p.recall);
    }
    return out.str();
}

} // namespace handsoff
