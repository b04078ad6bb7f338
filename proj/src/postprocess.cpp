#include "handsoff/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "handsoff/errors.hpp"
#include "handsoff/metrics.hpp"

namespace handsoff {

float sigmoid(float x) {
    // Branch on sign so the exponential never overflows.
    if (x >= 0.0f) {
        return 1.0f / (1.0f + std::exp(-x));
    }
    const float e = std::exp(x);
    return e / (1.0f + e);
}

std::vector<Detection> decode(const HeadOutput& head, float conf_threshold) {
    const int anchor_count = static_cast<int>(head.anchors.size());
    const int per_anchor = 5 + head.classes;
    const int expected_depth = anchor_count * per_anchor;
    if (head.data.channels != expected_depth) {
        throw ShapeError(detail::strformat(
            "head tensor depth %d does not match %d anchors x (5 + %d classes) = %d",
            head.data.channels, anchor_count, head.classes, expected_depth));
    }
    if (head.data.height != head.grid_h || head.data.width != head.grid_w) {
        throw ShapeError(detail::strformat("head tensor is %dx%d but grid is %dx%d",
                                           head.data.width, head.data.height, head.grid_w,
                                           head.grid_h));
    }

    // Large raw sizes come only from corrupt weights; cap the exponent so the
    // box stays finite instead of poisoning downstream arithmetic.
    constexpr float kMaxSizeExponent = 10.0f;

    std::vector<Detection> out;
    for (int row = 0; row < head.grid_h; ++row) {
        for (int col = 0; col < head.grid_w; ++col) {
            for (int a = 0; a < anchor_count; ++a) {
                const int base = a * per_anchor;
                const float tx = head.data.at(base + 0, row, col);
                const float ty = head.data.at(base + 1, row, col);
                const float tw = head.data.at(base + 2, row, col);
                const float th = head.data.at(base + 3, row, col);
                const float to = head.data.at(base + 4, row, col);

                Detection det;
                det.cx = (sigmoid(tx) + static_cast<float>(col)) * head.stride_x;
                det.cy = (sigmoid(ty) + static_cast<float>(row)) * head.stride_y;
                det.w = head.anchors[a].first * std::exp(std::min(tw, kMaxSizeExponent));
                det.h = head.anchors[a].second * std::exp(std::min(th, kMaxSizeExponent));
                det.objectness = sigmoid(to);
                det.class_id = 0;
                det.class_score = sigmoid(head.data.at(base + 5, row, col));
                for (int c = 1; c < head.classes; ++c) {
                    const float score = sigmoid(head.data.at(base + 5 + c, row, col));
                    if (score > det.class_score) {
                        det.class_score = score;
                        det.class_id = c;
                    }
                }
                det.confidence = det.objectness * det.class_score;
                if (det.confidence >= conf_threshold) {
                    out.push_back(det);
                }
            }
        }
    }
    return out;
}

std::vector<Detection> nms(const std::vector<Detection>& dets, float iou_threshold) {
    std::vector<int> order(dets.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return dets[a].confidence > dets[b].confidence;
    });

    std::vector<char> suppressed(dets.size(), 0);
    std::vector<Detection> kept;
    for (size_t i = 0; i < order.size(); ++i) {
        const int idx = order[i];
        if (suppressed[idx]) {
            continue;
        }
        kept.push_back(dets[idx]);
        for (size_t j = i + 1; j < order.size(); ++j) {
            const int other = order[j];
            if (suppressed[other] || dets[other].class_id != dets[idx].class_id) {
                continue;
            }
            if (iou(dets[idx], dets[other]) > iou_threshold) {
                suppressed[other] = 1;
            }
        }
    }
    return kept;
}

Detection map_to_source(const Detection& det, const PreprocessRecord& record) {
    Detection out = det;
    const float cx = (det.cx - record.pad_x) / record.scale_x;
    const float cy = (det.cy - record.pad_y) / record.scale_y;
    const float w = det.w / record.scale_x;
    const float h = det.h / record.scale_y;

    const float src_w = static_cast<float>(record.source_width);
    const float src_h = static_cast<float>(record.source_height);
    const float x0 = std::clamp(cx - 0.5f * w, 0.0f, src_w);
    const float x1 = std::clamp(cx + 0.5f * w, 0.0f, src_w);
    const float y0 = std::clamp(cy - 0.5f * h, 0.0f, src_h);
    const float y1 = std::clamp(cy + 0.5f * h, 0.0f, src_h);

    out.cx = 0.5f * (x0 + x1);
    out.cy = 0.5f * (y0 + y1);
    // A box entirely off the frame collapses to a thin sliver on the border
    // instead of a zero-size box.
    out.w = std::max(x1 - x0, 1e-3f);
    out.h = std::max(y1 - y0, 1e-3f);
    return out;
}

} // namespace handsoff
