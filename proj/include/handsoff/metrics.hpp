#pragma once

#include <string>
#include <vector>

#include "handsoff/postprocess.hpp"

namespace handsoff {

/// Axis-aligned box in corner form, pixel coordinates.
struct Box {
    float x_min = 0.0f;
    float y_min = 0.0f;
    float x_max = 0.0f;
    float y_max = 0.0f;
};

float iou(const Box& a, const Box& b);
float iou(const Detection& a, const Detection& b);
Box corner_box(const Detection& det);

/// Ground-truth annotation: center/size normalized to [0,1] of its image.
struct GroundTruthBox {
    std::string image_id;
    int class_id = 0;
    float cx = 0.0f;
    float cy = 0.0f;
    float w = 0.0f;
    float h = 0.0f;
};

/// Pixel-space ground truth, ready for matching against detections.
struct LabeledBox {
    std::string image_id;
    int class_id = 0;
    Box box;
};

Box to_pixel_box(const GroundTruthBox& gt, int image_width, int image_height);

struct MatchedDetection {
    Detection det;
    bool is_true_positive = false;
    float matched_iou = 0.0f;
};

/// Greedy confidence-ordered matching with single-use ground truth: walk
/// detections by descending confidence (ties by image id, then input order);
/// a detection is a true positive when its best-IoU unmatched ground-truth
/// box in the same image and class reaches iou_threshold, and that box is
/// then consumed. Output keeps the visiting order.
std::vector<MatchedDetection> match_detections(const std::vector<Detection>& dets,
                                               const std::vector<LabeledBox>& gts,
                                               float iou_threshold);

struct PrPoint {
    float threshold = 0.0f; // confidence cut-off this point corresponds to
    double precision = 0.0;
    double recall = 0.0;
};

enum class ApMode {
    all_point,   // area under the precision envelope over all recall steps
    eleven_point // mean of envelope precision at recalls 0.0, 0.1, ..., 1.0
};

struct ApResult {
    bool defined = false; // false only with zero ground truth and zero detections
    double value = 0.0;
    std::vector<PrPoint> points; // one per distinct confidence, descending
};

/// Average precision over one class. The matches may arrive in any order;
/// they are re-sorted by descending confidence internally.
ApResult average_precision(const std::vector<MatchedDetection>& matches, int total_gt,
                           ApMode mode = ApMode::all_point);

/// Arithmetic mean over the defined per-class values; throws when every
/// class is undefined.
double mean_average_precision(const std::vector<ApResult>& per_class);

struct EvalReport {
    std::vector<std::pair<int, ApResult>> per_class; // class id -> AP, ascending id
    double map_value = 0.0;
    int true_positives = 0;
    int false_positives = 0;
    int total_gt = 0;
    float iou_threshold = 0.5f;
    ApMode mode = ApMode::all_point;
};

/// Full evaluation: per-class matching and AP over the union of classes seen
/// in either input, plus aggregate counts.
EvalReport evaluate(const std::vector<Detection>& dets, const std::vector<LabeledBox>& gts,
                    float iou_threshold = 0.5f, ApMode mode = ApMode::all_point);

/// Human-readable report: per-class AP as percent with two decimals, counts,
/// thresholds, interpolation mode.
std::string format_eval_report(const EvalReport& report);

/// `threshold,precision,recall` header plus one six-decimal row per distinct
/// confidence threshold.
std::string pr_csv(const std::vector<PrPoint>& points);

} // namespace handsoff
