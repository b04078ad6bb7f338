#pragma once

#include <string>
#include <vector>

#include "handsoff/engine.hpp"

namespace handsoff {

/// One detected box. Coordinates are center/size; they start in network
/// pixels after decode() and become source-image pixels after map_to_source().
struct Detection {
    std::string image_id;
    int class_id = 0;
    float cx = 0.0f;
    float cy = 0.0f;
    float w = 0.0f;
    float h = 0.0f;
    float objectness = 0.0f;
    float class_score = 0.0f;
    float confidence = 0.0f; // objectness * class_score

    float x_min() const { return cx - 0.5f * w; }
    float y_min() const { return cy - 0.5f * h; }
    float x_max() const { return cx + 0.5f * w; }
    float y_max() const { return cy + 0.5f * h; }
};

float sigmoid(float x);

/// Turn one head tensor into candidate boxes in network pixels, keeping only
/// candidates with confidence >= conf_threshold. Cells are visited row-major
/// with the anchor slot innermost, so output order is reproducible.
std::vector<Detection> decode(const HeadOutput& head, float conf_threshold);

/// Greedy non-maximum suppression: repeatedly keep the highest-confidence
/// remaining detection and discard every remaining one overlapping it with
/// IoU > iou_threshold. Confidence ties are broken by earlier input index.
/// Output is sorted by descending confidence. Suppression is per class.
std::vector<Detection> nms(const std::vector<Detection>& dets, float iou_threshold);

/// Map a detection from network pixels back to source-image pixels, undoing
/// the resize (and letterbox padding), then clamp to the image rectangle.
Detection map_to_source(const Detection& det, const PreprocessRecord& record);

} // namespace handsoff
