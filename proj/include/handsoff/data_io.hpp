#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "handsoff/image.hpp"
#include "handsoff/metrics.hpp"
#include "handsoff/postprocess.hpp"

namespace handsoff {

/// One input frame on disk, identified by its file stem.
struct FrameRecord {
    std::string image_id;
    std::string path;
    int width = 0;
    int height = 0;
    int frame_index = 0; // position in the sorted sequence
};

/// Enumerate the image files directly inside a directory, sorted by image id,
/// reading only each file's header for dimensions. Duplicate stems (same
/// frame in two formats) are an error.
std::vector<FrameRecord> list_frames(const std::string& directory);

/// Load every `<image_id>.txt` annotation file in a directory. Lines are
/// `class cx cy w h`, normalized to [0,1]. Values slightly outside the unit
/// interval are clamped (with a warning past 1e-3 overshoot); past 0.05 the
/// line is rejected. A frame with no annotation file simply has no entry.
std::map<std::string, std::vector<GroundTruthBox>> load_ground_truth(
    const std::string& directory, std::vector<std::string>* warnings = nullptr);

/// One detection as a single JSON line with fixed key order; coordinates get
/// four decimal places, scores six.
std::string detection_line(const Detection& det);

/// Write one JSON line per detection, input order preserved.
void write_detections(const std::vector<Detection>& dets, std::ostream& sink);

/// Inverse of write_detections; malformed lines report their line number.
std::vector<Detection> read_detections(std::istream& source);
std::vector<Detection> read_detections_file(const std::string& path);

/// Draw detections (green, with a confidence caption) and optional ground
/// truth (red) as two-pixel rectangles. Pixels away from the drawn borders
/// and captions are untouched.
RasterImage render_overlay(const RasterImage& image, const std::vector<Detection>& dets,
                           const std::vector<LabeledBox>* gts = nullptr);

} // namespace handsoff
