#pragma once

#include <optional>
#include <string>
#include <vector>

#include "handsoff/postprocess.hpp"

namespace handsoff {

/// A debounced stretch of frames containing at least one detection.
struct InteractionEvent {
    int start_frame = 0; // first frame of the opening positive run
    int end_frame = 0;   // last frame with a detection
    int frame_count = 0; // end_frame - start_frame + 1
    float peak_confidence = 0.0f;
    Detection representative_box; // the detection holding peak_confidence
};

/// Turns a per-frame detection stream into events: an event opens once
/// open_after consecutive frames each carry a detection and closes after
/// close_after consecutive empty frames (or at end of stream). Short blips
/// below open_after never become events.
class EventAggregator {
public:
    EventAggregator(int open_after, int close_after);

    /// Feed the post-suppression detections of the next frame. Frame indices
    /// must be strictly increasing. Returns an event when this frame closes
    /// one.
    std::optional<InteractionEvent> push(int frame_index, const std::vector<Detection>& dets);

    /// Signal end of stream; returns the still-open event, if any.
    std::optional<InteractionEvent> finish();

private:
    int open_after_;
    int close_after_;
    int last_frame_ = -1;
    int run_start_ = -1;   // first frame of the current positive run
    int run_length_ = 0;   // consecutive positive frames so far
    int gap_length_ = 0;   // consecutive empty frames inside an open event
    bool open_ = false;
    InteractionEvent current_;
};

/// One event as a single JSON line, nesting the representative box with the
/// detection serialization format.
std::string event_line(const InteractionEvent& event);

} // namespace handsoff
