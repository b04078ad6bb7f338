#include "handsoff/events.hpp"

#include "handsoff/data_io.hpp"
#include "handsoff/errors.hpp"

namespace handsoff {

EventAggregator::EventAggregator(int open_after, int close_after)
    : open_after_(open_after), close_after_(close_after) {
    if (open_after < 1 || close_after < 1) {
        throw DataError("event debounce counts must be at least 1");
    }
}

std::optional<InteractionEvent> EventAggregator::push(int frame_index,
                                                      const std::vector<Detection>& dets) {
    if (frame_index <= last_frame_) {
        throw DataError(detail::strformat(
            "frame index %d arrived after %d; the stream must be strictly ordered", frame_index,
            last_frame_));
    }
    last_frame_ = frame_index;

    const bool positive = !dets.empty();
    if (positive) {
        if (run_length_ == 0) {
            run_start_ = frame_index;
            if (!open_) {
                current_ = InteractionEvent{};
            }
        }
        ++run_length_;
        gap_length_ = 0;
        for (const Detection& det : dets) {
            if (det.confidence > current_.peak_confidence) {
                current_.peak_confidence = det.confidence;
                current_.representative_box = det;
            }
        }
        if (open_) {
            current_.end_frame = frame_index;
        } else if (run_length_ >= open_after_) {
            open_ = true;
            current_.start_frame = run_start_;
            current_.end_frame = frame_index;
        }
        return std::nullopt;
    }

    run_length_ = 0;
    if (!open_) {
        current_ = InteractionEvent{}; // a blip shorter than open_after_ is dropped
        return std::nullopt;
    }
    if (++gap_length_ < close_after_) {
        return std::nullopt;
    }
    open_ = false;
    gap_length_ = 0;
    InteractionEvent done = current_;
    done.frame_count = done.end_frame - done.start_frame + 1;
    current_ = InteractionEvent{};
    return done;
}

std::optional<InteractionEvent> EventAggregator::finish() {
    if (!open_) {
        return std::nullopt;
    }
    open_ = false;
    InteractionEvent done = current_;
    done.frame_count = done.end_frame - done.start_frame + 1;
    current_ = InteractionEvent{};
    run_length_ = 0;
    gap_length_ = 0;
    return done;
}

std::string event_line(const InteractionEvent& event) {
    return detail::strformat(
        "{\"start_frame\":%d,\"end_frame\":%d,\"frame_count\":%d,\"peak_confidence\":%.6f,"
        "\"representative_box\":%s}",
        event.start_frame, event.end_frame, event.frame_count, event.peak_confidence,
        detection_line(event.representative_box).c_str());
}

} // namespace handsoff
