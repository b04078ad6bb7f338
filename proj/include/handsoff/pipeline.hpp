#pragma once

#include <memory>
#include <vector>

#include "handsoff/data_io.hpp"
#include "handsoff/engine.hpp"
#include "handsoff/postprocess.hpp"

namespace handsoff {

/// Everything produced for one frame: detections in source pixels (image_id
/// filled in) plus the preprocess record used to get there.
struct FrameResult {
    FrameRecord frame;
    PreprocessRecord record;
    std::vector<Detection> detections;
};

struct PipelineOptions {
    float conf_threshold = 0.25f;
    float nms_threshold = 0.45f;
    ResizeMode mode = ResizeMode::direct;
    int threads = 1;
};

/// Run every frame through read -> preprocess -> forward -> decode ->
/// suppress -> map. Workers each own an executor over the shared plan and
/// claim frames from a counter; results land in frame order regardless of
/// thread count, and each frame's arithmetic is identical at any count.
std::vector<FrameResult> run_pipeline(std::shared_ptr<const Plan> plan,
                                      const std::vector<FrameRecord>& frames,
                                      const PipelineOptions& options);

/// Single-frame version used by the pipeline workers and the stream command.
FrameResult process_frame(Executor& executor, const FrameRecord& frame,
                          const PipelineOptions& options);

} // namespace handsoff
