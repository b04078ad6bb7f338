#include "handsoff/pipeline.hpp"

#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

#include "handsoff/errors.hpp"

namespace handsoff {

FrameResult process_frame(Executor& executor, const FrameRecord& frame,
                          const PipelineOptions& options) {
    FrameResult result;
    result.frame = frame;

    const RasterImage image = read_image(frame.path);
    PreprocessResult pre = preprocess(image, plan_input_width(executor.plan()),
                                      plan_input_height(executor.plan()), options.mode);
    result.record = pre.record;

    std::vector<HeadOutput> heads = executor.run(pre.tensor);
    std::vector<Detection> dets;
    for (const HeadOutput& head : heads) {
        std::vector<Detection> decoded = decode(head, options.conf_threshold);
        dets.insert(dets.end(), decoded.begin(), decoded.end());
    }
    dets = nms(dets, options.nms_threshold);
    for (Detection& det : dets) {
        det = map_to_source(det, pre.record);
        det.image_id = frame.image_id;
    }
    result.detections = std::move(dets);
    return result;
}

std::vector<FrameResult> run_pipeline(std::shared_ptr<const Plan> plan,
                                      const std::vector<FrameRecord>& frames,
                                      const PipelineOptions& options) {
    const int threads = std::max(1, options.threads);
    std::vector<FrameResult> results(frames.size());
    if (frames.empty()) {
        return results;
    }

    if (threads == 1 || frames.size() == 1) {
        Executor executor(plan);
        for (size_t i = 0; i < frames.size(); ++i) {
            results[i] = process_frame(executor, frames[i], options);
        }
        return results;
    }

    std::atomic<size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto worker = [&]() {
        try {
            Executor executor(plan);
            for (size_t i = next.fetch_add(1); i < frames.size(); i = next.fetch_add(1)) {
                results[i] = process_frame(executor, frames[i], options);
            }
        } catch (...) {
            std::lock_guard<std::mutex> lock(error_mutex);
            if (!first_error) {
                first_error = std::current_exception();
            }
            next.store(frames.size()); // stop the other workers claiming more
        }
    };

    std::vector<std::thread> pool;
    const int spawn = std::min<int>(threads, static_cast<int>(frames.size()));
    pool.reserve(spawn);
    for (int t = 0; t < spawn; ++t) {
        pool.emplace_back(worker);
    }
    for (std::thread& t : pool) {
        t.join();
    }
    if (first_error) {
        std::rethrow_exception(first_error);
    }
    return results;
}

} // namespace handsoff
