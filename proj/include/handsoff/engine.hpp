#pragma once

#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "handsoff/darknet.hpp"
#include "handsoff/image.hpp"
#include "handsoff/tensor.hpp"

namespace handsoff {

enum class ResizeMode { direct, letterbox };

/// How an input frame was fitted to the network, kept for mapping detections
/// back to source pixels: x_src = (x_net - pad_x) / scale_x.
struct PreprocessRecord {
    int source_width = 0;
    int source_height = 0;
    int net_width = 0;
    int net_height = 0;
    ResizeMode mode = ResizeMode::direct;
    float scale_x = 1.0f;
    float scale_y = 1.0f;
    float pad_x = 0.0f;
    float pad_y = 0.0f;
};

struct PreprocessResult {
    Tensor tensor;
    PreprocessRecord record;
};

/// Scale the frame to the network size and [0,1] range, channels first.
/// Direct mode resizes each axis independently; letterbox preserves aspect
/// and pads with mid-gray.
PreprocessResult preprocess(const RasterImage& image, int net_width, int net_height,
                            ResizeMode mode = ResizeMode::direct);

/// One detection stage output: the raw grid tensor plus everything needed to
/// decode it (anchor subset in network pixels, cell stride).
struct HeadOutput {
    Tensor data;
    int grid_h = 0;
    int grid_w = 0;
    float stride_x = 0.0f;
    float stride_y = 0.0f;
    std::vector<std::pair<float, float>> anchors;
    int classes = 1;
};

class Plan;

/// Compile the loaded network into an executable plan. Normalization is
/// folded into convolution weights by default; the unfolded path applies
/// batch-norm as a separate step and exists for cross-checking.
std::shared_ptr<const Plan> build_plan(const ParameterizedNetwork& net, bool fold_bn = true);

int plan_input_width(const Plan& plan);
int plan_input_height(const Plan& plan);
int plan_input_channels(const Plan& plan);

struct RunStats {
    /// High-water mark of layer outputs resident at once during the run.
    int peak_live_tensors = 0;
};

/// Executes the forward pass. One run at a time per instance; create one
/// executor per worker thread over the same shared plan.
class Executor {
public:
    explicit Executor(std::shared_ptr<const Plan> plan);
    ~Executor();
    Executor(Executor&&) noexcept;
    Executor& operator=(Executor&&) noexcept;
    Executor(const Executor&) = delete;
    Executor& operator=(const Executor&) = delete;

    /// Run all layers, returning the head tensors in network order.
    std::vector<HeadOutput> run(const Tensor& input);

    const Plan& plan() const { return *plan_; }
    const RunStats& last_run_stats() const { return stats_; }

private:
    std::shared_ptr<const Plan> plan_;
    std::vector<Tensor> slots_;
    std::vector<int> remaining_uses_;
    std::vector<float> col_scratch_;
    RunStats stats_;
};

struct StageStats {
    double mean_ms = 0.0;
    double median_ms = 0.0;
    double stddev_ms = 0.0;
};

struct BenchReport {
    int runs = 0;
    int warmup = 0;
    StageStats preprocess;
    StageStats forward;
    StageStats postprocess;
    StageStats total;
    double fps = 0.0;
    std::vector<double> sample_total_ms; // measured runs only, in order
};

struct BenchOptions {
    int runs = 50;
    int warmup = 5;
    float conf_threshold = 0.25f;
    float nms_threshold = 0.45f;
    ResizeMode mode = ResizeMode::direct;
};

/// Time preprocess/forward/postprocess over `runs` measured passes after
/// `warmup` unrecorded ones, cycling through the given frames.
BenchReport benchmark(Executor& executor, std::span<const RasterImage> frames,
                      const BenchOptions& options);

std::string format_bench_report(const BenchReport& report);
std::string bench_report_json(const BenchReport& report);

} // namespace handsoff
