#include "handsoff/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "handsoff/errors.hpp"
#include "handsoff/postprocess.hpp"

namespace handsoff {

namespace {

float clampf(float v, float lo, float hi) { return v < lo ? lo : (v > hi ? hi : v); }

// Bilinear sample with half-pixel centers; source coordinates clamp to the
// image rectangle so border pixels extend outward.
void resize_bilinear_into(const RasterImage& src, int dst_w, int dst_h, int dst_x0, int dst_y0,
                          Tensor& out) {
    const float sx = static_cast<float>(src.width) / static_cast<float>(dst_w);
    const float sy = static_cast<float>(src.height) / static_cast<float>(dst_h);
    constexpr float kInv255 = 1.0f / 255.0f;
    for (int y = 0; y < dst_h; ++y) {
        float fy = clampf((y + 0.5f) * sy - 0.5f, 0.0f, static_cast<float>(src.height - 1));
        int y0 = static_cast<int>(fy);
        int y1 = std::min(y0 + 1, src.height - 1);
        float wy = fy - static_cast<float>(y0);
        for (int x = 0; x < dst_w; ++x) {
            float fx = clampf((x + 0.5f) * sx - 0.5f, 0.0f, static_cast<float>(src.width - 1));
            int x0 = static_cast<int>(fx);
            int x1 = std::min(x0 + 1, src.width - 1);
            float wx = fx - static_cast<float>(x0);
            const uint8_t* p00 = src.pixel(x0, y0);
            const uint8_t* p01 = src.pixel(x1, y0);
            const uint8_t* p10 = src.pixel(x0, y1);
            const uint8_t* p11 = src.pixel(x1, y1);
            for (int c = 0; c < 3; ++c) {
                float top = (1.0f - wx) * p00[c] + wx * p01[c];
                float bottom = (1.0f - wx) * p10[c] + wx * p11[c];
                out.at(c, dst_y0 + y, dst_x0 + x) = ((1.0f - wy) * top + wy * bottom) * kInv255;
            }
        }
    }
}

} // namespace

PreprocessResult preprocess(const RasterImage& image, int net_width, int net_height,
                            ResizeMode mode) {
    if (image.width <= 0 || image.height <= 0) {
        throw DataError("preprocess: empty image");
    }
    PreprocessResult result;
    PreprocessRecord& rec = result.record;
    rec.source_width = image.width;
    rec.source_height = image.height;
    rec.net_width = net_width;
    rec.net_height = net_height;
    rec.mode = mode;

    if (mode == ResizeMode::direct) {
        result.tensor = Tensor(3, net_height, net_width);
        resize_bilinear_into(image, net_width, net_height, 0, 0, result.tensor);
        rec.scale_x = static_cast<float>(net_width) / static_cast<float>(image.width);
        rec.scale_y = static_cast<float>(net_height) / static_cast<float>(image.height);
        return result;
    }

    const float fit = std::min(static_cast<float>(net_width) / static_cast<float>(image.width),
                               static_cast<float>(net_height) / static_cast<float>(image.height));
    int scaled_w = std::max(1, static_cast<int>(std::lround(image.width * fit)));
    int scaled_h = std::max(1, static_cast<int>(std::lround(image.height * fit)));
    scaled_w = std::min(scaled_w, net_width);
    scaled_h = std::min(scaled_h, net_height);
    const int pad_x = (net_width - scaled_w) / 2;
    const int pad_y = (net_height - scaled_h) / 2;

    result.tensor = Tensor(3, net_height, net_width);
    std::fill(result.tensor.data.begin(), result.tensor.data.end(), 0.5f);
    resize_bilinear_into(image, scaled_w, scaled_h, pad_x, pad_y, result.tensor);
    // Per-axis effective scales keep the inverse mapping exact after the
    // integer rounding above.
    rec.scale_x = static_cast<float>(scaled_w) / static_cast<float>(image.width);
    rec.scale_y = static_cast<float>(scaled_h) / static_cast<float>(image.height);
    rec.pad_x = static_cast<float>(pad_x);
    rec.pad_y = static_cast<float>(pad_y);
    return result;
}

namespace {

struct PlanNode {
    LayerKind kind = LayerKind::convolutional;
    // convolutional
    ConvParams conv;             // folded when the plan folds batch-norm
    std::optional<BatchNormParams> separate_bn; // set on the unfolded path
    bool leaky = false;
    float leaky_slope = 0.1f;
    // shortcut / route / upsample
    int from = -1;
    std::vector<int> route_layers;
    int factor = 1;
    // bookkeeping
    Shape out_shape;
    int uses = 0;      // times this output is read by later layers
    bool is_head = false;
};

} // namespace

class Plan {
public:
    NetworkSpec spec;
    std::vector<PlanNode> nodes;
    std::vector<int> head_layers;
    size_t max_col_floats = 0;

    friend std::shared_ptr<const Plan> handsoff::build_plan(const ParameterizedNetwork&, bool);
};

std::shared_ptr<const Plan> build_plan(const ParameterizedNetwork& net, bool fold_bn) {
    auto plan = std::make_shared<Plan>();
    plan->spec = net.spec;
    const std::vector<Shape> shapes = infer_shapes(net.spec);
    plan->nodes.resize(net.spec.layers.size());

    for (size_t i = 0; i < net.spec.layers.size(); ++i) {
        const LayerSpec& layer = net.spec.layers[i];
        PlanNode& node = plan->nodes[i];
        node.kind = layer.kind;
        node.out_shape = shapes[i];
        switch (layer.kind) {
            case LayerKind::convolutional: {
                if (!net.params[i]) {
                    throw InternalError(detail::strformat(
                        "layer %zu: convolutional layer has no loaded parameters", i));
                }
                const ConvParams& raw = *net.params[i];
                if (fold_bn) {
                    node.conv = fold_batchnorm(raw);
                } else {
                    node.conv = raw;
                    if (raw.batchnorm) {
                        node.separate_bn = raw.batchnorm;
                        node.conv.batchnorm.reset();
                    }
                }
                node.leaky = layer.activation == "leaky";
                node.leaky_slope = layer.leaky_slope;
                if (layer.size > 1 || layer.stride != 1 || layer.padding != 0) {
                    const size_t depth =
                        static_cast<size_t>(node.conv.in_channels) * layer.size * layer.size;
                    const size_t spatial =
                        static_cast<size_t>(shapes[i].height) * shapes[i].width;
                    plan->max_col_floats = std::max(plan->max_col_floats, depth * spatial);
                }
                break;
            }
            case LayerKind::shortcut:
                node.from = layer.from;
                break;
            case LayerKind::route:
                node.route_layers = layer.route_layers;
                break;
            case LayerKind::upsample:
                node.factor = layer.factor;
                break;
            case LayerKind::yolo_head:
                plan->head_layers.push_back(static_cast<int>(i));
                node.is_head = true;
                break;
        }
    }

    // Consumer counts drive eager tensor release during execution.
    for (size_t i = 0; i < net.spec.layers.size(); ++i) {
        const PlanNode& node = plan->nodes[i];
        auto consume = [&](int src) { ++plan->nodes[src].uses; };
        switch (node.kind) {
            case LayerKind::shortcut:
                if (i > 0) consume(static_cast<int>(i) - 1);
                consume(node.from);
                break;
            case LayerKind::route:
                for (int src : node.route_layers) consume(src);
                break;
            default:
                if (i > 0) consume(static_cast<int>(i) - 1);
                break;
        }
    }
    return plan;
}

int plan_input_width(const Plan& plan) { return plan.spec.input_width; }
int plan_input_height(const Plan& plan) { return plan.spec.input_height; }
int plan_input_channels(const Plan& plan) { return plan.spec.input_channels; }

Executor::Executor(std::shared_ptr<const Plan> plan) : plan_(std::move(plan)) {
    slots_.resize(plan_->nodes.size());
    remaining_uses_.resize(plan_->nodes.size(), 0);
    col_scratch_.reserve(plan_->max_col_floats);
}

Executor::~Executor() = default;
Executor::Executor(Executor&&) noexcept = default;
Executor& Executor::operator=(Executor&&) noexcept = default;

std::vector<HeadOutput> Executor::run(const Tensor& input) {
    const Plan& plan = *plan_;
    const NetworkSpec& spec = plan.spec;
    if (input.channels != spec.input_channels || input.height != spec.input_height ||
        input.width != spec.input_width) {
        throw ShapeError(detail::strformat(
            "input tensor %dx%dx%d does not match network input %dx%dx%d", input.channels,
            input.height, input.width, spec.input_channels, spec.input_height,
            spec.input_width));
    }

    const size_t n = plan.nodes.size();
    int live = 0;
    stats_.peak_live_tensors = 0;
    for (size_t i = 0; i < n; ++i) {
        remaining_uses_[i] = plan.nodes[i].uses;
        slots_[i] = Tensor();
    }

    auto release = [&](int idx) {
        if (--remaining_uses_[idx] == 0 && !plan.nodes[idx].is_head) {
            slots_[idx] = Tensor();
            --live;
        }
    };
    auto store = [&](size_t idx, Tensor t) {
        slots_[idx] = std::move(t);
        ++live;
        stats_.peak_live_tensors = std::max(stats_.peak_live_tensors, live);
    };

    for (size_t i = 0; i < n; ++i) {
        const PlanNode& node = plan.nodes[i];
        const Tensor& prev = i == 0 ? input : slots_[i - 1];
        switch (node.kind) {
            case LayerKind::convolutional: {
                if (prev.channels != node.conv.in_channels) {
                    throw ShapeError(
                        static_cast<int>(i),
                        detail::strformat(
                            "layer %zu: expected %d input channels, got %d "
                            "(configuration and weights disagree)",
                            i, node.conv.in_channels, prev.channels));
                }
                Tensor out;
                conv2d_into(prev, node.conv, col_scratch_, out);
                if (node.separate_bn) {
                    out = apply_batchnorm(out, *node.separate_bn);
                }
                if (node.leaky) {
                    leaky_relu_inplace(out, node.leaky_slope);
                }
                store(i, std::move(out));
                if (i > 0) release(static_cast<int>(i) - 1);
                break;
            }
            case LayerKind::shortcut: {
                store(i, add(prev, slots_[node.from]));
                if (i > 0) release(static_cast<int>(i) - 1);
                release(node.from);
                break;
            }
            case LayerKind::route: {
                std::vector<const Tensor*> parts;
                parts.reserve(node.route_layers.size());
                for (int src : node.route_layers) {
                    parts.push_back(&slots_[src]);
                }
                store(i, concat_channels(std::span<const Tensor* const>(parts)));
                for (int src : node.route_layers) {
                    release(src);
                }
                break;
            }
            case LayerKind::upsample: {
                store(i, upsample_nearest(prev, node.factor));
                if (i > 0) release(static_cast<int>(i) - 1);
                break;
            }
            case LayerKind::yolo_head: {
                store(i, prev); // passthrough copy; released below if unused
                if (i > 0) release(static_cast<int>(i) - 1);
                break;
            }
        }
    }

    std::vector<HeadOutput> heads;
    heads.reserve(plan.head_layers.size());
    for (int layer : plan.head_layers) {
        const LayerSpec& layer_spec = spec.layers[layer];
        HeadOutput head;
        head.grid_h = plan.nodes[layer].out_shape.height;
        head.grid_w = plan.nodes[layer].out_shape.width;
        head.stride_x = static_cast<float>(spec.input_width) / static_cast<float>(head.grid_w);
        head.stride_y = static_cast<float>(spec.input_height) / static_cast<float>(head.grid_h);
        head.classes = layer_spec.classes;
        for (int m : layer_spec.mask) {
            head.anchors.push_back(spec.anchors[m]);
        }
        head.data = std::move(slots_[layer]);
        slots_[layer] = Tensor();
        heads.push_back(std::move(head));
    }
    return heads;
}

namespace {

StageStats stats_of(std::vector<double> samples) {
    StageStats s;
    if (samples.empty()) {
        return s;
    }
    const double n = static_cast<double>(samples.size());
    s.mean_ms = std::accumulate(samples.begin(), samples.end(), 0.0) / n;
    double var = 0.0;
    for (double v : samples) {
        var += (v - s.mean_ms) * (v - s.mean_ms);
    }
    s.stddev_ms = std::sqrt(var / n);
    std::sort(samples.begin(), samples.end());
    const size_t mid = samples.size() / 2;
    s.median_ms = samples.size() % 2 ? samples[mid] : 0.5 * (samples[mid - 1] + samples[mid]);
    return s;
}

} // namespace

BenchReport benchmark(Executor& executor, std::span<const RasterImage> frames,
                      const BenchOptions& options) {
    if (frames.empty()) {
        throw DataError("benchmark needs at least one frame");
    }
    if (options.runs < 1) {
        throw DataError("benchmark needs at least one measured run");
    }
    const int net_w = plan_input_width(executor.plan());
    const int net_h = plan_input_height(executor.plan());

    using clock = std::chrono::steady_clock;
    auto ms_since = [](clock::time_point a, clock::time_point b) {
        return std::chrono::duration<double, std::milli>(b - a).count();
    };

    std::vector<double> pre_ms, fwd_ms, post_ms, tot_ms;
    const int total_passes = options.warmup + options.runs;
    for (int pass = 0; pass < total_passes; ++pass) {
        const RasterImage& frame = frames[pass % frames.size()];
        const auto t0 = clock::now();
        PreprocessResult pre = preprocess(frame, net_w, net_h, options.mode);
        const auto t1 = clock::now();
        std::vector<HeadOutput> heads = executor.run(pre.tensor);
        const auto t2 = clock::now();
        std::vector<Detection> dets;
        for (const HeadOutput& head : heads) {
            std::vector<Detection> decoded = decode(head, options.conf_threshold);
            dets.insert(dets.end(), decoded.begin(), decoded.end());
        }
        dets = nms(dets, options.nms_threshold);
        for (Detection& det : dets) {
            det = map_to_source(det, pre.record);
        }
        const auto t3 = clock::now();
        if (pass < options.warmup) {
            continue; // warmup passes leave no timestamps behind
        }
        pre_ms.push_back(ms_since(t0, t1));
        fwd_ms.push_back(ms_since(t1, t2));
        post_ms.push_back(ms_since(t2, t3));
        tot_ms.push_back(ms_since(t0, t3));
    }

    BenchReport report;
    report.runs = options.runs;
    report.warmup = options.warmup;
    report.preprocess = stats_of(pre_ms);
    report.forward = stats_of(fwd_ms);
    report.postprocess = stats_of(post_ms);
    report.total = stats_of(tot_ms);
    report.fps = report.total.mean_ms > 0.0 ? 1000.0 / report.total.mean_ms : 0.0;
    report.sample_total_ms = std::move(tot_ms);
    return report;
}

std::string format_bench_report(const BenchReport& report) {
    std::ostringstream out;
    out << detail::strformat("%-12s  %12s  %12s  %12s\n", "stage", "mean ms", "median ms",
                             "stddev ms");
    auto row = [&](const char* name, const StageStats& s) {
        out << detail::strformat("%-12s  %12.3f  %12.3f  %12.3f\n", name, s.mean_ms, s.median_ms,
                                 s.stddev_ms);
    };
    row("preprocess", report.preprocess);
    row("forward", report.forward);
    row("postprocess", report.postprocess);
    row("end-to-end", report.total);
    out << detail::strformat("runs: %d (warmup %d)\n", report.runs, report.warmup);
    out << detail::strformat("fps: %.3f\n", report.fps);
    return out.str();
}

std::string bench_report_json(const BenchReport& report) {
    std::ostringstream out;
    auto stage = [&](const char* name, const StageStats& s) {
        out << detail::strformat(
            "\"%s\":{\"mean_ms\":%.6f,\"median_ms\":%.6f,\"stddev_ms\":%.6f}", name, s.mean_ms,
            s.median_ms, s.stddev_ms);
    };
    out << "{\"runs\":" << report.runs << ",\"warmup\":" << report.warmup << ",\"stages\":{";
    stage("preprocess", report.preprocess);
    out << ",";
    stage("forward", report.forward);
    out << ",";
    stage("postprocess", report.postprocess);
    out << ",";
    stage("end_to_end", report.total);
    out << "},\"fps\":" << detail::strformat("%.6f", report.fps) << ",\"sample_total_ms\":[";
    for (size_t i = 0; i < report.sample_total_ms.size(); ++i) {
        out << (i ? "," : "") << detail::strformat("%.6f", report.sample_total_ms[i]);
    }
    out << "]}";
    return out.str();
}

} // namespace handsoff
