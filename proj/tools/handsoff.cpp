// Command-line front end: detect, eval, bench, inspect, stream.
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "handsoff/data_io.hpp"
#include "handsoff/darknet.hpp"
#include "handsoff/engine.hpp"
#include "handsoff/errors.hpp"
#include "handsoff/events.hpp"
#include "handsoff/metrics.hpp"
#include "handsoff/pipeline.hpp"
#include "handsoff/postprocess.hpp"

namespace fs = std::filesystem;
using namespace handsoff;

namespace {

std::shared_ptr<const Plan> load_plan(const std::string& cfg_path,
                                      const std::string& weights_path) {
    std::vector<std::string> warnings;
    NetworkSpec spec = parse_config_file(cfg_path, &warnings);
    for (const std::string& w : warnings) {
        std::cerr << "warning: " << w << "\n";
    }
    ParameterizedNetwork net = load_weights_file(spec, weights_path);
    return build_plan(net);
}

// Writes either to a file or, for "-", to stdout.
class OutputSink {
public:
    explicit OutputSink(const std::string& path) {
        if (path != "-") {
            file_.open(path);
            if (!file_) {
                throw DataError(detail::strformat("cannot open %s for writing", path.c_str()));
            }
        }
    }
    std::ostream& stream() { return file_.is_open() ? file_ : std::cout; }

private:
    std::ofstream file_;
};

struct DetectArgs {
    std::string cfg;
    std::string weights;
    std::string input;
    std::string output = "-";
    std::string render_dir;
    std::string render_suffix = "_overlay";
    float conf_threshold = 0.25f;
    float nms_threshold = 0.45f;
    bool letterbox = false;
    int threads = 1;
};

void run_detect(const DetectArgs& args) {
    std::vector<FrameRecord> frames = list_frames(args.input);
    if (frames.empty()) {
        std::cerr << "warning: no frames found in " << args.input << "\n";
    }
    PipelineOptions options;
    options.conf_threshold = args.conf_threshold;
    options.nms_threshold = args.nms_threshold;
    options.mode = args.letterbox ? ResizeMode::letterbox : ResizeMode::direct;
    options.threads = args.threads;

    std::vector<FrameResult> results =
        run_pipeline(load_plan(args.cfg, args.weights), frames, options);

    OutputSink sink(args.output);
    for (const FrameResult& result : results) {
        write_detections(result.detections, sink.stream());
    }

    if (!args.render_dir.empty()) {
        fs::create_directories(args.render_dir);
        for (const FrameResult& result : results) {
            const RasterImage image = read_image(result.frame.path);
            const RasterImage overlay = render_overlay(image, result.detections);
            const fs::path src(result.frame.path);
            const fs::path out = fs::path(args.render_dir) /
                                 (src.stem().string() + args.render_suffix +
                                  src.extension().string());
            write_image(out.string(), overlay);
        }
    }
}

struct EvalArgs {
    std::string gt_dir;
    std::string detections_path;
    std::string input;
    std::string pr_csv_path;
    float iou_threshold = 0.5f;
    bool eleven_point = false;
};

void run_eval(const EvalArgs& args) {
    std::vector<std::string> warnings;
    const auto gt_map = load_ground_truth(args.gt_dir, &warnings);
    for (const std::string& w : warnings) {
        std::cerr << "warning: " << w << "\n";
    }
    const std::vector<Detection> dets = read_detections_file(args.detections_path);

    if (!gt_map.empty() && !dets.empty()) {
        bool overlap = false;
        for (const Detection& det : dets) {
            if (gt_map.count(det.image_id)) {
                overlap = true;
                break;
            }
        }
        if (!overlap) {
            throw DataError("ground truth and detections share no image ids; "
                            "check that both point at the same dataset");
        }
    }

    // Annotations are normalized; frame headers supply the pixel dimensions.
    std::vector<FrameRecord> frames = list_frames(args.input);
    std::map<std::string, const FrameRecord*> frame_by_id;
    for (const FrameRecord& frame : frames) {
        frame_by_id[frame.image_id] = &frame;
    }
    std::vector<LabeledBox> gts;
    for (const auto& [image_id, boxes] : gt_map) {
        if (boxes.empty()) {
            continue;
        }
        auto it = frame_by_id.find(image_id);
        if (it == frame_by_id.end()) {
            throw DataError(detail::strformat(
                "ground truth for '%s' has no matching frame in %s", image_id.c_str(),
                args.input.c_str()));
        }
        for (const GroundTruthBox& box : boxes) {
            gts.push_back(LabeledBox{image_id, box.class_id,
                                     to_pixel_box(box, it->second->width, it->second->height)});
        }
    }

    const ApMode mode = args.eleven_point ? ApMode::eleven_point : ApMode::all_point;
    const EvalReport report = evaluate(dets, gts, args.iou_threshold, mode);
    std::cout << format_eval_report(report);

    if (!args.pr_csv_path.empty()) {
        if (report.per_class.size() != 1) {
            throw DataError("PR CSV export expects exactly one class");
        }
        std::ofstream csv(args.pr_csv_path);
        if (!csv) {
            throw DataError(detail::strformat("cannot open %s for writing",
                                              args.pr_csv_path.c_str()));
        }
        csv << pr_csv(report.per_class.front().second.points);
    }
}

struct BenchArgs {
    std::string cfg;
    std::string weights;
    std::string input;
    std::string json_path;
    int runs = 50;
    int warmup = 5;
    float conf_threshold = 0.25f;
    float nms_threshold = 0.45f;
    bool letterbox = false;
};

void run_bench(const BenchArgs& args) {
    std::vector<FrameRecord> frames = list_frames(args.input);
    std::vector<RasterImage> images;
    images.reserve(frames.size());
    for (const FrameRecord& frame : frames) {
        images.push_back(read_image(frame.path));
    }

    Executor executor(load_plan(args.cfg, args.weights));
    BenchOptions options;
    options.runs = args.runs;
    options.warmup = args.warmup;
    options.conf_threshold = args.conf_threshold;
    options.nms_threshold = args.nms_threshold;
    options.mode = args.letterbox ? ResizeMode::letterbox : ResizeMode::direct;

    const BenchReport report = benchmark(executor, images, options);
    std::cout << format_bench_report(report);
    const std::string json = bench_report_json(report);
    if (args.json_path.empty()) {
        std::cout << json << "\n";
    } else {
        std::ofstream out(args.json_path);
        if (!out) {
            throw DataError(detail::strformat("cannot open %s for writing",
                                              args.json_path.c_str()));
        }
        out << json << "\n";
    }
}

struct InspectArgs {
    std::string cfg;
    std::string weights;
};

void run_inspect(const InspectArgs& args) {
    std::vector<std::string> warnings;
    NetworkSpec spec = parse_config_file(args.cfg, &warnings);
    for (const std::string& w : warnings) {
        std::cerr << "warning: " << w << "\n";
    }
    if (args.weights.empty()) {
        std::cout << inspect(spec);
    } else {
        std::cout << inspect(load_weights_file(spec, args.weights));
    }
}

struct StreamArgs {
    std::string cfg;
    std::string weights;
    std::string input;
    std::string output = "-";
    int debounce_open = 3;
    int debounce_close = 5;
    float conf_threshold = 0.25f;
    float nms_threshold = 0.45f;
    bool letterbox = false;
    int threads = 1;
};

std::vector<FrameRecord> frames_from_stdin() {
    std::vector<FrameRecord> frames;
    std::set<std::string> seen;
    std::string line;
    while (std::getline(std::cin, line)) {
        if (line.empty()) {
            continue;
        }
        FrameRecord frame;
        frame.path = line;
        frame.image_id = fs::path(line).stem().string();
        if (!seen.insert(frame.image_id).second) {
            throw DataError(detail::strformat("duplicate frame id '%s' in stdin list",
                                              frame.image_id.c_str()));
        }
        auto [w, h] = read_image_dims(frame.path);
        frame.width = w;
        frame.height = h;
        frame.frame_index = static_cast<int>(frames.size());
        frames.push_back(std::move(frame));
    }
    return frames;
}

void run_stream(const StreamArgs& args) {
    std::vector<FrameRecord> frames =
        args.input.empty() ? frames_from_stdin() : list_frames(args.input);
    PipelineOptions options;
    options.conf_threshold = args.conf_threshold;
    options.nms_threshold = args.nms_threshold;
    options.mode = args.letterbox ? ResizeMode::letterbox : ResizeMode::direct;
    options.threads = args.threads;

    std::vector<FrameResult> results =
        run_pipeline(load_plan(args.cfg, args.weights), frames, options);

    OutputSink sink(args.output);
    EventAggregator aggregator(args.debounce_open, args.debounce_close);
    for (const FrameResult& result : results) {
        if (auto event = aggregator.push(result.frame.frame_index, result.detections)) {
            sink.stream() << event_line(*event) << '\n';
        }
    }
    if (auto event = aggregator.finish()) {
        sink.stream() << event_line(*event) << '\n';
    }
}

void add_threshold_options(CLI::App* cmd, float& conf, float& nms_value, bool& letterbox) {
    cmd->add_option("--conf-thresh", conf, "Confidence threshold")
        ->envname("HANDSOFF_CONF_THRESH")
        ->check(CLI::Range(0.0f, 1.0f))
        ->capture_default_str();
    cmd->add_option("--nms-thresh", nms_value, "Suppression overlap threshold")
        ->envname("HANDSOFF_NMS_THRESH")
        ->check(CLI::Range(0.0f, 1.0f))
        ->capture_default_str();
    cmd->add_flag("--letterbox", letterbox,
                  "Preserve aspect ratio and pad instead of stretching")
        ->envname("HANDSOFF_LETTERBOX");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Handshake detection toolkit"};
    app.require_subcommand(1);

    auto detect_args = std::make_shared<DetectArgs>();
    CLI::App* detect = app.add_subcommand("detect", "Run detection over a directory of frames");
    detect->add_option("--cfg", detect_args->cfg, "Network configuration file")
        ->envname("HANDSOFF_CFG")
        ->required();
    detect->add_option("--weights", detect_args->weights, "Binary weights file")
        ->envname("HANDSOFF_WEIGHTS")
        ->required();
    detect->add_option("--input", detect_args->input, "Directory of input frames")
        ->envname("HANDSOFF_INPUT")
        ->required();
    detect->add_option("--output", detect_args->output, "Detections output file, - for stdout")
        ->envname("HANDSOFF_OUTPUT")
        ->capture_default_str();
    detect->add_option("--render", detect_args->render_dir, "Write overlay images here")
        ->envname("HANDSOFF_RENDER");
    detect
        ->add_option("--render-suffix", detect_args->render_suffix,
                     "Suffix appended to overlay stems")
        ->envname("HANDSOFF_RENDER_SUFFIX")
        ->capture_default_str();
    detect->add_option("--threads", detect_args->threads, "Worker threads")
        ->envname("HANDSOFF_THREADS")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    add_threshold_options(detect, detect_args->conf_threshold, detect_args->nms_threshold,
                          detect_args->letterbox);
    detect->callback([detect_args]() { run_detect(*detect_args); });

    auto eval_args = std::make_shared<EvalArgs>();
    CLI::App* eval = app.add_subcommand("eval", "Score detections against ground truth");
    eval->add_option("--gt", eval_args->gt_dir, "Ground-truth annotation directory")
        ->envname("HANDSOFF_GT")
        ->required();
    eval->add_option("--detections", eval_args->detections_path, "Detections file to score")
        ->envname("HANDSOFF_DETECTIONS")
        ->required();
    eval->add_option("--input", eval_args->input,
                     "Directory of the frames the annotations describe")
        ->envname("HANDSOFF_INPUT")
        ->required();
    eval->add_option("--iou", eval_args->iou_threshold, "Matching overlap threshold")
        ->envname("HANDSOFF_IOU")
        ->check(CLI::Range(0.0f, 1.0f))
        ->capture_default_str();
    eval->add_flag("--eleven-point", eval_args->eleven_point,
                   "Use 11-point interpolation instead of all-point")
        ->envname("HANDSOFF_ELEVEN_POINT");
    eval->add_option("--pr-csv", eval_args->pr_csv_path, "Write precision/recall points here")
        ->envname("HANDSOFF_PR_CSV");
    eval->callback([eval_args]() { run_eval(*eval_args); });

    auto bench_args = std::make_shared<BenchArgs>();
    CLI::App* bench = app.add_subcommand("bench", "Measure per-stage latency");
    bench->add_option("--cfg", bench_args->cfg, "Network configuration file")
        ->envname("HANDSOFF_CFG")
        ->required();
    bench->add_option("--weights", bench_args->weights, "Binary weights file")
        ->envname("HANDSOFF_WEIGHTS")
        ->required();
    bench->add_option("--input", bench_args->input, "Directory of frames to cycle through")
        ->envname("HANDSOFF_INPUT")
        ->required();
    bench->add_option("--runs", bench_args->runs, "Measured runs")
        ->envname("HANDSOFF_RUNS")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    bench->add_option("--warmup", bench_args->warmup, "Unmeasured warmup runs")
        ->envname("HANDSOFF_WARMUP")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    bench->add_option("--json", bench_args->json_path,
                      "Write the JSON report here instead of stdout")
        ->envname("HANDSOFF_JSON");
    add_threshold_options(bench, bench_args->conf_threshold, bench_args->nms_threshold,
                          bench_args->letterbox);
    bench->callback([bench_args]() { run_bench(*bench_args); });

    auto inspect_args = std::make_shared<InspectArgs>();
    CLI::App* inspect_cmd = app.add_subcommand("inspect", "Print the layer table");
    inspect_cmd->add_option("--cfg", inspect_args->cfg, "Network configuration file")
        ->envname("HANDSOFF_CFG")
        ->required();
    inspect_cmd
        ->add_option("--weights", inspect_args->weights,
                     "Optional weights file to verify against the configuration")
        ->envname("HANDSOFF_WEIGHTS");
    inspect_cmd->callback([inspect_args]() { run_inspect(*inspect_args); });

    auto stream_args = std::make_shared<StreamArgs>();
    CLI::App* stream = app.add_subcommand(
        "stream", "Detect over an ordered frame sequence and emit debounced events");
    stream->add_option("--cfg", stream_args->cfg, "Network configuration file")
        ->envname("HANDSOFF_CFG")
        ->required();
    stream->add_option("--weights", stream_args->weights, "Binary weights file")
        ->envname("HANDSOFF_WEIGHTS")
        ->required();
    stream->add_option("--input", stream_args->input,
                       "Directory of frames; omit to read a path list from stdin")
        ->envname("HANDSOFF_INPUT");
    stream->add_option("--output", stream_args->output, "Events output file, - for stdout")
        ->envname("HANDSOFF_OUTPUT")
        ->capture_default_str();
    stream->add_option("--debounce-open", stream_args->debounce_open,
                       "Consecutive positive frames required to open an event")
        ->envname("HANDSOFF_DEBOUNCE_OPEN")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    stream->add_option("--debounce-close", stream_args->debounce_close,
                       "Consecutive empty frames required to close an event")
        ->envname("HANDSOFF_DEBOUNCE_CLOSE")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    stream->add_option("--threads", stream_args->threads, "Worker threads")
        ->envname("HANDSOFF_THREADS")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    add_threshold_options(stream, stream_args->conf_threshold, stream_args->nms_threshold,
                          stream_args->letterbox);
    stream->callback([stream_args]() { run_stream(*stream_args); });

    try {
        app.parse(argc, argv);
        return 0;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1; // usage problems collapse to a single code
    } catch (const InternalError& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 3;
    }
}
