#include <doctest.h>

#include <cmath>

#include <json.hpp>

#include "handsoff/engine.hpp"
#include "handsoff/errors.hpp"
#include "handsoff/tensor.hpp"
#include "support/rng.hpp"
#include "support/tiny_net.hpp"

using namespace handsoff;
using testsupport::Rng;

namespace {

RasterImage checkerboard2x2() {
    RasterImage image(2, 2);
    const auto set = [&](int x, int y, uint8_t v) {
        uint8_t* p = image.pixel(x, y);
        p[0] = p[1] = p[2] = v;
    };
    set(0, 0, 255);
    set(1, 0, 0);
    set(0, 1, 0);
    set(1, 1, 255);
    return image;
}

/// The three convolutions and activations of the tiny network, written as
/// plain module calls.
Tensor tiny_forward_by_hand(const ParameterizedNetwork& net, const Tensor& input) {
    Tensor x = leaky_relu(apply_batchnorm(conv2d(input, *net.params[0]),
                                          *net.params[0]->batchnorm));
    x = leaky_relu(apply_batchnorm(conv2d(x, *net.params[1]), *net.params[1]->batchnorm));
    return conv2d(x, *net.params[2]);
}

Tensor random_input(Rng& rng, int c, int h, int w) {
    Tensor t(c, h, w);
    for (float& v : t.data) {
        v = rng.next_float(0.0f, 1.0f);
    }
    return t;
}

} // namespace

TEST_SUITE("engine") {

TEST_CASE("bilinear upscale of a checkerboard hits the known grid") {
    const PreprocessResult result = preprocess(checkerboard2x2(), 4, 4, ResizeMode::direct);
    const float expected[4][4] = {
        {1.0f, 0.75f, 0.25f, 0.0f},
        {0.75f, 0.625f, 0.375f, 0.25f},
        {0.25f, 0.375f, 0.625f, 0.75f},
        {0.0f, 0.25f, 0.75f, 1.0f},
    };
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < 4; ++y) {
            for (int x = 0; x < 4; ++x) {
                CAPTURE(c);
                CAPTURE(y);
                CAPTURE(x);
                CHECK(result.tensor.at(c, y, x) == doctest::Approx(expected[y][x]).epsilon(1e-6));
            }
        }
    }
}

TEST_CASE("preprocess keeps channels apart and in red-green-blue order") {
    RasterImage image(1, 1);
    image.pixel(0, 0)[0] = 255; // pure red
    const PreprocessResult result = preprocess(image, 2, 2, ResizeMode::direct);
    CHECK(result.tensor.at(0, 0, 0) == doctest::Approx(1.0f));
    CHECK(result.tensor.at(1, 0, 0) == doctest::Approx(0.0f));
    CHECK(result.tensor.at(2, 0, 0) == doctest::Approx(0.0f));
}

TEST_CASE("direct mode records independent per-axis scales") {
    RasterImage image(64, 48);
    const PreprocessResult result = preprocess(image, 32, 32, ResizeMode::direct);
    const PreprocessRecord& rec = result.record;
    CHECK(rec.mode == ResizeMode::direct);
    CHECK(rec.source_width == 64);
    CHECK(rec.source_height == 48);
    CHECK(rec.scale_x == doctest::Approx(0.5f));
    CHECK(rec.scale_y == doctest::Approx(32.0f / 48.0f));
    CHECK(rec.pad_x == 0.0f);
    CHECK(rec.pad_y == 0.0f);
    CHECK(result.tensor.channels == 3);
    CHECK(result.tensor.height == 32);
    CHECK(result.tensor.width == 32);
}

TEST_CASE("letterbox pads the short axis with mid-gray") {
    Rng rng(4);
    RasterImage image(64, 32);
    for (uint8_t& v : image.pixels) {
        v = static_cast<uint8_t>(rng.next_int(0, 255));
    }
    const PreprocessResult result = preprocess(image, 32, 32, ResizeMode::letterbox);
    const PreprocessRecord& rec = result.record;
    CHECK(rec.scale_x == doctest::Approx(0.5f));
    CHECK(rec.scale_y == doctest::Approx(0.5f));
    CHECK(rec.pad_x == 0.0f);
    CHECK(rec.pad_y == 8.0f);

    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < 32; ++y) {
            for (int x = 0; x < 32; ++x) {
                const bool padded = y < 8 || y >= 24;
                if (padded) {
                    REQUIRE(result.tensor.at(c, y, x) == 0.5f);
                }
            }
        }
    }
}

TEST_CASE("preprocess tensor values stay inside the unit interval") {
    Rng rng(9);
    RasterImage image(17, 11);
    for (uint8_t& v : image.pixels) {
        v = static_cast<uint8_t>(rng.next_int(0, 255));
    }
    for (ResizeMode mode : {ResizeMode::direct, ResizeMode::letterbox}) {
        const PreprocessResult result = preprocess(image, 16, 16, mode);
        for (float v : result.tensor.data) {
            REQUIRE(v >= 0.0f);
            REQUIRE(v <= 1.0f);
        }
    }
}

TEST_CASE("executor reproduces the hand-written forward pass") {
    const ParameterizedNetwork net = testsupport::tiny_net(11);
    Rng rng(12);
    const Tensor input = random_input(rng, 3, 32, 32);
    const Tensor expected = tiny_forward_by_hand(net, input);

    // Unfolded path runs the same operation sequence, so it must agree
    // bitwise.
    Executor unfolded(build_plan(net, false));
    std::vector<HeadOutput> heads = unfolded.run(input);
    REQUIRE(heads.size() == 1);
    CHECK(heads[0].data == expected);

    // Folding changes the arithmetic but not the function.
    Executor folded(build_plan(net, true));
    std::vector<HeadOutput> folded_heads = folded.run(input);
    REQUIRE(folded_heads[0].data.same_shape(expected));
    for (size_t i = 0; i < expected.data.size(); ++i) {
        const float scale = std::max(1.0f, std::fabs(expected.data[i]));
        REQUIRE(std::fabs(folded_heads[0].data.data[i] - expected.data[i]) <= 1e-5f * scale);
    }
}

TEST_CASE("head metadata carries grid, stride and masked anchors") {
    const ParameterizedNetwork net = testsupport::tiny_net(3);
    Executor executor(build_plan(net));
    Rng rng(5);
    const std::vector<HeadOutput> heads = executor.run(random_input(rng, 3, 32, 32));
    REQUIRE(heads.size() == 1);
    const HeadOutput& head = heads[0];
    CHECK(head.grid_h == 16);
    CHECK(head.grid_w == 16);
    CHECK(head.stride_x == doctest::Approx(2.0f));
    CHECK(head.stride_y == doctest::Approx(2.0f));
    CHECK(head.classes == 1);
    REQUIRE(head.anchors.size() == 3);
    CHECK(head.anchors[0] == std::pair<float, float>{4.0f, 6.0f});
    CHECK(head.anchors[2] == std::pair<float, float>{16.0f, 10.0f});
}

TEST_CASE("executor rejects inputs that do not match the network") {
    Executor executor(build_plan(testsupport::tiny_net(1)));
    Tensor wrong(3, 16, 16);
    CHECK_THROWS_AS(executor.run(wrong), ShapeError);
}

TEST_CASE("repeated runs are bitwise identical") {
    const ParameterizedNetwork net = testsupport::tiny_net(21);
    Executor executor(build_plan(net));
    Rng rng(22);
    const Tensor input = random_input(rng, 3, 32, 32);
    const std::vector<HeadOutput> first = executor.run(input);
    const std::vector<HeadOutput> second = executor.run(input);
    REQUIRE(first.size() == second.size());
    CHECK(first[0].data == second[0].data);
}

TEST_CASE("layer outputs are released as soon as their last reader ran") {
    // Linear chain: at most the current output and its input are alive.
    const ParameterizedNetwork net = testsupport::tiny_net(31);
    Executor executor(build_plan(net));
    Rng rng(32);
    executor.run(random_input(rng, 3, 32, 32));
    CHECK(executor.last_run_stats().peak_live_tensors == 2);

    // A skip connection keeps its source alive across the gap, raising the
    // high-water mark by one.
    NetworkSpec spec = testsupport::tiny_spec();
    LayerSpec skip;
    skip.kind = LayerKind::shortcut;
    skip.index = 2;
    skip.from = 0;
    LayerSpec conv1_same = spec.layers[1];
    conv1_same.filters = 4; // keep shapes compatible with the skip
    conv1_same.stride = 1;
    spec.layers = {spec.layers[0], conv1_same, skip, spec.layers[2], spec.layers[3]};
    for (size_t i = 0; i < spec.layers.size(); ++i) {
        spec.layers[i].index = static_cast<int>(i);
    }
    spec.layers[3].size = 1;
    spec.layers[3].padding = 0;

    ParameterizedNetwork skip_net;
    skip_net.spec = spec;
    skip_net.params.resize(spec.layers.size());
    Rng rng2(33);
    const std::vector<Shape> shapes = infer_shapes(spec);
    int in_c = spec.input_channels;
    for (size_t i = 0; i < spec.layers.size(); ++i) {
        if (spec.layers[i].kind == LayerKind::convolutional) {
            skip_net.params[i] = testsupport::random_params_for(spec.layers[i], in_c, rng2);
        }
        in_c = shapes[i].channels;
    }
    Executor skip_executor(build_plan(skip_net));
    skip_executor.run(random_input(rng2, 3, 32, 32));
    CHECK(skip_executor.last_run_stats().peak_live_tensors == 3);
}

TEST_CASE("benchmark reports per-stage statistics over the measured runs") {
    const ParameterizedNetwork net = testsupport::tiny_net(41);
    Executor executor(build_plan(net));
    Rng rng(42);
    RasterImage frame(40, 30);
    for (uint8_t& v : frame.pixels) {
        v = static_cast<uint8_t>(rng.next_int(0, 255));
    }
    std::vector<RasterImage> frames{frame};

    BenchOptions options;
    options.runs = 3;
    options.warmup = 1;
    const BenchReport report = benchmark(executor, frames, options);
    CHECK(report.runs == 3);
    CHECK(report.warmup == 1);
    CHECK(report.sample_total_ms.size() == 3);
    CHECK(report.forward.mean_ms > 0.0);
    CHECK(report.total.mean_ms >= report.forward.mean_ms);
    CHECK(report.fps > 0.0);
    CHECK(report.total.stddev_ms >= 0.0);

    SUBCASE("single run has zero spread") {
        BenchOptions single;
        single.runs = 1;
        single.warmup = 0;
        const BenchReport one = benchmark(executor, frames, single);
        CHECK(one.sample_total_ms.size() == 1);
        CHECK(one.total.stddev_ms == 0.0);
        CHECK(one.total.median_ms == one.total.mean_ms);
    }

    SUBCASE("text and machine forms agree") {
        const std::string text = format_bench_report(report);
        CHECK(text.find("preprocess") != std::string::npos);
        CHECK(text.find("fps:") != std::string::npos);

        const nlohmann::json parsed = nlohmann::json::parse(bench_report_json(report));
        CHECK(parsed["runs"] == 3);
        CHECK(parsed["warmup"] == 1);
        CHECK(parsed["sample_total_ms"].size() == 3);
        CHECK(parsed["stages"]["forward"]["mean_ms"].get<double>() ==
              doctest::Approx(report.forward.mean_ms).epsilon(1e-6));
        CHECK(parsed["stages"]["end_to_end"]["stddev_ms"].get<double>() ==
              doctest::Approx(report.total.stddev_ms).epsilon(1e-6));
        CHECK(parsed["fps"].get<double>() == doctest::Approx(report.fps).epsilon(1e-6));
    }
}

TEST_CASE("benchmark refuses empty input") {
    Executor executor(build_plan(testsupport::tiny_net(51)));
    std::vector<RasterImage> none;
    CHECK_THROWS_AS(benchmark(executor, none, BenchOptions{}), DataError);
}

} // TEST_SUITE
