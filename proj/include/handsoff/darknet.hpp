#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "handsoff/tensor.hpp"

namespace handsoff {

enum class LayerKind { convolutional, shortcut, route, upsample, yolo_head };

const char* layer_kind_name(LayerKind kind);

/// One layer of the network graph with its kind-specific hyperparameters.
/// Route and shortcut references are stored as absolute indices of strictly
/// earlier layers; the parser resolves the relative form.
struct LayerSpec {
    LayerKind kind = LayerKind::convolutional;
    int index = -1;

    // convolutional
    int filters = 0;
    int size = 1;
    int stride = 1;
    int padding = 0;
    bool batch_normalize = false;
    std::string activation = "linear";
    float leaky_slope = 0.1f;

    // shortcut
    int from = -1;

    // route
    std::vector<int> route_layers;

    // upsample
    int factor = 1;

    // yolo_head
    std::vector<int> mask;
    int classes = 1;

    bool operator==(const LayerSpec&) const = default;
};

/// Validated description of the whole layer graph.
struct NetworkSpec {
    int input_width = 416;
    int input_height = 416;
    int input_channels = 3;
    std::vector<LayerSpec> layers;
    std::vector<std::pair<float, float>> anchors; // shared by all heads
    int classes = 1;

    bool operator==(const NetworkSpec&) const = default;
};

struct WeightsHeader {
    int32_t major = 0;
    int32_t minor = 2;
    int32_t revision = 0;
    int64_t images_seen = 0;

    /// images_seen is stored as 64 bits when major*10+minor >= 2, else 32.
    bool seen_is_64bit() const { return major * 10 + minor >= 2; }
    size_t byte_size() const { return 12 + (seen_is_64bit() ? 8 : 4); }
};

/// NetworkSpec plus the loaded convolution parameters, immutable after load.
struct ParameterizedNetwork {
    NetworkSpec spec;
    WeightsHeader header;
    /// Indexed by layer; populated only for convolutional layers.
    std::vector<std::optional<ConvParams>> params;
};

/// Parse the sectioned key=value configuration text. Unknown keys collect as
/// warnings; unknown section kinds and structural problems throw ConfigError.
NetworkSpec parse_config(const std::string& text, std::vector<std::string>* warnings = nullptr);

NetworkSpec parse_config_file(const std::string& path, std::vector<std::string>* warnings = nullptr);

/// Canonical text form; parse_config(serialize_config(spec)) == spec.
std::string serialize_config(const NetworkSpec& spec);

struct Shape {
    int channels = 0;
    int height = 0;
    int width = 0;

    bool operator==(const Shape&) const = default;
};

/// Deterministic shape inference over the layer graph at the spec's input
/// size. Throws ConfigError when a layer cannot be shaped.
std::vector<Shape> infer_shapes(const NetworkSpec& spec);

/// Floats consumed from a weights file by the given layer (0 for layers that
/// carry no parameters).
size_t layer_param_count(const NetworkSpec& spec, int layer_index);

/// Total floats a weights file must supply for this spec.
size_t total_param_count(const NetworkSpec& spec);

/// Read little-endian weights for every convolutional layer in layer order.
/// The stream must be consumed exactly; truncation and surplus both throw
/// WeightsError naming the offending layer or byte count.
ParameterizedNetwork load_weights(const NetworkSpec& spec, std::istream& in);
ParameterizedNetwork load_weights_file(const NetworkSpec& spec, const std::string& path);

/// Human-readable layer table: index, kind, inferred output shape, parameter
/// count, and a totals line.
std::string inspect(const ParameterizedNetwork& net);
std::string inspect(const NetworkSpec& spec);

} // namespace handsoff
