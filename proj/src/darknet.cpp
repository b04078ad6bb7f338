#include "handsoff/darknet.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <istream>
#include <sstream>

#include "handsoff/errors.hpp"

namespace handsoff {

const char* layer_kind_name(LayerKind kind) {
    switch (kind) {
        case LayerKind::convolutional: return "convolutional";
        case LayerKind::shortcut: return "shortcut";
        case LayerKind::route: return "route";
        case LayerKind::upsample: return "upsample";
        case LayerKind::yolo_head: return "yolo";
    }
    return "?";
}

namespace {

struct KeyValue {
    std::string key;
    std::string value;
    int line = 0;
    bool used = false;
};

struct Section {
    std::string name;
    int line = 0;
    std::vector<KeyValue> entries;
};

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
        return "";
    }
    size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<Section> split_sections(const std::string& text) {
    std::vector<Section> sections;
    std::istringstream in(text);
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string line = trim(raw);
        if (line.empty() || line[0] == '#' || line[0] == ';') {
            continue;
        }
        if (line.front() == '[') {
            if (line.back() != ']' || line.size() < 3) {
                throw ConfigError(
                    detail::strformat("line %d: malformed section header \"%s\"", line_no,
                                      line.c_str()));
            }
            sections.push_back({trim(line.substr(1, line.size() - 2)), line_no, {}});
            continue;
        }
        size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(detail::strformat("line %d: expected key=value, got \"%s\"",
                                                line_no, line.c_str()));
        }
        if (sections.empty()) {
            throw ConfigError(
                detail::strformat("line %d: key=value before any section header", line_no));
        }
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError(detail::strformat("line %d: empty key", line_no));
        }
        sections.back().entries.push_back({key, value, line_no, false});
    }
    return sections;
}

class SectionReader {
public:
    explicit SectionReader(Section& section) : section_(section) {}

    const KeyValue* find(const std::string& key) {
        for (auto& kv : section_.entries) {
            if (kv.key == key) {
                kv.used = true;
                return &kv;
            }
        }
        return nullptr;
    }

    bool has(const std::string& key) { return find(key) != nullptr; }

    int get_int(const std::string& key, std::optional<int> fallback = std::nullopt) {
        const KeyValue* kv = find(key);
        if (!kv) {
            if (fallback) {
                return *fallback;
            }
            throw ConfigError(detail::strformat("[%s] section at line %d: missing mandatory key \"%s\"",
                                                section_.name.c_str(), section_.line, key.c_str()));
        }
        return parse_int(kv->value, kv->line);
    }

    float get_float(const std::string& key, float fallback) {
        const KeyValue* kv = find(key);
        if (!kv) {
            return fallback;
        }
        return parse_float(kv->value, kv->line);
    }

    std::string get_string(const std::string& key, const std::string& fallback) {
        const KeyValue* kv = find(key);
        return kv ? kv->value : fallback;
    }

    std::vector<int> get_int_list(const std::string& key) {
        const KeyValue* kv = find(key);
        if (!kv) {
            throw ConfigError(detail::strformat("[%s] section at line %d: missing mandatory key \"%s\"",
                                                section_.name.c_str(), section_.line, key.c_str()));
        }
        std::vector<int> out;
        for (const std::string& item : split_list(kv->value)) {
            out.push_back(parse_int(item, kv->line));
        }
        if (out.empty()) {
            throw ConfigError(detail::strformat("line %d: empty list for key \"%s\"", kv->line,
                                                key.c_str()));
        }
        return out;
    }

    std::vector<float> get_float_list(const std::string& key) {
        const KeyValue* kv = find(key);
        if (!kv) {
            throw ConfigError(detail::strformat("[%s] section at line %d: missing mandatory key \"%s\"",
                                                section_.name.c_str(), section_.line, key.c_str()));
        }
        std::vector<float> out;
        for (const std::string& item : split_list(kv->value)) {
            out.push_back(parse_float(item, kv->line));
        }
        return out;
    }

    void warn_unused(std::vector<std::string>* warnings) const {
        if (!warnings) {
            return;
        }
        for (const auto& kv : section_.entries) {
            if (!kv.used) {
                warnings->push_back(detail::strformat("line %d: ignoring unknown key \"%s\" in [%s]",
                                                      kv.line, kv.key.c_str(),
                                                      section_.name.c_str()));
            }
        }
    }

private:
    static std::vector<std::string> split_list(const std::string& value) {
        std::vector<std::string> items;
        std::string current;
        for (char ch : value) {
            if (ch == ',') {
                items.push_back(trim(current));
                current.clear();
            } else {
                current += ch;
            }
        }
        current = trim(current);
        if (!current.empty()) {
            items.push_back(current);
        }
        return items;
    }

    static int parse_int(const std::string& s, int line) {
        int value = 0;
        auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
        if (ec != std::errc() || ptr != s.data() + s.size()) {
            throw ConfigError(
                detail::strformat("line %d: \"%s\" is not an integer", line, s.c_str()));
        }
        return value;
    }

    static float parse_float(const std::string& s, int line) {
        float value = 0.0f;
        auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
        if (ec != std::errc() || ptr != s.data() + s.size()) {
            throw ConfigError(
                detail::strformat("line %d: \"%s\" is not a number", line, s.c_str()));
        }
        return value;
    }

    Section& section_;
};

int resolve_reference(int value, int current_index, int section_line, const char* kind) {
    int resolved = value < 0 ? current_index + value : value;
    if (resolved < 0 || resolved >= current_index) {
        throw ConfigError(detail::strformat(
            "%s layer %d (line %d) references layer %d, which is not strictly earlier", kind,
            current_index, section_line, resolved));
    }
    return resolved;
}

} // namespace

NetworkSpec parse_config(const std::string& text, std::vector<std::string>* warnings) {
    std::vector<Section> sections = split_sections(text);
    if (sections.empty()) {
        throw ConfigError("configuration contains no sections");
    }

    NetworkSpec spec;
    size_t first_layer = 0;
    if (sections[0].name == "net" || sections[0].name == "network") {
        SectionReader net(sections[0]);
        spec.input_width = net.get_int("width", 416);
        spec.input_height = net.get_int("height", 416);
        spec.input_channels = net.get_int("channels", 3);
        if (spec.input_width <= 0 || spec.input_height <= 0 || spec.input_channels <= 0) {
            throw ConfigError(detail::strformat("[net] section at line %d: non-positive input size",
                                                sections[0].line));
        }
        // Training-schedule keys parse as ignorable warnings.
        net.warn_unused(warnings);
        first_layer = 1;
    }

    bool anchors_seen = false;
    bool classes_seen = false;
    for (size_t s = first_layer; s < sections.size(); ++s) {
        Section& section = sections[s];
        const int index = static_cast<int>(spec.layers.size());
        LayerSpec layer;
        layer.index = index;
        SectionReader reader(section);

        if (section.name == "convolutional" || section.name == "conv") {
            layer.kind = LayerKind::convolutional;
            layer.filters = reader.get_int("filters");
            layer.size = reader.get_int("size", 1);
            layer.stride = reader.get_int("stride", 1);
            // The dialect's pad key is a flag selecting same-padding (size/2);
            // an explicit padding key overrides it.
            const int pad_flag = reader.get_int("pad", 0);
            layer.padding = reader.get_int("padding", pad_flag ? layer.size / 2 : 0);
            layer.batch_normalize = reader.get_int("batch_normalize", 0) != 0;
            layer.activation = reader.get_string("activation", "linear");
            layer.leaky_slope = reader.get_float("leaky_slope", 0.1f);
            if (layer.filters <= 0 || layer.size <= 0 || layer.stride <= 0 || layer.padding < 0) {
                throw ConfigError(detail::strformat(
                    "[convolutional] layer %d (line %d): non-positive geometry", index,
                    section.line));
            }
            if (layer.activation != "leaky" && layer.activation != "linear") {
                throw ConfigError(detail::strformat(
                    "[convolutional] layer %d (line %d): unsupported activation \"%s\"", index,
                    section.line, layer.activation.c_str()));
            }
            if (layer.leaky_slope < 0.0f || layer.leaky_slope >= 1.0f) {
                throw ConfigError(detail::strformat(
                    "[convolutional] layer %d (line %d): leaky_slope %g outside [0,1)", index,
                    section.line, layer.leaky_slope));
            }
        } else if (section.name == "shortcut") {
            layer.kind = LayerKind::shortcut;
            layer.from = resolve_reference(reader.get_int("from"), index, section.line, "shortcut");
            reader.get_string("activation", "linear"); // always identity here
        } else if (section.name == "route") {
            layer.kind = LayerKind::route;
            for (int raw : reader.get_int_list("layers")) {
                layer.route_layers.push_back(resolve_reference(raw, index, section.line, "route"));
            }
        } else if (section.name == "upsample") {
            layer.kind = LayerKind::upsample;
            layer.factor = reader.get_int("stride", 2);
            if (layer.factor < 1) {
                throw ConfigError(detail::strformat(
                    "[upsample] layer %d (line %d): factor %d must be >= 1", index, section.line,
                    layer.factor));
            }
        } else if (section.name == "yolo") {
            layer.kind = LayerKind::yolo_head;
            layer.mask = reader.get_int_list("mask");
            layer.classes = reader.get_int("classes", 1);
            if (layer.classes <= 0) {
                throw ConfigError(detail::strformat("[yolo] layer %d (line %d): classes must be positive",
                                                    index, section.line));
            }
            std::vector<float> flat = reader.get_float_list("anchors");
            if (flat.size() < 2 || flat.size() % 2 != 0) {
                throw ConfigError(detail::strformat(
                    "[yolo] layer %d (line %d): anchors must list (w,h) pairs", index,
                    section.line));
            }
            std::vector<std::pair<float, float>> anchors;
            for (size_t i = 0; i + 1 < flat.size(); i += 2) {
                anchors.emplace_back(flat[i], flat[i + 1]);
            }
            if (const KeyValue* num = reader.find("num")) {
                // informational; mismatch is a config bug worth failing on
                int declared = 0;
                std::from_chars(num->value.data(), num->value.data() + num->value.size(), declared);
                if (declared != static_cast<int>(anchors.size())) {
                    throw ConfigError(detail::strformat(
                        "[yolo] layer %d (line %d): num=%d but %zu anchors listed", index,
                        section.line, declared, anchors.size()));
                }
            }
            for (int m : layer.mask) {
                if (m < 0 || m >= static_cast<int>(anchors.size())) {
                    throw ConfigError(detail::strformat(
                        "[yolo] layer %d (line %d): mask index %d outside anchor list of %zu",
                        index, section.line, m, anchors.size()));
                }
            }
            if (anchors_seen && anchors != spec.anchors) {
                throw ConfigError(detail::strformat(
                    "[yolo] layer %d (line %d): anchors differ from earlier head", index,
                    section.line));
            }
            spec.anchors = std::move(anchors);
            anchors_seen = true;
            if (classes_seen && layer.classes != spec.classes) {
                throw ConfigError(detail::strformat(
                    "[yolo] layer %d (line %d): classes=%d differs from earlier head's %d", index,
                    section.line, layer.classes, spec.classes));
            }
            spec.classes = layer.classes;
            classes_seen = true;

            // The head consumes the preceding layer's output, whose depth
            // must be masks * (4 box scalars + objectness + classes).
            if (index == 0) {
                throw ConfigError(detail::strformat("[yolo] at line %d cannot be the first layer",
                                                    section.line));
            }
            const LayerSpec& prev = spec.layers.back();
            if (prev.kind == LayerKind::convolutional) {
                const int expected = static_cast<int>(layer.mask.size()) * (5 + layer.classes);
                if (prev.filters != expected) {
                    throw ConfigError(detail::strformat(
                        "[yolo] layer %d (line %d): preceding convolutional outputs %d channels, "
                        "expected %d = %zu*(5+%d)",
                        index, section.line, prev.filters, expected, layer.mask.size(),
                        layer.classes));
                }
            }
        } else {
            throw ConfigError(detail::strformat("line %d: unknown section kind [%s]", section.line,
                                                section.name.c_str()));
        }

        reader.warn_unused(warnings);
        spec.layers.push_back(std::move(layer));
    }

    if (spec.layers.empty()) {
        throw ConfigError("configuration declares no layers");
    }
    if (warnings && classes_seen && spec.classes != 1) {
        warnings->push_back(detail::strformat(
            "configuration declares %d classes; this toolkit targets single-class detection",
            spec.classes));
    }
    return spec;
}

NetworkSpec parse_config_file(const std::string& path, std::vector<std::string>* warnings) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError(detail::strformat("cannot open configuration file \"%s\"", path.c_str()));
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_config(buffer.str(), warnings);
}

std::string serialize_config(const NetworkSpec& spec) {
    std::ostringstream out;
    auto num = [](float v) {
        std::string s = detail::strformat("%g", v);
        return s;
    };
    out << "[net]\n";
    out << "width=" << spec.input_width << "\n";
    out << "height=" << spec.input_height << "\n";
    out << "channels=" << spec.input_channels << "\n";
    for (const LayerSpec& layer : spec.layers) {
        out << "\n[" << layer_kind_name(layer.kind) << "]\n";
        switch (layer.kind) {
            case LayerKind::convolutional:
                if (layer.batch_normalize) {
                    out << "batch_normalize=1\n";
                }
                out << "filters=" << layer.filters << "\n";
                out << "size=" << layer.size << "\n";
                out << "stride=" << layer.stride << "\n";
                out << "padding=" << layer.padding << "\n";
                out << "activation=" << layer.activation << "\n";
                if (layer.activation == "leaky" && layer.leaky_slope != 0.1f) {
                    out << "leaky_slope=" << num(layer.leaky_slope) << "\n";
                }
                break;
            case LayerKind::shortcut:
                out << "from=" << layer.from << "\n";
                break;
            case LayerKind::route: {
                out << "layers=";
                for (size_t i = 0; i < layer.route_layers.size(); ++i) {
                    out << (i ? "," : "") << layer.route_layers[i];
                }
                out << "\n";
                break;
            }
            case LayerKind::upsample:
                out << "stride=" << layer.factor << "\n";
                break;
            case LayerKind::yolo_head: {
                out << "mask=";
                for (size_t i = 0; i < layer.mask.size(); ++i) {
                    out << (i ? "," : "") << layer.mask[i];
                }
                out << "\nanchors=";
                for (size_t i = 0; i < spec.anchors.size(); ++i) {
                    out << (i ? "," : "") << num(spec.anchors[i].first) << ","
                        << num(spec.anchors[i].second);
                }
                out << "\nclasses=" << layer.classes << "\n";
                break;
            }
        }
    }
    return out.str();
}

std::vector<Shape> infer_shapes(const NetworkSpec& spec) {
    std::vector<Shape> shapes(spec.layers.size());
    Shape input{spec.input_channels, spec.input_height, spec.input_width};
    for (size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& layer = spec.layers[i];
        const Shape& prev = i == 0 ? input : shapes[i - 1];
        switch (layer.kind) {
            case LayerKind::convolutional: {
                int oh = conv_out_extent(prev.height, layer.size, layer.stride, layer.padding);
                int ow = conv_out_extent(prev.width, layer.size, layer.stride, layer.padding);
                if (oh <= 0 || ow <= 0) {
                    throw ConfigError(detail::strformat(
                        "layer %zu: convolution collapses %dx%d input to %dx%d", i, prev.height,
                        prev.width, oh, ow));
                }
                shapes[i] = {layer.filters, oh, ow};
                break;
            }
            case LayerKind::shortcut: {
                const Shape& from = shapes[layer.from];
                if (!(from == prev)) {
                    throw ConfigError(detail::strformat(
                        "layer %zu: shortcut from layer %d shape %dx%dx%d mismatches input %dx%dx%d",
                        i, layer.from, from.channels, from.height, from.width, prev.channels,
                        prev.height, prev.width));
                }
                shapes[i] = prev;
                break;
            }
            case LayerKind::route: {
                const Shape& first = shapes[layer.route_layers[0]];
                int channels = 0;
                for (int src : layer.route_layers) {
                    const Shape& part = shapes[src];
                    if (part.height != first.height || part.width != first.width) {
                        throw ConfigError(detail::strformat(
                            "layer %zu: route parts %d and %d differ spatially", i,
                            layer.route_layers[0], src));
                    }
                    channels += part.channels;
                }
                shapes[i] = {channels, first.height, first.width};
                break;
            }
            case LayerKind::upsample:
                shapes[i] = {prev.channels, prev.height * layer.factor, prev.width * layer.factor};
                break;
            case LayerKind::yolo_head:
                shapes[i] = prev; // passthrough; decoding happens downstream
                break;
        }
    }
    return shapes;
}

size_t layer_param_count(const NetworkSpec& spec, int layer_index) {
    const LayerSpec& layer = spec.layers.at(layer_index);
    if (layer.kind != LayerKind::convolutional) {
        return 0;
    }
    int in_channels = spec.input_channels;
    if (layer_index > 0) {
        // Input depth comes from shape inference of the previous layer.
        in_channels = infer_shapes(spec)[layer_index - 1].channels;
    }
    const size_t weights =
        static_cast<size_t>(layer.filters) * in_channels * layer.size * layer.size;
    const size_t stats = layer.batch_normalize ? 4u : 1u;
    return weights + stats * static_cast<size_t>(layer.filters);
}

size_t total_param_count(const NetworkSpec& spec) {
    std::vector<Shape> shapes = infer_shapes(spec);
    size_t total = 0;
    for (size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& layer = spec.layers[i];
        if (layer.kind != LayerKind::convolutional) {
            continue;
        }
        const int in_channels = i == 0 ? spec.input_channels : shapes[i - 1].channels;
        total += static_cast<size_t>(layer.filters) * in_channels * layer.size * layer.size;
        total += (layer.batch_normalize ? 4u : 1u) * static_cast<size_t>(layer.filters);
    }
    return total;
}

namespace {

// Little-endian reads; the build targets match, so this is a plain copy
// with a static check.
static_assert(std::endian::native == std::endian::little,
              "weights loader assumes a little-endian host");

template <typename T>
bool read_exact(std::istream& in, T* value) {
    in.read(reinterpret_cast<char*>(value), sizeof(T));
    return in.gcount() == sizeof(T);
}

size_t read_floats(std::istream& in, float* dst, size_t count) {
    in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(count * sizeof(float)));
    return static_cast<size_t>(in.gcount()) / sizeof(float);
}

} // namespace

ParameterizedNetwork load_weights(const NetworkSpec& spec, std::istream& in) {
    ParameterizedNetwork net;
    net.spec = spec;
    net.params.resize(spec.layers.size());

    WeightsHeader header;
    if (!read_exact(in, &header.major) || !read_exact(in, &header.minor) ||
        !read_exact(in, &header.revision)) {
        throw WeightsError("weights stream truncated inside the header");
    }
    if (header.seen_is_64bit()) {
        int64_t seen = 0;
        if (!read_exact(in, &seen)) {
            throw WeightsError("weights stream truncated inside the header");
        }
        header.images_seen = seen;
    } else {
        int32_t seen = 0;
        if (!read_exact(in, &seen)) {
            throw WeightsError("weights stream truncated inside the header");
        }
        header.images_seen = seen;
    }
    net.header = header;

    std::vector<Shape> shapes = infer_shapes(spec);
    auto read_block = [&](std::vector<float>& dst, size_t count, int layer_index,
                          const char* what) {
        dst.resize(count);
        size_t got = read_floats(in, dst.data(), count);
        if (got != count) {
            throw WeightsError(detail::strformat(
                "weights stream truncated in layer %d: %s needs %zu more bytes", layer_index,
                what, (count - got) * sizeof(float)));
        }
    };

    for (size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& layer = spec.layers[i];
        if (layer.kind != LayerKind::convolutional) {
            continue;
        }
        const int in_channels = i == 0 ? spec.input_channels : shapes[i - 1].channels;
        ConvParams params;
        params.out_channels = layer.filters;
        params.in_channels = in_channels;
        params.kernel_size = layer.size;
        params.stride = layer.stride;
        params.padding = layer.padding;
        const size_t n = static_cast<size_t>(layer.filters);
        const int index = static_cast<int>(i);
        if (layer.batch_normalize) {
            BatchNormParams bn;
            read_block(bn.beta, n, index, "batchnorm beta");
            read_block(bn.gamma, n, index, "batchnorm gamma");
            read_block(bn.running_mean, n, index, "batchnorm running mean");
            read_block(bn.running_variance, n, index, "batchnorm running variance");
            for (size_t c = 0; c < n; ++c) {
                if (bn.running_variance[c] < 0.0f) {
                    throw WeightsError(detail::strformat(
                        "layer %d: negative running variance %g for channel %zu", index,
                        bn.running_variance[c], c));
                }
            }
            params.batchnorm = std::move(bn);
            params.bias.assign(n, 0.0f);
        } else {
            read_block(params.bias, n, index, "bias");
        }
        read_block(params.weights, params.weight_count(), index, "weights");
        net.params[i] = std::move(params);
    }

    // The stream must be spent to the byte; surplus means a config mismatch.
    char probe = 0;
    in.read(&probe, 1);
    if (in.gcount() == 1) {
        size_t surplus = 1;
        char sink[4096];
        while (in.read(sink, sizeof(sink)), in.gcount() > 0) {
            surplus += static_cast<size_t>(in.gcount());
        }
        throw WeightsError(detail::strformat(
            "weights stream has %zu trailing bytes after all layer parameters", surplus));
    }
    return net;
}

ParameterizedNetwork load_weights_file(const NetworkSpec& spec, const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw WeightsError(detail::strformat("cannot open weights file \"%s\"", path.c_str()));
    }
    return load_weights(spec, in);
}

namespace {

std::string inspect_impl(const NetworkSpec& spec) {
    std::vector<Shape> shapes = infer_shapes(spec);
    std::ostringstream out;
    out << detail::strformat("%5s  %-14s  %-18s  %s\n", "idx", "kind", "output", "params");
    size_t total = 0;
    for (size_t i = 0; i < spec.layers.size(); ++i) {
        const LayerSpec& layer = spec.layers[i];
        size_t params = 0;
        if (layer.kind == LayerKind::convolutional) {
            const int in_channels = i == 0 ? spec.input_channels : shapes[i - 1].channels;
            params = static_cast<size_t>(layer.filters) * in_channels * layer.size * layer.size +
                     (layer.batch_normalize ? 4u : 1u) * static_cast<size_t>(layer.filters);
        }
        total += params;
        const std::string shape = detail::strformat("%d x %d x %d", shapes[i].width,
                                                    shapes[i].height, shapes[i].channels);
        out << detail::strformat("%5zu  %-14s  %-18s  %zu\n", i, layer_kind_name(layer.kind),
                                 shape.c_str(), params);
    }
    out << detail::strformat("total parameters: %zu\n", total);
    return out.str();
}

} // namespace

std::string inspect(const NetworkSpec& spec) { return inspect_impl(spec); }

std::string inspect(const ParameterizedNetwork& net) { return inspect_impl(net.spec); }

} // namespace handsoff
