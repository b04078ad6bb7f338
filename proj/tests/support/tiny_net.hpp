#pragma once

// Small but complete network used across tests: three convolutions and one
// detection head at 32x32 input, 16x16 grid.

#include <utility>
#include <vector>

#include "handsoff/darknet.hpp"
#include "handsoff/tensor.hpp"
#include "rng.hpp"

namespace testsupport {

inline handsoff::NetworkSpec tiny_spec() {
    using namespace handsoff;
    NetworkSpec spec;
    spec.input_width = 32;
    spec.input_height = 32;
    spec.input_channels = 3;
    spec.classes = 1;
    spec.anchors = {{4, 6}, {8, 12}, {16, 10}, {20, 20}, {30, 30},
                    {40, 40}, {50, 50}, {60, 60}, {70, 70}};

    LayerSpec conv0;
    conv0.kind = LayerKind::convolutional;
    conv0.index = 0;
    conv0.filters = 4;
    conv0.size = 3;
    conv0.stride = 1;
    conv0.padding = 1;
    conv0.batch_normalize = true;
    conv0.activation = "leaky";

    LayerSpec conv1 = conv0;
    conv1.index = 1;
    conv1.filters = 8;
    conv1.stride = 2;

    LayerSpec conv2;
    conv2.kind = LayerKind::convolutional;
    conv2.index = 2;
    conv2.filters = 18;
    conv2.size = 1;
    conv2.stride = 1;
    conv2.padding = 0;
    conv2.batch_normalize = false;
    conv2.activation = "linear";

    LayerSpec head;
    head.kind = LayerKind::yolo_head;
    head.index = 3;
    head.mask = {0, 1, 2};
    head.classes = 1;

    spec.layers = {conv0, conv1, conv2, head};
    return spec;
}

inline handsoff::ConvParams random_params_for(const handsoff::LayerSpec& layer, int in_channels,
                                              Rng& rng) {
    handsoff::ConvParams params;
    params.out_channels = layer.filters;
    params.in_channels = in_channels;
    params.kernel_size = layer.size;
    params.stride = layer.stride;
    params.padding = layer.padding;
    params.weights.resize(params.weight_count());
    for (float& w : params.weights) {
        w = rng.next_float(-0.3f, 0.3f);
    }
    params.bias.resize(layer.filters);
    for (float& b : params.bias) {
        b = rng.next_float(-0.2f, 0.2f);
    }
    if (layer.batch_normalize) {
        handsoff::BatchNormParams bn;
        for (int o = 0; o < layer.filters; ++o) {
            bn.gamma.push_back(rng.next_float(0.8f, 1.2f));
            bn.beta.push_back(rng.next_float(-0.2f, 0.2f));
            bn.running_mean.push_back(rng.next_float(-0.2f, 0.2f));
            bn.running_variance.push_back(rng.next_float(0.5f, 1.5f));
        }
        params.bias.assign(layer.filters, 0.0f);
        params.batchnorm = std::move(bn);
    }
    return params;
}

/// Deterministic fully-loaded network for a given seed.
inline handsoff::ParameterizedNetwork tiny_net(uint64_t seed = 1) {
    using namespace handsoff;
    ParameterizedNetwork net;
    net.spec = tiny_spec();
    Rng rng(seed);
    const std::vector<Shape> shapes = infer_shapes(net.spec);
    net.params.resize(net.spec.layers.size());
    int in_channels = net.spec.input_channels;
    for (size_t i = 0; i < net.spec.layers.size(); ++i) {
        if (net.spec.layers[i].kind == LayerKind::convolutional) {
            net.params[i] = random_params_for(net.spec.layers[i], in_channels, rng);
        }
        in_channels = shapes[i].channels;
    }
    return net;
}

} // namespace testsupport
