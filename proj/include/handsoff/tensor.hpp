#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace handsoff {

/// Dense rank-3 feature map, channel-major: data[(c * height + y) * width + x].
///
/// Matches the weight-file element ordering, so layer parameters load as a
/// straight copy. Batch dimension is fixed at one frame.
struct Tensor {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<float> data;

    Tensor() = default;
    Tensor(int c, int h, int w);
    Tensor(int c, int h, int w, std::vector<float> values);

    size_t size() const { return data.size(); }
    size_t plane_size() const { return static_cast<size_t>(height) * width; }

    float& at(int c, int y, int x) {
        return data[(static_cast<size_t>(c) * height + y) * width + x];
    }
    float at(int c, int y, int x) const {
        return data[(static_cast<size_t>(c) * height + y) * width + x];
    }

    bool same_shape(const Tensor& other) const {
        return channels == other.channels && height == other.height && width == other.width;
    }

    bool operator==(const Tensor& other) const = default;
};

/// Per-channel affine normalization statistics collected at training time.
struct BatchNormParams {
    std::vector<float> gamma;
    std::vector<float> beta;
    std::vector<float> running_mean;
    std::vector<float> running_variance;
    float epsilon = 1e-5f;
};

/// Convolution parameters. Weight layout: (out_channel, in_channel, ky, kx).
struct ConvParams {
    int out_channels = 0;
    int in_channels = 0;
    int kernel_size = 1;
    int stride = 1;
    int padding = 0;
    std::vector<float> weights;
    std::vector<float> bias;
    std::optional<BatchNormParams> batchnorm;

    size_t weight_count() const {
        return static_cast<size_t>(out_channels) * in_channels * kernel_size * kernel_size;
    }
};

/// Output spatial extent of a convolution, floor division as in the
/// configuration dialect (stride-2 3x3 over odd extents truncates).
int conv_out_extent(int in_extent, int kernel, int stride, int padding);

/// 2-D convolution with zero padding. Throws ShapeError on channel or
/// spatial disagreement.
Tensor conv2d(const Tensor& input, const ConvParams& params);

/// conv2d writing into a caller-provided output tensor, using `col_scratch`
/// for the unrolled patch matrix. The scratch grows on demand and can be
/// reused across calls; this is the allocation-free hot path.
void conv2d_into(const Tensor& input, const ConvParams& params, std::vector<float>& col_scratch,
                 Tensor& out);

/// out[c,y,x] = gamma[c] * (in[c,y,x] - mean[c]) / sqrt(var[c] + eps) + beta[c]
Tensor apply_batchnorm(const Tensor& input, const BatchNormParams& bn);

/// Fold normalization into convolution weights and bias so the folded conv
/// alone reproduces conv + apply_batchnorm. Returns params with batchnorm
/// cleared.
ConvParams fold_batchnorm(const ConvParams& params);

/// x for x >= 0, slope * x otherwise. slope must lie in [0, 1).
Tensor leaky_relu(const Tensor& input, float slope = 0.1f);
void leaky_relu_inplace(Tensor& t, float slope);

/// Nearest-neighbour upsample: out[c,y,x] = in[c, y / factor, x / factor].
Tensor upsample_nearest(const Tensor& input, int factor);

/// Elementwise sum; shapes must match exactly.
Tensor add(const Tensor& a, const Tensor& b);

/// Stack parts along the channel axis in the given order. All parts must
/// share height and width.
Tensor concat_channels(std::span<const Tensor> parts);
Tensor concat_channels(std::span<const Tensor* const> parts);

} // namespace handsoff
