#include "handsoff/tensor.hpp"

#include <cmath>
#include <cstring>

#include "handsoff/errors.hpp"

namespace handsoff {

Tensor::Tensor(int c, int h, int w)
    : channels(c), height(h), width(w), data(static_cast<size_t>(c) * h * w, 0.0f) {
    if (c <= 0 || h <= 0 || w <= 0) {
        throw ShapeError(detail::strformat("invalid tensor shape %dx%dx%d", c, h, w));
    }
}

Tensor::Tensor(int c, int h, int w, std::vector<float> values)
    : channels(c), height(h), width(w), data(std::move(values)) {
    if (c <= 0 || h <= 0 || w <= 0 ||
        data.size() != static_cast<size_t>(c) * h * w) {
        throw ShapeError(detail::strformat(
            "tensor data length %zu does not match shape %dx%dx%d", data.size(), c, h, w));
    }
}

int conv_out_extent(int in_extent, int kernel, int stride, int padding) {
    return (in_extent + 2 * padding - kernel) / stride + 1;
}

namespace {

// Unroll input patches into a (in_c * k * k) x (out_h * out_w) matrix.
// Row index runs (c, ky, kx), column index runs (y, x); this keeps the
// reduction order of the matrix product identical to a plain nested loop.
void im2col(const float* src, int channels, int height, int width, int kernel, int stride,
            int pad, int out_h, int out_w, float* col) {
    const size_t plane = static_cast<size_t>(height) * width;
    for (int c = 0; c < channels; ++c, src += plane) {
        for (int ky = 0; ky < kernel; ++ky) {
            for (int kx = 0; kx < kernel; ++kx) {
                int in_y = ky - pad;
                for (int oy = 0; oy < out_h; ++oy, in_y += stride) {
                    if (in_y < 0 || in_y >= height) {
                        std::memset(col, 0, sizeof(float) * out_w);
                        col += out_w;
                        continue;
                    }
                    const float* row = src + static_cast<size_t>(in_y) * width;
                    int in_x = kx - pad;
                    for (int ox = 0; ox < out_w; ++ox, in_x += stride) {
                        *col++ = (in_x >= 0 && in_x < width) ? row[in_x] : 0.0f;
                    }
                }
            }
        }
    }
}

// C[m x n] = A[m x k] * B[k x n], all row-major, C pre-initialized.
// Accumulates in k order for every output element, so the summation
// sequence matches a scalar reference loop.
void gemm_nn(int m, int n, int k, const float* a, const float* b, float* c) {
    for (int i = 0; i < m; ++i) {
        const float* a_row = a + static_cast<size_t>(i) * k;
        float* c_row = c + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const float a_ip = a_row[p];
            const float* b_row = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) {
                c_row[j] += a_ip * b_row[j];
            }
        }
    }
}

void check_conv_shapes(const Tensor& input, const ConvParams& params) {
    if (input.channels != params.in_channels) {
        throw ShapeError(detail::strformat(
            "conv2d channel mismatch: input has %d channels, kernel expects %d",
            input.channels, params.in_channels));
    }
    if (params.weights.size() != params.weight_count()) {
        throw ShapeError(detail::strformat(
            "conv2d weight count %zu does not match %dx%dx%dx%d", params.weights.size(),
            params.out_channels, params.in_channels, params.kernel_size, params.kernel_size));
    }
    if (params.bias.size() != static_cast<size_t>(params.out_channels)) {
        throw ShapeError(detail::strformat("conv2d bias count %zu does not match %d filters",
                                           params.bias.size(), params.out_channels));
    }
}

} // namespace

void conv2d_into(const Tensor& input, const ConvParams& params, std::vector<float>& col_scratch,
                 Tensor& out) {
    check_conv_shapes(input, params);
    const int k = params.kernel_size;
    const int out_h = conv_out_extent(input.height, k, params.stride, params.padding);
    const int out_w = conv_out_extent(input.width, k, params.stride, params.padding);
    if (out_h <= 0 || out_w <= 0) {
        throw ShapeError(detail::strformat(
            "conv2d output collapses to %dx%d for input %dx%d kernel %d stride %d pad %d",
            out_h, out_w, input.height, input.width, k, params.stride, params.padding));
    }

    out.channels = params.out_channels;
    out.height = out_h;
    out.width = out_w;
    const size_t spatial = static_cast<size_t>(out_h) * out_w;
    out.data.assign(static_cast<size_t>(params.out_channels) * spatial, 0.0f);

    const int depth = params.in_channels * k * k;
    const float* col = nullptr;
    if (k == 1 && params.stride == 1 && params.padding == 0) {
        // 1x1 stride-1 convolution: the input already is the patch matrix.
        col = input.data.data();
    } else {
        col_scratch.resize(static_cast<size_t>(depth) * spatial);
        im2col(input.data.data(), input.channels, input.height, input.width, k, params.stride,
               params.padding, out_h, out_w, col_scratch.data());
        col = col_scratch.data();
    }

    gemm_nn(params.out_channels, static_cast<int>(spatial), depth, params.weights.data(), col,
            out.data.data());

    float* dst = out.data.data();
    for (int o = 0; o < params.out_channels; ++o) {
        const float b = params.bias[o];
        for (size_t i = 0; i < spatial; ++i) {
            *dst++ += b;
        }
    }
}

Tensor conv2d(const Tensor& input, const ConvParams& params) {
    Tensor out;
    std::vector<float> scratch;
    conv2d_into(input, params, scratch, out);
    return out;
}

Tensor apply_batchnorm(const Tensor& input, const BatchNormParams& bn) {
    const size_t n = static_cast<size_t>(input.channels);
    if (bn.gamma.size() != n || bn.beta.size() != n || bn.running_mean.size() != n ||
        bn.running_variance.size() != n) {
        throw ShapeError(detail::strformat(
            "batchnorm arrays sized %zu do not match %d channels", bn.gamma.size(),
            input.channels));
    }
    Tensor out = input;
    const size_t plane = input.plane_size();
    float* dst = out.data.data();
    for (int c = 0; c < input.channels; ++c) {
        const float scale = bn.gamma[c] / std::sqrt(bn.running_variance[c] + bn.epsilon);
        const float shift = bn.beta[c] - bn.running_mean[c] * scale;
        for (size_t i = 0; i < plane; ++i, ++dst) {
            *dst = *dst * scale + shift;
        }
    }
    return out;
}

ConvParams fold_batchnorm(const ConvParams& params) {
    if (!params.batchnorm) {
        return params;
    }
    const BatchNormParams& bn = *params.batchnorm;
    ConvParams folded = params;
    folded.batchnorm.reset();
    const size_t per_filter =
        static_cast<size_t>(params.in_channels) * params.kernel_size * params.kernel_size;
    for (int o = 0; o < params.out_channels; ++o) {
        const float scale = bn.gamma[o] / std::sqrt(bn.running_variance[o] + bn.epsilon);
        float* w = folded.weights.data() + static_cast<size_t>(o) * per_filter;
        for (size_t i = 0; i < per_filter; ++i) {
            w[i] *= scale;
        }
        folded.bias[o] = bn.beta[o] + (params.bias[o] - bn.running_mean[o]) * scale;
    }
    return folded;
}

void leaky_relu_inplace(Tensor& t, float slope) {
    for (float& v : t.data) {
        if (v < 0.0f) {
            v *= slope;
        }
    }
}

Tensor leaky_relu(const Tensor& input, float slope) {
    Tensor out = input;
    leaky_relu_inplace(out, slope);
    return out;
}

Tensor upsample_nearest(const Tensor& input, int factor) {
    if (factor < 1) {
        throw ShapeError(detail::strformat("upsample factor %d must be >= 1", factor));
    }
    if (factor == 1) {
        return input;
    }
    Tensor out(input.channels, input.height * factor, input.width * factor);
    for (int c = 0; c < input.channels; ++c) {
        for (int y = 0; y < out.height; ++y) {
            const float* src_row =
                input.data.data() + (static_cast<size_t>(c) * input.height + y / factor) * input.width;
            float* dst_row =
                out.data.data() + (static_cast<size_t>(c) * out.height + y) * out.width;
            for (int x = 0; x < out.width; ++x) {
                dst_row[x] = src_row[x / factor];
            }
        }
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
        throw ShapeError(detail::strformat("add shape mismatch: %dx%dx%d vs %dx%dx%d", a.channels,
                                           a.height, a.width, b.channels, b.height, b.width));
    }
    Tensor out = a;
    for (size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] += b.data[i];
    }
    return out;
}

namespace {

template <typename Deref, typename Range>
Tensor concat_impl(const Range& parts, Deref deref) {
    if (parts.empty()) {
        throw ShapeError("concat_channels needs at least one part");
    }
    const Tensor& first = deref(parts[0]);
    int channels = 0;
    for (const auto& p : parts) {
        const Tensor& t = deref(p);
        if (t.height != first.height || t.width != first.width) {
            throw ShapeError(detail::strformat(
                "concat_channels spatial mismatch: %dx%d vs %dx%d", t.height, t.width,
                first.height, first.width));
        }
        channels += t.channels;
    }
    Tensor out(channels, first.height, first.width);
    float* dst = out.data.data();
    for (const auto& p : parts) {
        const Tensor& t = deref(p);
        std::memcpy(dst, t.data.data(), t.data.size() * sizeof(float));
        dst += t.data.size();
    }
    return out;
}

} // namespace

Tensor concat_channels(std::span<const Tensor> parts) {
    return concat_impl(parts, [](const Tensor& t) -> const Tensor& { return t; });
}

Tensor concat_channels(std::span<const Tensor* const> parts) {
    return concat_impl(parts, [](const Tensor* t) -> const Tensor& { return *t; });
}

} // namespace handsoff
