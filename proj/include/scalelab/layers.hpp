#pragma once

// Layer zoo: valid-padding convolution (im2col-backed), max pooling, inverted
// dropout, batch normalization, flatten and dense, each with a forward pass,
// a backward pass, shape inference and parameter counting.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "scalelab/optimizer.hpp"
#include "scalelab/tensor.hpp"

namespace scalelab {

enum class LayerKind { conv2d, maxpool2d, dropout, batchnorm, flatten, dense };
enum class Activation { none, relu, softmax };

inline std::string layer_kind_name(LayerKind kind) {
    switch (kind) {
        case LayerKind::conv2d: return "Conv2D";
        case LayerKind::maxpool2d: return "MaxPooling2D";
        case LayerKind::dropout: return "Dropout";
        case LayerKind::batchnorm: return "BatchNormalization";
        case LayerKind::flatten: return "Flatten";
        case LayerKind::dense: return "Dense";
    }
    return "?";
}

inline std::string activation_name(Activation a) {
    switch (a) {
        case Activation::none: return "none";
        case Activation::relu: return "relu";
        case Activation::softmax: return "softmax";
    }
    return "?";
}

struct LayerSpec {
    LayerKind kind = LayerKind::flatten;
    int filters = 0;   // conv2d
    int kernel = 0;    // conv2d (square)
    int pool = 0;      // maxpool2d (square)
    int stride = 0;    // 1 for conv2d, == pool for maxpool2d
    float rate = 0.0f; // dropout, in [0,1)
    int units = 0;     // dense
    Activation activation = Activation::none;

    bool operator==(const LayerSpec&) const = default;

    static LayerSpec conv2d(int filters, int kernel = 3, Activation act = Activation::relu) {
        LayerSpec s;
        s.kind = LayerKind::conv2d;
        s.filters = filters;
        s.kernel = kernel;
        s.stride = 1;
        s.activation = act;
        return s;
    }
    static LayerSpec maxpool2d(int pool = 2) {
        LayerSpec s;
        s.kind = LayerKind::maxpool2d;
        s.pool = pool;
        s.stride = pool;
        return s;
    }
    static LayerSpec dropout(float rate) {
        LayerSpec s;
        s.kind = LayerKind::dropout;
        s.rate = rate;
        return s;
    }
    static LayerSpec batchnorm() {
        LayerSpec s;
        s.kind = LayerKind::batchnorm;
        return s;
    }
    static LayerSpec flatten() {
        LayerSpec s;
        s.kind = LayerKind::flatten;
        return s;
    }
    static LayerSpec dense(int units, Activation act = Activation::none) {
        LayerSpec s;
        s.kind = LayerKind::dense;
        s.units = units;
        s.activation = act;
        return s;
    }
};

// ---------------------------------------------------------------------------
// Shape inference and parameter counting.
// Output shapes exclude the batch dimension: (H,W,C) for feature maps, (D)
// after flatten/dense. Valid padding throughout; conv stride 1; pool stride
// equals the window, so pooled side = floor((S - P) / P) + 1.
// ---------------------------------------------------------------------------

inline Shape layer_output_shape(const LayerSpec& spec, const Shape& input) {
    switch (spec.kind) {
        case LayerKind::conv2d: {
            if (input.size() != 3)
                throw ShapeError("conv2d expects (H,W,C) input, got " + shape_to_string(input));
            const int h = input[0], w = input[1], k = spec.kernel;
            if (k < 1 || spec.filters < 1) throw ShapeError("conv2d: kernel and filters must be >= 1");
            if (h < k || w < k)
                throw ShapeError("conv2d: kernel " + std::to_string(k) + " exceeds input " + shape_to_string(input));
            return {h - k + 1, w - k + 1, spec.filters};
        }
        case LayerKind::maxpool2d: {
            if (input.size() != 3)
                throw ShapeError("maxpool2d expects (H,W,C) input, got " + shape_to_string(input));
            const int h = input[0], w = input[1], p = spec.pool;
            if (p < 1) throw ShapeError("maxpool2d: pool must be >= 1");
            if (h < p || w < p)
                throw ShapeError("maxpool2d: window " + std::to_string(p) + " exceeds input " + shape_to_string(input));
            return {(h - p) / p + 1, (w - p) / p + 1, input[2]};
        }
        case LayerKind::dropout:
            if (!(spec.rate >= 0.0f && spec.rate < 1.0f))
                throw ValueError("dropout: rate must be in [0,1), got " + std::to_string(spec.rate));
            return input;
        case LayerKind::batchnorm:
            if (input.empty()) throw ShapeError("batchnorm: empty input shape");
            return input;
        case LayerKind::flatten: {
            if (input.size() != 3)
                throw ShapeError("flatten expects (H,W,C) input, got " + shape_to_string(input));
            return {input[0] * input[1] * input[2]};
        }
        case LayerKind::dense: {
            if (input.size() != 1)
                throw ShapeError("dense expects flat input, got " + shape_to_string(input));
            if (spec.units < 1) throw ShapeError("dense: units must be >= 1");
            return {spec.units};
        }
    }
    throw ShapeError("unknown layer kind");
}

// Trainable parameter count: conv (K*K*Cin + 1)*Cout, dense (In + 1)*Out,
// batchnorm 2*C; pool/dropout/flatten carry none.
inline std::int64_t layer_param_count(const LayerSpec& spec, const Shape& input) {
    switch (spec.kind) {
        case LayerKind::conv2d: {
            const std::int64_t k = spec.kernel, cin = input[2], cout = spec.filters;
            return (k * k * cin + 1) * cout;
        }
        case LayerKind::dense:
            return (static_cast<std::int64_t>(input[0]) + 1) * spec.units;
        case LayerKind::batchnorm:
            return 2 * static_cast<std::int64_t>(input.back());
        default:
            return 0;
    }
}

// Batchnorm running mean/variance, reported separately from trainables.
inline std::int64_t layer_non_trainable_count(const LayerSpec& spec, const Shape& input) {
    return spec.kind == LayerKind::batchnorm ? 2 * static_cast<std::int64_t>(input.back()) : 0;
}

// ---------------------------------------------------------------------------
// Layer state: parameters plus whatever the matching backward pass needs.
// ---------------------------------------------------------------------------

struct LayerState {
    Tensor weights;  // conv: (K,K,Cin,Cout); dense: (In,Out)
    Tensor bias;     // (Cout) / (Out)

    Tensor gamma, beta, running_mean, running_var;  // batchnorm

    // Forward-pass caches, valid only between a train-mode forward and its
    // backward.
    bool has_cache = false;
    Tensor cached_input;
    Tensor cached_pre;                   // pre-activation values
    Tensor dropout_scale;                // 0 or 1/(1-rate) per element
    std::vector<std::int64_t> pool_argmax;  // flat input index per output element
    Shape pool_input_shape;
    Tensor bn_normalized;                // x_hat
    std::vector<double> bn_inv_std;      // per channel

    void clear_cache() {
        has_cache = false;
        cached_input = Tensor();
        cached_pre = Tensor();
        dropout_scale = Tensor();
        pool_argmax.clear();
        pool_input_shape.clear();
        bn_normalized = Tensor();
        bn_inv_std.clear();
    }
};

namespace detail {

inline void require_cache(const LayerState& state, const char* op) {
    if (!state.has_cache) throw StateError(std::string(op) + ": backward called without a cached forward pass");
}

// Unrolls all valid KxK patches of a NHWC batch into a (N*Ho*Wo, K*K*Cin)
// matrix whose column order matches the row-major (K,K,Cin,Cout) kernel
// layout, so convolution becomes one matmul.
inline Tensor im2col(const Tensor& input, int kernel) {
    const int n = input.dim(0), h = input.dim(1), w = input.dim(2), c = input.dim(3);
    const int ho = h - kernel + 1, wo = w - kernel + 1;
    const std::int64_t rows = static_cast<std::int64_t>(n) * ho * wo;
    const std::int64_t cols = static_cast<std::int64_t>(kernel) * kernel * c;
    Tensor out(Shape{static_cast<int>(rows), static_cast<int>(cols)});
    const float* src = input.data();
    float* dst = out.data();
    for (int b = 0; b < n; ++b) {
        const float* img = src + static_cast<std::int64_t>(b) * h * w * c;
        for (int i = 0; i < ho; ++i) {
            for (int j = 0; j < wo; ++j) {
                for (int di = 0; di < kernel; ++di) {
                    const float* row = img + (static_cast<std::int64_t>(i + di) * w + j) * c;
                    std::memcpy(dst, row, sizeof(float) * static_cast<size_t>(kernel) * c);
                    dst += static_cast<std::int64_t>(kernel) * c;
                }
            }
        }
    }
    return out;
}

// Scatter-add of patch gradients back onto the input image grid; the adjoint
// of im2col.
inline Tensor col2im(const Tensor& cols, const Shape& input_shape, int kernel) {
    const int n = input_shape[0], h = input_shape[1], w = input_shape[2], c = input_shape[3];
    const int ho = h - kernel + 1, wo = w - kernel + 1;
    Tensor out(input_shape);
    const float* src = cols.data();
    float* dst = out.data();
    for (int b = 0; b < n; ++b) {
        float* img = dst + static_cast<std::int64_t>(b) * h * w * c;
        for (int i = 0; i < ho; ++i) {
            for (int j = 0; j < wo; ++j) {
                for (int di = 0; di < kernel; ++di) {
                    float* row = img + (static_cast<std::int64_t>(i + di) * w + j) * c;
                    const std::int64_t len = static_cast<std::int64_t>(kernel) * c;
                    for (std::int64_t t = 0; t < len; ++t) row[t] += src[t];
                    src += len;
                }
            }
        }
    }
    return out;
}

// C(k x n) = A(m x k)^T * B(m x n), accumulated in float64.
inline Tensor matmul_at_b(const Tensor& a, const Tensor& b) {
    const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> acc(static_cast<size_t>(k * n), 0.0);
    const float* pa = a.data();
    const float* pb = b.data();
    for (std::int64_t r = 0; r < m; ++r) {
        const float* arow = pa + r * k;
        const float* brow = pb + r * n;
        for (std::int64_t i = 0; i < k; ++i) {
            const double av = static_cast<double>(arow[i]);
            if (av == 0.0) continue;
            double* arow_acc = acc.data() + i * n;
            for (std::int64_t j = 0; j < n; ++j) arow_acc[j] += av * static_cast<double>(brow[j]);
        }
    }
    Tensor out(Shape{static_cast<int>(k), static_cast<int>(n)});
    float* po = out.data();
    for (std::int64_t i = 0; i < k * n; ++i) po[i] = static_cast<float>(acc[static_cast<size_t>(i)]);
    return out;
}

// C(m x k) = A(m x n) * B(k x n)^T, accumulated in float64.
inline Tensor matmul_a_bt(const Tensor& a, const Tensor& b) {
    const std::int64_t m = a.dim(0), n = a.dim(1), k = b.dim(0);
    Tensor out(Shape{static_cast<int>(m), static_cast<int>(k)});
    const float* pa = a.data();
    const float* pb = b.data();
    float* po = out.data();
    parallel_chunks(m, [&](std::int64_t begin, std::int64_t end) {
        for (std::int64_t r = begin; r < end; ++r) {
            const float* arow = pa + r * n;
            float* orow = po + r * k;
            for (std::int64_t i = 0; i < k; ++i) {
                const float* brow = pb + i * n;
                double acc = 0.0;
                for (std::int64_t j = 0; j < n; ++j) acc += static_cast<double>(arow[j]) * static_cast<double>(brow[j]);
                orow[i] = static_cast<float>(acc);
            }
        }
    });
    return out;
}

inline void apply_relu(Tensor& t) {
    float* p = t.data();
    for (std::int64_t i = 0; i < t.size(); ++i) p[i] = p[i] > 0.0f ? p[i] : 0.0f;
}

// grad *= 1[pre > 0]
inline void gate_relu(Tensor& grad, const Tensor& pre) {
    float* g = grad.data();
    const float* p = pre.data();
    for (std::int64_t i = 0; i < grad.size(); ++i)
        if (p[i] <= 0.0f) g[i] = 0.0f;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution, valid padding, stride 1, NHWC in / NHWC out.
// ---------------------------------------------------------------------------

inline Tensor conv2d_forward(const Tensor& input, LayerState& state, const LayerSpec& spec, bool train) {
    if (input.rank() != 4) throw ShapeError("conv2d_forward: expected NHWC input, got " + shape_to_string(input.shape()));
    const Shape feature{input.dim(1), input.dim(2), input.dim(3)};
    const Shape out_feature = layer_output_shape(spec, feature);
    const int n = input.dim(0), k = spec.kernel, cin = input.dim(3), cout = spec.filters;
    if (state.weights.shape() != Shape{k, k, cin, cout})
        throw ShapeError("conv2d_forward: weight shape " + shape_to_string(state.weights.shape()) +
                         " does not match spec/input");

    Tensor cols = detail::im2col(input, k);
    Tensor kernel_matrix = state.weights.reshaped(Shape{k * k * cin, cout});
    Tensor pre = matmul(cols, kernel_matrix);
    {
        float* p = pre.data();
        const float* b = state.bias.data();
        const std::int64_t rows = pre.dim(0);
        for (std::int64_t r = 0; r < rows; ++r, p += cout)
            for (int f = 0; f < cout; ++f) p[f] += b[f];
    }
    pre = std::move(pre).reshaped(Shape{n, out_feature[0], out_feature[1], cout});

    if (train) {
        state.clear_cache();
        state.cached_input = input;
        if (spec.activation == Activation::relu) state.cached_pre = pre;
        state.has_cache = true;
    }
    Tensor out = std::move(pre);
    if (spec.activation == Activation::relu) detail::apply_relu(out);
    return out;
}

struct ConvGrads {
    Tensor input, weights, bias;
};

inline ConvGrads conv2d_backward(const Tensor& grad_out, LayerState& state, const LayerSpec& spec) {
    detail::require_cache(state, "conv2d_backward");
    const Tensor& input = state.cached_input;
    const int n = input.dim(0), k = spec.kernel, cin = input.dim(3), cout = spec.filters;
    const int ho = input.dim(1) - k + 1, wo = input.dim(2) - k + 1;

    Tensor grad_pre = grad_out;
    if (spec.activation == Activation::relu) detail::gate_relu(grad_pre, state.cached_pre);
    grad_pre = std::move(grad_pre).reshaped(Shape{n * ho * wo, cout});

    ConvGrads grads;
    grads.bias = Tensor(Shape{cout});
    {
        std::vector<double> acc(static_cast<size_t>(cout), 0.0);
        const float* g = grad_pre.data();
        const std::int64_t rows = grad_pre.dim(0);
        for (std::int64_t r = 0; r < rows; ++r, g += cout)
            for (int f = 0; f < cout; ++f) acc[static_cast<size_t>(f)] += static_cast<double>(g[f]);
        for (int f = 0; f < cout; ++f) grads.bias[f] = static_cast<float>(acc[static_cast<size_t>(f)]);
    }

    Tensor cols = detail::im2col(input, k);
    grads.weights = detail::matmul_at_b(cols, grad_pre).reshaped(Shape{k, k, cin, cout});

    Tensor kernel_matrix = state.weights.reshaped(Shape{k * k * cin, cout});
    Tensor grad_cols = detail::matmul_a_bt(grad_pre, kernel_matrix);
    grads.input = detail::col2im(grad_cols, input.shape(), k);
    return grads;
}

// ---------------------------------------------------------------------------
// Max pooling, square window, stride == window, floor on odd remainders.
// ---------------------------------------------------------------------------

inline Tensor maxpool2d_forward(const Tensor& input, LayerState& state, const LayerSpec& spec, bool train) {
    if (input.rank() != 4) throw ShapeError("maxpool2d_forward: expected NHWC input");
    const Shape feature{input.dim(1), input.dim(2), input.dim(3)};
    const Shape out_feature = layer_output_shape(spec, feature);
    const int n = input.dim(0), h = input.dim(1), w = input.dim(2), c = input.dim(3);
    const int p = spec.pool, ho = out_feature[0], wo = out_feature[1];

    Tensor out(Shape{n, ho, wo, c});
    std::vector<std::int64_t> argmax(static_cast<size_t>(out.size()));
    const float* src = input.data();
    float* dst = out.data();
    std::int64_t oi = 0;
    for (int b = 0; b < n; ++b) {
        const std::int64_t base = static_cast<std::int64_t>(b) * h * w * c;
        for (int i = 0; i < ho; ++i) {
            for (int j = 0; j < wo; ++j) {
                for (int ch = 0; ch < c; ++ch, ++oi) {
                    // Ties go to the first position in row-major scan order.
                    std::int64_t best_ix = base + (static_cast<std::int64_t>(i * p) * w + j * p) * c + ch;
                    float best = src[best_ix];
                    for (int di = 0; di < p; ++di) {
                        for (int dj = 0; dj < p; ++dj) {
                            const std::int64_t ix =
                                base + (static_cast<std::int64_t>(i * p + di) * w + (j * p + dj)) * c + ch;
                            if (src[ix] > best) {
                                best = src[ix];
                                best_ix = ix;
                            }
                        }
                    }
                    dst[oi] = best;
                    argmax[static_cast<size_t>(oi)] = best_ix;
                }
            }
        }
    }
    if (train) {
        state.clear_cache();
        state.pool_argmax = std::move(argmax);
        state.pool_input_shape = input.shape();
        state.has_cache = true;
    }
    return out;
}

inline Tensor maxpool2d_backward(const Tensor& grad_out, LayerState& state, const LayerSpec&) {
    detail::require_cache(state, "maxpool2d_backward");
    Tensor grad_in(state.pool_input_shape);
    const float* g = grad_out.data();
    float* gi = grad_in.data();
    for (std::int64_t i = 0; i < grad_out.size(); ++i) gi[state.pool_argmax[static_cast<size_t>(i)]] += g[i];
    return grad_in;
}

// ---------------------------------------------------------------------------
// Inverted dropout: train-time scaling by 1/(1-rate) makes eval an identity.
// ---------------------------------------------------------------------------

inline Tensor dropout_apply(const Tensor& input, float rate, bool train, Rng& rng, LayerState* state = nullptr) {
    if (!(rate >= 0.0f && rate < 1.0f))
        throw ValueError("dropout: rate must be in [0,1), got " + std::to_string(rate));
    if (!train) return input;
    const float keep_scale = 1.0f / (1.0f - rate);
    Tensor scale_mask(input.shape());
    float* m = scale_mask.data();
    for (std::int64_t i = 0; i < scale_mask.size(); ++i) m[i] = rng.next_float() < rate ? 0.0f : keep_scale;
    Tensor out = mul(input, scale_mask);
    if (state != nullptr) {
        state->clear_cache();
        state->dropout_scale = std::move(scale_mask);
        state->has_cache = true;
    }
    return out;
}

inline Tensor dropout_forward(const Tensor& input, LayerState& state, const LayerSpec& spec, bool train, Rng& rng) {
    return dropout_apply(input, spec.rate, train, rng, &state);
}

inline Tensor dropout_backward(const Tensor& grad_out, LayerState& state, const LayerSpec&) {
    detail::require_cache(state, "dropout_backward");
    return mul(grad_out, state.dropout_scale);
}

// ---------------------------------------------------------------------------
// Batch normalization over all axes but the last (per channel / per feature).
// ---------------------------------------------------------------------------

inline constexpr double kBatchnormEpsilon = 1e-5;
inline constexpr double kBatchnormMomentum = 0.9;

inline Tensor batchnorm_forward(const Tensor& input, LayerState& state, const LayerSpec&, bool train) {
    if (input.rank() < 2) throw ShapeError("batchnorm_forward: expected batched input");
    if (input.dim(0) < 1) throw ValueError("batchnorm_forward: empty batch");
    const int c = input.dim(input.rank() - 1);
    if (state.gamma.size() != c)
        throw ShapeError("batchnorm_forward: state holds " + std::to_string(state.gamma.size()) +
                         " channels, input has " + std::to_string(c));
    const std::int64_t m = input.size() / c;

    Tensor out(input.shape());
    const float* x = input.data();
    float* y = out.data();

    if (train) {
        std::vector<double> mean(static_cast<size_t>(c), 0.0), var(static_cast<size_t>(c), 0.0);
        for (std::int64_t i = 0; i < input.size(); ++i) mean[static_cast<size_t>(i % c)] += static_cast<double>(x[i]);
        for (int ch = 0; ch < c; ++ch) mean[static_cast<size_t>(ch)] /= static_cast<double>(m);
        for (std::int64_t i = 0; i < input.size(); ++i) {
            const double d = static_cast<double>(x[i]) - mean[static_cast<size_t>(i % c)];
            var[static_cast<size_t>(i % c)] += d * d;
        }
        for (int ch = 0; ch < c; ++ch) var[static_cast<size_t>(ch)] /= static_cast<double>(m);

        state.clear_cache();
        state.bn_inv_std.resize(static_cast<size_t>(c));
        for (int ch = 0; ch < c; ++ch)
            state.bn_inv_std[static_cast<size_t>(ch)] = 1.0 / std::sqrt(var[static_cast<size_t>(ch)] + kBatchnormEpsilon);
        state.bn_normalized = Tensor(input.shape());
        float* xhat = state.bn_normalized.data();
        for (std::int64_t i = 0; i < input.size(); ++i) {
            const size_t ch = static_cast<size_t>(i % c);
            const double norm = (static_cast<double>(x[i]) - mean[ch]) * state.bn_inv_std[ch];
            xhat[i] = static_cast<float>(norm);
            y[i] = static_cast<float>(norm * static_cast<double>(state.gamma[static_cast<std::int64_t>(ch)]) +
                                      static_cast<double>(state.beta[static_cast<std::int64_t>(ch)]));
        }
        for (int ch = 0; ch < c; ++ch) {
            state.running_mean[ch] = static_cast<float>(kBatchnormMomentum * static_cast<double>(state.running_mean[ch]) +
                                                        (1.0 - kBatchnormMomentum) * mean[static_cast<size_t>(ch)]);
            state.running_var[ch] = static_cast<float>(kBatchnormMomentum * static_cast<double>(state.running_var[ch]) +
                                                       (1.0 - kBatchnormMomentum) * var[static_cast<size_t>(ch)]);
        }
        state.has_cache = true;
    } else {
        for (std::int64_t i = 0; i < input.size(); ++i) {
            const std::int64_t ch = i % c;
            const double inv = 1.0 / std::sqrt(static_cast<double>(state.running_var[ch]) + kBatchnormEpsilon);
            y[i] = static_cast<float>(((static_cast<double>(x[i]) - static_cast<double>(state.running_mean[ch])) * inv) *
                                          static_cast<double>(state.gamma[ch]) +
                                      static_cast<double>(state.beta[ch]));
        }
    }
    return out;
}

struct BatchnormGrads {
    Tensor input, gamma, beta;
};

inline BatchnormGrads batchnorm_backward(const Tensor& grad_out, LayerState& state, const LayerSpec&) {
    detail::require_cache(state, "batchnorm_backward");
    const Tensor& xhat = state.bn_normalized;
    const int c = xhat.dim(xhat.rank() - 1);
    const std::int64_t m = xhat.size() / c;

    BatchnormGrads grads;
    grads.gamma = Tensor(Shape{c});
    grads.beta = Tensor(Shape{c});
    grads.input = Tensor(xhat.shape());

    std::vector<double> sum_dy(static_cast<size_t>(c), 0.0), sum_dy_xhat(static_cast<size_t>(c), 0.0);
    const float* dy = grad_out.data();
    const float* xh = xhat.data();
    for (std::int64_t i = 0; i < xhat.size(); ++i) {
        const size_t ch = static_cast<size_t>(i % c);
        sum_dy[ch] += static_cast<double>(dy[i]);
        sum_dy_xhat[ch] += static_cast<double>(dy[i]) * static_cast<double>(xh[i]);
    }
    for (int ch = 0; ch < c; ++ch) {
        grads.beta[ch] = static_cast<float>(sum_dy[static_cast<size_t>(ch)]);
        grads.gamma[ch] = static_cast<float>(sum_dy_xhat[static_cast<size_t>(ch)]);
    }

    // dx = gamma * inv_std * (dy - mean(dy) - xhat * mean(dy*xhat))
    float* dx = grads.input.data();
    const double inv_m = 1.0 / static_cast<double>(m);
    for (std::int64_t i = 0; i < xhat.size(); ++i) {
        const size_t ch = static_cast<size_t>(i % c);
        const double g = static_cast<double>(state.gamma[static_cast<std::int64_t>(ch)]) * state.bn_inv_std[ch];
        dx[i] = static_cast<float>(g * (static_cast<double>(dy[i]) - sum_dy[ch] * inv_m -
                                        static_cast<double>(xh[i]) * sum_dy_xhat[ch] * inv_m));
    }
    return grads;
}

// ---------------------------------------------------------------------------
// Dense (fully connected).
// ---------------------------------------------------------------------------

inline Tensor dense_forward(const Tensor& input, LayerState& state, const LayerSpec& spec, bool train) {
    if (input.rank() != 2) throw ShapeError("dense_forward: expected (N,In) input, got " + shape_to_string(input.shape()));
    if (state.weights.dim(0) != input.dim(1))
        throw ShapeError("dense_forward: input width " + std::to_string(input.dim(1)) + " does not match weights " +
                         shape_to_string(state.weights.shape()));
    Tensor pre = matmul(input, state.weights);
    {
        float* p = pre.data();
        const float* b = state.bias.data();
        const int out_dim = pre.dim(1);
        for (std::int64_t r = 0; r < pre.dim(0); ++r, p += out_dim)
            for (int j = 0; j < out_dim; ++j) p[j] += b[j];
    }
    if (train) {
        state.clear_cache();
        state.cached_input = input;
        if (spec.activation == Activation::relu) state.cached_pre = pre;
        state.has_cache = true;
    }
    switch (spec.activation) {
        case Activation::none: return pre;
        case Activation::relu: {
            Tensor out = std::move(pre);
            detail::apply_relu(out);
            return out;
        }
        case Activation::softmax: return softmax(pre);
    }
    return pre;
}

struct DenseGrads {
    Tensor input, weights, bias;
};

// For relu/none the incoming gradient is w.r.t. the layer output. A softmax
// tail is always paired with cross-entropy, whose gradient is already w.r.t.
// the logits, so for softmax layers the caller passes that logit gradient.
inline DenseGrads dense_backward(const Tensor& grad_out, LayerState& state, const LayerSpec& spec) {
    detail::require_cache(state, "dense_backward");
    Tensor grad_pre = grad_out;
    if (spec.activation == Activation::relu) detail::gate_relu(grad_pre, state.cached_pre);

    DenseGrads grads;
    grads.weights = detail::matmul_at_b(state.cached_input, grad_pre);
    grads.bias = Tensor(Shape{grad_pre.dim(1)});
    {
        std::vector<double> acc(static_cast<size_t>(grad_pre.dim(1)), 0.0);
        const float* g = grad_pre.data();
        const int out_dim = grad_pre.dim(1);
        for (std::int64_t r = 0; r < grad_pre.dim(0); ++r, g += out_dim)
            for (int j = 0; j < out_dim; ++j) acc[static_cast<size_t>(j)] += static_cast<double>(g[j]);
        for (int j = 0; j < out_dim; ++j) grads.bias[j] = static_cast<float>(acc[static_cast<size_t>(j)]);
    }
    grads.input = detail::matmul_a_bt(grad_pre, state.weights);
    return grads;
}

// ---------------------------------------------------------------------------
// Flatten: (N,H,W,C) <-> (N, H*W*C). Row-major per sample, so this is a pure
// reshape.
// ---------------------------------------------------------------------------

inline Tensor flatten_forward(const Tensor& input, LayerState& state, bool train) {
    if (input.rank() != 4) throw ShapeError("flatten_forward: expected NHWC input, got " + shape_to_string(input.shape()));
    if (train) {
        state.clear_cache();
        state.pool_input_shape = input.shape();
        state.has_cache = true;
    }
    return input.reshaped(Shape{input.dim(0), input.dim(1) * input.dim(2) * input.dim(3)});
}

inline Tensor flatten_backward(const Tensor& grad_out, LayerState& state) {
    detail::require_cache(state, "flatten_backward");
    return grad_out.reshaped(state.pool_input_shape);
}

}  // namespace scalelab
