#pragma once

// Layer kernels templated on the scalar type. `double` is the normal path;
// `Dual` carries a forward-mode tangent and is used to get exact
// Hessian-vector products by differentiating the backward pass.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "faithlab/nn.hpp"

namespace faithlab::detail {

struct Dual {
    double v = 0.0;
    double d = 0.0;

    Dual() = default;
    Dual(double value) : v(value) {}  // NOLINT: implicit lift of constants
    Dual(double value, double tangent) : v(value), d(tangent) {}

    Dual& operator+=(const Dual& o) { v += o.v; d += o.d; return *this; }
    Dual& operator-=(const Dual& o) { v -= o.v; d -= o.d; return *this; }
};

inline Dual operator+(Dual a, const Dual& b) { return a += b; }
inline Dual operator-(Dual a, const Dual& b) { return a -= b; }
inline Dual operator-(const Dual& a) { return {-a.v, -a.d}; }
inline Dual operator*(const Dual& a, const Dual& b) { return {a.v * b.v, a.d * b.v + a.v * b.d}; }
inline Dual operator*(const Dual& a, double b) { return {a.v * b, a.d * b}; }
inline Dual operator*(double a, const Dual& b) { return {a * b.v, a * b.d}; }
inline Dual operator/(const Dual& a, const Dual& b) {
    return {a.v / b.v, (a.d * b.v - a.v * b.d) / (b.v * b.v)};
}
inline Dual exp(const Dual& a) {
    const double e = std::exp(a.v);
    return {e, e * a.d};
}

inline double value_of(double x) { return x; }
inline double value_of(const Dual& x) { return x.v; }

inline double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

inline double softplus(double z, double beta) {
    const double bz = beta * z;
    if (bz > 0) return z + std::log1p(std::exp(-bz)) / beta;
    return std::log1p(std::exp(bz)) / beta;
}

inline Dual softplus(const Dual& z, double beta) { return {softplus(z.v, beta), sigmoid(beta * z.v) * z.d}; }

/// d softplus / dz = sigmoid(beta z)
inline double softplus_slope(double z, double beta) { return sigmoid(beta * z); }
inline Dual softplus_slope(const Dual& z, double beta) {
    const double s = sigmoid(beta * z.v);
    return {s, beta * s * (1.0 - s) * z.d};
}

template <class T>
T relu(const T& z) {
    return value_of(z) > 0.0 ? z : T(0.0);
}

template <class T>
T relu_slope(const T& z) {
    return T(value_of(z) > 0.0 ? 1.0 : 0.0);
}

template <class T>
std::vector<T> softmax_t(std::span<const T> z) {
    double m = value_of(z[0]);
    for (const auto& zi : z) m = std::max(m, value_of(zi));
    std::vector<T> e(z.size());
    T sum(0.0);
    for (std::size_t i = 0; i < z.size(); ++i) {
        using std::exp;
        e[i] = exp(z[i] - T(m));
        sum += e[i];
    }
    for (auto& ei : e) ei = ei / sum;
    return e;
}

/// Index of the weight tensor of every layer in Checkpoint::params (or -1).
std::vector<int> param_index(const NetworkSpec& spec);

/// Per-layer activations; values[0] is the input and values[i + 1] the output of layer i.
template <class T>
struct Activations {
    std::vector<Shape> shapes;
    std::vector<std::vector<T>> values;
};

template <class T>
std::vector<T> layer_forward(const LayerSpec& layer, const Shape& in_shape, const Shape& out_shape,
                             const Tensor* weight, const Tensor* bias, std::span<const T> in) {
    std::vector<T> out(shape_size(out_shape));
    switch (layer.kind) {
    case LayerKind::dense: {
        const auto& w = weight->data();
        const auto& b = bias->data();
        for (std::size_t o = 0; o < layer.out; ++o) {
            T s(b[o]);
            const double* row = &w[o * layer.in];
            for (std::size_t i = 0; i < layer.in; ++i) s += in[i] * row[i];
            out[o] = s;
        }
        break;
    }
    case LayerKind::conv2d: {
        const std::size_t C = in_shape[0], H = in_shape[1], W = in_shape[2];
        const std::size_t O = out_shape[0], Ho = out_shape[1], Wo = out_shape[2];
        const std::size_t k = layer.kernel;
        const auto& w = weight->data();
        const auto& b = bias->data();
        for (std::size_t o = 0; o < O; ++o) {
            for (std::size_t oy = 0; oy < Ho; ++oy) {
                for (std::size_t ox = 0; ox < Wo; ++ox) {
                    T s(b[o]);
                    for (std::size_t c = 0; c < C; ++c) {
                        for (std::size_t ky = 0; ky < k; ++ky) {
                            const long iy = static_cast<long>(oy * layer.stride + ky) - static_cast<long>(layer.padding);
                            if (iy < 0 || iy >= static_cast<long>(H)) continue;
                            for (std::size_t kx = 0; kx < k; ++kx) {
                                const long ix = static_cast<long>(ox * layer.stride + kx) - static_cast<long>(layer.padding);
                                if (ix < 0 || ix >= static_cast<long>(W)) continue;
                                s += in[(c * H + iy) * W + ix] * w[((o * C + c) * k + ky) * k + kx];
                            }
                        }
                    }
                    out[(o * Ho + oy) * Wo + ox] = s;
                }
            }
        }
        break;
    }
    case LayerKind::maxpool: {
        const std::size_t C = in_shape[0], H = in_shape[1], W = in_shape[2];
        const std::size_t Ho = out_shape[1], Wo = out_shape[2];
        for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t oy = 0; oy < Ho; ++oy) {
                for (std::size_t ox = 0; ox < Wo; ++ox) {
                    std::size_t best = (c * H + oy * layer.stride) * W + ox * layer.stride;
                    for (std::size_t ky = 0; ky < layer.kernel; ++ky) {
                        for (std::size_t kx = 0; kx < layer.kernel; ++kx) {
                            const std::size_t idx = (c * H + oy * layer.stride + ky) * W + ox * layer.stride + kx;
                            if (value_of(in[idx]) > value_of(in[best])) best = idx;
                        }
                    }
                    out[(c * Ho + oy) * Wo + ox] = in[best];
                }
            }
        }
        break;
    }
    case LayerKind::flatten:
        std::copy(in.begin(), in.end(), out.begin());
        break;
    case LayerKind::relu:
        for (std::size_t i = 0; i < in.size(); ++i) out[i] = relu(in[i]);
        break;
    case LayerKind::softplus:
        for (std::size_t i = 0; i < in.size(); ++i) out[i] = softplus(in[i], layer.beta);
        break;
    }
    return out;
}

/// Propagates grad_out (d/d output) to d/d input. When `grad_w`/`grad_b` are
/// given (double path only) parameter gradients are accumulated into them.
template <class T>
std::vector<T> layer_backward(const LayerSpec& layer, const Shape& in_shape, const Shape& out_shape,
                              const Tensor* weight, std::span<const T> in, std::span<const T> grad_out,
                              double* grad_w = nullptr, double* grad_b = nullptr) {
    std::vector<T> grad_in(shape_size(in_shape), T(0.0));
    switch (layer.kind) {
    case LayerKind::dense: {
        const auto& w = weight->data();
        for (std::size_t o = 0; o < layer.out; ++o) {
            const T g = grad_out[o];
            const double* row = &w[o * layer.in];
            for (std::size_t i = 0; i < layer.in; ++i) grad_in[i] += g * row[i];
            if constexpr (std::is_same_v<T, double>) {
                if (grad_w) {
                    double* grow = grad_w + o * layer.in;
                    for (std::size_t i = 0; i < layer.in; ++i) grow[i] += g * in[i];
                    grad_b[o] += g;
                }
            }
        }
        break;
    }
    case LayerKind::conv2d: {
        const std::size_t C = in_shape[0], H = in_shape[1], W = in_shape[2];
        const std::size_t O = out_shape[0], Ho = out_shape[1], Wo = out_shape[2];
        const std::size_t k = layer.kernel;
        const auto& w = weight->data();
        for (std::size_t o = 0; o < O; ++o) {
            for (std::size_t oy = 0; oy < Ho; ++oy) {
                for (std::size_t ox = 0; ox < Wo; ++ox) {
                    const T g = grad_out[(o * Ho + oy) * Wo + ox];
                    if constexpr (std::is_same_v<T, double>) {
                        if (grad_b) grad_b[o] += g;
                    }
                    for (std::size_t c = 0; c < C; ++c) {
                        for (std::size_t ky = 0; ky < k; ++ky) {
                            const long iy = static_cast<long>(oy * layer.stride + ky) - static_cast<long>(layer.padding);
                            if (iy < 0 || iy >= static_cast<long>(H)) continue;
                            for (std::size_t kx = 0; kx < k; ++kx) {
                                const long ix = static_cast<long>(ox * layer.stride + kx) - static_cast<long>(layer.padding);
                                if (ix < 0 || ix >= static_cast<long>(W)) continue;
                                const std::size_t wi = ((o * C + c) * k + ky) * k + kx;
                                const std::size_t xi = (c * H + iy) * W + ix;
                                grad_in[xi] += g * w[wi];
                                if constexpr (std::is_same_v<T, double>) {
                                    if (grad_w) grad_w[wi] += g * in[xi];
                                }
                            }
                        }
                    }
                }
            }
        }
        break;
    }
    case LayerKind::maxpool: {
        const std::size_t C = in_shape[0], H = in_shape[1], W = in_shape[2];
        const std::size_t Ho = out_shape[1], Wo = out_shape[2];
        for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t oy = 0; oy < Ho; ++oy) {
                for (std::size_t ox = 0; ox < Wo; ++ox) {
                    std::size_t best = (c * H + oy * layer.stride) * W + ox * layer.stride;
                    for (std::size_t ky = 0; ky < layer.kernel; ++ky) {
                        for (std::size_t kx = 0; kx < layer.kernel; ++kx) {
                            const std::size_t idx = (c * H + oy * layer.stride + ky) * W + ox * layer.stride + kx;
                            if (value_of(in[idx]) > value_of(in[best])) best = idx;
                        }
                    }
                    grad_in[best] += grad_out[(c * Ho + oy) * Wo + ox];
                }
            }
        }
        break;
    }
    case LayerKind::flatten:
        std::copy(grad_out.begin(), grad_out.end(), grad_in.begin());
        break;
    case LayerKind::relu:
        for (std::size_t i = 0; i < in.size(); ++i) grad_in[i] = grad_out[i] * relu_slope(in[i]);
        break;
    case LayerKind::softplus:
        for (std::size_t i = 0; i < in.size(); ++i) grad_in[i] = grad_out[i] * softplus_slope(in[i], layer.beta);
        break;
    }
    return grad_in;
}

template <class T>
Activations<T> run_forward(const Checkpoint& model, std::vector<T> input) {
    Activations<T> acts;
    acts.shapes = model.spec.layer_shapes();
    const auto pidx = param_index(model.spec);
    acts.values.reserve(model.spec.layers.size() + 1);
    acts.values.push_back(std::move(input));
    for (std::size_t i = 0; i < model.spec.layers.size(); ++i) {
        const Tensor* w = pidx[i] >= 0 ? &model.params[pidx[i]] : nullptr;
        const Tensor* b = pidx[i] >= 0 ? &model.params[pidx[i] + 1] : nullptr;
        acts.values.push_back(layer_forward<T>(model.spec.layers[i], acts.shapes[i], acts.shapes[i + 1], w, b,
                                               acts.values[i]));
    }
    return acts;
}

/// Backpropagates grad_logits to the input. `param_grads`, when non-null,
/// receives parameter gradients (double path only).
template <class T>
std::vector<T> run_backward(const Checkpoint& model, const Activations<T>& acts, std::vector<T> grad,
                            std::vector<Tensor>* param_grads = nullptr) {
    const auto pidx = param_index(model.spec);
    for (std::size_t li = model.spec.layers.size(); li-- > 0;) {
        const Tensor* w = pidx[li] >= 0 ? &model.params[pidx[li]] : nullptr;
        double* gw = nullptr;
        double* gb = nullptr;
        if (param_grads && pidx[li] >= 0) {
            gw = (*param_grads)[pidx[li]].data().data();
            gb = (*param_grads)[pidx[li] + 1].data().data();
        }
        grad = layer_backward<T>(model.spec.layers[li], acts.shapes[li], acts.shapes[li + 1], w, acts.values[li],
                                 grad, gw, gb);
    }
    return grad;
}

/// d p_target / d logits given softmax probabilities p.
template <class T>
std::vector<T> probability_seed(const std::vector<T>& p, std::size_t target) {
    std::vector<T> g(p.size());
    for (std::size_t j = 0; j < p.size(); ++j) {
        g[j] = p[target] * (T(j == target ? 1.0 : 0.0) - p[j]);
    }
    return g;
}

}  // namespace faithlab::detail
