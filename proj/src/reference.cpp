#include "faithlab/reference.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "faithlab/error.hpp"

namespace faithlab::reference {

namespace {

double softplus(double z, double beta) {
    // log(1 + e^{bz}) / b, written so large |bz| does not overflow
    const double bz = beta * z;
    return (std::max(bz, 0.0) + std::log1p(std::exp(-std::abs(bz)))) / beta;
}

}  // namespace

Tensor forward(const Checkpoint& model, const Tensor& x) {
    model.check();
    if (x.shape() != model.spec.input_shape) throw data_error("reference forward: input shape mismatch");
    Shape shape = x.shape();
    std::vector<double> cur = x.data();
    std::size_t p = 0;
    for (const auto& layer : model.spec.layers) {
        switch (layer.kind) {
        case LayerKind::dense: {
            const auto& w = model.params[p++];
            const auto& b = model.params[p++];
            std::vector<double> out(layer.out);
            for (std::size_t o = 0; o < layer.out; ++o) {
                double s = b[o];
                for (std::size_t i = 0; i < layer.in; ++i) s += w[o * layer.in + i] * cur[i];
                out[o] = s;
            }
            cur = std::move(out);
            shape = {layer.out};
            break;
        }
        case LayerKind::conv2d: {
            const auto& w = model.params[p++];
            const auto& b = model.params[p++];
            const long C = static_cast<long>(shape[0]), H = static_cast<long>(shape[1]), W = static_cast<long>(shape[2]);
            const long k = static_cast<long>(layer.kernel), s = static_cast<long>(layer.stride);
            const long pad = static_cast<long>(layer.padding);
            const long Ho = (H + 2 * pad - k) / s + 1, Wo = (W + 2 * pad - k) / s + 1;
            const long O = static_cast<long>(layer.out);
            std::vector<double> out(static_cast<std::size_t>(O * Ho * Wo));
            for (long o = 0; o < O; ++o) {
                for (long y = 0; y < Ho; ++y) {
                    for (long xo = 0; xo < Wo; ++xo) {
                        double acc = b[static_cast<std::size_t>(o)];
                        for (long c = 0; c < C; ++c) {
                            for (long ky = 0; ky < k; ++ky) {
                                for (long kx = 0; kx < k; ++kx) {
                                    const long iy = y * s + ky - pad, ix = xo * s + kx - pad;
                                    const double v = (iy >= 0 && iy < H && ix >= 0 && ix < W)
                                                         ? cur[static_cast<std::size_t>((c * H + iy) * W + ix)]
                                                         : 0.0;
                                    acc += v * w[static_cast<std::size_t>(((o * C + c) * k + ky) * k + kx)];
                                }
                            }
                        }
                        out[static_cast<std::size_t>((o * Ho + y) * Wo + xo)] = acc;
                    }
                }
            }
            cur = std::move(out);
            shape = {static_cast<std::size_t>(O), static_cast<std::size_t>(Ho), static_cast<std::size_t>(Wo)};
            break;
        }
        case LayerKind::maxpool: {
            const std::size_t C = shape[0], H = shape[1], W = shape[2];
            const std::size_t Ho = (H - layer.kernel) / layer.stride + 1, Wo = (W - layer.kernel) / layer.stride + 1;
            std::vector<double> out(C * Ho * Wo);
            for (std::size_t c = 0; c < C; ++c) {
                for (std::size_t y = 0; y < Ho; ++y) {
                    for (std::size_t xo = 0; xo < Wo; ++xo) {
                        double m = -INFINITY;
                        for (std::size_t ky = 0; ky < layer.kernel; ++ky) {
                            for (std::size_t kx = 0; kx < layer.kernel; ++kx) {
                                m = std::max(m, cur[(c * H + y * layer.stride + ky) * W + xo * layer.stride + kx]);
                            }
                        }
                        out[(c * Ho + y) * Wo + xo] = m;
                    }
                }
            }
            cur = std::move(out);
            shape = {C, Ho, Wo};
            break;
        }
        case LayerKind::flatten:
            shape = {cur.size()};
            break;
        case LayerKind::relu:
            for (auto& v : cur) v = v > 0.0 ? v : 0.0;
            break;
        case LayerKind::softplus:
            for (auto& v : cur) v = softplus(v, layer.beta);
            break;
        }
    }
    return Tensor(shape, std::move(cur));
}

double target_score(const Checkpoint& model, const Tensor& x, std::size_t target, Wrt wrt) {
    const Tensor z = reference::forward(model, x);
    if (target >= z.size()) throw data_error("reference: target out of range");
    if (wrt == Wrt::logit) return z[target];
    double m = z[0];
    for (double v : z.values()) m = std::max(m, v);
    double s = 0.0;
    for (double v : z.values()) s += std::exp(v - m);
    return std::exp(z[target] - m) / s;
}

Tensor fd_gradient(const Checkpoint& model, const Tensor& x, std::size_t target, Wrt wrt, double h) {
    Tensor g(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        Tensor xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        g[i] = (reference::target_score(model, xp, target, wrt) - reference::target_score(model, xm, target, wrt)) / (2.0 * h);
    }
    return g;
}

Tensor integrated_gradients(const Checkpoint& model, const Tensor& x, const Tensor& baseline, std::size_t steps,
                            std::size_t target, Wrt wrt) {
    if (steps == 0 || x.shape() != baseline.shape()) throw data_error("reference ig: bad arguments");
    Tensor sum(x.shape());
    for (std::size_t k = 0; k < steps; ++k) {
        const double a = (static_cast<double>(k) + 0.5) / static_cast<double>(steps);
        Tensor pt(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) pt[i] = baseline[i] + a * (x[i] - baseline[i]);
        const Tensor g = fd_gradient(model, pt, target, wrt);
        for (std::size_t i = 0; i < x.size(); ++i) sum[i] += g[i];
    }
    for (std::size_t i = 0; i < x.size(); ++i) sum[i] = sum[i] / static_cast<double>(steps) * (x[i] - baseline[i]);
    return sum;
}

Tensor occlusion(const Checkpoint& model, const Tensor& x, std::size_t window, std::size_t stride,
                 double baseline_value, std::size_t target, Wrt wrt) {
    const auto L = spatial_layout(x.shape());
    const std::size_t wh = L.height == 1 ? 1 : window;
    if (window == 0 || stride == 0 || wh > L.height || window > L.width) throw data_error("reference occlusion: bad window");
    const double full = reference::target_score(model, x, target, wrt);
    std::vector<double> total(L.pixels(), 0.0), count(L.pixels(), 0.0);
    for (std::size_t r0 = 0; r0 + wh <= L.height; r0 += stride) {
        for (std::size_t c0 = 0; c0 + window <= L.width; c0 += stride) {
            Tensor occ = x;
            for (std::size_t ch = 0; ch < L.channels; ++ch) {
                for (std::size_t r = r0; r < r0 + wh; ++r) {
                    for (std::size_t c = c0; c < c0 + window; ++c) occ[ch * L.pixels() + r * L.width + c] = baseline_value;
                }
            }
            const double d = full - reference::target_score(model, occ, target, wrt);
            for (std::size_t r = r0; r < r0 + wh; ++r) {
                for (std::size_t c = c0; c < c0 + window; ++c) {
                    total[r * L.width + c] += d;
                    count[r * L.width + c] += 1.0;
                }
            }
        }
    }
    Tensor out(x.shape());
    for (std::size_t ch = 0; ch < L.channels; ++ch) {
        for (std::size_t px = 0; px < L.pixels(); ++px) {
            out[ch * L.pixels() + px] = count[px] > 0.0 ? total[px] / count[px] : 0.0;
        }
    }
    return out;
}

}  // namespace faithlab::reference
