#include "faithlab/explain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <Eigen/Dense>

#include "faithlab/detail/engine.hpp"
#include "faithlab/error.hpp"
#include "faithlab/parallel.hpp"
#include "faithlab/rng.hpp"

namespace faithlab {

namespace {

const std::vector<std::pair<Method, const char*>>& method_names() {
    static const std::vector<std::pair<Method, const char*>> names = {
        {Method::saliency, "saliency"},       {Method::integrated_gradients, "ig"},
        {Method::smoothgrad, "sg"},           {Method::smoothgrad_sq, "sg_sq"},
        {Method::vargrad, "vg"},              {Method::sg_sq_ig, "sg_sq_ig"},
        {Method::deeplift, "deeplift"},       {Method::occlusion, "occlusion"},
        {Method::lime, "lime"},               {Method::kernel_shap, "kernel_shap"},
        {Method::random, "random"},
    };
    return names;
}

ExplanationMap make_map(Tensor scores, Method m, std::size_t target, Wrt wrt) {
    return {std::move(scores), method_name(m), target, wrt, {}};
}

void check_same_shape(const Tensor& x, const Tensor& baseline) {
    if (x.shape() != baseline.shape()) {
        throw data_error("baseline shape " + shape_string(baseline.shape()) + " differs from input " +
                         shape_string(x.shape()));
    }
}

Tensor noisy_copy(const Tensor& x, double sigma, std::uint64_t seed) {
    if (sigma == 0.0) return x;
    auto rng = make_rng(seed);
    std::normal_distribution<double> noise(0.0, sigma);
    Tensor out = x;
    for (auto& v : out.values()) v += noise(rng);
    return out;
}

/// Gradients at n noisy copies of x; sample i uses derive_seed(seed, i).
std::vector<Tensor> noisy_gradients(const Checkpoint& model, const Tensor& x, double sigma, std::size_t n,
                                    std::size_t target, std::uint64_t seed, Wrt wrt) {
    if (n == 0) throw config_error("smoothgrad needs at least one sample");
    if (!(sigma >= 0.0)) throw config_error("smoothgrad sigma must be non-negative");
    std::vector<Tensor> grads(n);
    parallel_for(n, [&](std::size_t i) {
        grads[i] = input_gradient(model, noisy_copy(x, sigma, derive_seed(seed, i)), target, wrt);
    });
    return grads;
}

/// Welford mean and population variance, accumulated in sample order.
struct Moments {
    Tensor mean;
    Tensor m2;
    std::size_t n = 0;

    void add(const Tensor& g) {
        if (n == 0) {
            mean = Tensor::zeros_like(g);
            m2 = Tensor::zeros_like(g);
        }
        ++n;
        const double inv = 1.0 / static_cast<double>(n);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double delta = g[i] - mean[i];
            mean[i] += delta * inv;
            m2[i] += delta * (g[i] - mean[i]);
        }
    }

    Tensor variance() const {
        Tensor v = m2;
        for (auto& e : v.values()) e /= static_cast<double>(n);
        return v;
    }
};

Tensor squared(Tensor t) {
    for (auto& v : t.values()) v *= v;
    return t;
}

/// Weighted least squares with an optional ridge diagonal; falls back to a
/// small Tikhonov term when the normal matrix is singular.
Eigen::VectorXd solve_weighted(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                               const Eigen::VectorXd& ridge, bool* regularized) {
    Eigen::MatrixXd A = X.transpose() * w.asDiagonal() * X;
    A.diagonal() += ridge;
    const Eigen::VectorXd b = X.transpose() * (w.asDiagonal() * y);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
    const auto d = ldlt.vectorD().cwiseAbs();
    const double scale = std::max(1.0, d.maxCoeff());
    if (ldlt.info() == Eigen::Success && d.minCoeff() > 1e-12 * scale) {
        if (regularized) *regularized = false;
        return ldlt.solve(b);
    }
    if (regularized) *regularized = true;
    A.diagonal().array() += 1e-8 * scale;
    return A.ldlt().solve(b);
}

}  // namespace

std::string method_name(Method m) {
    for (const auto& [k, name] : method_names()) {
        if (k == m) return name;
    }
    return "unknown";
}

Method method_from_string(const std::string& name) {
    for (const auto& [k, n] : method_names()) {
        if (name == n) return k;
    }
    throw config_error("unknown explanation method '" + name + "'");
}

const std::vector<Method>& attribution_methods() {
    static const std::vector<Method> all = {Method::saliency,   Method::integrated_gradients, Method::smoothgrad,
                                            Method::smoothgrad_sq, Method::vargrad,           Method::sg_sq_ig,
                                            Method::deeplift,   Method::occlusion,            Method::lime,
                                            Method::kernel_shap};
    return all;
}

json to_json(const ExplanationMap& map) {
    json j{{"method", map.method},
           {"target", map.target},
           {"shape", map.scores.shape()},
           {"scores", map.scores.data()},
           {"wrt", to_string(map.wrt)}};
    if (!map.note.empty()) j["note"] = map.note;
    return j;
}

ExplanationMap explanation_from_json(const json& j) {
    ExplanationMap m;
    m.method = j.at("method").get<std::string>();
    m.target = j.at("target").get<std::size_t>();
    m.scores = Tensor(j.at("shape").get<Shape>(), j.at("scores").get<std::vector<double>>());
    m.wrt = wrt_from_string(j.at("wrt").get<std::string>());
    m.note = j.value("note", std::string{});
    return m;
}

bool ImportantFeatureSet::contains(std::size_t pixel) const {
    return std::binary_search(indices.begin(), indices.end(), pixel);
}

std::size_t top_k_count(std::size_t pixels, double fraction) {
    if (!(fraction > 0.0) || fraction > 1.0) {
        throw data_error("top-k fraction must lie in (0, 1], got " + std::to_string(fraction));
    }
    const auto k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(pixels) + 1e-9));
    return std::clamp<std::size_t>(k, 1, pixels);
}

void ExplainerConfig::validate() const {
    if (ig_steps == 0 || sg_samples == 0 || occlusion_window == 0 || occlusion_stride == 0 || lime_samples == 0 ||
        shap_samples == 0 || shap_segments == 0) {
        throw config_error("explainer counts must be positive");
    }
    if (!(sg_sigma >= 0.0)) throw config_error("sg_sigma must be non-negative");
    if (!(lime_kernel_width > 0.0)) throw config_error("lime_kernel_width must be positive");
    if (!(lime_ridge_lambda >= 0.0)) throw config_error("lime_ridge_lambda must be non-negative");
    if (lime_segments < 2) throw config_error("lime needs at least 2 segments");
    if (lime_samples < lime_segments) throw config_error("lime_samples must be at least lime_segments");
}

// ------------------------------------------------------------- gradients

ExplanationMap saliency(const Checkpoint& model, const Tensor& x, std::size_t target, Wrt wrt) {
    return make_map(input_gradient(model, x, target, wrt), Method::saliency, target, wrt);
}

namespace {

Tensor ig_tensor(const Checkpoint& model, const Tensor& x, const Tensor& baseline, std::size_t steps,
                 std::size_t target, Wrt wrt) {
    check_same_shape(x, baseline);
    if (steps == 0) throw config_error("integrated gradients needs at least one step");
    std::vector<Tensor> grads(steps);
    parallel_for(steps, [&](std::size_t k) {
        const double alpha = (static_cast<double>(k) + 0.5) / static_cast<double>(steps);
        Tensor point = baseline;
        for (std::size_t i = 0; i < point.size(); ++i) point[i] += alpha * (x[i] - baseline[i]);
        grads[k] = input_gradient(model, point, target, wrt);
    });
    Moments mom;
    for (const auto& g : grads) mom.add(g);
    Tensor out = std::move(mom.mean);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= x[i] - baseline[i];
    return out;
}

}  // namespace

ExplanationMap integrated_gradients(const Checkpoint& model, const Tensor& x, const Tensor& baseline,
                                    std::size_t steps, std::size_t target, Wrt wrt) {
    return make_map(ig_tensor(model, x, baseline, steps, target, wrt), Method::integrated_gradients, target, wrt);
}

ExplanationMap smoothgrad(const Checkpoint& model, const Tensor& x, double sigma, std::size_t n, std::size_t target,
                          std::uint64_t seed, Wrt wrt) {
    Moments mom;
    for (const auto& g : noisy_gradients(model, x, sigma, n, target, seed, wrt)) mom.add(g);
    return make_map(std::move(mom.mean), Method::smoothgrad, target, wrt);
}

ExplanationMap smoothgrad_sq(const Checkpoint& model, const Tensor& x, double sigma, std::size_t n,
                             std::size_t target, std::uint64_t seed, Wrt wrt) {
    Moments mom;
    for (auto& g : noisy_gradients(model, x, sigma, n, target, seed, wrt)) mom.add(squared(std::move(g)));
    return make_map(std::move(mom.mean), Method::smoothgrad_sq, target, wrt);
}

ExplanationMap vargrad(const Checkpoint& model, const Tensor& x, double sigma, std::size_t n, std::size_t target,
                       std::uint64_t seed, Wrt wrt) {
    Moments mom;
    for (const auto& g : noisy_gradients(model, x, sigma, n, target, seed, wrt)) mom.add(g);
    return make_map(mom.variance(), Method::vargrad, target, wrt);
}

ExplanationMap sg_sq_ig(const Checkpoint& model, const Tensor& x, const Tensor& baseline, std::size_t steps,
                        double sigma, std::size_t n, std::size_t target, std::uint64_t seed, Wrt wrt) {
    check_same_shape(x, baseline);
    if (n == 0) throw config_error("sg_sq_ig needs at least one sample");
    if (!(sigma >= 0.0)) throw config_error("sg_sq_ig sigma must be non-negative");
    std::vector<Tensor> maps(n);
    parallel_for(n, [&](std::size_t i) {
        maps[i] = squared(ig_tensor(model, noisy_copy(x, sigma, derive_seed(seed, i)), baseline, steps, target, wrt));
    });
    Moments mom;
    for (const auto& m : maps) mom.add(m);
    return make_map(std::move(mom.mean), Method::sg_sq_ig, target, wrt);
}

// -------------------------------------------------------------- DeepLIFT

ExplanationMap deeplift_rescale(const Checkpoint& model, const Tensor& x, const Tensor& baseline,
                                std::size_t target, Wrt wrt) {
    check_same_shape(x, baseline);
    if (x.shape() != model.spec.input_shape) throw data_error("deeplift: input shape does not match model");
    if (target >= model.spec.num_classes) throw data_error("deeplift: target out of range");

    const auto acts = detail::run_forward<double>(model, x.data());
    const auto ref = detail::run_forward<double>(model, baseline.data());
    const auto& z = acts.values.back();
    const auto& z0 = ref.values.back();

    std::vector<double> mult(model.spec.num_classes, 0.0);
    if (wrt == Wrt::logit) {
        mult[target] = 1.0;
    } else {
        // Softmax is a vector nonlinearity; its multipliers are the average
        // Jacobian row along the straight line between the two logit vectors.
        constexpr std::size_t softmax_steps = 64;
        std::vector<double> zz(z.size());
        for (std::size_t k = 0; k < softmax_steps; ++k) {
            const double a = (static_cast<double>(k) + 0.5) / softmax_steps;
            for (std::size_t j = 0; j < z.size(); ++j) zz[j] = z0[j] + a * (z[j] - z0[j]);
            const auto g = detail::probability_seed(softmax(zz), target);
            for (std::size_t j = 0; j < z.size(); ++j) mult[j] += g[j] / softmax_steps;
        }
    }

    const auto pidx = detail::param_index(model.spec);
    for (std::size_t li = model.spec.layers.size(); li-- > 0;) {
        const auto& layer = model.spec.layers[li];
        if (layer.is_activation()) {
            const auto& in = acts.values[li];
            const auto& in0 = ref.values[li];
            const auto& out = acts.values[li + 1];
            const auto& out0 = ref.values[li + 1];
            for (std::size_t i = 0; i < mult.size(); ++i) {
                const double dx = in[i] - in0[i];
                double slope;
                if (std::abs(dx) >= 1e-9) {
                    slope = (out[i] - out0[i]) / dx;
                } else if (layer.kind == LayerKind::relu) {
                    slope = detail::relu_slope(in[i]);
                } else {
                    slope = detail::softplus_slope(in[i], layer.beta);
                }
                mult[i] *= slope;
            }
            continue;
        }
        // Linear layers pass multipliers like gradients; max-pool routes them
        // through the arg-max of the actual input.
        const Tensor* w = pidx[li] >= 0 ? &model.params[pidx[li]] : nullptr;
        mult = detail::layer_backward<double>(layer, acts.shapes[li], acts.shapes[li + 1], w, acts.values[li], mult);
    }

    Tensor scores(x.shape());
    for (std::size_t i = 0; i < scores.size(); ++i) scores[i] = mult[i] * (x[i] - baseline[i]);
    return make_map(std::move(scores), Method::deeplift, target, wrt);
}

// -------------------------------------------------------------- occlusion

ExplanationMap occlusion(const Checkpoint& model, const Tensor& x, std::size_t window, std::size_t stride,
                         double baseline_value, std::size_t target, Wrt wrt) {
    const auto layout = spatial_layout(x.shape());
    if (window == 0 || stride == 0) throw config_error("occlusion window and stride must be positive");
    const std::size_t win_h = layout.height == 1 ? 1 : window;
    const std::size_t win_w = window;
    if (win_h > layout.height || win_w > layout.width) {
        throw data_error("occlusion window " + std::to_string(window) + " larger than the input");
    }

    std::vector<std::pair<std::size_t, std::size_t>> places;
    for (std::size_t r = 0; r + win_h <= layout.height; r += stride) {
        for (std::size_t c = 0; c + win_w <= layout.width; c += stride) places.emplace_back(r, c);
    }

    const double full = target_score(model, x, target, wrt);
    std::vector<double> drop(places.size());
    parallel_for(places.size(), [&](std::size_t p) {
        Tensor occluded = x;
        const auto [r0, c0] = places[p];
        for (std::size_t ch = 0; ch < layout.channels; ++ch) {
            for (std::size_t r = r0; r < r0 + win_h; ++r) {
                for (std::size_t c = c0; c < c0 + win_w; ++c) {
                    occluded[(ch * layout.height + r) * layout.width + c] = baseline_value;
                }
            }
        }
        drop[p] = full - target_score(model, occluded, target, wrt);
    });

    std::vector<double> total(layout.pixels(), 0.0);
    std::vector<std::size_t> count(layout.pixels(), 0);
    for (std::size_t p = 0; p < places.size(); ++p) {
        const auto [r0, c0] = places[p];
        for (std::size_t r = r0; r < r0 + win_h; ++r) {
            for (std::size_t c = c0; c < c0 + win_w; ++c) {
                total[r * layout.width + c] += drop[p];
                ++count[r * layout.width + c];
            }
        }
    }
    Tensor scores(x.shape());
    for (std::size_t ch = 0; ch < layout.channels; ++ch) {
        for (std::size_t px = 0; px < layout.pixels(); ++px) {
            scores[ch * layout.pixels() + px] = count[px] ? total[px] / static_cast<double>(count[px]) : 0.0;
        }
    }
    return make_map(std::move(scores), Method::occlusion, target, wrt);
}

// ------------------------------------------------------------------- LIME

Segmentation grid_segments(const SpatialLayout& layout, std::size_t segments) {
    if (segments == 0) throw config_error("segment count must be positive");
    std::size_t rows = 1;
    if (layout.height > 1) {
        const double ideal = std::sqrt(static_cast<double>(segments) * static_cast<double>(layout.height) /
                                       static_cast<double>(layout.width));
        rows = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(ideal)), 1, layout.height);
    }
    const std::size_t cols = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::lround(static_cast<double>(segments) / static_cast<double>(rows))), 1,
        layout.width);
    Segmentation seg;
    seg.count = rows * cols;
    seg.pixel_segment.resize(layout.pixels());
    for (std::size_t r = 0; r < layout.height; ++r) {
        for (std::size_t c = 0; c < layout.width; ++c) {
            seg.pixel_segment[r * layout.width + c] = (r * rows / layout.height) * cols + c * cols / layout.width;
        }
    }
    return seg;
}

namespace {

/// x with every group whose mask bit is 0 replaced by the baseline.
Tensor masked_input(const Tensor& x, const Tensor& baseline, const SpatialLayout& layout, const Segmentation& seg,
                    const std::vector<char>& keep) {
    Tensor out = x;
    for (std::size_t ch = 0; ch < layout.channels; ++ch) {
        for (std::size_t px = 0; px < layout.pixels(); ++px) {
            if (!keep[seg.pixel_segment[px]]) out[ch * layout.pixels() + px] = baseline[ch * layout.pixels() + px];
        }
    }
    return out;
}

Tensor broadcast_segments(const std::vector<double>& weights, const Shape& shape, const SpatialLayout& layout,
                          const Segmentation& seg) {
    Tensor scores(shape);
    for (std::size_t ch = 0; ch < layout.channels; ++ch) {
        for (std::size_t px = 0; px < layout.pixels(); ++px) {
            scores[ch * layout.pixels() + px] = weights[seg.pixel_segment[px]];
        }
    }
    return scores;
}

}  // namespace

ExplanationMap lime(const Checkpoint& model, const Tensor& x, const ExplainerConfig& cfg, std::size_t target,
                    std::uint64_t seed) {
    cfg.validate();
    const auto layout = spatial_layout(x.shape());
    const Segmentation seg = grid_segments(layout, cfg.lime_segments);
    const std::size_t M = seg.count;
    const std::size_t N = cfg.lime_samples;
    const Tensor baseline(x.shape(), cfg.lime_baseline);

    // Sample 0 is the unperturbed instance.
    std::vector<std::vector<char>> masks(N, std::vector<char>(M, 1));
    auto rng = make_rng(seed, "lime");
    std::bernoulli_distribution coin(0.5);
    for (std::size_t s = 1; s < N; ++s) {
        for (auto& b : masks[s]) b = coin(rng) ? 1 : 0;
    }
    if (std::all_of(masks.begin(), masks.end(), [&](const auto& m) { return m == masks[0]; })) {
        throw data_error("lime: degenerate design, every sampled mask is identical");
    }

    std::vector<double> y(N);
    parallel_for(N, [&](std::size_t s) {
        y[s] = target_score(model, masked_input(x, baseline, layout, seg, masks[s]), target, cfg.wrt);
    });

    Eigen::MatrixXd X(N, M + 1);
    Eigen::VectorXd w(N), yy(N);
    for (std::size_t s = 0; s < N; ++s) {
        X(s, 0) = 1.0;
        std::size_t off = 0;
        for (std::size_t j = 0; j < M; ++j) {
            X(s, j + 1) = masks[s][j];
            off += masks[s][j] ? 0 : 1;
        }
        const double d = static_cast<double>(off) / static_cast<double>(M);
        w(s) = std::exp(-(d * d) / (cfg.lime_kernel_width * cfg.lime_kernel_width));
        yy(s) = y[s];
    }
    Eigen::VectorXd ridge = Eigen::VectorXd::Constant(M + 1, cfg.lime_ridge_lambda);
    ridge(0) = 0.0;  // intercept is not penalized
    bool regularized = false;
    const Eigen::VectorXd beta = solve_weighted(X, yy, w, ridge, &regularized);

    std::vector<double> weights(M);
    for (std::size_t j = 0; j < M; ++j) weights[j] = beta(j + 1);
    auto map = make_map(broadcast_segments(weights, x.shape(), layout, seg), Method::lime, target, cfg.wrt);
    if (regularized) map.note = "singular normal equations; regularization fallback applied";
    return map;
}

// ------------------------------------------------------------ Kernel SHAP

std::vector<double> kernel_shap_values(const Checkpoint& model, const Tensor& x, const Tensor& baseline,
                                       const Segmentation& groups, std::size_t n_samples, std::size_t target,
                                       std::uint64_t seed, bool exact, Wrt wrt, std::string* note) {
    check_same_shape(x, baseline);
    const auto layout = spatial_layout(x.shape());
    if (groups.pixel_segment.size() != layout.pixels()) throw data_error("kernel_shap: grouping does not cover input");
    const std::size_t M = groups.count;
    if (M == 0) throw data_error("kernel_shap: no features");
    if (exact && M > 20) throw config_error("kernel_shap exact mode supports at most 20 features, got " + std::to_string(M));
    if (!exact && n_samples == 0) throw config_error("kernel_shap needs at least one sample");

    const double f_full = target_score(model, x, target, wrt);
    const double f_empty = target_score(model, baseline, target, wrt);
    const double delta = f_full - f_empty;
    if (M == 1) return {delta};

    std::vector<std::vector<char>> coalitions;
    std::vector<double> weights;
    if (exact) {
        const std::uint64_t total = std::uint64_t{1} << M;
        std::vector<double> binom(M + 1, 1.0);
        for (std::size_t s = 1; s <= M; ++s) binom[s] = binom[s - 1] * static_cast<double>(M - s + 1) / static_cast<double>(s);
        for (std::uint64_t bits = 1; bits + 1 < total; ++bits) {
            std::vector<char> z(M);
            std::size_t s = 0;
            for (std::size_t j = 0; j < M; ++j) {
                z[j] = (bits >> j) & 1U;
                s += z[j];
            }
            coalitions.push_back(std::move(z));
            weights.push_back(static_cast<double>(M - 1) /
                              (binom[s] * static_cast<double>(s) * static_cast<double>(M - s)));
        }
    } else {
        // Coalition sizes drawn with the total kernel mass per size; members uniform.
        std::vector<double> size_mass(M - 1);
        for (std::size_t s = 1; s < M; ++s) {
            size_mass[s - 1] = static_cast<double>(M - 1) / (static_cast<double>(s) * static_cast<double>(M - s));
        }
        auto rng = make_rng(seed, "kernel_shap");
        std::discrete_distribution<std::size_t> pick_size(size_mass.begin(), size_mass.end());
        std::vector<std::size_t> perm(M);
        for (std::size_t n = 0; n < n_samples; ++n) {
            const std::size_t s = pick_size(rng) + 1;
            std::iota(perm.begin(), perm.end(), 0);
            for (std::size_t j = 0; j < s; ++j) {
                std::uniform_int_distribution<std::size_t> u(j, M - 1);
                std::swap(perm[j], perm[u(rng)]);
            }
            std::vector<char> z(M, 0);
            for (std::size_t j = 0; j < s; ++j) z[perm[j]] = 1;
            coalitions.push_back(std::move(z));
            weights.push_back(1.0);
        }
    }

    const std::size_t N = coalitions.size();
    std::vector<double> f(N);
    parallel_for(N, [&](std::size_t i) {
        f[i] = target_score(model, masked_input(x, baseline, layout, groups, coalitions[i]), target, wrt);
    });

    // Efficiency is enforced by eliminating the last feature:
    // phi_M = delta - sum_{j<M} phi_j.
    Eigen::MatrixXd X(N, M - 1);
    Eigen::VectorXd y(N), w(N);
    for (std::size_t i = 0; i < N; ++i) {
        const double zl = coalitions[i][M - 1];
        for (std::size_t j = 0; j + 1 < M; ++j) X(i, j) = coalitions[i][j] - zl;
        y(i) = f[i] - f_empty - zl * delta;
        w(i) = weights[i];
    }
    bool regularized = false;
    const Eigen::VectorXd beta = solve_weighted(X, y, w, Eigen::VectorXd::Zero(M - 1), &regularized);
    if (regularized && note) *note = "singular normal equations; regularization fallback applied";

    std::vector<double> phi(M);
    double rest = 0.0;
    for (std::size_t j = 0; j + 1 < M; ++j) {
        phi[j] = beta(j);
        rest += beta(j);
    }
    phi[M - 1] = delta - rest;
    return phi;
}

ExplanationMap kernel_shap(const Checkpoint& model, const Tensor& x, const Tensor& baseline,
                           const Segmentation& groups, std::size_t n_samples, std::size_t target,
                           std::uint64_t seed, bool exact, Wrt wrt) {
    std::string note;
    const auto phi = kernel_shap_values(model, x, baseline, groups, n_samples, target, seed, exact, wrt, &note);
    // A group's value is spread evenly over its pixels.
    const auto layout = spatial_layout(x.shape());
    std::vector<double> members(groups.count, 0.0);
    for (std::size_t s : groups.pixel_segment) members[s] += 1.0;
    std::vector<double> per_pixel(groups.count);
    for (std::size_t g = 0; g < groups.count; ++g) per_pixel[g] = members[g] > 0 ? phi[g] / members[g] : 0.0;
    auto map = make_map(broadcast_segments(per_pixel, x.shape(), layout, groups), Method::kernel_shap, target, wrt);
    map.note = note;
    return map;
}

// ---------------------------------------------------------- feature sets

ImportantFeatureSet random_explainer(const Tensor& x, double fraction, std::uint64_t seed) {
    const auto layout = spatial_layout(x.shape());
    ImportantFeatureSet set;
    set.k = top_k_count(layout.pixels(), fraction);
    set.fraction = fraction;
    set.height = layout.height;
    set.width = layout.width;
    std::vector<std::size_t> all(layout.pixels());
    std::iota(all.begin(), all.end(), 0);
    auto rng = make_rng(seed, "random_explainer");
    std::sample(all.begin(), all.end(), std::back_inserter(set.indices), set.k, rng);
    return set;
}

ImportantFeatureSet top_k(const ExplanationMap& map, double fraction, bool signed_scores) {
    const auto layout = spatial_layout(map.scores.shape());
    ImportantFeatureSet set;
    set.k = top_k_count(layout.pixels(), fraction);
    set.fraction = fraction;
    set.height = layout.height;
    set.width = layout.width;

    std::vector<double> importance(layout.pixels(), 0.0);
    for (std::size_t ch = 0; ch < layout.channels; ++ch) {
        for (std::size_t px = 0; px < layout.pixels(); ++px) {
            const double s = map.scores[ch * layout.pixels() + px];
            importance[px] += signed_scores ? s : std::abs(s);
        }
    }
    std::vector<std::size_t> order(layout.pixels());
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + static_cast<long>(set.k), order.end(),
                      [&](std::size_t a, std::size_t b) {
                          if (importance[a] != importance[b]) return importance[a] > importance[b];
                          return a < b;
                      });
    set.indices.assign(order.begin(), order.begin() + static_cast<long>(set.k));
    std::sort(set.indices.begin(), set.indices.end());
    return set;
}

ExplanationMap explain(const Checkpoint& model, const Tensor& x, std::size_t target, Method method,
                       const ExplainerConfig& cfg) {
    cfg.validate();
    const Tensor ig_base(x.shape(), cfg.ig_baseline);
    switch (method) {
    case Method::saliency:
        return saliency(model, x, target, cfg.wrt);
    case Method::integrated_gradients:
        return integrated_gradients(model, x, ig_base, cfg.ig_steps, target, cfg.wrt);
    case Method::smoothgrad:
        return smoothgrad(model, x, cfg.sg_sigma, cfg.sg_samples, target, cfg.seed, cfg.wrt);
    case Method::smoothgrad_sq:
        return smoothgrad_sq(model, x, cfg.sg_sigma, cfg.sg_samples, target, cfg.seed, cfg.wrt);
    case Method::vargrad:
        return vargrad(model, x, cfg.sg_sigma, cfg.sg_samples, target, cfg.seed, cfg.wrt);
    case Method::sg_sq_ig:
        return sg_sq_ig(model, x, ig_base, cfg.ig_steps, cfg.sg_sigma, cfg.sg_samples, target, cfg.seed, cfg.wrt);
    case Method::deeplift:
        return deeplift_rescale(model, x, ig_base, target, cfg.wrt);
    case Method::occlusion:
        return occlusion(model, x, cfg.occlusion_window, cfg.occlusion_stride, cfg.occlusion_baseline, target,
                         cfg.wrt);
    case Method::lime:
        return lime(model, x, cfg, target, cfg.seed);
    case Method::kernel_shap: {
        const auto groups = grid_segments(spatial_layout(x.shape()), cfg.shap_segments);
        return kernel_shap(model, x, Tensor(x.shape(), cfg.shap_baseline), groups, cfg.shap_samples, target,
                           cfg.seed, cfg.shap_exact, cfg.wrt);
    }
    case Method::random:
        break;
    }
    throw config_error("the random baseline yields feature sets; use random_explainer");
}

}  // namespace faithlab
