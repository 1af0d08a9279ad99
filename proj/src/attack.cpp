#include "faithlab/attack.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "faithlab/detail/engine.hpp"
#include "faithlab/error.hpp"
#include "faithlab/format.hpp"
#include "faithlab/parallel.hpp"

namespace faithlab {

std::string to_string(GradMode mode) { return mode == GradMode::analytic ? "analytic" : "finite_difference"; }

GradMode grad_mode_from_string(const std::string& name) {
    if (name == "analytic") return GradMode::analytic;
    if (name == "finite_difference") return GradMode::finite_difference;
    throw config_error("grad_mode must be 'analytic' or 'finite_difference', got '" + name + "'");
}

std::string to_string(AttackSource source) { return source == AttackSource::ig ? "ig" : "saliency"; }

AttackSource attack_source_from_string(const std::string& name) {
    if (name == "saliency") return AttackSource::saliency;
    if (name == "ig") return AttackSource::ig;
    throw config_error("attack source must be 'saliency' or 'ig', got '" + name + "'");
}

AttackSource attack_source_for(Method victim) {
    if (victim == Method::random) throw config_error("the random baseline cannot be attacked");
    return victim == Method::sg_sq_ig || victim == Method::integrated_gradients ? AttackSource::ig
                                                                               : AttackSource::saliency;
}

void AttackConfig::validate(const Shape& input_shape) const {
    if (!(gamma1 >= 0.0) || !(gamma2 >= 0.0)) throw config_error("attack gammas must be non-negative");
    if (!(lr > 0.0)) throw config_error("attack lr must be positive");
    if (iterations == 0) throw config_error("attack iterations must be positive");
    if (!(beta > 0.0)) throw config_error("softplus beta must be positive");
    if (!(clamp_lo < clamp_hi)) throw config_error("attack clamp range is empty");
    if (!(fd_h > 0.0)) throw config_error("finite-difference step must be positive");
    if (ig_steps == 0) throw config_error("attack ig_steps must be positive");
    if (target_map.shape() != input_shape) {
        throw config_error("target map shape " + shape_string(target_map.shape()) + " differs from input " +
                           shape_string(input_shape));
    }
}

Tensor corner_square_target(const Shape& input_shape, std::size_t size) {
    const auto layout = spatial_layout(input_shape);
    if (size == 0 || size > layout.height || size > layout.width) {
        throw config_error("target square of size " + std::to_string(size) + " does not fit the input");
    }
    Tensor t(input_shape);
    for (std::size_t ch = 0; ch < layout.channels; ++ch) {
        for (std::size_t r = 0; r < size; ++r) {
            for (std::size_t c = 0; c < size; ++c) t[ch * layout.pixels() + r * layout.width + c] = 1.0;
        }
    }
    return t;
}

Tensor normalize_explanation(const Tensor& map) {
    Tensor out = map;
    for (auto& v : out.values()) v = std::abs(v);
    const auto [lo, hi] = std::minmax_element(out.values().begin(), out.values().end());
    const double min = *lo, range = *hi - *lo;
    for (auto& v : out.values()) v = range > 0.0 ? (v - min) / range : 0.0;
    return out;
}

double mse(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw data_error("mse: shapes differ");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s / static_cast<double>(a.size());
}

Tensor attack_explanation(const Checkpoint& model, const Tensor& x, std::size_t target, AttackSource source,
                          const AttackConfig& cfg) {
    if (source == AttackSource::saliency) return normalize_explanation(input_gradient(model, x, target, cfg.wrt));
    const Tensor base(x.shape(), cfg.ig_baseline);
    return normalize_explanation(integrated_gradients(model, x, base, cfg.ig_steps, target, cfg.wrt).scores);
}

ObjectiveParts attack_objective(const Checkpoint& model, const std::vector<double>& original_probs, const Tensor& x,
                                std::size_t target, AttackSource source, const AttackConfig& cfg) {
    ObjectiveParts parts;
    const auto p = probabilities(model, x);
    for (std::size_t j = 0; j < p.size(); ++j) parts.output_drift += (p[j] - original_probs[j]) * (p[j] - original_probs[j]);
    parts.expl_mse = mse(attack_explanation(model, x, target, source, cfg), cfg.target_map);
    parts.objective = cfg.gamma1 * parts.output_drift + cfg.gamma2 * parts.expl_mse;
    return parts;
}

Tensor objective_gradient_fd(const Checkpoint& model, const std::vector<double>& original_probs, const Tensor& x,
                             std::size_t target, AttackSource source, const AttackConfig& cfg) {
    Tensor g(x.shape());
    parallel_for(x.size(), [&](std::size_t j) {
        Tensor xp = x, xm = x;
        xp[j] += cfg.fd_h;
        xm[j] -= cfg.fd_h;
        const double fp = attack_objective(model, original_probs, xp, target, source, cfg).objective;
        const double fm = attack_objective(model, original_probs, xm, target, source, cfg).objective;
        g[j] = (fp - fm) / (2.0 * cfg.fd_h);
    });
    return g;
}

Tensor score_hvp(const Checkpoint& model, const Tensor& x, std::size_t target, const Tensor& v, Wrt wrt) {
    if (x.shape() != model.spec.input_shape || v.shape() != x.shape()) throw data_error("score_hvp: shape mismatch");
    using detail::Dual;
    std::vector<Dual> in(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) in[i] = Dual(x[i], v[i]);
    const auto acts = detail::run_forward<Dual>(model, std::move(in));
    std::vector<Dual> seed(model.spec.num_classes, Dual(0.0));
    if (wrt == Wrt::logit) {
        seed[target] = Dual(1.0);
    } else {
        seed = detail::probability_seed(detail::softmax_t<Dual>(acts.values.back()), target);
    }
    const auto g = detail::run_backward<Dual>(model, acts, std::move(seed));
    Tensor out(x.shape());
    for (std::size_t i = 0; i < g.size(); ++i) out[i] = g[i].d;
    return out;
}

Tensor objective_gradient_analytic(const Checkpoint& model, const std::vector<double>& original_probs,
                                   const Tensor& x, std::size_t target, const AttackConfig& cfg) {
    // Output term: 2 gamma1 (p - p0)^T dp/dx.
    const auto p = probabilities(model, x);
    std::vector<double> v(p.size());
    for (std::size_t j = 0; j < p.size(); ++j) v[j] = 2.0 * cfg.gamma1 * (p[j] - original_probs[j]);
    Tensor grad = probability_vjp(model, x, v);

    // Explanation term: chain through min-max normalization and |.|, then H u.
    const Tensor g = input_gradient(model, x, target, cfg.wrt);
    const std::size_t P = g.size();
    std::vector<double> e(P);
    for (std::size_t i = 0; i < P; ++i) e[i] = std::abs(g[i]);
    const auto lo = static_cast<std::size_t>(std::min_element(e.begin(), e.end()) - e.begin());
    const auto hi = static_cast<std::size_t>(std::max_element(e.begin(), e.end()) - e.begin());
    const double range = e[hi] - e[lo];
    if (!(range > 0.0)) return grad;

    double sum_a = 0.0, sum_an = 0.0;
    std::vector<double> a(P);
    for (std::size_t i = 0; i < P; ++i) {
        const double n = (e[i] - e[lo]) / range;
        a[i] = 2.0 * cfg.gamma2 * (n - cfg.target_map[i]) / static_cast<double>(P);
        sum_a += a[i];
        sum_an += a[i] * n;
    }
    Tensor u(x.shape());
    for (std::size_t j = 0; j < P; ++j) u[j] = a[j] / range;
    u[lo] += (sum_an - sum_a) / range;
    u[hi] -= sum_an / range;
    for (std::size_t j = 0; j < P; ++j) u[j] *= g[j] > 0.0 ? 1.0 : (g[j] < 0.0 ? -1.0 : 0.0);

    const Tensor hu = score_hvp(model, x, target, u, cfg.wrt);
    for (std::size_t j = 0; j < P; ++j) grad[j] += hu[j];
    return grad;
}

namespace {

void push(AttackTrace& trace, const ObjectiveParts& parts) {
    trace.expl_mse.push_back(parts.expl_mse);
    trace.output_drift.push_back(parts.output_drift);
    trace.objective.push_back(parts.objective);
}

}  // namespace

AttackResult manipulate(const Checkpoint& model, const Tensor& x, std::size_t target, AttackSource source,
                        const AttackConfig& cfg) {
    cfg.validate(x.shape());
    if (cfg.grad_mode == GradMode::analytic && source != AttackSource::saliency) {
        throw config_error("analytic attack gradients are only available for saliency");
    }
    AttackResult result;
    result.smooth_model = replace_relu_with_softplus(model, cfg.beta);
    const Checkpoint& m = result.smooth_model;
    const auto p0 = probabilities(m, x);

    Tensor cur = x;
    for (auto& v : cur.values()) v = std::clamp(v, cfg.clamp_lo, cfg.clamp_hi);
    auto parts = attack_objective(m, p0, cur, target, source, cfg);
    if (!std::isfinite(parts.objective)) {
        result.aborted = true;
        result.message = "non-finite objective at iteration 0";
        result.x_adv = cur;
        return result;
    }
    push(result.trace, parts);

    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    std::vector<double> mom(x.size(), 0.0), vel(x.size(), 0.0);
    for (std::size_t it = 1; it <= cfg.iterations; ++it) {
        const Tensor g = cfg.grad_mode == GradMode::analytic ? objective_gradient_analytic(m, p0, cur, target, cfg)
                                                             : objective_gradient_fd(m, p0, cur, target, source, cfg);
        if (!g.all_finite()) {
            result.aborted = true;
            result.message = "non-finite gradient at iteration " + std::to_string(it);
            break;
        }
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(it));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(it));
        Tensor next = cur;
        for (std::size_t i = 0; i < x.size(); ++i) {
            mom[i] = b1 * mom[i] + (1.0 - b1) * g[i];
            vel[i] = b2 * vel[i] + (1.0 - b2) * g[i] * g[i];
            next[i] -= cfg.lr * (mom[i] / c1) / (std::sqrt(vel[i] / c2) + eps);
            next[i] = std::clamp(next[i], cfg.clamp_lo, cfg.clamp_hi);
        }
        parts = attack_objective(m, p0, next, target, source, cfg);
        if (!std::isfinite(parts.objective)) {
            result.aborted = true;
            result.message = "non-finite objective at iteration " + std::to_string(it);
            break;
        }
        cur = std::move(next);
        push(result.trace, parts);
    }
    result.x_adv = std::move(cur);
    return result;
}

IndirectResult indirect_attack(const Checkpoint& smooth_model, const Tensor& x, const Tensor& x_adv_saliency,
                               const Tensor& x_adv_ig, std::size_t target, Method victim,
                               const ExplainerConfig& cfg, const Tensor& target_map) {
    IndirectResult r;
    r.victim = method_name(victim);
    r.source = attack_source_for(victim);
    const Tensor& adv = r.source == AttackSource::ig ? x_adv_ig : x_adv_saliency;
    if (adv.shape() != x.shape() || target_map.shape() != x.shape()) throw data_error("indirect attack: shape mismatch");
    r.expl_mse_before = mse(normalize_explanation(explain(smooth_model, x, target, victim, cfg).scores), target_map);
    r.map = explain(smooth_model, adv, target, victim, cfg);
    r.expl_mse_after = mse(normalize_explanation(r.map.scores), target_map);
    r.input_mse = mse(adv, x);
    return r;
}

std::string trace_csv(const AttackTrace& trace) {
    std::ostringstream out;
    out << "iteration,expl_mse,output_drift,objective\n";
    for (std::size_t i = 0; i < trace.size(); ++i) {
        out << i << ',' << fmt_double(trace.expl_mse[i]) << ',' << fmt_double(trace.output_drift[i]) << ','
            << fmt_double(trace.objective[i]) << '\n';
    }
    return out.str();
}

}  // namespace faithlab
