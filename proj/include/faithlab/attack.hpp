#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "faithlab/explain.hpp"
#include "faithlab/nn.hpp"

namespace faithlab {

enum class GradMode { analytic, finite_difference };

std::string to_string(GradMode mode);
GradMode grad_mode_from_string(const std::string& name);

/// Explainers that are attacked directly; every other method is attacked
/// through one of their adversarial samples.
enum class AttackSource { saliency, ig };

std::string to_string(AttackSource source);
AttackSource attack_source_from_string(const std::string& name);
/// integrated_gradients and sg_sq_ig take the IG sample, everything else the saliency sample.
AttackSource attack_source_for(Method victim);

struct AttackConfig {
    double gamma1 = 100.0;
    double gamma2 = 1e7;
    double lr = 0.01;
    std::size_t iterations = 100;
    double beta = 30.0;
    Tensor target_map;
    double clamp_lo = 0.0;
    double clamp_hi = 1.0;
    GradMode grad_mode = GradMode::finite_difference;
    double fd_h = 1e-3;
    std::size_t ig_steps = 16;
    double ig_baseline = 0.0;
    Wrt wrt = Wrt::probability;

    void validate(const Shape& input_shape) const;
};

/// {1,H,W}-compatible map with ones on a size x size square in the top-left corner.
Tensor corner_square_target(const Shape& input_shape, std::size_t size);

/// |map| rescaled to [0, 1]; all zeros when the map is constant.
Tensor normalize_explanation(const Tensor& map);

double mse(const Tensor& a, const Tensor& b);

struct ObjectiveParts {
    double expl_mse = 0.0;
    double output_drift = 0.0;  ///< squared L2 between probability vectors
    double objective = 0.0;     ///< gamma1 * output_drift + gamma2 * expl_mse
};

/// Normalized explanation of `source` at x on `model`.
Tensor attack_explanation(const Checkpoint& model, const Tensor& x, std::size_t target, AttackSource source,
                          const AttackConfig& cfg);

ObjectiveParts attack_objective(const Checkpoint& model, const std::vector<double>& original_probs, const Tensor& x,
                                std::size_t target, AttackSource source, const AttackConfig& cfg);

/// d objective / dx by central differences, one coordinate per task.
Tensor objective_gradient_fd(const Checkpoint& model, const std::vector<double>& original_probs, const Tensor& x,
                             std::size_t target, AttackSource source, const AttackConfig& cfg);

/// Exact gradient for the saliency objective via Hessian-vector products.
Tensor objective_gradient_analytic(const Checkpoint& model, const std::vector<double>& original_probs,
                                   const Tensor& x, std::size_t target, const AttackConfig& cfg);

/// Hessian of the target score applied to v (forward-over-reverse).
Tensor score_hvp(const Checkpoint& model, const Tensor& x, std::size_t target, const Tensor& v, Wrt wrt);

struct AttackTrace {
    std::vector<double> expl_mse;
    std::vector<double> output_drift;
    std::vector<double> objective;

    std::size_t size() const noexcept { return objective.size(); }
};

struct AttackResult {
    Tensor x_adv;
    AttackTrace trace;
    Checkpoint smooth_model;  ///< the softplus model the attack ran against
    bool aborted = false;
    std::string message;
};

/// Adam on gamma1 * |p(x) - p(x_adv)|^2 + gamma2 * MSE(target_map, I(x_adv)),
/// clamping x_adv after every step. ReLUs become softplus(cfg.beta) first.
AttackResult manipulate(const Checkpoint& model, const Tensor& x, std::size_t target, AttackSource source,
                        const AttackConfig& cfg);

struct IndirectResult {
    std::string victim;
    AttackSource source = AttackSource::saliency;
    ExplanationMap map;          ///< victim explanation on the adversarial input
    double expl_mse_before = 0.0;
    double expl_mse_after = 0.0;
    double input_mse = 0.0;      ///< MSE(x_adv, x)
};

/// Evaluates `victim` on the adversarial sample routed to it.
IndirectResult indirect_attack(const Checkpoint& smooth_model, const Tensor& x, const Tensor& x_adv_saliency,
                               const Tensor& x_adv_ig, std::size_t target, Method victim,
                               const ExplainerConfig& cfg, const Tensor& target_map);

/// iteration,expl_mse,output_drift,objective
std::string trace_csv(const AttackTrace& trace);

}  // namespace faithlab
