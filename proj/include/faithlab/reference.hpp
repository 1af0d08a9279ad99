#pragma once

// Straight-loop serial implementations kept as test oracles and as the
// baseline for the benchmark. They share no code with the engine.

#include <cstddef>

#include "faithlab/nn.hpp"

namespace faithlab::reference {

/// Logits by direct nested loops over every layer.
Tensor forward(const Checkpoint& model, const Tensor& x);

double target_score(const Checkpoint& model, const Tensor& x, std::size_t target, Wrt wrt);

/// Central-difference input gradient of the target score.
Tensor fd_gradient(const Checkpoint& model, const Tensor& x, std::size_t target, Wrt wrt, double h = 1e-5);

/// Serial integrated gradients using the engine-free forward and FD gradients.
Tensor integrated_gradients(const Checkpoint& model, const Tensor& x, const Tensor& baseline, std::size_t steps,
                            std::size_t target, Wrt wrt);

/// Serial occlusion sweep with the same placement and averaging rules.
Tensor occlusion(const Checkpoint& model, const Tensor& x, std::size_t window, std::size_t stride,
                 double baseline_value, std::size_t target, Wrt wrt);

}  // namespace faithlab::reference
