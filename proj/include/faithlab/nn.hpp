#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "faithlab/tensor.hpp"

namespace faithlab {

enum class LayerKind { dense, conv2d, maxpool, flatten, relu, softplus };

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& name);

/// One layer of a feed-forward chain. Which fields matter depends on `kind`:
/// dense uses in/out (features), conv2d uses in/out (channels) plus
/// kernel/stride/padding, maxpool uses kernel/stride, softplus uses beta.
struct LayerSpec {
    LayerKind kind = LayerKind::flatten;
    std::size_t in = 0;
    std::size_t out = 0;
    std::size_t kernel = 0;
    std::size_t stride = 1;
    std::size_t padding = 0;
    double beta = 0.0;

    static LayerSpec dense(std::size_t in, std::size_t out);
    static LayerSpec conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
                            std::size_t stride = 1, std::size_t padding = 0);
    static LayerSpec maxpool(std::size_t kernel, std::size_t stride);
    static LayerSpec flatten();
    static LayerSpec relu();
    static LayerSpec softplus(double beta);

    bool has_params() const noexcept { return kind == LayerKind::dense || kind == LayerKind::conv2d; }
    bool is_activation() const noexcept { return kind == LayerKind::relu || kind == LayerKind::softplus; }

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct NetworkSpec {
    std::vector<LayerSpec> layers;
    Shape input_shape;
    std::size_t num_classes = 0;

    /// shapes[0] is the input shape, shapes[i + 1] the output of layer i.
    /// Throws a data error when consecutive layers are incompatible.
    std::vector<Shape> layer_shapes() const;
    void validate() const { (void)layer_shapes(); }

    /// Weight then bias shape for every parameterized layer, in layer order.
    std::vector<Shape> param_shapes() const;
    std::size_t param_count() const;

    friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

/// A network plus a snapshot of its parameters and training metadata.
struct Checkpoint {
    NetworkSpec spec;
    std::vector<Tensor> params;
    std::uint64_t epoch = 0;  ///< completed epochs when recorded
    std::uint64_t step = 0;   ///< completed mini-batches when recorded
    double train_loss = 0.0;
    std::uint64_t rng_seed = 0;

    /// Throws unless params match spec.param_shapes() exactly.
    void check() const;

    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

/// Fan-in scaled uniform weights (He), zero biases, drawn from the "init" substream.
Checkpoint init_model(const NetworkSpec& spec, std::uint64_t seed);

/// Which scalar an input gradient differentiates.
enum class Wrt { probability, logit };

std::string to_string(Wrt wrt);
Wrt wrt_from_string(const std::string& name);

Tensor forward(const Checkpoint& model, const Tensor& x);
std::vector<double> softmax(std::span<const double> logits);
std::vector<double> probabilities(const Checkpoint& model, const Tensor& x);
double target_probability(const Checkpoint& model, const Tensor& x, std::size_t target);

/// F_target (probability or logit) at x.
double target_score(const Checkpoint& model, const Tensor& x, std::size_t target, Wrt wrt);

/// d(target quantity)/dx. ReLU has derivative 0 at exactly 0.
Tensor input_gradient(const Checkpoint& model, const Tensor& x, std::size_t target,
                      Wrt wrt = Wrt::probability);

/// Gradient of (v . probabilities(x)) with respect to x.
Tensor probability_vjp(const Checkpoint& model, const Tensor& x, std::span<const double> v);

/// Every ReLU becomes softplus(beta); parameters are untouched.
Checkpoint replace_relu_with_softplus(Checkpoint model, double beta);

/// Cross-entropy of one sample; adds d(loss)/d(params) into `grads`
/// (which must have the parameter shapes of `model`).
double cross_entropy_backward(const Checkpoint& model, const Tensor& x, std::size_t label,
                              std::vector<Tensor>& grads);

double cross_entropy(const Checkpoint& model, const Tensor& x, std::size_t label);

std::size_t predict(const Checkpoint& model, const Tensor& x);

}  // namespace faithlab
