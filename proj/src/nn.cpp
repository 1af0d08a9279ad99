#include "faithlab/nn.hpp"

#include <cmath>
#include <random>

#include "faithlab/detail/engine.hpp"
#include "faithlab/error.hpp"
#include "faithlab/rng.hpp"

namespace faithlab {

std::string to_string(LayerKind kind) {
    switch (kind) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::flatten: return "flatten";
    case LayerKind::relu: return "relu";
    case LayerKind::softplus: return "softplus";
    }
    return "unknown";
}

LayerKind layer_kind_from_string(const std::string& name) {
    for (auto k : {LayerKind::dense, LayerKind::conv2d, LayerKind::maxpool, LayerKind::flatten, LayerKind::relu,
                   LayerKind::softplus}) {
        if (to_string(k) == name) return k;
    }
    throw data_error("unknown layer kind '" + name + "'");
}

LayerSpec LayerSpec::dense(std::size_t in, std::size_t out) {
    LayerSpec l;
    l.kind = LayerKind::dense;
    l.in = in;
    l.out = out;
    return l;
}

LayerSpec LayerSpec::conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride,
                            std::size_t padding) {
    LayerSpec l;
    l.kind = LayerKind::conv2d;
    l.in = in_ch;
    l.out = out_ch;
    l.kernel = kernel;
    l.stride = stride;
    l.padding = padding;
    return l;
}

LayerSpec LayerSpec::maxpool(std::size_t kernel, std::size_t stride) {
    LayerSpec l;
    l.kind = LayerKind::maxpool;
    l.kernel = kernel;
    l.stride = stride;
    return l;
}

LayerSpec LayerSpec::flatten() { return LayerSpec{}; }

LayerSpec LayerSpec::relu() {
    LayerSpec l;
    l.kind = LayerKind::relu;
    return l;
}

LayerSpec LayerSpec::softplus(double beta) {
    LayerSpec l;
    l.kind = LayerKind::softplus;
    l.beta = beta;
    return l;
}

std::vector<Shape> NetworkSpec::layer_shapes() const {
    if (input_shape.empty() || shape_size(input_shape) == 0) throw data_error("network input shape is empty");
    std::vector<Shape> shapes{input_shape};
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        const Shape& in = shapes.back();
        const std::string where = "layer " + std::to_string(i) + " (" + to_string(l.kind) + ")";
        switch (l.kind) {
        case LayerKind::dense:
            if (in.size() != 1 || in[0] != l.in || l.out == 0) {
                throw data_error(where + " expects input [" + std::to_string(l.in) + "], got " + shape_string(in));
            }
            shapes.push_back({l.out});
            break;
        case LayerKind::conv2d: {
            if (in.size() != 3 || in[0] != l.in || l.out == 0 || l.kernel == 0 || l.stride == 0) {
                throw data_error(where + " expects input with " + std::to_string(l.in) + " channels, got " +
                                 shape_string(in));
            }
            const std::size_t h = in[1] + 2 * l.padding, w = in[2] + 2 * l.padding;
            if (h < l.kernel || w < l.kernel) throw data_error(where + " kernel larger than padded input");
            shapes.push_back({l.out, (h - l.kernel) / l.stride + 1, (w - l.kernel) / l.stride + 1});
            break;
        }
        case LayerKind::maxpool:
            if (in.size() != 3 || l.kernel == 0 || l.stride == 0 || in[1] < l.kernel || in[2] < l.kernel) {
                throw data_error(where + " incompatible with input " + shape_string(in));
            }
            shapes.push_back({in[0], (in[1] - l.kernel) / l.stride + 1, (in[2] - l.kernel) / l.stride + 1});
            break;
        case LayerKind::flatten:
            shapes.push_back({shape_size(in)});
            break;
        case LayerKind::softplus:
            if (!(l.beta > 0.0) || !std::isfinite(l.beta)) throw data_error(where + " needs beta > 0");
            shapes.push_back(in);
            break;
        case LayerKind::relu:
            shapes.push_back(in);
            break;
        }
    }
    if (shapes.back() != Shape{num_classes} || num_classes == 0) {
        throw data_error("network output " + shape_string(shapes.back()) + " is not a vector of " +
                         std::to_string(num_classes) + " logits");
    }
    return shapes;
}

std::vector<Shape> NetworkSpec::param_shapes() const {
    std::vector<Shape> out;
    for (const auto& l : layers) {
        if (l.kind == LayerKind::dense) {
            out.push_back({l.out, l.in});
            out.push_back({l.out});
        } else if (l.kind == LayerKind::conv2d) {
            out.push_back({l.out, l.in, l.kernel, l.kernel});
            out.push_back({l.out});
        }
    }
    return out;
}

std::size_t NetworkSpec::param_count() const {
    std::size_t n = 0;
    for (const auto& s : param_shapes()) n += shape_size(s);
    return n;
}

void Checkpoint::check() const {
    const auto shapes = spec.param_shapes();
    if (shapes.size() != params.size()) {
        throw data_error("checkpoint holds " + std::to_string(params.size()) + " parameter tensors, spec needs " +
                         std::to_string(shapes.size()));
    }
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        if (params[i].shape() != shapes[i]) {
            throw data_error("parameter tensor " + std::to_string(i) + " has shape " +
                             shape_string(params[i].shape()) + ", expected " + shape_string(shapes[i]));
        }
    }
}

namespace detail {

std::vector<int> param_index(const NetworkSpec& spec) {
    std::vector<int> idx(spec.layers.size(), -1);
    int next = 0;
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        if (spec.layers[i].has_params()) {
            idx[i] = next;
            next += 2;
        }
    }
    return idx;
}

}  // namespace detail

Checkpoint init_model(const NetworkSpec& spec, std::uint64_t seed) {
    spec.validate();
    Checkpoint m;
    m.spec = spec;
    m.rng_seed = seed;
    auto rng = make_rng(seed, "init");
    for (const auto& l : spec.layers) {
        if (!l.has_params()) continue;
        const std::size_t fan_in = l.kind == LayerKind::dense ? l.in : l.in * l.kernel * l.kernel;
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        Tensor w(l.kind == LayerKind::dense ? Shape{l.out, l.in} : Shape{l.out, l.in, l.kernel, l.kernel});
        for (auto& v : w.values()) v = dist(rng);
        m.params.push_back(std::move(w));
        m.params.emplace_back(Shape{l.out});
    }
    return m;
}

std::string to_string(Wrt wrt) { return wrt == Wrt::probability ? "probability" : "logit"; }

Wrt wrt_from_string(const std::string& name) {
    if (name == "probability") return Wrt::probability;
    if (name == "logit") return Wrt::logit;
    throw config_error("wrt must be 'probability' or 'logit', got '" + name + "'");
}

namespace {

void check_input(const Checkpoint& model, const Tensor& x) {
    if (x.shape() != model.spec.input_shape) {
        throw data_error("input shape " + shape_string(x.shape()) + " does not match model input " +
                         shape_string(model.spec.input_shape));
    }
}

void check_target(const Checkpoint& model, std::size_t target) {
    if (target >= model.spec.num_classes) {
        throw data_error("target class " + std::to_string(target) + " out of range for " +
                         std::to_string(model.spec.num_classes) + " classes");
    }
}

}  // namespace

Tensor forward(const Checkpoint& model, const Tensor& x) {
    check_input(model, x);
    auto acts = detail::run_forward<double>(model, x.data());
    return Tensor({model.spec.num_classes}, std::move(acts.values.back()));
}

std::vector<double> softmax(std::span<const double> logits) { return detail::softmax_t<double>(logits); }

std::vector<double> probabilities(const Checkpoint& model, const Tensor& x) {
    const Tensor logits = forward(model, x);
    return softmax(logits.values());
}

double target_probability(const Checkpoint& model, const Tensor& x, std::size_t target) {
    check_target(model, target);
    return probabilities(model, x)[target];
}

double target_score(const Checkpoint& model, const Tensor& x, std::size_t target, Wrt wrt) {
    check_target(model, target);
    if (wrt == Wrt::logit) return forward(model, x)[target];
    return target_probability(model, x, target);
}

Tensor input_gradient(const Checkpoint& model, const Tensor& x, std::size_t target, Wrt wrt) {
    check_input(model, x);
    check_target(model, target);
    const auto acts = detail::run_forward<double>(model, x.data());
    std::vector<double> seed(model.spec.num_classes, 0.0);
    if (wrt == Wrt::logit) {
        seed[target] = 1.0;
    } else {
        seed = detail::probability_seed(softmax(acts.values.back()), target);
    }
    return Tensor(x.shape(), detail::run_backward<double>(model, acts, std::move(seed)));
}

Tensor probability_vjp(const Checkpoint& model, const Tensor& x, std::span<const double> v) {
    check_input(model, x);
    const auto acts = detail::run_forward<double>(model, x.data());
    const auto p = softmax(acts.values.back());
    // d(v.p)/dz_j = p_j (v_j - v.p)
    double vp = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) vp += v[j] * p[j];
    std::vector<double> seed(p.size());
    for (std::size_t j = 0; j < p.size(); ++j) seed[j] = p[j] * (v[j] - vp);
    return Tensor(x.shape(), detail::run_backward<double>(model, acts, std::move(seed)));
}

Checkpoint replace_relu_with_softplus(Checkpoint model, double beta) {
    if (!(beta > 0.0)) throw config_error("softplus beta must be positive");
    for (auto& l : model.spec.layers) {
        if (l.kind == LayerKind::relu) l = LayerSpec::softplus(beta);
    }
    return model;
}

double cross_entropy_backward(const Checkpoint& model, const Tensor& x, std::size_t label,
                              std::vector<Tensor>& grads) {
    check_input(model, x);
    check_target(model, label);
    const auto acts = detail::run_forward<double>(model, x.data());
    const auto& z = acts.values.back();
    auto p = softmax(z);
    // log-softmax computed directly for accuracy near p -> 0
    double m = z[0];
    for (double v : z) m = std::max(m, v);
    double s = 0.0;
    for (double v : z) s += std::exp(v - m);
    const double loss = -(z[label] - m - std::log(s));
    p[label] -= 1.0;
    detail::run_backward<double>(model, acts, std::move(p), &grads);
    return loss;
}

double cross_entropy(const Checkpoint& model, const Tensor& x, std::size_t label) {
    check_target(model, label);
    const Tensor z = forward(model, x);
    double m = z[0];
    for (double v : z.values()) m = std::max(m, v);
    double s = 0.0;
    for (double v : z.values()) s += std::exp(v - m);
    return -(z[label] - m - std::log(s));
}

std::size_t predict(const Checkpoint& model, const Tensor& x) {
    const Tensor z = forward(model, x);
    std::size_t best = 0;
    for (std::size_t i = 1; i < z.size(); ++i) {
        if (z[i] > z[best]) best = i;
    }
    return best;
}

}  // namespace faithlab
