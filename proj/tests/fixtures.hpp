#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "faithlab/nn.hpp"
#include "faithlab/rng.hpp"
#include "faithlab/tensor.hpp"

namespace fixtures {

using namespace faithlab;

inline Tensor random_tensor(const Shape& shape, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
    Rng rng = make_rng(seed, "fixture.tensor");
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(shape);
    for (auto& v : t.values()) v = u(rng);
    return t;
}

// Random parameters everywhere, biases included, so no unit sits at a kink by construction.
inline Checkpoint randomize(Checkpoint m, std::uint64_t seed, double bias_scale = 0.3) {
    Rng rng = make_rng(seed, "fixture.bias");
    std::uniform_real_distribution<double> u(-bias_scale, bias_scale);
    for (std::size_t i = 1; i < m.params.size(); i += 2) {
        for (auto& v : m.params[i].values()) v = u(rng);
    }
    return m;
}

inline LayerSpec activation(double beta) { return beta > 0.0 ? LayerSpec::softplus(beta) : LayerSpec::relu(); }

/// in -> hidden... -> classes with the given activation (beta <= 0 means relu).
inline Checkpoint dense_net(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t classes, double beta,
                            std::uint64_t seed) {
    NetworkSpec spec;
    spec.input_shape = {in};
    spec.num_classes = classes;
    std::size_t prev = in;
    for (std::size_t h : hidden) {
        spec.layers.push_back(LayerSpec::dense(prev, h));
        spec.layers.push_back(activation(beta));
        prev = h;
    }
    spec.layers.push_back(LayerSpec::dense(prev, classes));
    return randomize(init_model(spec, seed), seed);
}

/// conv3x3 -> act -> maxpool2 -> flatten -> dense -> act -> dense on a {C,H,W} input (H, W even).
inline Checkpoint conv_net(std::size_t channels, std::size_t height, std::size_t width, std::size_t classes,
                           double beta, std::uint64_t seed, std::size_t filters = 3, std::size_t hidden = 8) {
    NetworkSpec spec;
    spec.input_shape = {channels, height, width};
    spec.num_classes = classes;
    spec.layers = {LayerSpec::conv2d(channels, filters, 3, 1, 1),
                   activation(beta),
                   LayerSpec::maxpool(2, 2),
                   LayerSpec::flatten(),
                   LayerSpec::dense(filters * (height / 2) * (width / 2), hidden),
                   activation(beta),
                   LayerSpec::dense(hidden, classes)};
    return randomize(init_model(spec, seed), seed);
}

/// Logits W x + b on a flat input; W is classes x in, row-major.
inline Checkpoint linear_model(std::size_t in, const std::vector<double>& w, const std::vector<double>& b) {
    NetworkSpec spec;
    spec.input_shape = {in};
    spec.num_classes = b.size();
    spec.layers = {LayerSpec::dense(in, b.size())};
    Checkpoint m = init_model(spec, 0);
    m.params[0] = Tensor({b.size(), in}, w);
    m.params[1] = Tensor({b.size()}, b);
    return m;
}

/// Same as linear_model but on a {1,H,W} image (flatten first).
inline Checkpoint linear_image_model(std::size_t height, std::size_t width, const std::vector<double>& w,
                                     const std::vector<double>& b) {
    NetworkSpec spec;
    spec.input_shape = {1, height, width};
    spec.num_classes = b.size();
    spec.layers = {LayerSpec::flatten(), LayerSpec::dense(height * width, b.size())};
    Checkpoint m = init_model(spec, 0);
    m.params[0] = Tensor({b.size(), height * width}, w);
    m.params[1] = Tensor({b.size()}, b);
    return m;
}

/// Fresh, empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("faithlab_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace fixtures
