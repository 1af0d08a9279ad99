#include <cmath>
#include <fstream>
#include <numeric>

#include "doctest.h"
#include "faithlab/attack.hpp"
#include "faithlab/error.hpp"
#include "faithlab/io.hpp"
#include "faithlab/nn.hpp"
#include "faithlab/parallel.hpp"
#include "faithlab/reference.hpp"
#include "fixtures.hpp"

using namespace faithlab;
using fixtures::random_tensor;

namespace {

double rel_err(const Tensor& got, const Tensor& want) {
    double scale = 0.0;
    for (double v : want.values()) scale = std::max(scale, std::abs(v));
    return max_abs_diff(got, want) / std::max(scale, 1e-12);
}

}  // namespace

TEST_CASE("tensor shape bookkeeping") {
    Tensor t({2, 3}, 1.5);
    CHECK(t.size() == 6);
    CHECK(shape_string(t.shape()) == "[2,3]");
    CHECK(t.reshaped({6}).shape() == Shape{6});
    CHECK_THROWS_AS(t.reshaped({4}), Error);
    CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), Error);
    auto l = spatial_layout({3, 4, 5});
    CHECK(l.channels == 3);
    CHECK(l.pixels() == 20);
    auto flat = spatial_layout({7});
    CHECK(flat.height == 1);
    CHECK(flat.width == 7);
}

TEST_CASE("forward hand cases") {
    auto id = fixtures::linear_model(2, {1, 0, 0, 1}, {0, 0});
    Tensor z = forward(id, Tensor({2}, {1.0, 2.0}));
    CHECK(z[0] == 1.0);
    CHECK(z[1] == 2.0);

    NetworkSpec spec;
    spec.input_shape = {2};
    spec.num_classes = 1;
    spec.layers = {LayerSpec::dense(2, 1)};
    Checkpoint m = init_model(spec, 0);
    m.params[0] = Tensor({1, 2}, {3.0, -1.0});
    m.params[1] = Tensor({1}, {0.5});
    CHECK(forward(m, Tensor({2}, {2.0, 4.0}))[0] == doctest::Approx(2.5).epsilon(1e-15));

    CHECK_THROWS_AS(forward(id, Tensor({3}, 0.0)), Error);
}

TEST_CASE("softmax hand cases") {
    auto m = fixtures::linear_model(1, {0, 0, 0, 0}, {0, 0, 0, 0});
    for (std::size_t t = 0; t < 4; ++t) CHECK(target_probability(m, Tensor({1}, 0.3), t) == doctest::Approx(0.25));
    auto two = fixtures::linear_model(1, {0, 0}, {0.0, std::log(3.0)});
    CHECK(target_probability(two, Tensor({1}, 1.0), 1) == doctest::Approx(0.75).epsilon(1e-14));
    CHECK_THROWS_AS(target_probability(two, Tensor({1}, 1.0), 2), Error);
}

TEST_CASE("forward matches the straight-loop evaluator") {
    for (std::uint64_t s = 0; s < 20; ++s) {
        const double beta = s % 2 ? 0.0 : 2.0;
        auto m = fixtures::conv_net(2, 6, 6, 3, beta, s);
        auto x = random_tensor({2, 6, 6}, s, -1.0, 1.0);
        CHECK(max_abs_diff(forward(m, x), reference::forward(m, x)) < 1e-12);
        auto p = probabilities(m, x);
        CHECK(std::accumulate(p.begin(), p.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
        for (double v : p) CHECK((v >= 0.0 && v <= 1.0));
        CHECK(forward(m, x) == forward(m, x));
    }
}

TEST_CASE("input gradient: linear and constant models") {
    auto m = fixtures::linear_model(3, {1, 2, 3, -4, 5, -6}, {0.1, 0.2});
    Tensor x({3}, {0.3, -0.2, 0.9});
    Tensor g = input_gradient(m, x, 1, Wrt::logit);
    CHECK(g == Tensor({3}, {-4.0, 5.0, -6.0}));
    auto zero = fixtures::linear_model(3, {0, 0, 0, 0, 0, 0}, {0.1, 0.2});
    const Tensor g0 = input_gradient(zero, x, 0);
    for (double v : g0.values()) CHECK(v == 0.0);
}

TEST_CASE("input gradient matches central differences") {
    for (std::uint64_t s = 0; s < 30; ++s) {
        const bool conv = s % 3 == 0;
        auto m = conv ? fixtures::conv_net(1, 4, 4, 3, 3.0, s) : fixtures::dense_net(5, {6, 4}, 3, 2.0, s);
        auto x = random_tensor(m.spec.input_shape, s + 100, -1.0, 1.0);
        for (Wrt wrt : {Wrt::probability, Wrt::logit}) {
            const std::size_t target = s % 3;
            CHECK(rel_err(input_gradient(m, x, target, wrt), reference::fd_gradient(m, x, target, wrt)) < 1e-4);
        }
    }
}

TEST_CASE("parameter gradients match central differences") {
    for (std::uint64_t s = 0; s < 6; ++s) {
        auto m = s % 2 ? fixtures::conv_net(1, 4, 4, 2, 2.0, s) : fixtures::dense_net(4, {5}, 3, 2.0, s);
        auto x = random_tensor(m.spec.input_shape, s + 7, -1.0, 1.0);
        const std::size_t label = s % 2;
        std::vector<Tensor> grads;
        for (const auto& p : m.params) grads.push_back(Tensor::zeros_like(p));
        cross_entropy_backward(m, x, label, grads);
        const double h = 1e-5;
        for (std::size_t t = 0; t < m.params.size(); ++t) {
            Tensor fd = Tensor::zeros_like(m.params[t]);
            for (std::size_t i = 0; i < fd.size(); ++i) {
                Checkpoint mp = m, mm = m;
                mp.params[t][i] += h;
                mm.params[t][i] -= h;
                fd[i] = (cross_entropy(mp, x, label) - cross_entropy(mm, x, label)) / (2 * h);
            }
            CHECK(rel_err(grads[t], fd) < 1e-4);
        }
    }
}

TEST_CASE("hessian-vector product matches differences of gradients") {
    auto m = fixtures::dense_net(4, {6}, 2, 3.0, 11);
    auto x = random_tensor({4}, 3, -1.0, 1.0);
    auto v = random_tensor({4}, 4, -1.0, 1.0);
    for (Wrt wrt : {Wrt::probability, Wrt::logit}) {
        const double h = 1e-5;
        Tensor xp = x, xm = x;
        for (std::size_t i = 0; i < x.size(); ++i) {
            xp[i] += h * v[i];
            xm[i] -= h * v[i];
        }
        Tensor gp = input_gradient(m, xp, 1, wrt), gm = input_gradient(m, xm, 1, wrt);
        Tensor fd(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i) fd[i] = (gp[i] - gm[i]) / (2 * h);
        CHECK(rel_err(score_hvp(m, x, 1, v, wrt), fd) < 1e-5);
    }
}

TEST_CASE("softplus swap") {
    auto soft = fixtures::dense_net(3, {4}, 2, 2.0, 1);
    CHECK(replace_relu_with_softplus(soft, 30.0) == soft);

    // 0 <= softplus - relu <= ln2 / beta per unit, so one hidden layer moves
    // each logit by at most ln2 / beta * sum |w2|; the typical shift is far smaller.
    double total = 0.0;
    std::size_t n = 0;
    for (std::uint64_t s = 0; s < 20; ++s) {
        const NetworkSpec spec = fixtures::dense_net(8, {16}, 3, 0.0, s).spec;
        const Checkpoint relu = init_model(spec, s);
        const Checkpoint smooth = replace_relu_with_softplus(relu, 30.0);
        CHECK(smooth.params == relu.params);
        for (const auto& l : smooth.spec.layers) CHECK(l.kind != LayerKind::relu);
        const Tensor& w2 = relu.params[2];
        for (std::uint64_t k = 0; k < 10; ++k) {
            auto x = random_tensor({8}, s * 100 + k);
            Tensor a = forward(relu, x), b = forward(smooth, x);
            for (std::size_t c = 0; c < a.size(); ++c) {
                double bound = 0.0;
                for (std::size_t j = 0; j < 16; ++j) bound += std::abs(w2[c * 16 + j]);
                bound *= std::log(2.0) / 30.0;
                CHECK(std::abs(a[c] - b[c]) <= bound + 1e-12);
                total += std::abs(a[c] - b[c]);
                ++n;
            }
        }
    }
    CHECK(total / static_cast<double>(n) < 1e-2);

    // every pre-activation >= 1: softplus and relu agree to rounding
    auto relu = fixtures::linear_model(2, {1, 0, 0, 1}, {1, 1});
    NetworkSpec spec = relu.spec;
    spec.layers.push_back(LayerSpec::relu());
    spec.num_classes = 2;
    Checkpoint with_act = relu;
    with_act.spec = spec;
    Tensor x({2}, {0.5, 2.0});
    Tensor r = forward(with_act, x), sp = forward(replace_relu_with_softplus(with_act, 30.0), x);
    for (std::size_t k = 0; k < 2; ++k) CHECK(sp[k] - r[k] < 1e-12);
    CHECK_THROWS_AS(replace_relu_with_softplus(with_act, 0.0), Error);
}

TEST_CASE("network spec validation") {
    NetworkSpec spec;
    spec.input_shape = {4};
    spec.num_classes = 2;
    spec.layers = {LayerSpec::dense(5, 2)};
    CHECK_THROWS_AS(spec.validate(), Error);
    spec.layers = {LayerSpec::dense(4, 3)};
    CHECK_THROWS_AS(spec.validate(), Error);
    spec.layers = {LayerSpec::dense(4, 2), LayerSpec::softplus(-1.0)};
    CHECK_THROWS_AS(spec.validate(), Error);

    Checkpoint m = fixtures::dense_net(4, {3}, 2, 1.0, 0);
    m.params.pop_back();
    CHECK_THROWS_AS(m.check(), Error);
}

TEST_CASE("init is seeded") {
    NetworkSpec spec = fixtures::dense_net(4, {3}, 2, 1.0, 0).spec;
    CHECK(init_model(spec, 5) == init_model(spec, 5));
    CHECK_FALSE(init_model(spec, 5) == init_model(spec, 6));
}

TEST_CASE("checkpoint round trip and format errors") {
    auto dir = fixtures::scratch_dir("ckpt");
    Checkpoint m = fixtures::conv_net(1, 4, 4, 2, 0.0, 3);
    m.epoch = 4;
    m.step = 17;
    m.train_loss = 0.1234567890123;
    m.rng_seed = 99;
    save_checkpoint(m, dir / "m.bin");
    CHECK(load_checkpoint(dir / "m.bin") == m);

    std::string bytes = read_text(dir / "m.bin");
    CHECK(bytes.substr(0, 8) == "FTCKPT01");

    std::string bad = bytes;
    bad[0] = 'X';
    write_text(dir / "bad.bin", bad);
    try {
        load_checkpoint(dir / "bad.bin");
        FAIL("expected a format error");
    } catch (const Error& e) {
        CHECK(e.issue() == FormatIssue::bad_magic);
    }

    write_text(dir / "short.bin", bytes.substr(0, bytes.size() - 8));
    try {
        load_checkpoint(dir / "short.bin");
        FAIL("expected a format error");
    } catch (const Error& e) {
        CHECK(e.issue() == FormatIssue::truncated);
    }
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.bin"), Error);
}

TEST_CASE("serial and parallel gradients agree bit for bit") {
    auto m = fixtures::conv_net(1, 8, 8, 2, 0.0, 4);
    auto x = random_tensor({1, 8, 8}, 8);
    Tensor par = input_gradient(m, x, 0);
    Tensor ser;
    {
        SerialScope serial;
        ser = input_gradient(m, x, 0);
    }
    CHECK(par == ser);
}
