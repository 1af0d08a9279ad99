#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "faithlab/data.hpp"
#include "faithlab/error.hpp"
#include "faithlab/faithtest.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace faithlab;
using fixtures::random_tensor;
using oracles::two_pass_pcc;

namespace {

ImportantFeatureSet make_set(std::vector<std::size_t> idx, std::size_t h, std::size_t w) {
    ImportantFeatureSet s;
    s.k = idx.size();
    s.indices = std::move(idx);
    s.height = h;
    s.width = w;
    s.fraction = static_cast<double>(s.k) / static_cast<double>(h * w);
    return s;
}

// Linear image model whose target logit weights the trigger pixels by `strength`.
Checkpoint trigger_model(const TriggerSpec& trig, double strength) {
    std::vector<double> w(2 * 64, 0.0);
    for (std::size_t p : trig.pixel_indices(8)) w[trig.target_label * 64 + p] = strength;
    return fixtures::linear_image_model(8, 8, w, {0.0, 0.5});
}

}  // namespace

TEST_CASE("pcc hand cases") {
    const std::vector<double> a = {1, 2, 3};
    CHECK(*pcc(a, std::vector<double>{2, 4, 6}) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(*pcc(a, std::vector<double>{3, 2, 1}) == doctest::Approx(-1.0).epsilon(1e-15));
    const std::vector<double> c = {1, 2, 3, 4}, d = {1, 3, 2, 5};
    CHECK(std::abs(*pcc(c, d) - two_pass_pcc(c, d)) < 1e-12);
    CHECK_FALSE(pcc(a, std::vector<double>{5, 5, 5}).has_value());
    CHECK_FALSE(pcc(std::vector<double>{0, 0}, std::vector<double>{1, 2}).has_value());
    CHECK_THROWS_AS(pcc(a, std::vector<double>{1, 2}), Error);
    CHECK_THROWS_AS(pcc(std::vector<double>{1}, std::vector<double>{1}), Error);
}

TEST_CASE("pcc oracle, affine invariance and antisymmetry") {
    Rng rng = make_rng(7, "pcc");
    std::normal_distribution<double> n(0.0, 1.0);
    std::uniform_int_distribution<int> len(2, 40);
    for (int t = 0; t < 300; ++t) {
        const int L = len(rng);
        std::vector<double> a(L), b(L);
        for (int i = 0; i < L; ++i) {
            a[i] = n(rng) * 10.0 + 3.0;
            b[i] = 0.5 * a[i] + n(rng);
        }
        const double r = *pcc(a, b);
        CHECK(std::abs(r - two_pass_pcc(a, b)) < 1e-12);
        std::vector<double> pos(L), neg(L);
        for (int i = 0; i < L; ++i) {
            pos[i] = 2.5 * b[i] + 7.0;
            neg[i] = -0.3 * b[i] - 1.0;
        }
        CHECK(std::abs(*pcc(a, pos) - r) < 1e-12);
        CHECK(std::abs(*pcc(a, neg) + r) < 1e-12);
        CHECK(std::abs(*pcc(b, a) - r) < 1e-12);
    }
}

TEST_CASE("strength labels") {
    CHECK(strength_label(0.95) == "very large");
    CHECK(strength_label(0.9) == "large");
    CHECK(strength_label(0.71) == "large");
    CHECK(strength_label(0.7) == "moderate");
    CHECK(strength_label(0.5) == "small");
    CHECK(strength_label(0.3) == "negligible");
    CHECK(strength_label(-0.8) == "negligible");
    CHECK(strength_label(std::optional<double>{}) == "undefined");
    CHECK_THROWS_AS(strength_label(std::nan("")), Error);
}

TEST_CASE("traditional tests: empty sets are exactly zero") {
    auto m = fixtures::conv_net(1, 8, 8, 2, 0.0, 2);
    auto x = random_tensor({1, 8, 8}, 1);
    auto donor = random_tensor({1, 8, 8}, 2);
    auto empty = make_set({}, 8, 8);
    CHECK(reduction_test(m, x, empty, 0) == 0.0);
    CHECK(synthesis_test(m, x, empty, 0) == 0.0);
    CHECK(augmentation_test(m, x, 0, donor, 1, empty, 0) == 0.0);
    CHECK_THROWS_AS(augmentation_test(m, x, 1, donor, 1, empty, 0), Error);
}

TEST_CASE("traditional tests against direct evaluation") {
    auto m = fixtures::conv_net(2, 6, 6, 3, 0.0, 3);
    auto x = random_tensor({2, 6, 6}, 5);
    auto donor = random_tensor({2, 6, 6}, 6);
    auto set = make_set({0, 7, 20, 35}, 6, 6);

    Tensor removed = x, synth({2, 6, 6}, 0.0), aug = donor;
    for (std::size_t ch = 0; ch < 2; ++ch) {
        for (std::size_t p : set.indices) {
            removed[ch * 36 + p] = 0.25;
            synth[ch * 36 + p] = x[ch * 36 + p];
            aug[ch * 36 + p] = x[ch * 36 + p];
        }
    }
    CHECK(reduction_test(m, x, set, 2, 0.25) ==
          doctest::Approx(target_probability(m, removed, 2) - target_probability(m, x, 2)).epsilon(1e-14));
    CHECK(synthesis_test(m, x, set, 2) ==
          doctest::Approx(target_probability(m, synth, 2) - target_probability(m, Tensor({2, 6, 6}), 2))
              .epsilon(1e-14));
    CHECK(augmentation_test(m, x, 0, donor, 1, set, 2) ==
          doctest::Approx(target_probability(m, aug, 2) - target_probability(m, donor, 2)).epsilon(1e-14));
}

TEST_CASE("donor picking") {
    auto pool = gen_synth_images(3, 10, 4, 4, 1, 1);
    for (std::uint64_t s = 0; s < 20; ++s) {
        const std::size_t i = pick_donor(pool, 1, s);
        CHECK(pool.labels[i] != 1);
        CHECK(pick_donor(pool, 1, s) == i);
    }
}

TEST_CASE("trigger coverage is bounded and monotone") {
    auto trig = square_trigger(5, 5, 3, 0);  // 9 pixels of a 16x16 image
    CHECK(trigger_coverage(make_set({}, 16, 16), trig) == 0.0);
    std::vector<std::size_t> idx;
    double prev = 0.0;
    for (std::size_t p : {0u, 85u, 86u, 3u, 101u, 200u, 117u, 87u, 102u, 103u, 118u, 119u}) {
        idx.push_back(p);
        std::vector<std::size_t> sorted = idx;
        std::sort(sorted.begin(), sorted.end());
        const double c = trigger_coverage(make_set(sorted, 16, 16), trig);
        CHECK(c >= prev);
        CHECK(c <= 1.0);
        prev = c;
    }
    CHECK(prev == 1.0);
}

TEST_CASE("feature change") {
    auto a = make_set({1, 2, 3}, 4, 4), b = make_set({1, 2, 4}, 4, 4);
    CHECK(feature_change(a, b) == doctest::Approx(1.0 / 3.0));
    CHECK(feature_change(a, a) == 0.0);
    CHECK(feature_change(a, make_set({5, 6, 7}, 4, 4)) == 1.0);
}

TEST_CASE("embt on hand-built checkpoints") {
    auto trig = square_trigger(5, 5, 2, 0);
    std::vector<Checkpoint> cks;
    for (int c = 0; c < 5; ++c) {
        cks.push_back(trigger_model(trig, 0.5 * c));
        cks.back().step = static_cast<std::uint64_t>(10 * c);
    }
    std::vector<Tensor> inputs = {random_tensor({1, 8, 8}, 1, 0.0, 0.5), random_tensor({1, 8, 8}, 2, 0.0, 0.5)};
    const auto footprint = trig.pixel_indices(8);
    // step c covers min(c, 4) trigger pixels for input 0; input 1 gets a constant set
    SetProvider provider = [&](const Checkpoint&, const Tensor&, std::size_t, std::size_t input, std::size_t c) {
        std::vector<std::size_t> idx = {0};
        if (input == 0) {
            for (std::size_t j = 0; j < std::min<std::size_t>(c, 4); ++j) idx.push_back(footprint[j]);
        } else {
            idx.push_back(footprint[0]);
        }
        std::sort(idx.begin(), idx.end());
        return make_set(idx, 8, 8);
    };
    auto rep = embt(cks, trig, inputs, provider, "toy");
    REQUIRE(rep.series.size() == 2);
    CHECK(rep.series[0].steps == std::vector<double>{0, 10, 20, 30, 40});
    std::vector<double> p, cov;
    for (int c = 0; c < 5; ++c) {
        p.push_back(target_probability(cks[c], apply_trigger(inputs[0], trig), 0));
        cov.push_back(std::min(c, 4) / 4.0);
    }
    CHECK(rep.series[0].model_signal == p);
    CHECK(rep.series[0].explainer_signal == cov);
    CHECK(std::abs(*rep.series[0].pcc - two_pass_pcc(p, cov)) < 1e-12);
    CHECK_FALSE(rep.series[1].pcc.has_value());
    CHECK(rep.undefined_count == 1);
    CHECK(*rep.mean_pcc == *rep.series[0].pcc);

    auto back = report_from_json(to_json(rep));
    CHECK(back.per_input == rep.per_input);
    CHECK(back.mean_pcc == rep.mean_pcc);
    CHECK(to_json(rep)["strength"] == rep.strength());
    CHECK(trend_csv(rep).rfind("input_id,step,model_signal,explainer_signal\n", 0) == 0);
}

TEST_CASE("ptt uses the partial stamp and full-footprint coverage") {
    auto trig = square_trigger(4, 4, 2, 0);
    auto model = trigger_model(trig, 3.0);
    std::vector<double> fractions;
    for (int k = 1; k <= 10; ++k) fractions.push_back(k / 10.0);
    std::vector<Tensor> inputs = {Tensor({1, 8, 8}, 0.0)};
    SetProvider provider = [&](const Checkpoint&, const Tensor& x, std::size_t, std::size_t, std::size_t) {
        // pick the stamped pixels: coverage tracks the stamp exactly
        std::vector<std::size_t> idx;
        for (std::size_t p = 0; p < 64; ++p) {
            if (x[p] == 1.0) idx.push_back(p);
        }
        if (idx.empty()) idx.push_back(0);
        return make_set(idx, 8, 8);
    };
    auto rep = ptt(model, trig, fractions, inputs, provider, "toy");
    REQUIRE(rep.series.size() == 1);
    for (std::size_t f = 0; f < fractions.size(); ++f) {
        CHECK(rep.series[0].explainer_signal[f] ==
              static_cast<double>(partial_count(4, fractions[f])) / 4.0);
        CHECK(rep.series[0].model_signal[f] ==
              target_probability(model, partial_trigger(inputs[0], trig, fractions[f]), 0));
    }
    REQUIRE(rep.model_side_pcc.has_value());
    CHECK(*rep.model_side_pcc > 0.7);
    CHECK(std::abs(*rep.mean_pcc - two_pass_pcc(rep.series[0].model_signal, rep.series[0].explainer_signal)) < 1e-12);
    CHECK(*rep.mean_pcc > 0.0);
}

TEST_CASE("emt pairs loss changes with feature changes") {
    std::vector<Checkpoint> cks(4, fixtures::conv_net(1, 4, 4, 2, 0.0, 1));
    const std::vector<double> losses = {2.0, 1.0, 0.9, 0.3};
    std::vector<Tensor> inputs = {Tensor({1, 4, 4}, 0.5)};
    const std::vector<std::vector<std::size_t>> sets = {{0, 1, 2, 3}, {4, 5, 6, 7}, {4, 5, 6, 8}, {4, 9, 10, 11}};
    SetProvider provider = [&](const Checkpoint&, const Tensor&, std::size_t, std::size_t, std::size_t c) {
        return make_set(sets[c], 4, 4);
    };
    auto rep = emt(cks, losses, inputs, {0}, provider, "toy");
    const std::vector<double> dl = {1.0, 0.1, 0.6}, df = {1.0, 0.25, 0.75};
    REQUIRE(rep.series.size() == 1);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(rep.series[0].model_signal[i] == doctest::Approx(dl[i]));
        CHECK(rep.series[0].explainer_signal[i] == doctest::Approx(df[i]));
    }
    CHECK(*rep.mean_pcc == doctest::Approx(two_pass_pcc(dl, df)).epsilon(1e-12));

    SetProvider constant = [&](const Checkpoint&, const Tensor&, std::size_t, std::size_t, std::size_t) {
        return make_set({1, 2}, 4, 4);
    };
    auto flat = emt(cks, losses, inputs, {0}, constant, "constant");
    CHECK_FALSE(flat.mean_pcc.has_value());
    CHECK(flat.undefined_count == 1);
    CHECK(flat.strength() == "undefined");
    CHECK(to_json(flat)["mean_pcc"].is_null());
    CHECK_THROWS_AS(emt({cks[0], cks[1]}, {1.0, 0.5}, inputs, {0}, constant, "x"), Error);
}

TEST_CASE("backdoor gate") {
    CHECK_FALSE(gate_check("embt", "ig", 0.99).has_value());
    auto r = gate_check("embt", "ig", 0.5);
    REQUIRE(r.has_value());
    CHECK(r->status == "gate_failed");
    CHECK_FALSE(r->mean_pcc.has_value());
}

TEST_CASE("ssim basics") {
    auto a = random_tensor({1, 16, 16}, 1);
    auto b = random_tensor({1, 16, 16}, 2);
    CHECK(ssim(a, a) == 1.0);
    CHECK(std::abs(ssim(a, b) - ssim(b, a)) <= 1e-12);
    CHECK(ssim(a, b) < 0.5);
    Tensor c({1, 16, 16}, 0.3);
    CHECK(ssim(c, c) == 1.0);
    CHECK_THROWS_AS(ssim(a, Tensor({1, 8, 8})), Error);

    // a mask agrees with itself better than with its complement
    auto set = make_set({0, 1, 2, 16, 17, 18, 32, 33, 34}, 16, 16);
    Tensor mask = set_mask(set), comp = mask;
    for (auto& v : comp.values()) v = 1.0 - v;
    CHECK(ssim(mask, mask) > ssim(mask, comp));
}
