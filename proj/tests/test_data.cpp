#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "doctest.h"
#include "faithlab/data.hpp"
#include "faithlab/error.hpp"
#include "faithlab/io.hpp"
#include "fixtures.hpp"

using namespace faithlab;

namespace {

std::string be32(std::uint32_t v) {
    std::string s(4, '\0');
    for (int i = 0; i < 4; ++i) s[i] = static_cast<char>((v >> (24 - 8 * i)) & 0xff);
    return s;
}

std::string idx_images(std::uint32_t magic, const std::vector<unsigned char>& pixels, std::uint32_t count,
                       std::uint32_t rows, std::uint32_t cols) {
    std::string s = be32(magic) + be32(count) + be32(rows) + be32(cols);
    for (unsigned char p : pixels) s.push_back(static_cast<char>(p));
    return s;
}

std::string idx_labels(const std::vector<unsigned char>& labels) {
    std::string s = be32(0x00000801) + be32(static_cast<std::uint32_t>(labels.size()));
    for (unsigned char l : labels) s.push_back(static_cast<char>(l));
    return s;
}

std::size_t count_changed(const Tensor& a, const Tensor& b) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < a.size(); ++i) n += a[i] != b[i];
    return n;
}

}  // namespace

TEST_CASE("square trigger on a blank image") {
    Tensor x({1, 8, 8}, 0.0);
    auto trig = square_trigger(6, 6, 2, 0);
    Tensor y = apply_trigger(x, trig);
    CHECK(std::count(y.values().begin(), y.values().end(), 1.0) == 4);
    CHECK(apply_trigger(y, trig) == y);
    CHECK(trig.pixel_indices(8) == std::vector<std::size_t>{54, 55, 62, 63});
    CHECK_THROWS_AS(apply_trigger(x, square_trigger(7, 7, 2, 0)), Error);
}

TEST_CASE("trigger footprint limits") {
    SpatialLayout l{1, 8, 8};
    CHECK_NOTHROW(square_trigger(0, 0, 2, 0).validate(l));
    CHECK_THROWS_AS(square_trigger(0, 0, 3, 0).validate(l), Error);  // 9 of 64 pixels > 10%
    TriggerSpec empty;
    CHECK_THROWS_AS(empty.validate(l), Error);
    TriggerSpec dup = square_trigger(0, 0, 1, 0);
    dup.coords.push_back(dup.coords.front());
    dup.pattern.push_back(1.0);
    CHECK_THROWS_AS(dup.validate(l), Error);
}

TEST_CASE("apply_trigger touches exactly footprint x channels values") {
    auto x = fixtures::random_tensor({3, 10, 10}, 1, 0.1, 0.9);
    auto trig = square_trigger(2, 3, 3, 1);
    CHECK(count_changed(x, apply_trigger(x, trig)) == 27);
}

TEST_CASE("checkerboard pattern placement") {
    Tensor x({1, 8, 8}, 0.5);
    auto trig = checkerboard_trigger(1, 1, 2, 0);
    Tensor y = apply_trigger(x, trig);
    CHECK(y[1 * 8 + 1] == 1.0);
    CHECK(y[1 * 8 + 2] == 0.0);
    CHECK(y[2 * 8 + 1] == 0.0);
    CHECK(y[2 * 8 + 2] == 1.0);
    CHECK(y[0] == 0.5);
}

TEST_CASE("partial trigger order and nesting") {
    Tensor x({1, 16, 16}, 0.0);
    auto trig = square_trigger(0, 0, 4, 0);
    Tensor half = partial_trigger(x, trig, 0.5);
    for (std::size_t i = 0; i < 16; ++i) {
        const auto [r, c] = trig.coords[i];
        CHECK(half[r * 16 + c] == (i < 8 ? 1.0 : 0.0));
    }
    CHECK(partial_trigger(x, trig, 1.0) == apply_trigger(x, trig));
    CHECK_THROWS_AS(partial_trigger(x, trig, 0.0), Error);
    CHECK_THROWS_AS(partial_trigger(x, trig, 1.5), Error);
    Tensor prev = x;
    for (int k = 1; k <= 10; ++k) {
        Tensor cur = partial_trigger(x, trig, k / 10.0);
        for (std::size_t i = 0; i < cur.size(); ++i) {
            if (prev[i] == 1.0) CHECK(cur[i] == 1.0);
        }
        CHECK(count_changed(x, cur) == partial_count(16, k / 10.0));
        prev = cur;
    }
    CHECK(partial_count(16, 0.1) == 2);
}

TEST_CASE("synthetic images") {
    auto a = gen_synth_images(2, 20, 16, 16, 1, 7);
    CHECK(a.size() == 40);
    CHECK(a == gen_synth_images(2, 20, 16, 16, 1, 7));
    CHECK_FALSE(a == gen_synth_images(2, 20, 16, 16, 1, 8));
    for (const auto& x : a.inputs) {
        for (double v : x.values()) CHECK((v >= 0.0 && v <= 1.0));
    }
    CHECK(gen_synth_images(2, 0, 16, 16, 1, 7).empty());
}

TEST_CASE("tabular binary data and trigger") {
    auto d = gen_tabular_binary(135, 50, 3);
    CHECK(d.input_shape == Shape{135});
    CHECK(d == gen_tabular_binary(135, 50, 3));
    for (const auto& x : d.inputs) {
        for (double v : x.values()) CHECK((v == 0.0 || v == 1.0));
    }
    CHECK(gen_tabular_binary(135, 0, 3).empty());

    auto trig = tabular_trigger(d, 5, 1);
    CHECK(trig.coords.size() == 5);
    for (const auto& x : d.inputs) {
        bool all = true;
        for (const auto& [r, c] : trig.coords) all = all && x[r * 135 + c] == 1.0;
        CHECK_FALSE(all);
    }
}

TEST_CASE("poisoning") {
    auto clean = gen_synth_images(2, 500, 8, 8, 1, 1);
    auto trig = square_trigger(6, 6, 2, 0);
    auto p = poison_dataset(clean, trig, 0.05, 9);
    CHECK(p.size() == 1050);
    CHECK(p.poisoned.size() == 50);
    for (std::size_t i = 0; i < clean.size(); ++i) CHECK(p.inputs[i] == clean.inputs[i]);
    for (std::size_t i : p.poisoned) {
        CHECK(p.labels[i] == 0);
        CHECK(apply_trigger(p.inputs[i], trig) == p.inputs[i]);
    }
    CHECK(p == poison_dataset(clean, trig, 0.05, 9));
    CHECK_THROWS_AS(poison_dataset(clean, trig, 0.0, 9), Error);
    CHECK_THROWS_AS(poison_dataset(clean, trig, 1.5, 9), Error);
}

TEST_CASE("idx fixture") {
    auto dir = fixtures::scratch_dir("idx");
    write_text(dir / "img", idx_images(0x00000803, {0, 255, 255, 0, 255, 255, 0, 0}, 2, 2, 2));
    write_text(dir / "lab", idx_labels({3, 1}));
    Dataset d = load_idx(dir / "img", dir / "lab");
    REQUIRE(d.size() == 2);
    CHECK(d.input_shape == Shape{1, 2, 2});
    CHECK(d.inputs[0] == Tensor({1, 2, 2}, {0.0, 1.0, 1.0, 0.0}));
    CHECK(d.inputs[1] == Tensor({1, 2, 2}, {1.0, 1.0, 0.0, 0.0}));
    CHECK(d.labels == std::vector<std::size_t>{3, 1});
    CHECK(d.provenance == Provenance::idx);

    write_text(dir / "wrong", idx_labels({0, 1}));
    try {
        load_idx(dir / "wrong", dir / "lab");
        FAIL("expected magic error");
    } catch (const Error& e) {
        CHECK(e.issue() == FormatIssue::bad_magic);
    }
    write_text(dir / "three", idx_images(0x00000803, std::vector<unsigned char>(12, 7), 3, 2, 2));
    try {
        load_idx(dir / "three", dir / "lab");
        FAIL("expected count mismatch");
    } catch (const Error& e) {
        CHECK(e.issue() == FormatIssue::count_mismatch);
    }
    write_text(dir / "cut", idx_images(0x00000803, {0, 255, 255}, 2, 2, 2));
    try {
        load_idx(dir / "cut", dir / "lab");
        FAIL("expected truncation");
    } catch (const Error& e) {
        CHECK(e.issue() == FormatIssue::truncated);
    }
}

TEST_CASE("idx writer round trip at 8-bit resolution") {
    auto dir = fixtures::scratch_dir("idx_rt");
    Dataset d;
    d.input_shape = {1, 3, 3};
    d.num_classes = 4;
    for (int i = 0; i < 5; ++i) {
        Tensor x({1, 3, 3});
        for (std::size_t j = 0; j < 9; ++j) x[j] = static_cast<double>((i * 37 + j * 11) % 256) / 255.0;
        d.add(x, static_cast<std::size_t>(i % 4));
    }
    write_idx(d, dir / "i", dir / "l");
    Dataset back = load_idx(dir / "i", dir / "l");
    CHECK(back.labels == d.labels);
    for (std::size_t i = 0; i < d.size(); ++i) CHECK(max_abs_diff(back.inputs[i], d.inputs[i]) < 1e-15);
}

TEST_CASE("dataset container round trip") {
    auto dir = fixtures::scratch_dir("dset");
    auto clean = gen_synth_images(2, 10, 6, 6, 2, 4);
    auto p = poison_dataset(clean, square_trigger(0, 0, 1, 1), 0.1, 2);
    save_dataset(p, dir / "p.ftd");
    CHECK(load_dataset(dir / "p.ftd") == p);
    CHECK(read_text(dir / "p.ftd").substr(0, 8) == "FTDSET01");
}

TEST_CASE("spurious dataset construction") {
    auto s = gen_spurious_dataset(5, 20, 16);
    CHECK(s.train.size() == 40);
    CHECK(s.probes.size() == 6);
    for (const char* name : {"objA_bgB", "objB_bgA", "objA_only", "objB_only", "bgA_only", "bgB_only"}) {
        CHECK(s.probes.count(name) == 1);
    }
    REQUIRE(s.masks.size() == 2);
    for (const auto& m : s.masks) {
        for (std::size_t r = s.object_top; r < s.object_top + s.object_size; ++r) {
            for (std::size_t c = s.object_left; c < s.object_left + s.object_size; ++c) CHECK(m[r * 16 + c] == 0.0);
        }
        CHECK(std::count(m.values().begin(), m.values().end(), 1.0) > 0);
    }
}
