#pragma once

// Definitional reference computations shared by the unit and acceptance suites.

#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "faithlab/explain.hpp"
#include "faithlab/reference.hpp"

namespace oracles {

using namespace faithlab;

/// Two-pass Pearson correlation.
inline double two_pass_pcc(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

/// Shapley values by enumerating every coalition of the M features.
inline std::vector<double> brute_force_shapley(const Checkpoint& m, const Tensor& x, const Tensor& base,
                                               std::size_t target, Wrt wrt) {
    const std::size_t M = x.size();
    std::vector<double> v(std::size_t{1} << M);
    for (std::size_t mask = 0; mask < v.size(); ++mask) {
        Tensor z = base;
        for (std::size_t i = 0; i < M; ++i) {
            if (mask >> i & 1) z[i] = x[i];
        }
        v[mask] = reference::target_score(m, z, target, wrt);
    }
    std::vector<double> fact(M + 1, 1.0);
    for (std::size_t i = 1; i <= M; ++i) fact[i] = fact[i - 1] * static_cast<double>(i);
    std::vector<double> phi(M, 0.0);
    for (std::size_t i = 0; i < M; ++i) {
        for (std::size_t mask = 0; mask < v.size(); ++mask) {
            if (mask >> i & 1) continue;
            const std::size_t s = static_cast<std::size_t>(__builtin_popcountll(mask));
            phi[i] += fact[s] * fact[M - s - 1] / fact[M] * (v[mask | (std::size_t{1} << i)] - v[mask]);
        }
    }
    return phi;
}

/// One segment per feature.
inline Segmentation singletons(std::size_t n) {
    Segmentation s;
    s.count = n;
    s.pixel_segment.resize(n);
    std::iota(s.pixel_segment.begin(), s.pixel_segment.end(), 0);
    return s;
}

}  // namespace oracles
