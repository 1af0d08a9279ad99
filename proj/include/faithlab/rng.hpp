#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace faithlab {

/// splitmix64 finalizer; used to derive independent seeds.
constexpr std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t hash_name(std::string_view name) {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (char c : name) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Seed for a named substream ("data", "init", "shuffle", "explainer", "attack", ...).
constexpr std::uint64_t substream_seed(std::uint64_t seed, std::string_view name) {
    return mix64(seed ^ mix64(hash_name(name)));
}

/// Seed for the i-th item of a parallel loop.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
    return mix64(seed + mix64(index + 0x632be59bd9b4e019ULL));
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }
inline Rng make_rng(std::uint64_t seed, std::string_view stream) { return Rng(substream_seed(seed, stream)); }

}  // namespace faithlab
