#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string_view>

namespace mtriage {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to fan one seed out into independent streams.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t key) noexcept {
    return mix64(mix64(seed) ^ mix64(key + 0x632be59bd9b4e019ULL));
}

// FNV-1a, stable across platforms; lets stages key their streams by name.
constexpr std::uint64_t hash_name(std::string_view name) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : name) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view stage) noexcept {
    return derive_seed(seed, hash_name(stage));
}

inline Rng make_rng(std::uint64_t seed) {
    return Rng(seed);
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t key) {
    return Rng(derive_seed(seed, key));
}

/// Uniform double in [0, 1) with 53 random bits; independent of the
/// standard library's distribution implementation.
inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform integer in [0, n). Rejection sampling, no modulo bias.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
        x = rng();
    } while (x >= limit);
    return x % n;
}

inline bool bernoulli(Rng& rng, double p) {
    return uniform01(rng) < p;
}

/// Standard normal via Box-Muller (one value per call).
inline double standard_normal(Rng& rng) {
    double u1;
    do {
        u1 = uniform01(rng);
    } while (u1 <= 0.0);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

/// Fisher-Yates shuffle driven by uniform_index.
template <typename It>
void shuffle(It first, It last, Rng& rng) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
        const auto j = uniform_index(rng, i);
        std::iter_swap(first + (i - 1), first + j);
    }
}

} // namespace mtriage
