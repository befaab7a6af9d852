#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace wch {

// Error taxonomy. The CLI maps these onto exit codes, so every failure in the
// library should surface as one of them.
struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ParameterError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct EncodingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Seeding
//
// All randomness in the project flows through mt19937_64 engines seeded via
// split_mix64 so that every run is a pure function of the user-visible seeds.
// Derived streams (per step, per view, per image) come from seed_mix rather
// than from shared engine state; this is what makes checkpoint resume bitwise
// reproducible without serializing generator state.
// ---------------------------------------------------------------------------

inline uint64_t split_mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t seed_mix(uint64_t a) { return split_mix64(a); }

template <typename... Rest>
uint64_t seed_mix(uint64_t a, uint64_t b, Rest... rest) {
    return seed_mix(split_mix64(a) ^ (b + 0x9e3779b97f4a7c15ULL), rest...);
}

inline std::mt19937_64 make_rng(uint64_t seed) {
    return std::mt19937_64(split_mix64(seed));
}

// Uniform in [0,1) with 53 random bits. Hand-rolled instead of
// std::uniform_real_distribution, whose output is implementation-defined.
inline double rng_uniform(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Uniform integer in [0, n) by rejection; no modulo bias.
inline uint64_t rng_below(std::mt19937_64& rng, uint64_t n) {
    if (n == 0) throw ParameterError("rng_below: n must be positive");
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
        x = rng();
    } while (x >= limit);
    return x % n;
}

// Box-Muller, consuming two uniforms per pair of normals. The spare value is
// deliberately discarded so each draw depends only on the engine position.
inline double rng_normal(std::mt19937_64& rng) {
    double u1 = rng_uniform(rng);
    double u2 = rng_uniform(rng);
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

// Truncated normal: resample until within +/- 2 sigma.
inline double rng_trunc_normal(std::mt19937_64& rng, double sigma) {
    for (;;) {
        const double x = rng_normal(rng) * sigma;
        if (std::abs(x) <= 2.0 * sigma) return x;
    }
}

template <typename T>
void rng_shuffle(std::mt19937_64& rng, std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
        std::swap(v[i - 1], v[rng_below(rng, i)]);
    }
}

inline std::string shape_str(const std::vector<int64_t>& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

}  // namespace wch
