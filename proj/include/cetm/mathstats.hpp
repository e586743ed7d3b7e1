#pragma once

// Scalar probability primitives and the deterministic random source shared by
// every other module.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace cetm {

inline constexpr double kLogSqrtTwoPi = 0.91893853320467274178;  // ½ log(2π)

// Counter-based SplitMix64 generator.
//
// Draw n of a stream with key `k` is mix(k + n·γ), so a stream is fully
// described by its key and position. Child streams get the key
// mix(parent_key ^ mix(index + γ)), which gives statistically independent
// sequences for distinct indices. All floating-point draws are built from the
// 64-bit integer stream with portable arithmetic only (no <random>
// distributions), so streams are identical across standard libraries.
class Rng {
public:
    static constexpr const char* kAlgorithm = "splitmix64-counter";

    explicit Rng(std::uint64_t seed = 0) : seed_(seed), key_(mix(seed)) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t position() const { return counter_; }

    std::uint64_t next_u64() {
        ++counter_;
        return mix(key_ + counter_ * kGamma);
    }

    // Uniform on the open interval (0, 1); exact zero is rejected.
    double uniform() {
        for (;;) {
            const double u = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
            if (u > 0.0) return u;
        }
    }

    double normal() {
        // Box-Muller, one value per pair of uniforms.
        const double u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Uniform integer in [0, n); n ≥ 1.
    std::uint64_t below(std::uint64_t n) {
        // Lemire's multiply-shift with rejection.
        for (;;) {
            const unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * n;
            const auto low = static_cast<std::uint64_t>(m);
            if (low >= n || low >= (-n) % n) return static_cast<std::uint64_t>(m >> 64);
        }
    }

    Rng child(std::uint64_t index) const {
        return Rng(mix(seed_ ^ mix(index + kGamma)));
    }

private:
    static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ull;

    static constexpr std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    std::uint64_t seed_;
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

namespace detail {

inline void require_finite(double v, const char* what) {
    if (!std::isfinite(v)) {
        throw std::domain_error(std::string(what) + ": non-finite argument");
    }
}

// Mills ratio R(z) = (1 - Φ(z)) / φ(z) for z ≥ 5 by backward evaluation of
// the continued fraction 1/(z + 1/(z + 2/(z + 3/(z + ...)))).
inline double mills_ratio_tail(double z) {
    double acc = z;
    for (int k = 120; k >= 1; --k) acc = z + k / acc;
    return 1.0 / acc;
}

inline constexpr double kTailSwitch = 5.0;

}  // namespace detail

inline double std_normal_log_pdf(double z) {
    detail::require_finite(z, "std_normal_log_pdf");
    return -0.5 * z * z - kLogSqrtTwoPi;
}

inline double std_normal_cdf(double z) {
    detail::require_finite(z, "std_normal_cdf");
    return 0.5 * std::erfc(-z / std::numbers::sqrt2);
}

// log(1 - Φ(z)) without cancellation in either tail.
inline double std_normal_log_survival(double z) {
    detail::require_finite(z, "std_normal_log_survival");
    if (z > detail::kTailSwitch) {
        return -0.5 * z * z - kLogSqrtTwoPi + std::log(detail::mills_ratio_tail(z));
    }
    if (z < -1.0) {
        return std::log1p(-0.5 * std::erfc(-z / std::numbers::sqrt2));
    }
    return std::log(0.5 * std::erfc(z / std::numbers::sqrt2));
}

// Hazard of the standard normal, φ(z) / (1 - Φ(z)).
inline double std_normal_hazard(double z) {
    detail::require_finite(z, "std_normal_hazard");
    if (z > detail::kTailSwitch) return 1.0 / detail::mills_ratio_tail(z);
    return std::exp(std_normal_log_pdf(z) - std_normal_log_survival(z));
}

inline double sigmoid(double a) {
    if (a >= 0.0) return 1.0 / (1.0 + std::exp(-a));
    const double e = std::exp(a);
    return e / (1.0 + e);
}

// log σ(a) = -softplus(-a).
inline double log_sigmoid(double a) {
    if (a >= 0.0) return -std::log1p(std::exp(-a));
    return a - std::log1p(std::exp(a));
}

inline double logistic_from_uniform(double u) { return std::log(u) - std::log1p(-u); }

inline double sample_logistic(Rng& rng) { return logistic_from_uniform(rng.uniform()); }

}  // namespace cetm
