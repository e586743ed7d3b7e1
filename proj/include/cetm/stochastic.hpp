#pragma once

// Binary stochastic occurrence layer: hard Bernoulli draws, the binary
// concrete relaxation, and the ARM estimator for ∇_h E[f(c)].

#include <algorithm>
#include <cmath>
#include <concepts>
#include <limits>
#include <stdexcept>

#include "cetm/mathstats.hpp"
#include "cetm/net.hpp"

namespace cetm {

struct OccurrenceLogits {
    Matrix h;  // [batch × M] log-odds
};

enum class SampleKind { hard, relaxed };

struct OccurrenceSample {
    Matrix c;
    SampleKind kind = SampleKind::hard;
    double tau = 0.0;  // only meaningful when relaxed
};

inline Matrix occurrence_probability(const OccurrenceLogits& logits) {
    return logits.h.unaryExpr([](double a) { return sigmoid(a); });
}

inline OccurrenceSample sample_hard(const OccurrenceLogits& logits, Rng& rng) {
    OccurrenceSample out{Matrix(logits.h.rows(), logits.h.cols()), SampleKind::hard, 0.0};
    for (Eigen::Index i = 0; i < logits.h.rows(); ++i)
        for (Eigen::Index j = 0; j < logits.h.cols(); ++j)
            out.c(i, j) = rng.uniform() < sigmoid(logits.h(i, j)) ? 1.0 : 0.0;
    return out;
}

// σ((h + L)/τ) kept strictly inside (0, 1).
inline double concrete_from_noise(double h, double noise, double tau) {
    constexpr double lo = std::numeric_limits<double>::min();
    constexpr double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2.0;
    return std::clamp(sigmoid((h + noise) / tau), lo, hi);
}

inline OccurrenceSample sample_concrete(const OccurrenceLogits& logits, double tau, Rng& rng) {
    if (!(tau > 0.0)) throw std::invalid_argument("sample_concrete: temperature must be positive");
    OccurrenceSample out{Matrix(logits.h.rows(), logits.h.cols()), SampleKind::relaxed, tau};
    for (Eigen::Index i = 0; i < logits.h.rows(); ++i)
        for (Eigen::Index j = 0; j < logits.h.cols(); ++j)
            out.c(i, j) = concrete_from_noise(logits.h(i, j), sample_logistic(rng), tau);
    return out;
}

// ∂c/∂h of a relaxed sample.
inline Matrix concrete_jacobian(const OccurrenceSample& sample) {
    return (sample.c.array() * (1.0 - sample.c.array()) / sample.tau).matrix();
}

// The antithetic pair of hard samples that ARM evaluates for one uniform draw.
struct ArmPair {
    Matrix u;
    Matrix c_swapped;  // 1[u > σ(-h)]
    Matrix c_direct;   // 1[u < σ(h)], distributed as Bern(σ(h))
};

inline ArmPair arm_pair_from_uniform(const OccurrenceLogits& logits, const Matrix& u) {
    ArmPair pair{u, Matrix(u.rows(), u.cols()), Matrix(u.rows(), u.cols())};
    for (Eigen::Index i = 0; i < u.rows(); ++i) {
        for (Eigen::Index j = 0; j < u.cols(); ++j) {
            const double h = logits.h(i, j);
            pair.c_swapped(i, j) = u(i, j) > sigmoid(-h) ? 1.0 : 0.0;
            pair.c_direct(i, j) = u(i, j) < sigmoid(h) ? 1.0 : 0.0;
        }
    }
    return pair;
}

inline ArmPair draw_arm_pair(const OccurrenceLogits& logits, Rng& rng) {
    Matrix u(logits.h.rows(), logits.h.cols());
    for (Eigen::Index i = 0; i < u.rows(); ++i)
        for (Eigen::Index j = 0; j < u.cols(); ++j) u(i, j) = rng.uniform();
    return arm_pair_from_uniform(logits, u);
}

// ĝ_ij = (f_swapped_i - f_direct_i)(u_ij - ½).
inline Matrix arm_combine(const ArmPair& pair, const Vector& f_swapped, const Vector& f_direct) {
    if (!f_swapped.allFinite() || !f_direct.allFinite()) {
        throw std::domain_error("arm_gradient: objective returned a non-finite value");
    }
    const Vector diff = f_swapped - f_direct;
    return ((pair.u.array() - 0.5).colwise() * diff.array()).matrix();
}

template <class F>
concept PerSampleObjective = requires(F f, const Matrix& c) {
    { f(c) } -> std::convertible_to<Vector>;
};

// One-draw ARM estimate of ∇_h E_{c ~ Bern(σ(h))}[f(c)], per sample.
template <PerSampleObjective F>
Matrix arm_gradient(const OccurrenceLogits& logits, F&& f, Rng& rng) {
    const ArmPair pair = draw_arm_pair(logits, rng);
    return arm_combine(pair, f(pair.c_swapped), f(pair.c_direct));
}

}  // namespace cetm
