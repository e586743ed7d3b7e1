#pragma once

// Log-normal accelerated-failure-time head: log T = μ(x) + ν(x)·ε, ε ~ N(0, 1).

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "cetm/mathstats.hpp"
#include "cetm/net.hpp"

namespace cetm {

inline constexpr double kNuFloor = 1e-6;
inline constexpr double kRawNuCeiling = 30.0;

struct AftOutput {
    Matrix mu;  // [batch × M], log-time units
    Matrix nu;  // [batch × M], > 0
    long clamped = 0;  // raw ν entries clipped at the ceiling
};

inline AftOutput aft_heads(const Matrix& raw_mu, const Matrix& raw_nu) {
    if (raw_mu.rows() != raw_nu.rows() || raw_mu.cols() != raw_nu.cols()) {
        throw std::invalid_argument("aft_heads: mu and nu blocks differ in shape");
    }
    AftOutput out{raw_mu, Matrix(raw_nu.rows(), raw_nu.cols()), 0};
    for (Eigen::Index j = 0; j < raw_nu.cols(); ++j) {
        for (Eigen::Index i = 0; i < raw_nu.rows(); ++i) {
            double r = raw_nu(i, j);
            if (r > kRawNuCeiling) {
                r = kRawNuCeiling;
                ++out.clamped;
            }
            out.nu(i, j) = std::max(std::exp(r), kNuFloor);
        }
    }
    return out;
}

// d/d raw_nu given d/d nu; zero where the ceiling or the floor is active.
inline Matrix aft_heads_backward(const Matrix& raw_nu, const AftOutput& out, const Matrix& d_nu) {
    Matrix d_raw(raw_nu.rows(), raw_nu.cols());
    for (Eigen::Index j = 0; j < raw_nu.cols(); ++j) {
        for (Eigen::Index i = 0; i < raw_nu.rows(); ++i) {
            const bool saturated = raw_nu(i, j) > kRawNuCeiling || out.nu(i, j) <= kNuFloor;
            d_raw(i, j) = saturated ? 0.0 : d_nu(i, j) * out.nu(i, j);
        }
    }
    return d_raw;
}

namespace detail {

inline double standardized_log_time(double t, double mu, double nu, const char* who) {
    if (!(t > 0.0)) throw std::domain_error(std::string(who) + ": time must be positive");
    if (!(nu > 0.0)) throw std::domain_error(std::string(who) + ": nu must be positive");
    return (std::log(t) - mu) / nu;
}

}  // namespace detail

inline double lognormal_log_density(double t, double mu, double nu) {
    const double z = detail::standardized_log_time(t, mu, nu, "lognormal_log_density");
    return -std::log(t) - std::log(nu) + std_normal_log_pdf(z);
}

// log P(T > t).
inline double lognormal_log_survivor(double t, double mu, double nu) {
    const double z = detail::standardized_log_time(t, mu, nu, "lognormal_log_survivor");
    return std_normal_log_survival(z);
}

// A log-likelihood term together with its partials in μ and ν.
struct TermGrad {
    double value = 0.0;
    double d_mu = 0.0;
    double d_nu = 0.0;
};

inline TermGrad lognormal_log_density_grad(double t, double mu, double nu) {
    const double z = detail::standardized_log_time(t, mu, nu, "lognormal_log_density");
    return {-std::log(t) - std::log(nu) + std_normal_log_pdf(z), z / nu, (z * z - 1.0) / nu};
}

inline TermGrad lognormal_log_survivor_grad(double t, double mu, double nu) {
    const double z = detail::standardized_log_time(t, mu, nu, "lognormal_log_survivor");
    const double hazard = std_normal_hazard(z);
    return {std_normal_log_survival(z), hazard / nu, hazard * z / nu};
}

// Median of the log-normal event-time law.
inline double predict_time(double mu) {
    if (!std::isfinite(mu)) throw std::domain_error("predict_time: non-finite mu");
    return std::exp(mu);
}

}  // namespace cetm
