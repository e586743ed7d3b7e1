#pragma once

// Censored log-likelihoods: the standard event-time likelihood, the
// ε-penalized conditional likelihood given occurrence, its Monte-Carlo lower
// bound over occurrence samples, and the binary cross-entropy baseline.

#include <cmath>
#include <concepts>
#include <cstddef>
#include <stdexcept>
#include <string>

#include "cetm/aft.hpp"
#include "cetm/mathstats.hpp"
#include "cetm/net.hpp"
#include "cetm/stochastic.hpp"

namespace cetm {

struct Observation {
    double t = 1.0;  // event or censoring time, > 0
    int s = 1;       // 1 = event observed, 0 = right-censored
};

// Observations for a minibatch, [batch × M] each; s holds 0/1.
struct ObservationBatch {
    Matrix t;
    Matrix s;
};

class PenaltyEps {
public:
    explicit PenaltyEps(double log_eps = -2.0) : log_eps_(log_eps) {
        if (!(log_eps > -4.0 && log_eps < 0.0)) {
            throw std::invalid_argument("log_eps must lie in (-4, 0), got " + std::to_string(log_eps));
        }
    }
    double log_eps() const { return log_eps_; }

private:
    double log_eps_;
};

enum class Estimator { concrete, arm };

class TrainingError : public std::runtime_error {
public:
    TrainingError(const std::string& what, long sample, long event, long draw)
        : std::runtime_error(what + " (sample " + std::to_string(sample) + ", event " +
                             std::to_string(event) + ", draw " + std::to_string(draw) + ")"),
          sample_(sample), event_(event), draw_(draw) {}
    long sample() const { return sample_; }
    long event() const { return event_; }
    long draw() const { return draw_; }

private:
    long sample_, event_, draw_;
};

namespace detail {
inline void check_observation(const Observation& obs) {
    if (!(obs.t > 0.0) || !std::isfinite(obs.t)) throw std::domain_error("observation time must be finite and positive");
    if (obs.s != 0 && obs.s != 1) throw std::domain_error("censoring indicator must be 0 or 1");
}
}  // namespace detail

// s·log f(t) + (1-s)·log F(t); censoring-density terms do not depend on the
// model and are dropped.
inline double et_loglik(const Observation& obs, double mu, double nu) {
    detail::check_observation(obs);
    if (obs.s == 1) return lognormal_log_density(obs.t, mu, nu);
    return lognormal_log_survivor(obs.t, mu, nu);
}

// s(1-c)·log ε + s·log f(t) + (1-s)·c·log F(t). Affine in c.
inline double cet_conditional_loglik(const Observation& obs, double c, double mu, double nu,
                                     const PenaltyEps& pen) {
    detail::check_observation(obs);
    if (!(c >= 0.0 && c <= 1.0)) throw std::domain_error("occurrence value must lie in [0, 1]");
    if (obs.s == 1) return (1.0 - c) * pen.log_eps() + lognormal_log_density(obs.t, mu, nu);
    return c * lognormal_log_survivor(obs.t, mu, nu);
}

struct CetTermGrad {
    double value = 0.0;
    double d_mu = 0.0;
    double d_nu = 0.0;
    double d_c = 0.0;
};

inline CetTermGrad cet_conditional_loglik_grad(const Observation& obs, double c, double mu, double nu,
                                               const PenaltyEps& pen) {
    if (obs.s == 1) {
        const TermGrad f = lognormal_log_density_grad(obs.t, mu, nu);
        return {(1.0 - c) * pen.log_eps() + f.value, f.d_mu, f.d_nu, -pen.log_eps()};
    }
    const TermGrad surv = lognormal_log_survivor_grad(obs.t, mu, nu);
    return {c * surv.value, c * surv.d_mu, c * surv.d_nu, surv.value};
}

inline TermGrad et_loglik_grad(const Observation& obs, double mu, double nu) {
    if (obs.s == 1) return lognormal_log_density_grad(obs.t, mu, nu);
    return lognormal_log_survivor_grad(obs.t, mu, nu);
}

// s·log σ(a) + (1-s)·log σ(-a).
inline double bc_loglik(int s, double logit) {
    if (s != 0 && s != 1) throw std::domain_error("bc_loglik: label must be 0 or 1");
    return s == 1 ? log_sigmoid(logit) : log_sigmoid(-logit);
}

// Event-time parameter networks as seen by the bound: `forward` maps a tiled
// occurrence matrix ([K·B × M], row k·B + i is draw k of sample i) to (μ, ν);
// `backward` takes loss cotangents for the most recent forward, accumulates
// parameter gradients internally, and returns the cotangent of the tiled c.
template <class H>
concept TimeHeads = requires(H& heads, const Matrix& m) {
    { heads.forward(m) } -> std::same_as<AftOutput>;
    { heads.backward(m, m) } -> std::same_as<Matrix>;
};

struct McBoundResult {
    double loss = 0.0;  // -(1/(B·K)) Σ_i Σ_k Σ_j log p(t, s | c, x)
    Matrix d_logits;    // ∂loss/∂h, [B × M]
};

namespace detail {

struct BoundTerms {
    Vector per_row;  // Σ_j over events, [K·B]
    Matrix d_mu, d_nu, d_c;
};

inline BoundTerms bound_terms(const ObservationBatch& obs, const Matrix& c, const AftOutput& aft,
                              const PenaltyEps& pen, double scale) {
    const Eigen::Index batch = obs.t.rows();
    const Eigen::Index rows = c.rows();
    const Eigen::Index events = c.cols();
    BoundTerms out{Vector::Zero(rows), Matrix(rows, events), Matrix(rows, events), Matrix(rows, events)};
    for (Eigen::Index j = 0; j < events; ++j) {
        for (Eigen::Index r = 0; r < rows; ++r) {
            const Eigen::Index i = r % batch;
            const Observation o{obs.t(i, j), static_cast<int>(obs.s(i, j))};
            const CetTermGrad g = cet_conditional_loglik_grad(o, c(r, j), aft.mu(r, j), aft.nu(r, j), pen);
            if (!std::isfinite(g.value)) {
                throw TrainingError("non-finite conditional log-likelihood", static_cast<long>(i),
                                    static_cast<long>(j), static_cast<long>(r / batch));
            }
            out.per_row(r) += g.value;
            out.d_mu(r, j) = -scale * g.d_mu;
            out.d_nu(r, j) = -scale * g.d_nu;
            out.d_c(r, j) = -scale * g.d_c;
        }
    }
    return out;
}

inline Matrix fold_draws(const Matrix& tiled, Eigen::Index batch) {
    Matrix acc = Matrix::Zero(batch, tiled.cols());
    for (Eigen::Index k = 0; k < tiled.rows() / batch; ++k) acc += tiled.middleRows(k * batch, batch);
    return acc;
}

}  // namespace detail

// Monte-Carlo estimate of the negated Jensen bound with K occurrence draws per
// sample, and its gradient with respect to the occurrence logits. Gradients of
// the event-time networks are accumulated by `heads.backward`.
template <TimeHeads H>
McBoundResult mc_lower_bound(const ObservationBatch& obs, const OccurrenceLogits& logits, H& heads,
                             int draws, double tau, const PenaltyEps& pen, Estimator estimator, Rng& rng) {
    if (draws < 1) throw std::invalid_argument("mc_lower_bound: at least one draw is required");
    const Eigen::Index batch = logits.h.rows();
    if (obs.t.rows() != batch || obs.s.rows() != batch || obs.t.cols() != logits.h.cols()) {
        throw std::invalid_argument("mc_lower_bound: observation and logit shapes differ");
    }
    const double scale = 1.0 / static_cast<double>(batch * draws);
    const OccurrenceLogits tiled{logits.h.replicate(draws, 1)};

    McBoundResult result;
    if (estimator == Estimator::concrete) {
        const OccurrenceSample c = sample_concrete(tiled, tau, rng);
        const AftOutput aft = heads.forward(c.c);
        detail::BoundTerms terms = detail::bound_terms(obs, c.c, aft, pen, scale);
        terms.d_c += heads.backward(terms.d_mu, terms.d_nu);
        result.loss = -scale * terms.per_row.sum();
        result.d_logits = detail::fold_draws((terms.d_c.array() * concrete_jacobian(c).array()).matrix(), batch);
    } else {
        const ArmPair pair = draw_arm_pair(tiled, rng);
        const AftOutput aft_swapped = heads.forward(pair.c_swapped);
        const detail::BoundTerms swapped = detail::bound_terms(obs, pair.c_swapped, aft_swapped, pen, scale);
        const AftOutput aft_direct = heads.forward(pair.c_direct);
        const detail::BoundTerms direct = detail::bound_terms(obs, pair.c_direct, aft_direct, pen, scale);
        heads.backward(direct.d_mu, direct.d_nu);
        result.loss = -scale * direct.per_row.sum();
        result.d_logits = -scale * detail::fold_draws(arm_combine(pair, swapped.per_row, direct.per_row), batch);
    }
    return result;
}

}  // namespace cetm
