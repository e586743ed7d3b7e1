#pragma once

// Independent oracles shared by the unit tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <utility>
#include <stdexcept>
#include <vector>

#include "cetm/aft.hpp"
#include "cetm/likelihood.hpp"
#include "cetm/metrics.hpp"
#include "cetm/models.hpp"
#include "cetm/net.hpp"
#include "cetm/stochastic.hpp"

namespace cetm::testing {

// |a - b| within `rel` of the larger magnitude, or within `abs_floor`.
inline bool close_rel(double a, double b, double rel, double abs_floor) {
    const double diff = std::abs(a - b);
    return diff <= abs_floor || diff <= rel * std::max(std::abs(a), std::abs(b));
}

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = scale * rng.normal();
    return m;
}

// ---- finite differences for the tiled MLP ----------------------------------

struct FdReport {
    int checked = 0;
    int failed = 0;
    double worst = 0.0;  // largest relative error among entries above the floor
};

// Central differences of L = Σ dy ⊙ y against mlp_backward for one random
// network. Covers the parameters and both input blocks.
inline FdReport finite_difference_check(Rng& rng, double step = 1e-5, double rel = 1e-4, double floor = 1e-7) {
    const auto pick = [&](int lo, int hi) { return lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1))); };
    const int in = pick(1, 8), hidden = pick(1, 8), out = pick(1, 8), batch = pick(1, 4), tiles = pick(1, 3);
    const int dt = pick(0, in - 1), ds = in - dt;

    MlpParams p = mlp_init(in, hidden, out, rng);
    for (Eigen::Index i = 0; i < p.b1.size(); ++i) p.b1(i) = 0.5 * rng.normal();
    for (Eigen::Index i = 0; i < p.b2.size(); ++i) p.b2(i) = rng.normal();
    auto fill = [&](Matrix& m) {
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = rng.normal();
    };
    Matrix xs(batch, ds), xt(batch * tiles, dt), dy(batch * tiles, out);
    fill(xs);
    fill(xt);
    fill(dy);

    auto loss = [&](const MlpParams& q, const Matrix& a, const Matrix& b) {
        MlpCache c;
        return (mlp_forward_tiled(a, b, tiles, q, DropoutMask::none(), c).array() * dy.array()).sum();
    };
    MlpCache cache;
    mlp_forward_tiled(xs, xt, tiles, p, DropoutMask::none(), cache);
    const MlpBackward g = mlp_backward(cache, p, dy);

    FdReport rep;
    auto check = [&](double analytic, const std::function<double(double)>& perturbed) {
        const double numeric = (perturbed(step) - perturbed(-step)) / (2.0 * step);
        ++rep.checked;
        if (!close_rel(analytic, numeric, rel, floor)) ++rep.failed;
        const double diff = std::abs(analytic - numeric);
        if (diff > floor) rep.worst = std::max(rep.worst, diff / std::max(std::abs(analytic), std::abs(numeric)));
    };
    auto sweep = [&](Matrix& m, const Matrix& grad, auto&& eval) {
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            for (Eigen::Index j = 0; j < m.cols(); ++j) {
                const double keep = m(i, j);
                check(grad(i, j), [&](double h) {
                    m(i, j) = keep + h;
                    const double v = eval();
                    m(i, j) = keep;
                    return v;
                });
            }
        }
    };
    auto sweep_vec = [&](Vector& v, const Vector& grad, auto&& eval) {
        for (Eigen::Index i = 0; i < v.size(); ++i) {
            const double keep = v(i);
            check(grad(i), [&](double h) {
                v(i) = keep + h;
                const double r = eval();
                v(i) = keep;
                return r;
            });
        }
    };
    auto eval_params = [&] { return loss(p, xs, xt); };
    sweep(p.w1, g.grads.w1, eval_params);
    sweep_vec(p.b1, g.grads.b1, eval_params);
    sweep(p.w2, g.grads.w2, eval_params);
    sweep_vec(p.b2, g.grads.b2, eval_params);
    sweep(xs, g.dx_shared, eval_params);
    sweep(xt, g.dx_tiled, eval_params);
    return rep;
}

// ---- log-normal quadrature ---------------------------------------------------

// ∫ exp(lognormal_log_density) dt over (0, upper] by composite Simpson on a
// log-spaced grid starting 14 ν below μ, where the mass is below 1e-40.
inline double lognormal_mass(double mu, double nu, double upper = std::numeric_limits<double>::infinity(),
                             int intervals = 20000) {
    const double lo = mu - 14.0 * nu;
    const double hi = std::min(mu + 14.0 * nu, std::log(upper));
    if (hi <= lo) return 0.0;
    const double h = (hi - lo) / intervals;
    auto g = [&](double u) { return std::exp(lognormal_log_density(std::exp(u), mu, nu) + u); };
    double acc = g(lo) + g(hi);
    for (int k = 1; k < intervals; ++k) acc += (k % 2 ? 4.0 : 2.0) * g(lo + k * h);
    return acc * h / 3.0;
}

// ---- ARM against exact enumeration -----------------------------------------

// f(c) = Σ_S a_S Π_{j∈S} c_j over all subsets S of {0..M-1}.
struct Multilinear {
    int events = 1;
    std::vector<double> coef;  // indexed by subset bitmask

    double operator()(const double* c) const {
        double v = 0.0;
        for (std::size_t mask = 0; mask < coef.size(); ++mask) {
            double term = coef[mask];
            for (int j = 0; j < events; ++j)
                if (mask & (std::size_t{1} << j)) term *= c[j];
            v += term;
        }
        return v;
    }
};

// ∂/∂h_j Σ_c Π_k Bern(c_k; σ(h_k)) f(c), summing over the 2^M outcomes.
inline std::vector<double> enumerated_gradient(const Multilinear& f, const std::vector<double>& h) {
    const int m = f.events;
    std::vector<double> grad(static_cast<std::size_t>(m), 0.0);
    std::vector<double> c(static_cast<std::size_t>(m));
    for (std::size_t outcome = 0; outcome < (std::size_t{1} << m); ++outcome) {
        for (int j = 0; j < m; ++j) c[static_cast<std::size_t>(j)] = (outcome >> j) & 1U;
        const double value = f(c.data());
        for (int j = 0; j < m; ++j) {
            double prob_rest = 1.0;
            for (int k = 0; k < m; ++k) {
                if (k == j) continue;
                const double p = sigmoid(h[static_cast<std::size_t>(k)]);
                prob_rest *= c[static_cast<std::size_t>(k)] == 1.0 ? p : 1.0 - p;
            }
            // d/dh of Bern(c_j; σ(h_j)) is ±σ'(h_j).
            const double pj = sigmoid(h[static_cast<std::size_t>(j)]);
            const double dens = pj * (1.0 - pj) * (c[static_cast<std::size_t>(j)] == 1.0 ? 1.0 : -1.0);
            grad[static_cast<std::size_t>(j)] += dens * prob_rest * value;
        }
    }
    return grad;
}

struct ArmInstance {
    std::vector<double> exact;
    std::vector<double> mean;
    std::vector<double> se;

    bool coordinate_ok(std::size_t j) const { return std::abs(mean[j] - exact[j]) <= 3.0 * se[j]; }
};

// `draws` ARM estimates through cetm::arm_gradient, processed in chunks.
inline ArmInstance arm_instance(const Multilinear& f, const std::vector<double>& h, long draws, Rng& rng) {
    const int m = f.events;
    const long chunk = 100000;
    std::vector<double> sum(static_cast<std::size_t>(m), 0.0), sq(static_cast<std::size_t>(m), 0.0);
    for (long done = 0; done < draws; done += chunk) {
        const long rows = std::min(chunk, draws - done);
        OccurrenceLogits logits{Matrix(rows, m)};
        for (int j = 0; j < m; ++j) logits.h.col(j).setConstant(h[static_cast<std::size_t>(j)]);
        const Matrix g = arm_gradient(
            logits,
            [&](const Matrix& c) {
                Vector v(c.rows());
                std::vector<double> row(static_cast<std::size_t>(m));
                for (Eigen::Index i = 0; i < c.rows(); ++i) {
                    for (int j = 0; j < m; ++j) row[static_cast<std::size_t>(j)] = c(i, j);
                    v(i) = f(row.data());
                }
                return v;
            },
            rng);
        for (int j = 0; j < m; ++j) {
            sum[static_cast<std::size_t>(j)] += g.col(j).sum();
            sq[static_cast<std::size_t>(j)] += g.col(j).squaredNorm();
        }
    }
    ArmInstance out{enumerated_gradient(f, h), {}, {}};
    const double n = static_cast<double>(draws);
    for (int j = 0; j < m; ++j) {
        const double mean = sum[static_cast<std::size_t>(j)] / n;
        const double var = (sq[static_cast<std::size_t>(j)] / n - mean * mean) * n / (n - 1.0);
        out.mean.push_back(mean);
        out.se.push_back(std::sqrt(std::max(var, 0.0) / n));
    }
    return out;
}

inline Multilinear random_multilinear(int events, Rng& rng) {
    Multilinear f{events, std::vector<double>(std::size_t{1} << events)};
    for (double& a : f.coef) a = 2.0 * rng.normal();
    return f;
}

// ---- CET with certain occurrence against ET ---------------------------------

// Builds an ET model and a CET model whose occurrence head outputs logit 50
// everywhere and whose time networks ignore the c inputs, takes one Adam step
// on each from the same minibatch, and returns the largest difference over
// the shared time-network parameters (and the losses).
inline double cet_et_step_gap(Estimator est, Rng& rng) {
    const Eigen::Index d = 3, m = 2, b = 8;
    const int hidden = 5;
    const EtModel et = make_et(d, m, hidden, rng);
    CetModel cet = make_cet(d, m, hidden, rng);
    cet.occ.w2.setZero();
    cet.occ.b2.setConstant(50.0);
    for (auto [dst, src] : {std::pair{&cet.mu, &et.mu}, std::pair{&cet.nu, &et.nu}}) {
        dst->w1.setZero();
        dst->w1.leftCols(d) = src->w1;
        dst->b1 = src->b1;
        dst->w2 = src->w2;
        dst->b2 = src->b2;
    }
    const Matrix x = random_matrix(b, d, rng);
    ObservationBatch obs{Matrix(b, m), Matrix(b, m)};
    for (Eigen::Index i = 0; i < b; ++i) {
        for (Eigen::Index j = 0; j < m; ++j) {
            obs.t(i, j) = std::exp(1.0 + 0.5 * rng.normal());
            obs.s(i, j) = rng.bernoulli(0.6) ? 1.0 : 0.0;
        }
    }

    TrainConfig cfg;
    cfg.dropout = 0.0;
    cfg.samples = 1;
    cfg.estimator = est;
    Rng r1 = rng.child(1), r2 = rng.child(1);
    const StepResult sc = cet_gradients(cet, x, obs, cfg, r1);
    const StepResult se = et_gradients(et, x, obs, cfg, r2);
    double gap = std::abs(sc.loss - se.loss);

    AnyModel mc = cet, me = et;
    Optimizer oc = make_optimizer(mc), oe = make_optimizer(me);
    apply_gradients(mc, sc, oc, cfg);
    apply_gradients(me, se, oe, cfg);
    const CetModel& ca = std::get<CetModel>(mc);
    const EtModel& ea = std::get<EtModel>(me);
    for (auto [cp, ep] : {std::pair{&ca.mu, &ea.mu}, std::pair{&ca.nu, &ea.nu}}) {
        gap = std::max(gap, (cp->w1.leftCols(d) - ep->w1).cwiseAbs().maxCoeff());
        gap = std::max(gap, (cp->b1 - ep->b1).cwiseAbs().maxCoeff());
        gap = std::max(gap, (cp->w2 - ep->w2).cwiseAbs().maxCoeff());
        gap = std::max(gap, (cp->b2 - ep->b2).cwiseAbs().maxCoeff());
    }
    return gap;
}

// ---- brute-force rank metrics ------------------------------------------------

inline double brute_auc(const std::vector<double>& score, const std::vector<int>& label) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < score.size(); ++i) {
        if (label[i] != 1) continue;
        for (std::size_t k = 0; k < score.size(); ++k) {
            if (label[k] != 0) continue;
            den += 1.0;
            if (score[i] > score[k]) num += 1.0;
            else if (score[i] == score[k]) num += 0.5;
        }
    }
    if (den == 0.0) throw std::domain_error("brute_auc: single class");
    return num / den;
}

// Unordered pairs, classified case by case: both events known and distinct,
// or one known event strictly before the other sample's censoring time.
inline double brute_ci(const std::vector<double>& t, const std::vector<int>& s, const std::vector<double>& t_hat) {
    double num = 0.0, den = 0.0;
    for (std::size_t a = 0; a < t.size(); ++a) {
        for (std::size_t b = a + 1; b < t.size(); ++b) {
            std::size_t early = a, late = b;
            if (t[b] < t[a]) std::swap(early, late);
            bool eligible = false;
            if (s[a] == 1 && s[b] == 1) eligible = t[a] != t[b];
            else if (s[a] + s[b] == 1) eligible = s[early] == 1 && t[early] < t[late];
            if (!eligible) continue;
            den += 1.0;
            if (t_hat[early] < t_hat[late]) num += 1.0;
            else if (t_hat[early] == t_hat[late]) num += 0.5;
        }
    }
    if (den == 0.0) throw std::domain_error("brute_ci: no eligible pairs");
    return num / den;
}

}  // namespace cetm::testing
