#pragma once

// Single-hidden-layer ReLU networks with inverted dropout, exact reverse-mode
// gradients and Adam.
//
// Rows are samples. A forward pass may split its input into a per-sample
// "shared" block and a "tiled" block that carries K rows per sample (row
// k·B + b belongs to sample b). The first-layer product of the shared block is
// then computed once per sample instead of once per tile, which is what makes
// K Monte-Carlo occurrence samples per observation affordable. A plain forward
// is the special case K = 1 with an empty tiled block.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

#include <Eigen/Dense>

#include "cetm/mathstats.hpp"

namespace cetm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
// Activations are stored row-major so each sample's hidden vector is contiguous.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct MlpParams {
    Matrix w1;  // [hidden × in]
    Vector b1;  // [hidden]
    Matrix w2;  // [out × hidden]
    Vector b2;  // [out]

    Eigen::Index in() const { return w1.cols(); }
    Eigen::Index hidden() const { return w1.rows(); }
    Eigen::Index out() const { return w2.rows(); }

    bool same_shape(const MlpParams& o) const {
        return w1.rows() == o.w1.rows() && w1.cols() == o.w1.cols() && b1.size() == o.b1.size() &&
               w2.rows() == o.w2.rows() && w2.cols() == o.w2.cols() && b2.size() == o.b2.size();
    }

    bool all_finite() const {
        return w1.allFinite() && b1.allFinite() && w2.allFinite() && b2.allFinite();
    }

    static MlpParams zeros_like(const MlpParams& p) {
        return {Matrix::Zero(p.w1.rows(), p.w1.cols()), Vector::Zero(p.b1.size()),
                Matrix::Zero(p.w2.rows(), p.w2.cols()), Vector::Zero(p.b2.size())};
    }

    MlpParams& operator+=(const MlpParams& o) {
        w1 += o.w1;
        b1 += o.b1;
        w2 += o.w2;
        b2 += o.b2;
        return *this;
    }

    bool operator==(const MlpParams& o) const {
        return same_shape(o) && w1 == o.w1 && b1 == o.b1 && w2 == o.w2 && b2 == o.b2;
    }
};

// Gradients share the parameter layout.
using MlpGrads = MlpParams;

struct AdamState {
    MlpParams m;
    MlpParams v;
    long step = 0;

    static AdamState for_params(const MlpParams& p) {
        return {MlpParams::zeros_like(p), MlpParams::zeros_like(p), 0};
    }
};

struct AdamConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Per-sample, per-hidden-unit keep mask. An empty mask means evaluation mode.
struct DropoutMask {
    RowMatrix keep;  // [batch × hidden] of 0/1, or empty
    double p_keep = 1.0;

    bool active() const { return keep.size() > 0; }

    static DropoutMask none() { return {}; }

    static DropoutMask draw(Eigen::Index batch, Eigen::Index hidden, double p_keep, Rng& rng) {
        if (!(p_keep > 0.0 && p_keep <= 1.0)) {
            throw std::invalid_argument("dropout keep probability must lie in (0, 1]");
        }
        if (p_keep == 1.0) return none();
        DropoutMask m;
        m.p_keep = p_keep;
        m.keep.resize(batch, hidden);
        for (Eigen::Index i = 0; i < batch; ++i)
            for (Eigen::Index j = 0; j < hidden; ++j) m.keep(i, j) = rng.bernoulli(p_keep) ? 1.0 : 0.0;
        return m;
    }
};

// Forward state needed by mlp_backward. Only the per-sample part of the
// first layer is kept; hidden activations of the tiled rows are recomputed
// during the backward pass, which is cheaper than streaming them through
// memory. Buffers are reused when a cache is passed to successive calls.
struct MlpCache {
    Matrix x_shared;  // [B × ds]
    Matrix x_tiled;   // [(B·K) × dt], possibly with zero columns
    Eigen::Index tiles = 1;
    RowMatrix base;   // x_shared·W1ᵀ + b1, [B × hidden]
    RowMatrix scale;  // mask / p_keep, empty without dropout
    Eigen::Index param_in = 0, param_hidden = 0, param_out = 0;
};

namespace detail {

// relu(base_i + Σ_q x_tiled(r, q)·W1[:, ds + q]) ⊙ scale_i for one row.
inline void hidden_row(const MlpCache& cache, const MlpParams& p, Eigen::Index r, double* __restrict h) {
    const Eigen::Index batch = cache.x_shared.rows();
    const Eigen::Index ds = cache.x_shared.cols();
    const Eigen::Index dt = cache.x_tiled.cols();
    const Eigen::Index nh = p.hidden();
    const Eigen::Index i = r % batch;
    const double* __restrict b = cache.base.row(i).data();
    for (Eigen::Index u = 0; u < nh; ++u) h[u] = b[u];
    for (Eigen::Index q = 0; q < dt; ++q) {
        const double cq = cache.x_tiled(r, q);
        const double* __restrict w = p.w1.col(ds + q).data();
        for (Eigen::Index u = 0; u < nh; ++u) h[u] += cq * w[u];
    }
    if (cache.scale.size() > 0) {
        const double* __restrict sc = cache.scale.row(i).data();
        for (Eigen::Index u = 0; u < nh; ++u) h[u] = std::max(h[u], 0.0) * sc[u];
    } else {
        for (Eigen::Index u = 0; u < nh; ++u) h[u] = std::max(h[u], 0.0);
    }
}

}  // namespace detail

struct MlpBackward {
    MlpGrads grads;
    Matrix dx_shared;
    Matrix dx_tiled;
};

inline MlpParams mlp_init(Eigen::Index in, Eigen::Index hidden, Eigen::Index out, Rng& rng) {
    if (in < 1 || hidden < 1 || out < 1) {
        throw std::invalid_argument("mlp_init: all layer sizes must be at least 1");
    }
    MlpParams p{Matrix(hidden, in), Vector::Zero(hidden), Matrix(out, hidden), Vector::Zero(out)};
    const double s1 = std::sqrt(2.0 / static_cast<double>(in));
    const double s2 = std::sqrt(1.0 / static_cast<double>(hidden));
    for (Eigen::Index j = 0; j < p.w1.cols(); ++j)
        for (Eigen::Index i = 0; i < p.w1.rows(); ++i) p.w1(i, j) = s1 * rng.normal();
    for (Eigen::Index j = 0; j < p.w2.cols(); ++j)
        for (Eigen::Index i = 0; i < p.w2.rows(); ++i) p.w2(i, j) = s2 * rng.normal();
    return p;
}

inline Matrix mlp_forward_tiled(const Matrix& x_shared, const Matrix& x_tiled, Eigen::Index tiles,
                                const MlpParams& p, const DropoutMask& mask, MlpCache& cache) {
    const Eigen::Index batch = x_shared.rows();
    const Eigen::Index ds = x_shared.cols();
    const Eigen::Index dt = x_tiled.cols();
    if (tiles < 1) throw std::invalid_argument("mlp_forward: tile count must be positive");
    if (ds + dt != p.in()) {
        throw std::invalid_argument("mlp_forward: input width " + std::to_string(ds + dt) +
                                    " does not match network input " + std::to_string(p.in()));
    }
    if (dt > 0 && x_tiled.rows() != batch * tiles) {
        throw std::invalid_argument("mlp_forward: tiled block must have batch*tiles rows");
    }
    if (mask.active() && (mask.keep.rows() != batch || mask.keep.cols() != p.hidden())) {
        throw std::invalid_argument("mlp_forward: dropout mask shape mismatch");
    }

    cache.x_shared = x_shared;
    cache.x_tiled = x_tiled;
    cache.tiles = tiles;
    cache.param_in = p.in();
    cache.param_hidden = p.hidden();
    cache.param_out = p.out();
    if (mask.active())
        cache.scale = mask.keep * (1.0 / mask.p_keep);
    else
        cache.scale.resize(0, 0);

    cache.base.noalias() = x_shared * p.w1.leftCols(ds).transpose();
    cache.base.rowwise() += p.b1.transpose();
    const RowMatrix w2 = p.w2;
    const Eigen::Index nh = p.hidden(), no = p.out();

    // Per-row loop: the tiled inputs and the outputs are narrow, where blocked
    // GEMM kernels are inefficient.
    Eigen::RowVectorXd hbuf(nh);
    double* __restrict h = hbuf.data();
    Matrix y(batch * tiles, no);
    for (Eigen::Index r = 0; r < batch * tiles; ++r) {
        detail::hidden_row(cache, p, r, h);
        for (Eigen::Index o = 0; o < no; ++o) y(r, o) = hbuf.dot(w2.row(o)) + p.b2(o);
    }
    return y;
}

inline std::pair<Matrix, MlpCache> mlp_forward_tiled(const Matrix& x_shared, const Matrix& x_tiled,
                                                     Eigen::Index tiles, const MlpParams& p,
                                                     const DropoutMask& mask) {
    MlpCache cache;
    Matrix y = mlp_forward_tiled(x_shared, x_tiled, tiles, p, mask, cache);
    return {std::move(y), std::move(cache)};
}

inline std::pair<Matrix, MlpCache> mlp_forward(const Matrix& x, const MlpParams& p,
                                               const DropoutMask& mask = DropoutMask::none()) {
    return mlp_forward_tiled(x, Matrix(x.rows(), 0), 1, p, mask);
}

// Evaluation-mode forward without a cache.
inline Matrix mlp_predict(const Matrix& x, const MlpParams& p) {
    if (x.cols() != p.in()) throw std::invalid_argument("mlp_predict: input width mismatch");
    Matrix h = x * p.w1.transpose();
    h.rowwise() += p.b1.transpose();
    h = h.cwiseMax(0.0);
    Matrix y = h * p.w2.transpose();
    y.rowwise() += p.b2.transpose();
    return y;
}

inline MlpBackward mlp_backward(const MlpCache& cache, const MlpParams& p, const Matrix& dy) {
    if (cache.param_in != p.in() || cache.param_hidden != p.hidden() || cache.param_out != p.out()) {
        throw std::invalid_argument("mlp_backward: cache was produced by a network of different shape");
    }
    if (dy.rows() != cache.x_shared.rows() * cache.tiles || dy.cols() != p.out()) {
        throw std::invalid_argument("mlp_backward: cotangent shape does not match the cached forward");
    }
    const Eigen::Index batch = cache.x_shared.rows();
    const Eigen::Index ds = cache.x_shared.cols();
    const Eigen::Index dt = cache.x_tiled.cols();
    const bool dropout = cache.scale.size() > 0;

    const Eigen::Index nh = p.hidden(), no = p.out();
    const RowMatrix w2 = p.w2;
    RowMatrix dw2 = RowMatrix::Zero(no, nh);
    RowMatrix dw1_tiled = RowMatrix::Zero(dt, nh);
    RowMatrix dpre_sum = RowMatrix::Zero(batch, nh);
    Eigen::RowVectorXd g(nh), hbuf(nh);
    double* __restrict gp = g.data();
    double* __restrict h = hbuf.data();

    MlpBackward out;
    out.dx_tiled.resize(dy.rows(), dt);
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
        const Eigen::Index i = r % batch;
        detail::hidden_row(cache, p, r, h);
        g.setZero();
        for (Eigen::Index o = 0; o < no; ++o) {
            const double d = dy(r, o);
            const double* __restrict w = w2.row(o).data();
            double* __restrict acc = dw2.row(o).data();
            for (Eigen::Index u = 0; u < nh; ++u) {
                gp[u] += d * w[u];
                acc[u] += d * h[u];
            }
        }
        // Branch-free ReLU gate; a select here defeats vectorization.
        if (dropout) {
            const double* __restrict sc = cache.scale.row(i).data();
            for (Eigen::Index u = 0; u < nh; ++u) gp[u] *= static_cast<double>(h[u] > 0.0) * sc[u];
        } else {
            for (Eigen::Index u = 0; u < nh; ++u) gp[u] *= static_cast<double>(h[u] > 0.0);
        }
        double* __restrict ps = dpre_sum.row(i).data();
        for (Eigen::Index u = 0; u < nh; ++u) ps[u] += gp[u];
        for (Eigen::Index q = 0; q < dt; ++q) {
            const double cq = cache.x_tiled(r, q);
            double* __restrict acc = dw1_tiled.row(q).data();
            for (Eigen::Index u = 0; u < nh; ++u) acc[u] += gp[u] * cq;
            out.dx_tiled(r, q) = g.dot(p.w1.col(ds + q).transpose());
        }
    }

    out.grads.b2 = dy.colwise().sum().transpose();
    out.grads.w2 = dw2;
    out.grads.b1 = dpre_sum.colwise().sum().transpose();
    out.grads.w1.resize(nh, p.in());
    out.grads.w1.leftCols(ds).noalias() = dpre_sum.transpose() * cache.x_shared;
    if (dt > 0) out.grads.w1.rightCols(dt) = dw1_tiled.transpose();
    out.dx_shared.noalias() = dpre_sum * p.w1.leftCols(ds);
    return out;
}

// Bias-corrected Adam update in place. Rejects non-finite gradients before
// touching any state.
inline void adam_step(MlpParams& p, const MlpGrads& g, AdamState& s, const AdamConfig& cfg) {
    if (!p.same_shape(g) || !p.same_shape(s.m) || !p.same_shape(s.v)) {
        throw std::invalid_argument("adam_step: parameter, gradient and state shapes differ");
    }
    if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0 && cfg.beta2 >= 0.0 && cfg.beta2 < 1.0)) {
        throw std::invalid_argument("adam_step: betas must lie in [0, 1)");
    }
    if (!g.all_finite()) throw std::domain_error("adam_step: non-finite gradient, update rejected");

    ++s.step;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(s.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(s.step));
    auto update = [&](auto& param, const auto& grad, auto& m, auto& v) {
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
        v.array() = cfg.beta2 * v.array() + (1.0 - cfg.beta2) * grad.array().square();
        param.array() -= cfg.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.eps);
    };
    update(p.w1, g.w1, s.m.w1, s.v.w1);
    update(p.b1, g.b1, s.m.b1, s.v.b1);
    update(p.w2, g.w2, s.m.w2, s.v.w2);
    update(p.b2, g.b2, s.m.b2, s.v.b2);
}

}  // namespace cetm
