#include <catch_amalgamated.hpp>

#include <cmath>

#include "cetm/net.hpp"
#include "support.hpp"

using namespace cetm;
using Catch::Matchers::WithinAbs;

namespace {

// Straight-line reference: loops only, no Eigen products.
Matrix reference_forward(const Matrix& x, const MlpParams& p) {
    Matrix y(x.rows(), p.out());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        std::vector<double> h(static_cast<std::size_t>(p.hidden()));
        for (Eigen::Index u = 0; u < p.hidden(); ++u) {
            double a = p.b1(u);
            for (Eigen::Index k = 0; k < p.in(); ++k) a += p.w1(u, k) * x(i, k);
            h[static_cast<std::size_t>(u)] = a > 0.0 ? a : 0.0;
        }
        for (Eigen::Index o = 0; o < p.out(); ++o) {
            double a = p.b2(o);
            for (Eigen::Index u = 0; u < p.hidden(); ++u) a += p.w2(o, u) * h[static_cast<std::size_t>(u)];
            y(i, o) = a;
        }
    }
    return y;
}

}  // namespace

TEST_CASE("initialisation shapes and scale", "[net]") {
    Rng rng(1);
    const MlpParams p = mlp_init(5, 100, 2, rng);
    CHECK(p.w1.rows() == 100);
    CHECK(p.w1.cols() == 5);
    CHECK(p.w2.rows() == 2);
    CHECK(p.w2.cols() == 100);
    CHECK(p.b1.isZero(0.0));
    CHECK(p.b2.isZero(0.0));

    const MlpParams wide = mlp_init(346, 750, 10, rng);
    CHECK(wide.w1.rows() == 750);
    CHECK(wide.w1.cols() == 346);
    CHECK(wide.w2.rows() == 10);
    CHECK(wide.w2.cols() == 750);
    // He scale on the first layer: variance 2/fan_in.
    const double var = wide.w1.squaredNorm() / static_cast<double>(wide.w1.size());
    CHECK_THAT(var, WithinAbs(2.0 / 346.0, 0.02 * 2.0 / 346.0));

    CHECK_THROWS_AS(mlp_init(0, 3, 1, rng), std::invalid_argument);
    CHECK_THROWS_AS(mlp_init(2, 0, 1, rng), std::invalid_argument);
}

TEST_CASE("forward pass", "[net]") {
    Rng rng(2);
    MlpParams zero = MlpParams::zeros_like(mlp_init(3, 4, 2, rng));
    zero.b2 << 0.25, -1.5;
    const Matrix x = testing::random_matrix(5, 3, rng);
    const Matrix y0 = mlp_forward(x, zero).first;
    for (Eigen::Index i = 0; i < 5; ++i) {
        CHECK(y0(i, 0) == 0.25);
        CHECK(y0(i, 1) == -1.5);
    }

    MlpParams id{Matrix::Ones(1, 1), Vector::Zero(1), Matrix::Ones(1, 1), Vector::Zero(1)};
    CHECK(mlp_forward(Matrix::Constant(1, 1, 2.0), id).first(0, 0) == 2.0);

    const MlpParams p = mlp_init(3, 4, 2, rng);
    MlpParams q = p;
    q.b1 = testing::random_matrix(4, 1, rng);
    q.b2 = testing::random_matrix(2, 1, rng);
    const Matrix xr = testing::random_matrix(6, 3, rng);
    const Matrix ref = reference_forward(xr, q);
    CHECK((mlp_forward(xr, q).first - ref).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((mlp_predict(xr, q) - ref).cwiseAbs().maxCoeff() < 1e-12);
    CHECK_THROWS_AS(mlp_forward(testing::random_matrix(2, 4, rng), q), std::invalid_argument);
}

TEST_CASE("tiled forward equals the concatenated input", "[net]") {
    Rng rng(3);
    const MlpParams p = mlp_init(5 + 2, 6, 2, rng);
    const Matrix xs = testing::random_matrix(3, 5, rng);
    const Matrix xt = testing::random_matrix(12, 2, rng);
    MlpCache cache;
    const Matrix y = mlp_forward_tiled(xs, xt, 4, p, DropoutMask::none(), cache);
    Matrix full(12, 7);
    for (Eigen::Index r = 0; r < 12; ++r) {
        full.row(r).head(5) = xs.row(r % 3);
        full.row(r).tail(2) = xt.row(r);
    }
    CHECK((y - reference_forward(full, p)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("backward edge cases", "[net]") {
    Rng rng(4);
    const MlpParams p = mlp_init(3, 5, 2, rng);
    const Matrix x = testing::random_matrix(4, 3, rng);
    auto [y, cache] = mlp_forward(x, p);
    const MlpBackward zero = mlp_backward(cache, p, Matrix::Zero(4, 2));
    CHECK(zero.grads.w1.isZero(0.0));
    CHECK(zero.grads.b1.isZero(0.0));
    CHECK(zero.grads.w2.isZero(0.0));
    CHECK(zero.grads.b2.isZero(0.0));
    CHECK(zero.dx_shared.isZero(0.0));

    // A single hidden unit with negative pre-activation passes no gradient.
    MlpParams one{Matrix::Constant(1, 1, 1.0), Vector::Constant(1, -5.0), Matrix::Constant(1, 1, 2.0), Vector::Zero(1)};
    auto [y1, c1] = mlp_forward(Matrix::Constant(1, 1, 1.0), one);
    const MlpBackward g1 = mlp_backward(c1, one, Matrix::Ones(1, 1));
    CHECK(g1.grads.w1(0, 0) == 0.0);
    CHECK(g1.grads.b1(0) == 0.0);
    CHECK(g1.grads.w2(0, 0) == 0.0);
    CHECK(g1.grads.b2(0) == 1.0);
    CHECK(g1.dx_shared(0, 0) == 0.0);

    const MlpParams other = mlp_init(3, 6, 2, rng);
    CHECK_THROWS_AS(mlp_backward(cache, other, Matrix::Zero(4, 2)), std::invalid_argument);
    CHECK_THROWS_AS(mlp_backward(cache, p, Matrix::Zero(3, 2)), std::invalid_argument);
}

TEST_CASE("gradients match central differences", "[net]") {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const testing::FdReport rep = testing::finite_difference_check(rng);
        INFO("trial " << trial << ": worst relative error " << rep.worst);
        CHECK(rep.checked > 0);
        CHECK(rep.failed == 0);
    }
}

TEST_CASE("inverted dropout preserves the mean output", "[net]") {
    Rng rng(6);
    const MlpParams p = mlp_init(4, 16, 2, rng);
    const Matrix x = testing::random_matrix(1, 4, rng);
    const Matrix exact = mlp_predict(x, p);
    const int n = 10000;
    Vector sum = Vector::Zero(2), sq = Vector::Zero(2);
    for (int k = 0; k < n; ++k) {
        const DropoutMask m = DropoutMask::draw(1, 16, 0.5, rng);
        const Vector y = mlp_forward(x, p, m).first.row(0).transpose();
        sum += y;
        sq += y.cwiseProduct(y);
    }
    for (int o = 0; o < 2; ++o) {
        const double mean = sum(o) / n;
        const double se = std::sqrt((sq(o) / n - mean * mean) / (n - 1));
        CHECK(std::abs(mean - exact(0, o)) <= 3.0 * se);
    }
    CHECK_FALSE(DropoutMask::draw(3, 4, 1.0, rng).active());
    CHECK_THROWS_AS(DropoutMask::draw(3, 4, 0.0, rng), std::invalid_argument);
}

TEST_CASE("adam step", "[net]") {
    MlpParams p{Matrix::Constant(1, 1, 0.7), Vector::Constant(1, 0.1), Matrix::Constant(1, 1, -0.3), Vector::Constant(1, 2.0)};
    AdamState s = AdamState::for_params(p);
    const MlpParams before = p;
    adam_step(p, MlpParams::zeros_like(p), s, {});
    CHECK(p == before);
    CHECK(s.step == 1);

    MlpParams q{Matrix::Zero(1, 1), Vector::Zero(1), Matrix::Zero(1, 1), Vector::Zero(1)};
    AdamState sq = AdamState::for_params(q);
    MlpGrads g{Matrix::Ones(1, 1), Vector::Ones(1), Matrix::Ones(1, 1), Vector::Ones(1)};
    adam_step(q, g, sq, {0.1, 0.9, 0.999, 1e-8});
    CHECK_THAT(q.w1(0, 0), WithinAbs(-0.1 / (1.0 + 1e-8), 1e-15));

    // L = ½ w² from w = 1.
    MlpParams r{Matrix::Ones(1, 1), Vector::Zero(1), Matrix::Zero(1, 1), Vector::Zero(1)};
    AdamState sr = AdamState::for_params(r);
    for (int k = 0; k < 100; ++k) {
        MlpGrads gr = MlpParams::zeros_like(r);
        gr.w1(0, 0) = r.w1(0, 0);
        adam_step(r, gr, sr, {0.1, 0.9, 0.999, 1e-8});
    }
    CHECK(std::abs(r.w1(0, 0)) < 0.5);

    MlpGrads bad = MlpParams::zeros_like(r);
    bad.b2(0) = std::nan("");
    const MlpParams keep = r;
    CHECK_THROWS_AS(adam_step(r, bad, sr, {}), std::domain_error);
    CHECK(r == keep);
}

TEST_CASE("training steps are bit-reproducible", "[net]") {
    auto run = [] {
        Rng rng(77);
        MlpParams p = mlp_init(3, 8, 1, rng);
        AdamState s = AdamState::for_params(p);
        const Matrix x = testing::random_matrix(16, 3, rng);
        for (int k = 0; k < 20; ++k) {
            const DropoutMask m = DropoutMask::draw(16, 8, 0.5, rng);
            auto [y, cache] = mlp_forward(x, p, m);
            adam_step(p, mlp_backward(cache, p, y).grads, s, {});
        }
        return p;
    };
    CHECK(run() == run());
}
