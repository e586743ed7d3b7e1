#include <catch_amalgamated.hpp>

#include <cmath>
#include <limits>

#include "cetm/mathstats.hpp"

using namespace cetm;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

TEST_CASE("normal log density", "[mathstats]") {
    CHECK_THAT(std_normal_log_pdf(0.0), WithinAbs(-0.91893853320467274, 1e-15));
    CHECK_THAT(std_normal_log_pdf(1.0), WithinAbs(-1.41893853320467274, 1e-15));
    CHECK_THAT(std_normal_log_pdf(3.0), WithinRel(-5.41893853320467274, 1e-14));
    CHECK_THROWS_AS(std_normal_log_pdf(std::numeric_limits<double>::quiet_NaN()), std::domain_error);
    CHECK_THROWS_AS(std_normal_log_pdf(std::numeric_limits<double>::infinity()), std::domain_error);
}

TEST_CASE("normal cdf", "[mathstats]") {
    CHECK(std_normal_cdf(0.0) == 0.5);
    CHECK_THAT(std_normal_cdf(38.0), WithinAbs(1.0, 1e-15));
    CHECK_THAT(std_normal_cdf(1.0), WithinRel(0.841344746068542949, 1e-14));
    CHECK_THROWS_AS(std_normal_cdf(std::numeric_limits<double>::infinity()), std::domain_error);
}

TEST_CASE("normal log survival", "[mathstats]") {
    CHECK_THAT(std_normal_log_survival(0.0), WithinAbs(std::log(0.5), 1e-15));
    CHECK(std::abs(std_normal_log_survival(-38.0)) < 1e-15);
    CHECK_THAT(std_normal_log_survival(10.0), WithinRel(-53.2312851505124706, 1e-13));
    // Both sides of the tail switch agree with a high-precision reference.
    CHECK_THAT(std_normal_log_survival(5.0), WithinRel(-15.0649983939887257, 1e-12));
    CHECK_THAT(std_normal_log_survival(5.0 + 1e-9), WithinRel(-15.0649983991752297, 1e-12));
}

TEST_CASE("cdf and survival are complementary", "[mathstats]") {
    for (double z = -8.0; z <= 8.0; z += 0.01) {
        INFO("z = " << z);
        CHECK_THAT(std_normal_cdf(z) + std::exp(std_normal_log_survival(z)), WithinAbs(1.0, 1e-12));
    }
}

TEST_CASE("monotone cdf and survival", "[mathstats]") {
    double prev_cdf = 0.0, prev_ls = 0.0;
    for (double z = -40.0; z <= 40.0; z += 0.05) {
        const double c = std_normal_cdf(z), ls = std_normal_log_survival(z);
        if (z > -40.0) {
            CHECK(c >= prev_cdf);
            CHECK(ls <= prev_ls);
        }
        prev_cdf = c;
        prev_ls = ls;
    }
}

TEST_CASE("sigmoid family", "[mathstats]") {
    CHECK(sigmoid(0.0) == 0.5);
    CHECK_THAT(log_sigmoid(-100.0), WithinAbs(-100.0, 1e-9));
    CHECK_THAT(sigmoid(2.0), WithinRel(0.880797077977882444, 1e-15));
    CHECK_THAT(log_sigmoid(2.0), WithinRel(-0.126928011042972496, 1e-14));
    CHECK(log_sigmoid(800.0) == 0.0);
    CHECK(std::isfinite(log_sigmoid(-800.0)));
    for (double a = -50.0; a <= 50.0; a += 0.37) {
        CHECK_THAT(sigmoid(a) + sigmoid(-a), WithinAbs(1.0, 1e-15));
    }
}

TEST_CASE("logistic noise", "[mathstats]") {
    CHECK(logistic_from_uniform(0.5) == 0.0);
    CHECK_THAT(logistic_from_uniform(0.9), WithinRel(2.19722457733621938, 1e-14));

    Rng rng(11);
    double sum = 0.0;
    const int n = 1000000;
    for (int i = 0; i < n; ++i) {
        const double l = sample_logistic(rng);
        REQUIRE(std::isfinite(l));
        sum += l;
    }
    CHECK(std::abs(sum / n) < 0.01);
}

TEST_CASE("rng streams", "[mathstats]") {
    Rng a(42), b(42), c(43);
    bool differs = false;
    for (int i = 0; i < 10000; ++i) {
        const auto x = a.next_u64();
        REQUIRE(x == b.next_u64());
        differs |= x != c.next_u64();
    }
    CHECK(differs);

    // Children are reproducible and distinct from each other and the parent.
    const Rng parent(5);
    Rng c1 = parent.child(1), c1b = parent.child(1), c2 = parent.child(2), p = parent;
    const auto v1 = c1.next_u64();
    CHECK(v1 == c1b.next_u64());
    CHECK(v1 != c2.next_u64());
    CHECK(v1 != p.next_u64());

    Rng u(9);
    for (int i = 0; i < 100000; ++i) {
        const double x = u.uniform();
        REQUIRE(x > 0.0);
        REQUIRE(x < 1.0);
    }
    Rng k(3);
    for (int i = 0; i < 1000; ++i) REQUIRE(k.below(7) < 7);
}
