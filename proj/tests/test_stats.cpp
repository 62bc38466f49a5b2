#include <doctest.h>

#include <atomic>
#include <cmath>
#include <vector>

#include "clab/parallel.hpp"
#include "clab/rng.hpp"
#include "clab/stats.hpp"

using namespace clab;

TEST_CASE("derived seeds are distinct and name-sensitive") {
    CHECK(derive_seed(1, 0) != derive_seed(1, 1));
    CHECK(derive_seed(1, 0) != derive_seed(2, 0));
    CHECK(derive_seed(1, "a", 0) != derive_seed(1, "b", 0));
    CHECK(derive_seed(1, "a", 3) == derive_seed(1, "a", 3));
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
}

TEST_CASE("rng draws: uniform range, exponential and Poisson moments") {
    Rng rng(5);
    double s = 0.0, s2 = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        CHECK_UNARY(u >= 0.0);
        CHECK_UNARY(u < 1.0);
        const double e = rng.exp1();
        s += e;
        s2 += e * e;
    }
    CHECK(std::abs(s / n - 1.0) < 4.0 / std::sqrt(n));
    for (double mean : {0.3, 4.0, 25.0, 400.0}) {
        double m = 0.0, v = 0.0;
        const int k = 50000;
        std::vector<double> xs(k);
        for (auto& x : xs) x = static_cast<double>(rng.poisson(mean));
        m = stats::mean(xs);
        v = stats::variance(xs);
        CHECK(std::abs(m - mean) < 4.0 * std::sqrt(mean / k));
        CHECK(std::abs(v / mean - 1.0) < 0.05);
    }
    CHECK(rng.poisson(0.0) == 0);
}

namespace {

// Direct pmf summation in log space.
double poisson_cdf_oracle(std::int64_t k, double mean) {
    double s = 0.0;
    for (std::int64_t j = 0; j <= k; ++j)
        s += std::exp(static_cast<double>(j) * std::log(mean) - mean - std::lgamma(static_cast<double>(j) + 1.0));
    return s;
}

}  // namespace

TEST_CASE("poisson_cdf matches pmf summation, chi_square_sf matches closed forms") {
    for (double mean : {0.5, 10.0, 100.0, 1500.0})
        for (std::int64_t k : {0, 1, 5, 50, 90, 110, 1400, 1600}) {
            const double ref = poisson_cdf_oracle(k, mean);
            if (ref < 1e-250) {
                CHECK(stats::poisson_cdf(k, mean) < 1e-250);
                continue;
            }
            CHECK(stats::poisson_cdf(k, mean) == doctest::Approx(ref).epsilon(1e-9));
        }
    CHECK(stats::poisson_cdf(-1, 3.0) == 0.0);
    for (double x : {0.1, 2.0, 10.0, 60.0}) {
        CHECK(stats::chi_square_sf(x, 1.0) == doctest::Approx(std::erfc(std::sqrt(x / 2.0))).epsilon(1e-9));
        CHECK(stats::chi_square_sf(x, 2.0) == doctest::Approx(std::exp(-x / 2.0)).epsilon(1e-9));
        CHECK(stats::chi_square_sf(x, 4.0) == doctest::Approx(std::exp(-x / 2.0) * (1.0 + x / 2.0)).epsilon(1e-9));
    }
}

TEST_CASE("linear fit: exact line, constant series, degenerate input") {
    const std::vector<double> x{0, 1, 2, 3}, y{1, 4, 7, 10};
    const auto f = stats::linear_fit(x, y);
    CHECK(f.slope == doctest::Approx(3.0));
    CHECK(f.intercept == doctest::Approx(1.0));
    CHECK(f.r2 == doctest::Approx(1.0));
    const std::vector<double> c{2, 2, 2, 2};
    CHECK(stats::linear_fit(x, c).slope == doctest::Approx(0.0));
    CHECK_THROWS(stats::linear_fit(std::vector<double>{1.0}, std::vector<double>{1.0}));
    CHECK_THROWS(stats::linear_fit(c, y));
}

TEST_CASE("wilson interval contains the proportion and shrinks with n") {
    const auto a = stats::wilson(50, 100);
    const auto b = stats::wilson(5000, 10000);
    CHECK(a.lo < 0.5);
    CHECK(a.hi > 0.5);
    CHECK(b.hi - b.lo < a.hi - a.lo);
    CHECK(stats::wilson(0, 10).lo == 0.0);
}

TEST_CASE("goodness-of-fit tests accept their own law") {
    Rng rng(9);
    std::vector<double> e(10000);
    for (auto& x : e) x = rng.exp1();
    CHECK(stats::ks_test_exponential(e) > 0.01);
    for (auto& x : e) x *= 2.0;
    CHECK(stats::ks_test_exponential(e) < 1e-6);
    std::vector<std::uint64_t> obs(4, 0);
    for (int i = 0; i < 10000; ++i) ++obs[rng.below(4)];
    const std::vector<double> p(4, 0.25);
    CHECK(stats::chi_square_gof(obs, p).p_value > 0.01);
}

TEST_CASE("parallel_for visits every index once and rethrows") {
    std::vector<std::atomic<int>> hits(1000);
    parallel_for(hits.size(), [&](std::size_t i) { hits[i]++; });
    for (auto& h : hits) CHECK(h.load() == 1);
    CHECK_THROWS_AS(parallel_for(10, [](std::size_t i) {
                        if (i == 3) throw std::runtime_error("x");
                    }),
                    std::runtime_error);
}
