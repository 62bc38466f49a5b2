#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace clab::stats {

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
    std::size_t n = 0;
};

/// Ordinary least squares of y on x. R^2 is 1 when y is constant and fitted
/// exactly, 0 when the fit explains nothing.
LinearFit linear_fit(std::span<const double> x, std::span<const double> y);

struct Interval {
    double lo = 0.0;
    double hi = 1.0;
};

/// Wilson score interval for a binomial proportion (z = 1.96 gives 95%).
Interval wilson(std::uint64_t successes, std::uint64_t trials, double z = 1.96);

/// Upper tail P[chi2_df >= stat].
double chi_square_sf(double stat, double df);

struct GofResult {
    double statistic = 0.0;
    double dof = 0.0;
    double p_value = 1.0;
};

/// Pearson goodness of fit of observed counts against probabilities. Bins with
/// expected count below `min_expected` are pooled into one bin.
GofResult chi_square_gof(std::span<const std::uint64_t> observed, std::span<const double> probs,
                         double min_expected = 5.0);

/// One-sample Kolmogorov-Smirnov statistic sup |F_n - F|.
double ks_statistic(std::vector<double> samples, const std::function<double(double)>& cdf);

/// Asymptotic Kolmogorov p-value with the Stephens small-sample correction.
double ks_pvalue(double d, std::size_t n);

double ks_test_exponential(std::span<const double> samples, double rate = 1.0);

/// P[Poisson(mean) <= k]; 0 for k < 0.
double poisson_cdf(std::int64_t k, double mean);

double mean(std::span<const double> xs);
double variance(std::span<const double> xs);

}  // namespace clab::stats
