#include "clab/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/special_functions/gamma.hpp>

namespace clab::stats {

LinearFit linear_fit(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw std::invalid_argument("linear_fit: size mismatch");
    LinearFit fit;
    fit.n = x.size();
    if (fit.n < 2) throw std::invalid_argument("linear_fit: need at least two points");
    const double mx = mean(x);
    const double my = mean(y);
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < fit.n; ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if (sxx == 0.0) throw std::invalid_argument("linear_fit: degenerate abscissae");
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    double sse = 0.0;
    for (std::size_t i = 0; i < fit.n; ++i) {
        const double r = y[i] - (fit.intercept + fit.slope * x[i]);
        sse += r * r;
    }
    fit.r2 = syy > 0.0 ? 1.0 - sse / syy : 1.0;
    return fit;
}

Interval wilson(std::uint64_t successes, std::uint64_t trials, double z) {
    if (trials == 0) return {0.0, 1.0};
    const double n = static_cast<double>(trials);
    const double p = static_cast<double>(successes) / n;
    const double z2 = z * z;
    const double denom = 1.0 + z2 / n;
    const double centre = (p + z2 / (2.0 * n)) / denom;
    const double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;
    return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

double chi_square_sf(double stat, double df) {
    if (df <= 0.0) return 1.0;
    if (stat <= 0.0) return 1.0;
    boost::math::chi_squared dist(df);
    return boost::math::cdf(boost::math::complement(dist, stat));
}

GofResult chi_square_gof(std::span<const std::uint64_t> observed, std::span<const double> probs,
                         double min_expected) {
    if (observed.size() != probs.size()) throw std::invalid_argument("chi_square_gof: size mismatch");
    double total = 0.0;
    for (auto o : observed) total += static_cast<double>(o);
    GofResult out;
    if (total == 0.0) return out;
    double pooled_obs = 0.0, pooled_exp = 0.0;
    std::size_t bins = 0;
    for (std::size_t i = 0; i < observed.size(); ++i) {
        const double e = probs[i] * total;
        const double o = static_cast<double>(observed[i]);
        if (e < min_expected) {
            pooled_obs += o;
            pooled_exp += e;
            continue;
        }
        out.statistic += (o - e) * (o - e) / e;
        ++bins;
    }
    if (pooled_exp > 0.0) {
        out.statistic += (pooled_obs - pooled_exp) * (pooled_obs - pooled_exp) / pooled_exp;
        ++bins;
    } else if (pooled_obs > 0.0) {
        // Mass observed where none is expected.
        out.statistic = std::numeric_limits<double>::infinity();
        out.p_value = 0.0;
        out.dof = static_cast<double>(bins);
        return out;
    }
    out.dof = bins > 1 ? static_cast<double>(bins - 1) : 0.0;
    out.p_value = chi_square_sf(out.statistic, out.dof);
    return out;
}

double ks_statistic(std::vector<double> samples, const std::function<double(double)>& cdf) {
    if (samples.empty()) return 0.0;
    std::sort(samples.begin(), samples.end());
    const double n = static_cast<double>(samples.size());
    double d = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double f = cdf(samples[i]);
        d = std::max({d, (static_cast<double>(i) + 1.0) / n - f, f - static_cast<double>(i) / n});
    }
    return d;
}

double ks_pvalue(double d, std::size_t n) {
    if (n == 0) return 1.0;
    const double sn = std::sqrt(static_cast<double>(n));
    const double lambda = (sn + 0.12 + 0.11 / sn) * d;
    if (lambda < 1e-3) return 1.0;
    double sum = 0.0;
    double sign = 1.0;
    for (int k = 1; k <= 200; ++k) {
        const double term = std::exp(-2.0 * k * k * lambda * lambda);
        sum += sign * term;
        if (term < 1e-16) break;
        sign = -sign;
    }
    return std::clamp(2.0 * sum, 0.0, 1.0);
}

double ks_test_exponential(std::span<const double> samples, double rate) {
    std::vector<double> v(samples.begin(), samples.end());
    const double d = ks_statistic(std::move(v), [rate](double x) {
        return x <= 0.0 ? 0.0 : -std::expm1(-rate * x);
    });
    return ks_pvalue(d, samples.size());
}

double poisson_cdf(std::int64_t k, double mean) {
    if (k < 0) return 0.0;
    if (mean <= 0.0) return 1.0;
    return boost::math::gamma_q(static_cast<double>(k) + 1.0, mean);
}

double mean(std::span<const double> xs) {
    if (xs.empty()) return 0.0;
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

double variance(std::span<const double> xs) {
    if (xs.size() < 2) return 0.0;
    const double m = mean(xs);
    double s = 0.0;
    for (double x : xs) s += (x - m) * (x - m);
    return s / static_cast<double>(xs.size() - 1);
}

}  // namespace clab::stats
