#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "clab/lattice.hpp"
#include "clab/stats.hpp"

namespace clab {

/// One step of the jump chain acting on a row vector: out = in * P.
/// Isolated vertices keep their mass.
void jump_step(const ConductanceField& field, std::span<const double> in, std::span<double> out);

/// Generator (Lf)(x) = mu_x^{-1} sum_y mu_xy (f(y) - f(x)); zero at isolated x.
std::vector<double> apply_generator(const ConductanceField& field, std::span<const double> f);

/// Evolves a distribution over time t by uniformization. Time is cut into
/// chunks of at most 32 so that exp(-t) never underflows; each chunk's Poisson
/// series is truncated once its tail mass drops below tol / #chunks.
struct Evolution {
    std::vector<double> p;
    double truncation = 0.0;  ///< total dropped Poisson tail mass
    std::size_t steps = 0;    ///< jump-matrix applications
};
Evolution evolve(const ConductanceField& field, std::vector<double> p0, double t, double tol = 1e-13);

struct HeatKernelTable {
    double t = 0.0;
    double tol = 0.0;
    double truncation = 0.0;
    std::size_t num_vertices = 0;
    std::vector<Vertex> sources;
    std::vector<std::vector<double>> p;  ///< p_t(x, .) per source
    std::vector<std::vector<double>> q;  ///< q_t(x, .) = p / mu_y (0 where mu_y = 0)

    std::size_t index_of(Vertex source) const;
    double value(Vertex source, Vertex y) const { return q[index_of(source)][static_cast<std::size_t>(y)]; }
};

/// Exact heat kernel from each source. Throws for isolated sources.
HeatKernelTable heat_kernel_exact(const ConductanceField& field, double t, std::span<const Vertex> sources,
                                  double tol = 1e-13);

/// p_t(x, .) at several increasing times from one source, reusing the
/// previous time as the starting point of the next.
std::vector<std::vector<double>> kernel_series(const ConductanceField& field, Vertex source,
                                               std::span<const double> times, double tol = 1e-13);

struct CaloricReport {
    double residual = 0.0;       ///< at dt
    double residual_half = 0.0;  ///< at dt/2
    double ratio = 0.0;          ///< residual / residual_half (about 4 for O(dt^2))
};

/// Central-difference check of d/dt q_t(x, .) = L q_t(x, .).
CaloricReport check_caloric(const ConductanceField& field, Vertex source, double t, double dt,
                            double tol = 1e-15);

enum class Metric { graph, euclidean };

struct GaussianFit {
    stats::LinearFit regression;  ///< log(t^{d/2} q) against r^2 / t
    double c1 = 0.0, c2 = 0.0;    ///< upper bound constants
    double c3 = 0.0, c4 = 0.0;    ///< lower bound constants
    std::size_t upper_points = 0;
    std::size_t lower_points = 0;
    std::size_t upper_violations = 0;
    std::size_t lower_violations = 0;
};

/// Fits q_t(x,y) against t^{-d/2} exp(-c r^2/t) over the t-grid. Points enter
/// the upper fit when graph distance <= t and the lower fit (and the
/// regression) when graph distance^{3/2} <= t and distance <= r_max. The
/// regression uses `metric` for r; exponents are the regression slope, and
/// prefactors the extremal ratios so that no point violates the fitted bound.
GaussianFit gaussian_bound_fit(const ConductanceField& field, Vertex source, std::span<const double> t_grid,
                               int r_max, Metric metric = Metric::euclidean);

struct PoincareResult {
    double c_p = 0.0;
    bool infinite = false;
    std::size_t ball_size = 0;
    std::size_t outer_size = 0;
};

/// Smallest C_P with sum_B (f - fbar)^2 mu <= C_P r^2 D(f) over f on
/// B(x, C_W r), where D sums mu_e (f(u) - f(v))^2 once per edge inside the
/// outer ball.
PoincareResult poincare_constant(const ConductanceField& field, Vertex x, int r, double c_w);

/// Variance and Dirichlet forms for a given f on the outer ball (ordered as
/// ball(field, x, floor(c_w r)).vertices).
struct PoincareForms {
    const ConductanceField* field = nullptr;
    std::vector<Vertex> outer;
    std::vector<char> in_inner;
    std::vector<std::int32_t> local;  ///< vertex -> index in outer, or -1

    double variance(std::span<const double> f) const;
    double dirichlet(std::span<const double> f) const;
};
PoincareForms poincare_forms(const ConductanceField& field, Vertex x, int r, double c_w);

struct HarnackOptions {
    double max_source_distance = 2.0;  ///< in units of R
    int time_points = 64;              ///< per time interval
    double time_offset = 0.0;
    double tol = 1e-13;
};

struct HarnackEstimate {
    double c_h = 1.0;
    double theta = 0.0;
    std::size_t family_size = 0;
    std::size_t skipped = 0;
    Vertex worst_source = kNoVertex;
};

/// Theta = log2(C_H / (C_H - 1)) with C_H clamped to at least 1 + 1e-9.
double harnack_theta(double c_h);

/// Estimates C_H on Q(x, R, R^2) from the family of heat kernels
/// u(y, s) = q_{s + offset}(z, y), with sources z at distances
/// {0, R/2, R, ...} up to max_source_distance * R along the first axis and
/// the main diagonal.
HarnackEstimate harnack_constant(const ConductanceField& field, Vertex x, int R, const HarnackOptions& opts = {});

struct OscillationScale {
    int k = 0;
    int r = 0;
    double osc = 0.0;       ///< over Q(k)
    double osc_plus = 0.0;  ///< over Q_+(k)
    double ratio = 0.0;     ///< osc_plus / osc, 0 when osc = 0
};

/// Caloric test function sampled on demand: u(y, s) for s in (0, r0^2].
struct CaloricFunction {
    Vertex source = kNoVertex;  ///< heat kernel from here; kNoVertex means u = constant
    double time_offset = 0.0;
    double constant = 1.0;
};

/// Ratios Osc(u, Q_+(k)) / Osc(u, Q(k)) for k >= 1 while r_k = r0 / 2^k >= 2,
/// with Q(k) = (r0^2 - r_k^2) + Q(x, r_k, r_k^2).
std::vector<OscillationScale> oscillation_decay_check(const ConductanceField& field, Vertex x, int r0,
                                                      const CaloricFunction& u, int time_points = 64,
                                                      double tol = 1e-13);

struct GoodnessReport {
    double c_v = 0.0, c_p = 0.0, c_w = 0.0;
    int R = 0;
    int n_b = 0;  ///< smallest n >= 1 with every sub-ball of radius >= n good; R + 1 if none
    bool very_good = false;
    std::size_t balls_checked = 0;
    std::size_t balls_bad = 0;
    std::vector<int> bad_by_radius;  ///< index r
};

/// Classifies every B(y, r) inside B(x, R), r in [1, R], by the volume test
/// and the Poincare constant.
GoodnessReport goodness_scan(const ConductanceField& field, Vertex x, int R, double c_v, double c_p, double c_w);

/// Defaults for constant-type fields: C_V = 0.9 * 2d, C_P = 2 * max_r C_P(center, r), C_W = 2.
struct GoodnessDefaults {
    double c_v, c_p, c_w;
};
GoodnessDefaults default_goodness_constants(const ConductanceField& reference, int R);

void write_kernel_csv(const HeatKernelTable& table, const std::string& path);
void write_kernel_binary(const HeatKernelTable& table, const std::string& path);
HeatKernelTable read_kernel_binary(const std::string& path);

}  // namespace clab
