#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "clab/lattice.hpp"
#include "clab/rng.hpp"
#include "clab/stats.hpp"
#include "clab/walk.hpp"

namespace clab {

struct Particle {
    std::uint32_t id = 0;
    Vertex vertex = kNoVertex;
};

struct ParticleCloud {
    double time = 0.0;
    std::vector<Particle> particles;
    std::string intensity;  ///< e.g. "lambda0=2"

    std::size_t size() const noexcept { return particles.size(); }
    std::vector<std::uint32_t> counts(std::size_t num_vertices) const;
};

/// Independent Poisson(lambda0 mu_x) particles at each x of `region`, in
/// region order; ids are consecutive from 0.
ParticleCloud sample_cloud(const ConductanceField& field, double lambda0, std::span<const Vertex> region,
                           std::uint64_t seed);
ParticleCloud sample_cloud(const ConductanceField& field, double lambda0, std::uint64_t seed);

struct EvolvedCloud {
    ParticleCloud cloud;
    std::vector<Trajectory> paths;  ///< filled when requested
    std::uint64_t attempts = 0;     ///< confined rejection attempts, all particles
};

/// Moves every particle by an independent walk of duration delta (stream
/// derive_seed(seed, id)); with rho set each walk is conditioned to keep its
/// displacement in Q_rho. RejectionFloorError names the offending particle.
EvolvedCloud evolve_cloud(const ConductanceField& field, const ParticleCloud& cloud, double delta,
                          std::optional<int> rho, std::uint64_t seed, bool keep_paths = false,
                          double acceptance_floor = 1e-4);

/// Chi-square test of the per-site count histogram against the mixture of
/// Poisson(lambda0 mu_x) laws over the sites.
stats::GofResult stationarity_test(const ConductanceField& field, const ParticleCloud& cloud, double lambda0);

/// Axis-aligned cube of `side` vertices per axis with the given lower corner.
struct Cube {
    Coords lower{};
    int side = 0;
};
std::vector<Vertex> cube_vertices(const LatticeBox& box, const Cube& cube);
/// Cube of the given side centred on box.center().
Cube centered_cube(const LatticeBox& box, int side);

struct Tessellation {
    int K = 0;       ///< outer cube side, rounded down to a multiple of ell
    int ell = 0;
    int Kprime = 0;  ///< retained inner cube side
    Cube outer;
    Cube inner;
    std::vector<Cube> subcubes;

    static Tessellation make(const LatticeBox& box, int K, int ell, int Kprime);
    std::vector<Vertex> outer_vertices(const LatticeBox& box) const { return cube_vertices(box, outer); }
    std::vector<Vertex> inner_vertices(const LatticeBox& box) const { return cube_vertices(box, inner); }
};

struct DensityCertificate {
    double beta = 0.0;
    std::vector<double> required;
    std::vector<std::uint64_t> actual;
    bool pass = true;
};

DensityCertificate density_check(const ConductanceField& field, const ParticleCloud& cloud,
                                 const Tessellation& tess, double beta);

/// Chernoff lower bound on the pass probability when lambda0 = 2 beta:
/// 1 - #subcubes * exp(-m / 8) with m the smallest required subcube mass.
double density_pass_bound(const ConductanceField& field, const Tessellation& tess, double beta);

/// Sparse endpoint law of a walk started at `start`.
struct SparseKernel {
    Vertex start = kNoVertex;
    std::vector<Vertex> support;
    std::vector<double> prob;
    double mass = 1.0;  ///< p_E(rho) for confined kernels, 1 otherwise
};

/// g(x, .) = a_Delta(x, .) / p_E(rho): uniformization of the walk on the
/// displacement cube [-rho/2, rho/2]^d around x with the exterior absorbing.
/// Throws std::invalid_argument when p_E(rho) < 1e-6.
SparseKernel confined_kernel(const ConductanceField& field, double delta, int rho, Vertex x,
                             double tol = 1e-13);

/// Unconfined p_Delta(x, .) as a sparse kernel.
SparseKernel free_kernel(const ConductanceField& field, double delta, Vertex x, double tol = 1e-13);

struct OscillationPoint {
    double delta = 0.0;
    int rho = 0;
    double max_osc = 0.0;
    double fitted_c = 0.0;  ///< max_osc / (ell^Theta Delta^{-(d + Theta)/2})
};

struct KernelOscillationReport {
    std::vector<OscillationPoint> points;
    stats::LinearFit loglog;  ///< log max_osc against log Delta
};

/// Margin policies for K - K' and for the confinement width.
enum class MarginPolicy { ell_eps, sqrt_delta_eps, sqrt_delta_log_delta };
std::string to_string(MarginPolicy p);
MarginPolicy margin_policy_from_string(const std::string& s);

struct MarginParams {
    MarginPolicy policy = MarginPolicy::sqrt_delta_eps;
    double c1 = 1.0;
    double c3 = 1.0;
    double c4 = 1.0;
};

/// Required K - K' under the policy.
double required_margin(const MarginParams& m, double delta, double eps, int ell, int d);

/// Confinement side rho = 2 ceil(c1 sqrt(Delta log Delta)).
int confinement_rho(double delta, double c1);

/// max over x, z in the centred cube of side ell and all y of
/// |g(x,y) - g(z,y)| / mu_y, for each Delta. rho <= 0 selects
/// confinement_rho(Delta, 1).
KernelOscillationReport kernel_oscillation_check(const ConductanceField& field, std::span<const double> deltas,
                                                 int rho, int ell, double theta);

using KernelEntries = std::vector<std::pair<std::uint32_t, double>>;

struct CouplingInput {
    /// Kernel of particle j restricted to the target states, as (state, g)
    /// pairs; the remaining mass 1 - sum g is the lumped "outside" state.
    std::vector<const KernelEntries*> kernels;
    std::vector<double> zeta;  ///< target intensity per state
};

struct CouplingReport {
    std::vector<double> xi;
    std::vector<double> H;
    std::vector<std::int64_t> endpoint;  ///< state index, -1 for outside
    std::vector<std::uint32_t> psi_count;
    std::vector<std::uint32_t> failures;  ///< states with H < zeta
    bool success = false;      ///< H >= zeta everywhere
    bool psi_covered = false;  ///< every psi point was claimed by a particle
    /// matching[state] lists, in level order, the particle that claimed each
    /// psi point at that state (filled on success).
    std::vector<std::vector<std::uint32_t>> matching;
};

/// Soft local times with the claiming rule: particle j takes the unclaimed
/// eta point minimizing (level - H_{j-1}(y)) / g_j(y), so xi_j is that
/// minimum and Y_j its site. psi is the set of eta points below zeta.
/// Rejects kernels with no mass anywhere (including outside).
CouplingReport soft_local_time_coupling(const CouplingInput& input, std::uint64_t seed);

enum class Placement { poisson, minimal_uniform, minimal_corner };
std::string to_string(Placement p);
Placement placement_from_string(const std::string& s);

struct MixingParams {
    int K = 64;
    int ell = 8;
    int Kprime = 16;
    double eps = 0.5;
    double beta = 1.0;
    double lambda0 = 2.0;
    std::vector<double> deltas{64.0, 256.0, 1024.0};
    bool confined = false;
    MarginParams margin{};
    Placement placement = Placement::poisson;
    std::uint64_t reps = 200;
    std::uint64_t seed = 1;
    int max_density_resamples = 1000;
};

struct MixingRep {
    std::uint64_t seed = 0;
    bool success = false;
    bool contained = true;
    std::uint64_t particles = 0;
    std::vector<Vertex> failures;  ///< inner vertices with H < zeta
};

struct MixingPoint {
    double delta = 0.0;
    int rho = 0;
    std::uint64_t reps = 0;
    std::uint64_t successes = 0;
    std::uint64_t density_resamples = 0;
    std::uint64_t containment_checked = 0;
    std::uint64_t containment_failures = 0;
    std::uint64_t success_without_cover = 0;
    double frequency = 0.0;
    stats::Interval ci;
    std::vector<std::uint64_t> failure_profile;  ///< per inner vertex
    std::vector<MixingRep> rep_records;
};

struct MixingReport {
    std::vector<MixingPoint> points;
};

/// Validation of the mixing geometry; empty when fine.
std::vector<std::string> validate_mixing(const LatticeBox& box, const MixingParams& p);

MixingReport mixing_experiment(const ConductanceField& field, const MixingParams& p);

}  // namespace clab
