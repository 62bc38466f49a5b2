#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "clab/lattice.hpp"
#include "clab/mixing.hpp"
#include "clab/stats.hpp"

namespace clab {

/// Initial configuration: particle j starts at starts[j].
struct EpidemicSetup {
    std::vector<Vertex> starts;
    std::vector<char> infected;
};

/// Poisson(lambda0 mu_x) particles on every vertex (stream derive_seed(seed,
/// "cloud", 0)) after one infected particle, id 0, at box.center().
/// Throws when the origin is isolated.
EpidemicSetup seeded_cloud(const ConductanceField& field, double lambda0, std::uint64_t seed);

enum class EventKind : std::uint8_t { jump, infection, recovery, reinfection };

struct TraceEvent {
    double time = 0.0;
    std::uint32_t particle = 0;
    EventKind kind = EventKind::jump;
    Vertex vertex = kNoVertex;
};

struct FrontSeries {
    std::vector<double> times;
    std::vector<double> front;           ///< max l1 unwrapped displacement of an infected particle
    std::vector<std::uint64_t> infected;
    std::optional<double> extinction_time;
};

struct EpidemicOptions {
    double horizon = 100.0;
    double gamma = 0.0;               ///< recovery rate, 0 for SI
    std::vector<double> sample_times; ///< empty: 0, 1, ..., floor(horizon)
    std::uint64_t seed = 1;
    bool record_trace = false;
    bool stop_on_extinction = true;
};

struct EpidemicRun {
    FrontSeries series;
    std::vector<TraceEvent> trace;
    std::vector<double> first_infection;  ///< +inf when never infected
    std::vector<Vertex> final_vertex;
    std::vector<char> final_infected;
    std::uint64_t events = 0;
};

/// Event-driven SI/SIS dynamics. Particle j jumps with its own stream
/// derive_seed(seed, j) and recovers with derive_seed(seed, "recovery", j), so
/// gamma = 0 replays SI exactly and added particles leave the others' paths
/// unchanged. Co-location resolves at the event that creates it; a particle
/// recovering next to another infected particle is reinfected at once.
EpidemicRun simulate_epidemic(const ConductanceField& field, const EpidemicSetup& setup,
                              const EpidemicOptions& opts);

FrontSeries run_si(const ConductanceField& field, double lambda0, double horizon,
                   std::span<const double> sample_times, std::uint64_t seed);
FrontSeries run_sis(const ConductanceField& field, double lambda0, double gamma, double horizon,
                    std::span<const double> sample_times, std::uint64_t seed);

struct FrontSpeed {
    stats::LinearFit fit;
    double slope = 0.0;
    bool positive = false;
    bool defined = false;  ///< false for extinct or too short series
};
FrontSpeed front_speed(const FrontSeries& series, double burn_in_fraction = 0.25);

struct SurvivalPoint {
    double gamma = 0.0;
    std::uint64_t reps = 0;
    std::uint64_t survived = 0;
    double frequency = 0.0;
    stats::Interval ci;
};

/// Survival to `horizon` per gamma. Replica r uses seed derive_seed(seed, r)
/// at every gamma, so the grid shares jump paths.
std::vector<SurvivalPoint> sis_survival(const ConductanceField& field, double lambda0,
                                        std::span<const double> gammas, double horizon, std::uint64_t reps,
                                        std::uint64_t seed);

/// Space-time cell parameters. beta_time and T default to ratio * ell^2 and
/// ell^{5/3} when left at 0.
struct CellEventSpec {
    int ell = 16;
    int eta = 1;
    double beta_time = 0.0;
    double beta_ratio = 4.0;
    double T = 0.0;
    double lambda0 = 8.0;
    double w = 0.0;       ///< confinement side in units of ell; 0 disables it
    double gamma = 0.0;
    double c1 = 0.2;      ///< collision constant used by the F2 threshold

    double time_cell() const;
    double collision_time() const;
};

std::vector<std::string> validate_cell_spec(const LatticeBox& box, const CellEventSpec& spec);

/// Cubes of the cell centred on box.center(): the centre cube, the super cube
/// of side (2 eta + 1) ell, the region of side (2 eta - 1) ell the tagged path
/// is kept in, and the (2 eta + 1)^d sub-cubes.
struct CellGeometry {
    Cube center;
    Cube super;
    Cube inner;
    std::vector<Cube> cubes;
    Vertex start = kNoVertex;  ///< centre vertex of the centre cube
};
CellGeometry cell_geometry(const LatticeBox& box, const CellEventSpec& spec);

enum class CensusMode { continuous, checkpoint };

struct CensusResult {
    std::uint32_t count = 0;
    std::uint32_t particles = 0;
    std::uint64_t tagged_attempts = 0;
};

/// Background particles that stay in the super cube during [0, T] and share a
/// site with the tagged path. Checkpoint mode only counts meetings at times
/// j ell^{4/3}; it samples the particles sitting on the tagged path at each
/// checkpoint directly (the walk is reversible), so `particles` then counts
/// those candidates rather than the whole cloud.
CensusResult collision_census(const ConductanceField& field, const CellEventSpec& spec, std::uint64_t seed,
                              CensusMode mode = CensusMode::continuous, double acceptance_floor = 1e-4);

struct CollisionScaling {
    std::vector<int> ells;
    std::vector<double> mean;
    std::vector<double> stderr_mean;
    stats::LinearFit loglog;  ///< log mean against log ell
};
CollisionScaling collision_scaling(const ConductanceField& field, const CellEventSpec& base,
                                   std::span<const int> ells, std::uint64_t reps, std::uint64_t seed,
                                   CensusMode mode = CensusMode::continuous);

enum class SpreadPlacement { uniform, worst_corner };
std::string to_string(SpreadPlacement p);
SpreadPlacement spread_placement_from_string(const std::string& s);

struct SpreadPoint {
    std::uint64_t N = 0;
    std::uint64_t reps = 0;
    std::uint64_t hits = 0;
    double probability = 0.0;
    stats::Interval ci;
};

/// Frequency that one of N particles placed in the super cube at time T sits
/// in the cube offset by z at time beta_time.
SpreadPoint spread_probability(const ConductanceField& field, const CellEventSpec& spec, std::uint64_t N,
                               std::span<const int> z, SpreadPlacement placement, std::uint64_t reps,
                               std::uint64_t seed);

struct SpreadReport {
    std::vector<SpreadPoint> points;
    stats::LinearFit log_failure;  ///< log(1 - P) against N
    double c_p = 0.0;              ///< minus the slope
};
/// Replica r places the same first particles for every N, so failure is
/// monotone in N replica by replica.
SpreadReport spread_scan(const ConductanceField& field, const CellEventSpec& spec, std::span<const std::uint64_t> Ns,
                         std::span<const int> z, SpreadPlacement placement, std::uint64_t reps, std::uint64_t seed);

struct CellOutcome {
    bool e_st = false;
    bool f1 = false;  ///< tagged path kept in the inner region during [0, T]
    bool f2 = false;  ///< enough collided particles in the super cube at T
    bool f3 = false;  ///< those particles cover every cube at beta_time
    std::uint32_t particles = 0;
    std::uint32_t collided = 0;
    std::uint32_t collided_inside = 0;
};

struct CellEventReport {
    CellEventSpec spec;
    double intensity = 0.0;  ///< background particles per unit mu
    std::uint64_t reps = 0;
    std::uint64_t successes = 0;
    double probability = 0.0;
    stats::Interval ci;
    double f1 = 0.0, f2 = 0.0, f3 = 0.0;
    std::vector<CellOutcome> outcomes;
};

/// One draw of the cell event with background Poisson(intensity mu_x) on the
/// super cube minus the tagged start. With spec.w > 0 every path is
/// conditioned on displacement within the cube of side w ell over
/// [0, beta_time]; with spec.gamma > 0 the tagged particle and the counted
/// particles must not recover before beta_time.
CellOutcome sample_cell_event(const ConductanceField& field, const CellEventSpec& spec, double intensity,
                              std::uint64_t seed, double acceptance_floor = 1e-4);

CellEventReport estimate_cell_event(const ConductanceField& field, const CellEventSpec& spec, std::uint64_t reps,
                                    std::uint64_t seed);

/// Associated probability: background Poisson((1 - eps) lambda0 mu_x).
CellEventReport estimate_nu(const ConductanceField& field, const CellEventSpec& spec, double eps,
                            std::uint64_t reps, std::uint64_t seed);

struct ChernoffCheck {
    double lambda = 0.0;
    double eps = 0.0;
    double lower_bound = 0.0;  ///< exp(-lambda eps^2 / 2)
    double upper_bound = 0.0;  ///< exp(-lambda eps^2 / 4)
    double lower_exact = 0.0;  ///< P[P < (1 - eps) lambda]
    double upper_exact = 0.0;  ///< P[P > (1 + eps) lambda]
    bool holds = false;
};
ChernoffCheck chernoff_poisson(double lambda, double eps);

}  // namespace clab
