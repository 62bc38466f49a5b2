#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "clab/lattice.hpp"
#include "clab/rng.hpp"
#include "clab/stats.hpp"

namespace clab {

/// Raised when a rejection sampler's acceptance rate falls below its floor.
class RejectionFloorError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Per-vertex alias tables for the jump chain P(x, y) = mu_xy / mu_x.
class JumpTable {
public:
    explicit JumpTable(const ConductanceField& field);

    const ConductanceField& field() const noexcept { return *field_; }

    /// Slot index in [0, 2d) of the next jump out of v. v must not be isolated.
    int sample_slot(Vertex v, Rng& rng) const noexcept {
        const std::size_t base = static_cast<std::size_t>(v) * static_cast<std::size_t>(slots_);
        const double u = rng.uniform() * slots_;
        const int col = static_cast<int>(u);
        const double frac = u - col;
        const std::size_t k = base + static_cast<std::size_t>(col);
        return frac < prob_[k] ? col : alias_[k];
    }

    Vertex sample_next(Vertex v, Rng& rng) const noexcept {
        return field_->neighbors(v)[static_cast<std::size_t>(sample_slot(v, rng))];
    }

    bool isolated(Vertex v) const noexcept { return field_->vertex_weight(v) <= 0.0; }

private:
    const ConductanceField* field_;
    int slots_;
    std::vector<double> prob_;
    std::vector<std::int8_t> alias_;
};

struct WalkConfig {
    double horizon = 0.0;
    std::uint64_t seed = 0;
    std::optional<int> rho;          ///< side of the displacement cube Q_rho
    double acceptance_floor = 1e-4;  ///< confined walks only
};

struct Trajectory {
    Vertex start = kNoVertex;
    std::vector<double> times;
    std::vector<Vertex> vertices;
    double horizon = 0.0;
    bool isolated_start = false;

    std::size_t jumps() const noexcept { return times.size(); }
    Vertex position_at(double t) const noexcept;
    Vertex end() const noexcept { return vertices.empty() ? start : vertices.back(); }
};

Trajectory simulate_walk(const JumpTable& jumps, Vertex x, const WalkConfig& cfg);
Trajectory simulate_walk(const ConductanceField& field, Vertex x, const WalkConfig& cfg);

/// Endpoint of a walk of duration t driven by `rng`, without storing the path.
Vertex walk_endpoint(const JumpTable& jumps, Vertex x, double t, Rng& rng);

/// First jump time whose destination lies outside B(x, r), if any.
std::optional<double> exit_time(const ConductanceField& field, const Trajectory& traj, int r);

struct ExitTailPoint {
    int r = 0;
    double t = 0.0;
    std::uint64_t n = 0;
    std::uint64_t exits = 0;
    double frequency = 0.0;
    stats::Interval ci;
};

/// Fraction of n independent walks from x that leave B(x, r) before time t.
ExitTailPoint empirical_exit_tail(const ConductanceField& field, Vertex x, int r, double t,
                                  std::uint64_t n, std::uint64_t seed);

/// log P = log c3 - c4 r^2/t fitted over the points with nonzero frequency.
struct ExitTailFit {
    double c3 = 0.0;
    double c4 = 0.0;
    stats::LinearFit fit;
    std::size_t used = 0;
};
ExitTailFit fit_exit_tail(std::span<const ExitTailPoint> points);

/// Largest coordinate displacement allowed inside Q_rho = [-rho/2, rho/2]^d.
inline int confinement_radius(int rho) noexcept { return rho / 2; }

struct ConfinedWalk {
    std::optional<Trajectory> trajectory;
    std::uint64_t attempts = 0;
    std::uint64_t accepted = 0;
    double acceptance() const noexcept {
        return attempts == 0 ? 0.0 : static_cast<double>(accepted) / static_cast<double>(attempts);
    }
};

/// Rejection sampler for a walk whose l-infinity displacement stays in
/// Q_rho up to the horizon. Throws RejectionFloorError after 1/floor
/// consecutive rejections.
ConfinedWalk simulate_confined_walk(const JumpTable& jumps, Vertex x, const WalkConfig& cfg);
ConfinedWalk simulate_confined_walk(const ConductanceField& field, Vertex x, const WalkConfig& cfg);

/// Endpoint-only confined sampler drawing from `rng`; adds to the counters.
Vertex confined_endpoint(const JumpTable& jumps, Vertex x, double t, int rho, double floor, Rng& rng,
                         std::uint64_t& attempts);

/// Acceptance estimate p_E(rho) from n unconditioned walks.
stats::Interval estimate_stay_probability(const ConductanceField& field, Vertex x, double t, int rho,
                                          std::uint64_t n, std::uint64_t seed, double* point = nullptr);

void write_trajectory_jsonl(const Trajectory& traj, const std::string& path);

}  // namespace clab
