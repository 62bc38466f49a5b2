#include "clab/walk.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>

namespace clab {

JumpTable::JumpTable(const ConductanceField& field)
    : field_(&field), slots_(field.degree_slots()) {
    const std::size_t n = field.num_vertices();
    const auto k = static_cast<std::size_t>(slots_);
    prob_.assign(n * k, 1.0);
    alias_.assign(n * k, 0);
    std::vector<double> scaled(k);
    std::vector<int> small, large;
    for (std::size_t v = 0; v < n; ++v) {
        const double mu = field.vertex_weight(static_cast<Vertex>(v));
        if (mu <= 0.0) continue;
        const auto w = field.neighbor_weights(static_cast<Vertex>(v));
        small.clear();
        large.clear();
        for (std::size_t s = 0; s < k; ++s) {
            scaled[s] = w[s] / mu * static_cast<double>(k);
            (scaled[s] < 1.0 ? small : large).push_back(static_cast<int>(s));
        }
        // Vose's alias method.
        while (!small.empty() && !large.empty()) {
            const int lo = small.back();
            small.pop_back();
            const int hi = large.back();
            prob_[v * k + static_cast<std::size_t>(lo)] = scaled[static_cast<std::size_t>(lo)];
            alias_[v * k + static_cast<std::size_t>(lo)] = static_cast<std::int8_t>(hi);
            scaled[static_cast<std::size_t>(hi)] -= 1.0 - scaled[static_cast<std::size_t>(lo)];
            if (scaled[static_cast<std::size_t>(hi)] < 1.0) {
                large.pop_back();
                small.push_back(hi);
            }
        }
        for (int s : large) {
            prob_[v * k + static_cast<std::size_t>(s)] = 1.0;
            alias_[v * k + static_cast<std::size_t>(s)] = static_cast<std::int8_t>(s);
        }
        // Leftovers from rounding; a zero-weight slot must never be returned.
        for (int s : small) {
            const bool positive = w[static_cast<std::size_t>(s)] > 0.0;
            prob_[v * k + static_cast<std::size_t>(s)] = positive ? 1.0 : 0.0;
            if (!positive) {
                int target = 0;
                for (std::size_t j = 0; j < k; ++j)
                    if (w[j] > 0.0) target = static_cast<int>(j);
                alias_[v * k + static_cast<std::size_t>(s)] = static_cast<std::int8_t>(target);
            } else {
                alias_[v * k + static_cast<std::size_t>(s)] = static_cast<std::int8_t>(s);
            }
        }
    }
}

Vertex Trajectory::position_at(double t) const noexcept {
    const auto it = std::upper_bound(times.begin(), times.end(), t);
    if (it == times.begin()) return start;
    return vertices[static_cast<std::size_t>(it - times.begin()) - 1];
}

Trajectory simulate_walk(const JumpTable& jumps, Vertex x, const WalkConfig& cfg) {
    Trajectory tr;
    tr.start = x;
    tr.horizon = cfg.horizon;
    if (jumps.isolated(x)) {
        tr.isolated_start = true;
        return tr;
    }
    Rng rng(cfg.seed);
    double t = rng.exp1();
    Vertex v = x;
    while (t <= cfg.horizon) {
        v = jumps.sample_next(v, rng);
        tr.times.push_back(t);
        tr.vertices.push_back(v);
        t += rng.exp1();
    }
    return tr;
}

Trajectory simulate_walk(const ConductanceField& field, Vertex x, const WalkConfig& cfg) {
    const JumpTable jumps(field);
    return simulate_walk(jumps, x, cfg);
}

Vertex walk_endpoint(const JumpTable& jumps, Vertex x, double t, Rng& rng) {
    if (jumps.isolated(x)) return x;
    double clock = rng.exp1();
    Vertex v = x;
    while (clock <= t) {
        v = jumps.sample_next(v, rng);
        clock += rng.exp1();
    }
    return v;
}

std::optional<double> exit_time(const ConductanceField& field, const Trajectory& traj, int r) {
    const Ball b = ball(field, traj.start, r);
    std::vector<char> inside(field.num_vertices(), 0);
    for (Vertex v : b.vertices) inside[static_cast<std::size_t>(v)] = 1;
    for (std::size_t i = 0; i < traj.jumps(); ++i)
        if (!inside[static_cast<std::size_t>(traj.vertices[i])]) return traj.times[i];
    return std::nullopt;
}

ExitTailPoint empirical_exit_tail(const ConductanceField& field, Vertex x, int r, double t,
                                  std::uint64_t n, std::uint64_t seed) {
    ExitTailPoint pt;
    pt.r = r;
    pt.t = t;
    pt.n = n;
    const JumpTable jumps(field);
    const Ball b = ball(field, x, r);
    std::vector<char> inside(field.num_vertices(), 0);
    for (Vertex v : b.vertices) inside[static_cast<std::size_t>(v)] = 1;
    if (!jumps.isolated(x)) {
        for (std::uint64_t i = 0; i < n; ++i) {
            Rng rng(derive_seed(seed, i));
            double clock = rng.exp1();
            Vertex v = x;
            while (clock < t) {
                v = jumps.sample_next(v, rng);
                if (!inside[static_cast<std::size_t>(v)]) {
                    ++pt.exits;
                    break;
                }
                clock += rng.exp1();
            }
        }
    }
    pt.frequency = n == 0 ? 0.0 : static_cast<double>(pt.exits) / static_cast<double>(n);
    pt.ci = stats::wilson(pt.exits, n);
    return pt;
}

ExitTailFit fit_exit_tail(std::span<const ExitTailPoint> points) {
    std::vector<double> xs, ys;
    for (const auto& p : points) {
        if (p.exits == 0) continue;
        xs.push_back(static_cast<double>(p.r) * p.r / p.t);
        ys.push_back(std::log(p.frequency));
    }
    ExitTailFit out;
    out.used = xs.size();
    if (xs.size() < 2) return out;
    out.fit = stats::linear_fit(xs, ys);
    out.c3 = std::exp(out.fit.intercept);
    out.c4 = -out.fit.slope;
    return out;
}

namespace {

// One attempt; returns false as soon as the displacement leaves the cube.
template <class OnJump>
bool confined_attempt(const JumpTable& jumps, Vertex x, double horizon, int half, Rng& rng,
                      OnJump&& on_jump, Vertex& end) {
    std::array<int, kMaxDim> disp{};
    Vertex v = x;
    double clock = rng.exp1();
    while (clock <= horizon) {
        const int slot = jumps.sample_slot(v, rng);
        const int axis = slot / 2;
        int& c = disp[static_cast<std::size_t>(axis)];
        c += (slot % 2 == 0) ? 1 : -1;
        if (c > half || c < -half) return false;
        v = jumps.field().neighbors(v)[static_cast<std::size_t>(slot)];
        on_jump(clock, v);
        clock += rng.exp1();
    }
    end = v;
    return true;
}

}  // namespace

Vertex confined_endpoint(const JumpTable& jumps, Vertex x, double t, int rho, double floor, Rng& rng,
                         std::uint64_t& attempts) {
    if (jumps.isolated(x)) {
        ++attempts;
        return x;
    }
    const int half = confinement_radius(rho);
    const auto limit = static_cast<std::uint64_t>(std::ceil(1.0 / floor));
    for (std::uint64_t k = 0;; ++k) {
        if (k >= limit)
            throw RejectionFloorError("confined walk acceptance below floor " + std::to_string(floor) +
                                      " from vertex " + std::to_string(x));
        ++attempts;
        Vertex end = x;
        if (confined_attempt(jumps, x, t, half, rng, [](double, Vertex) {}, end)) return end;
    }
}

ConfinedWalk simulate_confined_walk(const JumpTable& jumps, Vertex x, const WalkConfig& cfg) {
    if (!cfg.rho || *cfg.rho <= 0) throw std::invalid_argument("confined walk needs rho > 0");
    ConfinedWalk out;
    Rng rng(cfg.seed);
    Trajectory tr;
    tr.start = x;
    tr.horizon = cfg.horizon;
    if (jumps.isolated(x)) {
        tr.isolated_start = true;
        out.attempts = out.accepted = 1;
        out.trajectory = tr;
        return out;
    }
    const int half = confinement_radius(*cfg.rho);
    const auto limit = static_cast<std::uint64_t>(std::ceil(1.0 / cfg.acceptance_floor));
    for (std::uint64_t k = 0; k < limit; ++k) {
        ++out.attempts;
        tr.times.clear();
        tr.vertices.clear();
        Vertex end = x;
        const bool ok = confined_attempt(
            jumps, x, cfg.horizon, half, rng,
            [&](double time, Vertex v) {
                tr.times.push_back(time);
                tr.vertices.push_back(v);
            },
            end);
        if (ok) {
            ++out.accepted;
            out.trajectory = std::move(tr);
            return out;
        }
    }
    throw RejectionFloorError("confined walk acceptance below floor after " +
                              std::to_string(out.attempts) + " attempts");
}

ConfinedWalk simulate_confined_walk(const ConductanceField& field, Vertex x, const WalkConfig& cfg) {
    const JumpTable jumps(field);
    return simulate_confined_walk(jumps, x, cfg);
}

stats::Interval estimate_stay_probability(const ConductanceField& field, Vertex x, double t, int rho,
                                          std::uint64_t n, std::uint64_t seed, double* point) {
    const JumpTable jumps(field);
    const int half = confinement_radius(rho);
    std::uint64_t stays = 0;
    for (std::uint64_t i = 0; i < n; ++i) {
        Rng rng(derive_seed(seed, i));
        Vertex end = x;
        if (jumps.isolated(x) || confined_attempt(jumps, x, t, half, rng, [](double, Vertex) {}, end))
            ++stays;
    }
    if (point) *point = n == 0 ? 0.0 : static_cast<double>(stays) / static_cast<double>(n);
    return stats::wilson(stays, n);
}

void write_trajectory_jsonl(const Trajectory& traj, const std::string& path) {
    std::unique_ptr<std::FILE, int (*)(std::FILE*)> f(std::fopen(path.c_str(), "w"), &std::fclose);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::fprintf(f.get(), "{\"time\":0,\"vertex\":%d}\n", traj.start);
    for (std::size_t i = 0; i < traj.jumps(); ++i)
        std::fprintf(f.get(), "{\"time\":%.17g,\"vertex\":%d}\n", traj.times[i], traj.vertices[i]);
}

}  // namespace clab
