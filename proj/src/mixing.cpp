#include "clab/mixing.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "clab/parallel.hpp"
#include "clab/spectral.hpp"

namespace clab {

std::vector<std::uint32_t> ParticleCloud::counts(std::size_t num_vertices) const {
    std::vector<std::uint32_t> c(num_vertices, 0);
    for (const auto& p : particles) ++c[static_cast<std::size_t>(p.vertex)];
    return c;
}

ParticleCloud sample_cloud(const ConductanceField& field, double lambda0, std::span<const Vertex> region,
                           std::uint64_t seed) {
    if (!(lambda0 > 0.0)) throw std::invalid_argument("sample_cloud: lambda0 must be positive");
    ParticleCloud cloud;
    cloud.intensity = "lambda0=" + std::to_string(lambda0);
    Rng rng(seed);
    std::uint32_t next = 0;
    for (Vertex v : region) {
        const std::int64_t k = rng.poisson(lambda0 * field.vertex_weight(v));
        for (std::int64_t i = 0; i < k; ++i) cloud.particles.push_back({next++, v});
    }
    return cloud;
}

ParticleCloud sample_cloud(const ConductanceField& field, double lambda0, std::uint64_t seed) {
    std::vector<Vertex> all(field.num_vertices());
    for (std::size_t v = 0; v < all.size(); ++v) all[v] = static_cast<Vertex>(v);
    return sample_cloud(field, lambda0, all, seed);
}

EvolvedCloud evolve_cloud(const ConductanceField& field, const ParticleCloud& cloud, double delta,
                          std::optional<int> rho, std::uint64_t seed, bool keep_paths, double acceptance_floor) {
    if (delta < 0.0) throw std::invalid_argument("evolve_cloud: negative duration");
    EvolvedCloud out;
    out.cloud = cloud;
    out.cloud.time = cloud.time + delta;
    const std::size_t n = cloud.size();
    if (keep_paths) out.paths.resize(n);
    std::vector<std::uint64_t> attempts(n, 0);
    const JumpTable jumps(field);
    parallel_for(n, [&](std::size_t i) {
        const Particle& p = cloud.particles[i];
        const std::uint64_t s = derive_seed(seed, p.id);
        try {
            if (keep_paths) {
                WalkConfig cfg{delta, s, rho, acceptance_floor};
                Trajectory tr;
                if (rho) {
                    auto cw = simulate_confined_walk(jumps, p.vertex, cfg);
                    attempts[i] = cw.attempts;
                    tr = std::move(*cw.trajectory);
                } else {
                    tr = simulate_walk(jumps, p.vertex, cfg);
                }
                out.cloud.particles[i].vertex = tr.end();
                out.paths[i] = std::move(tr);
            } else {
                Rng rng(s);
                out.cloud.particles[i].vertex =
                    rho ? confined_endpoint(jumps, p.vertex, delta, *rho, acceptance_floor, rng, attempts[i])
                        : walk_endpoint(jumps, p.vertex, delta, rng);
            }
        } catch (const RejectionFloorError& e) {
            throw RejectionFloorError(std::string(e.what()) + " (particle " + std::to_string(p.id) + ")");
        }
    });
    for (auto a : attempts) out.attempts += a;
    return out;
}

stats::GofResult stationarity_test(const ConductanceField& field, const ParticleCloud& cloud, double lambda0) {
    const std::size_t n = field.num_vertices();
    const auto counts = cloud.counts(n);
    double max_mean = 0.0;
    std::uint32_t max_count = 0;
    for (std::size_t v = 0; v < n; ++v) {
        max_mean = std::max(max_mean, lambda0 * field.vertex_weight(static_cast<Vertex>(v)));
        max_count = std::max(max_count, counts[v]);
    }
    const auto kmax = static_cast<std::size_t>(
        std::max<double>(max_count + 1.0, std::ceil(max_mean + 10.0 * std::sqrt(max_mean + 1.0))));
    std::vector<std::uint64_t> observed(kmax + 1, 0);
    std::vector<double> probs(kmax + 1, 0.0);
    for (std::size_t v = 0; v < n; ++v) ++observed[std::min<std::size_t>(counts[v], kmax)];
    for (std::size_t v = 0; v < n; ++v) {
        const double m = lambda0 * field.vertex_weight(static_cast<Vertex>(v));
        double below = 0.0;
        for (std::size_t k = 0; k < kmax; ++k) {
            const double pk = m > 0.0 ? std::exp(k * std::log(m) - m - std::lgamma(k + 1.0)) : (k == 0 ? 1.0 : 0.0);
            probs[k] += pk;
            below += pk;
        }
        probs[kmax] += std::max(0.0, 1.0 - below);
    }
    for (double& p : probs) p /= static_cast<double>(n);
    return stats::chi_square_gof(observed, probs);
}

std::vector<Vertex> cube_vertices(const LatticeBox& box, const Cube& cube) {
    const int d = box.dim();
    std::vector<Vertex> out;
    std::size_t total = 1;
    for (int a = 0; a < d; ++a) total *= static_cast<std::size_t>(cube.side);
    out.reserve(total);
    for (std::size_t i = 0; i < total; ++i) {
        Coords c = cube.lower;
        std::size_t rest = i;
        for (int a = 0; a < d; ++a) {
            c[static_cast<std::size_t>(a)] += static_cast<int>(rest % static_cast<std::size_t>(cube.side));
            rest /= static_cast<std::size_t>(cube.side);
        }
        const Vertex v = box.vertex(c);
        if (v == kNoVertex) throw std::invalid_argument("cube leaves the box");
        out.push_back(v);
    }
    return out;
}

Cube centered_cube(const LatticeBox& box, int side) {
    Cube c;
    c.side = side;
    const Coords center = box.coords(box.center());
    for (int a = 0; a < box.dim(); ++a)
        c.lower[static_cast<std::size_t>(a)] = center[static_cast<std::size_t>(a)] - side / 2;
    return c;
}

Tessellation Tessellation::make(const LatticeBox& box, int K, int ell, int Kprime) {
    if (ell < 1) throw std::invalid_argument("tessellation: ell must be positive");
    Tessellation t;
    t.ell = ell;
    t.K = (K / ell) * ell;
    t.Kprime = Kprime;
    if (t.K < ell) throw std::invalid_argument("tessellation: K smaller than ell");
    if (Kprime < 1 || Kprime >= t.K) throw std::invalid_argument("tessellation: need 0 < K' < K");
    if (t.K > box.side()) throw std::invalid_argument("tessellation: K exceeds the box side");
    t.outer = centered_cube(box, t.K);
    t.inner = centered_cube(box, Kprime);
    const int per = t.K / ell;
    const int d = box.dim();
    std::size_t count = 1;
    for (int a = 0; a < d; ++a) count *= static_cast<std::size_t>(per);
    for (std::size_t i = 0; i < count; ++i) {
        Cube c;
        c.side = ell;
        c.lower = t.outer.lower;
        std::size_t rest = i;
        for (int a = 0; a < d; ++a) {
            c.lower[static_cast<std::size_t>(a)] += ell * static_cast<int>(rest % static_cast<std::size_t>(per));
            rest /= static_cast<std::size_t>(per);
        }
        t.subcubes.push_back(c);
    }
    return t;
}

DensityCertificate density_check(const ConductanceField& field, const ParticleCloud& cloud,
                                 const Tessellation& tess, double beta) {
    DensityCertificate cert;
    cert.beta = beta;
    const auto counts = cloud.counts(field.num_vertices());
    for (const Cube& c : tess.subcubes) {
        double req = 0.0;
        std::uint64_t have = 0;
        for (Vertex v : cube_vertices(field.box(), c)) {
            req += beta * field.vertex_weight(v);
            have += counts[static_cast<std::size_t>(v)];
        }
        cert.required.push_back(req);
        cert.actual.push_back(have);
        if (static_cast<double>(have) < req) cert.pass = false;
    }
    return cert;
}

double density_pass_bound(const ConductanceField& field, const Tessellation& tess, double beta) {
    double m = std::numeric_limits<double>::infinity();
    for (const Cube& c : tess.subcubes) {
        double req = 0.0;
        for (Vertex v : cube_vertices(field.box(), c)) req += beta * field.vertex_weight(v);
        m = std::min(m, req);
    }
    return 1.0 - static_cast<double>(tess.subcubes.size()) * std::exp(-m / 8.0);
}

namespace {

// Sub-stochastic chain on the displacement cube around x.
struct DisplacementChain {
    int half = 0;
    int width = 0;
    std::vector<Vertex> vertex;       // state -> lattice vertex
    std::vector<std::size_t> offset;  // CSR over transitions
    std::vector<std::uint32_t> target;
    std::vector<double> prob;
};

DisplacementChain build_chain(const ConductanceField& field, Vertex x, int rho) {
    const LatticeBox& box = field.box();
    const int d = box.dim();
    DisplacementChain ch;
    ch.half = rho / 2;
    ch.width = 2 * ch.half + 1;
    std::size_t states = 1;
    for (int a = 0; a < d; ++a) states *= static_cast<std::size_t>(ch.width);
    ch.vertex.resize(states);
    ch.offset.assign(states + 1, 0);
    const Coords cx = box.coords(x);
    std::vector<Coords> disp(states);
    for (std::size_t s = 0; s < states; ++s) {
        std::size_t rest = s;
        Coords c = cx;
        for (int a = 0; a < d; ++a) {
            const int k = static_cast<int>(rest % static_cast<std::size_t>(ch.width)) - ch.half;
            rest /= static_cast<std::size_t>(ch.width);
            disp[s][static_cast<std::size_t>(a)] = k;
            c[static_cast<std::size_t>(a)] += k;
        }
        ch.vertex[s] = box.vertex(c);
    }
    std::vector<std::size_t> stride(static_cast<std::size_t>(d), 1);
    for (int a = 1; a < d; ++a) stride[static_cast<std::size_t>(a)] = stride[static_cast<std::size_t>(a) - 1] * static_cast<std::size_t>(ch.width);
    for (std::size_t s = 0; s < states; ++s) {
        const Vertex v = ch.vertex[s];
        if (v != kNoVertex && field.vertex_weight(v) > 0.0) {
            const auto ws = field.neighbor_weights(v);
            const double mu = field.vertex_weight(v);
            for (int slot = 0; slot < 2 * d; ++slot) {
                const double w = ws[static_cast<std::size_t>(slot)];
                if (w <= 0.0) continue;
                const int a = slot / 2;
                const int step = slot % 2 == 0 ? 1 : -1;
                const int k = disp[s][static_cast<std::size_t>(a)] + step;
                if (k > ch.half || k < -ch.half) continue;  // absorbed
                const std::size_t t = step > 0 ? s + stride[static_cast<std::size_t>(a)] : s - stride[static_cast<std::size_t>(a)];
                ch.target.push_back(static_cast<std::uint32_t>(t));
                ch.prob.push_back(w / mu);
            }
        }
        ch.offset[s + 1] = ch.target.size();
    }
    return ch;
}

std::vector<double> evolve_chain(const DisplacementChain& ch, std::vector<double> p, double t, double tol) {
    if (t <= 0.0) return p;
    const auto chunks = static_cast<std::size_t>(std::ceil(t / 32.0));
    const double s = t / static_cast<double>(chunks);
    const double tol_chunk = tol / static_cast<double>(chunks);
    const std::size_t n = p.size();
    std::vector<double> cur(n), next(n), acc(n);
    for (std::size_t c = 0; c < chunks; ++c) {
        cur = p;
        double w = std::exp(-s);
        for (std::size_t i = 0; i < n; ++i) acc[i] = w * cur[i];
        for (std::size_t k = 1;; ++k) {
            const double kk = static_cast<double>(k);
            if (kk > s + 1.0 && w * (s / kk) / (1.0 - s / (kk + 1.0)) < tol_chunk) break;
            std::fill(next.begin(), next.end(), 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                const double m = cur[i];
                if (m == 0.0) continue;
                for (std::size_t e = ch.offset[i]; e < ch.offset[i + 1]; ++e) next[ch.target[e]] += m * ch.prob[e];
            }
            std::swap(cur, next);
            w *= s / kk;
            for (std::size_t i = 0; i < n; ++i) acc[i] += w * cur[i];
        }
        std::swap(p, acc);
    }
    return p;
}

SparseKernel to_sparse(Vertex x, const std::vector<double>& dense, double mass) {
    SparseKernel k;
    k.start = x;
    k.mass = mass;
    for (std::size_t y = 0; y < dense.size(); ++y) {
        if (dense[y] <= 0.0) continue;
        k.support.push_back(static_cast<Vertex>(y));
        k.prob.push_back(dense[y]);
    }
    return k;
}

std::vector<double> dense_of(const SparseKernel& k, std::size_t n) {
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < k.support.size(); ++i) out[static_cast<std::size_t>(k.support[i])] = k.prob[i];
    return out;
}

// Vertex x + (y - z) on a torus.
Vertex translate(const LatticeBox& box, Vertex x, Vertex z, Vertex y) {
    const Coords d = box.delta(z, y);
    Coords c = box.coords(x);
    for (int a = 0; a < box.dim(); ++a) c[static_cast<std::size_t>(a)] += d[static_cast<std::size_t>(a)];
    return box.vertex(c);
}

}  // namespace

SparseKernel confined_kernel(const ConductanceField& field, double delta, int rho, Vertex x, double tol) {
    if (rho < 0) throw std::invalid_argument("confined kernel: rho must be nonnegative");
    if (delta < 0.0) throw std::invalid_argument("confined kernel: negative duration");
    const DisplacementChain ch = build_chain(field, x, rho);
    std::vector<double> p(ch.vertex.size(), 0.0);
    std::size_t origin = 0;
    for (int a = field.box().dim() - 1; a >= 0; --a) origin = origin * static_cast<std::size_t>(ch.width) + static_cast<std::size_t>(ch.half);
    p[origin] = 1.0;
    // Isolated start: the walk never moves and always stays.
    const auto a = evolve_chain(ch, std::move(p), field.vertex_weight(x) > 0.0 ? delta : 0.0, tol);
    std::vector<double> dense(field.num_vertices(), 0.0);
    double mass = 0.0;
    for (std::size_t s = 0; s < a.size(); ++s) {
        if (a[s] <= 0.0 || ch.vertex[s] == kNoVertex) continue;
        dense[static_cast<std::size_t>(ch.vertex[s])] += a[s];
        mass += a[s];
    }
    if (mass < 1e-6) throw std::invalid_argument("confined kernel: stay probability below 1e-6");
    for (double& v : dense) v /= mass;
    return to_sparse(x, dense, mass);
}

SparseKernel free_kernel(const ConductanceField& field, double delta, Vertex x, double tol) {
    std::vector<double> p(field.num_vertices(), 0.0);
    p[static_cast<std::size_t>(x)] = 1.0;
    return to_sparse(x, evolve(field, std::move(p), delta, tol).p, 1.0);
}

std::string to_string(MarginPolicy p) {
    switch (p) {
        case MarginPolicy::ell_eps: return "ell-eps";
        case MarginPolicy::sqrt_delta_eps: return "sqrt-delta-eps";
        case MarginPolicy::sqrt_delta_log_delta: return "sqrt-delta-log-delta";
    }
    return "?";
}

MarginPolicy margin_policy_from_string(const std::string& s) {
    if (s == "ell-eps") return MarginPolicy::ell_eps;
    if (s == "sqrt-delta-eps") return MarginPolicy::sqrt_delta_eps;
    if (s == "sqrt-delta-log-delta") return MarginPolicy::sqrt_delta_log_delta;
    throw std::invalid_argument("unknown margin policy '" + s + "'");
}

double required_margin(const MarginParams& m, double delta, double eps, int ell, int d) {
    switch (m.policy) {
        case MarginPolicy::ell_eps: return m.c3 * ell * std::pow(eps, -m.c4);
        case MarginPolicy::sqrt_delta_eps: return m.c1 * std::sqrt(delta) * std::pow(eps, -1.0 / d);
        case MarginPolicy::sqrt_delta_log_delta: return m.c1 * std::sqrt(delta * std::log(std::max(delta, 1.0)));
    }
    return 0.0;
}

int confinement_rho(double delta, double c1) {
    return 2 * static_cast<int>(std::ceil(c1 * std::sqrt(delta * std::log(std::max(delta, 2.0)))));
}

KernelOscillationReport kernel_oscillation_check(const ConductanceField& field, std::span<const double> deltas,
                                                 int rho, int ell, double theta) {
    const LatticeBox& box = field.box();
    const int d = box.dim();
    const std::size_t n = field.num_vertices();
    const auto starts = cube_vertices(box, centered_cube(box, ell));
    const Vertex c = box.center();
    const bool shift = field.translation_invariant();
    KernelOscillationReport rep;
    std::vector<double> lx, ly;
    for (double delta : deltas) {
        OscillationPoint pt;
        pt.delta = delta;
        pt.rho = rho > 0 ? rho : confinement_rho(delta, 1.0);
        std::vector<std::vector<double>> g(starts.size());
        if (shift) {
            const auto ref = dense_of(confined_kernel(field, delta, pt.rho, c), n);
            for (std::size_t i = 0; i < starts.size(); ++i) {
                g[i].assign(n, 0.0);
                for (std::size_t y = 0; y < n; ++y)
                    g[i][y] = ref[static_cast<std::size_t>(translate(box, c, starts[i], static_cast<Vertex>(y)))];
            }
        } else {
            parallel_for(starts.size(), [&](std::size_t i) {
                g[i] = dense_of(confined_kernel(field, delta, pt.rho, starts[i]), n);
            });
        }
        for (std::size_t i = 0; i < starts.size(); ++i)
            for (std::size_t j = i + 1; j < starts.size(); ++j)
                for (std::size_t y = 0; y < n; ++y) {
                    const double mu = field.vertex_weight(static_cast<Vertex>(y));
                    if (mu <= 0.0) continue;
                    pt.max_osc = std::max(pt.max_osc, std::fabs(g[i][y] - g[j][y]) / mu);
                }
        pt.fitted_c = pt.max_osc / (std::pow(ell, theta) * std::pow(delta, -(d + theta) / 2.0));
        rep.points.push_back(pt);
        if (pt.max_osc > 0.0) {
            lx.push_back(std::log(delta));
            ly.push_back(std::log(pt.max_osc));
        }
    }
    if (lx.size() >= 2) rep.loglog = stats::linear_fit(lx, ly);
    return rep;
}

CouplingReport soft_local_time_coupling(const CouplingInput& input, std::uint64_t seed) {
    const std::size_t S = input.zeta.size();
    const std::size_t out_state = S;
    const std::size_t J = input.kernels.size();
    CouplingReport rep;
    rep.xi.resize(J);
    rep.endpoint.resize(J);
    rep.H.assign(S + 1, 0.0);
    std::vector<double> out_mass(J);
    for (std::size_t j = 0; j < J; ++j) {
        double s = 0.0;
        for (const auto& [state, g] : *input.kernels[j]) {
            if (state >= S || g < 0.0) throw std::invalid_argument("coupling: kernel entry out of range");
            s += g;
        }
        out_mass[j] = std::max(0.0, 1.0 - s);
        if (s <= 0.0 && out_mass[j] <= 0.0) throw std::invalid_argument("coupling: kernel with no mass");
    }

    // Lazily generated eta levels per state, each from its own stream.
    std::vector<std::vector<double>> levels(S + 1);
    std::vector<Rng> streams;
    streams.reserve(S + 1);
    for (std::size_t y = 0; y <= S; ++y) streams.emplace_back(derive_seed(seed, y));
    std::vector<std::uint32_t> claimed(S + 1, 0);
    std::vector<std::vector<std::uint32_t>> claimers(S + 1);
    auto level = [&](std::size_t y, std::size_t k) {
        auto& lv = levels[y];
        while (lv.size() <= k) lv.push_back((lv.empty() ? 0.0 : lv.back()) + streams[y].exp1());
        return lv[k];
    };

    std::vector<double>& H = rep.H;
    for (std::size_t j = 0; j < J; ++j) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t arg = out_state;
        for (const auto& [state, g] : *input.kernels[j]) {
            if (g <= 0.0) continue;
            const double r = (level(state, claimed[state]) - H[state]) / g;
            if (r < best) {
                best = r;
                arg = state;
            }
        }
        if (out_mass[j] > 0.0) {
            const double r = (level(out_state, claimed[out_state]) - H[out_state]) / out_mass[j];
            if (r < best) {
                best = r;
                arg = out_state;
            }
        }
        best = std::max(best, 0.0);
        rep.xi[j] = best;
        for (const auto& [state, g] : *input.kernels[j]) H[state] += best * g;
        H[out_state] += best * out_mass[j];
        // Pin the claimed site to its point's level to avoid rounding drift.
        H[arg] = levels[arg][claimed[arg]];
        ++claimed[arg];
        claimers[arg].push_back(static_cast<std::uint32_t>(j));
        rep.endpoint[j] = arg == out_state ? -1 : static_cast<std::int64_t>(arg);
    }

    rep.psi_count.assign(S, 0);
    rep.success = true;
    rep.psi_covered = true;
    for (std::size_t y = 0; y < S; ++y) {
        std::uint32_t m = 0;
        while (level(y, m) < input.zeta[y]) ++m;
        rep.psi_count[y] = m;
        if (H[y] < input.zeta[y]) {
            rep.success = false;
            rep.failures.push_back(static_cast<std::uint32_t>(y));
        }
        if (m > claimed[y]) rep.psi_covered = false;
    }
    H.resize(S);
    if (rep.success) {
        rep.matching.resize(S);
        for (std::size_t y = 0; y < S; ++y)
            rep.matching[y].assign(claimers[y].begin(), claimers[y].begin() + std::min<std::size_t>(rep.psi_count[y], claimers[y].size()));
    }
    return rep;
}

std::string to_string(Placement p) {
    switch (p) {
        case Placement::poisson: return "poisson";
        case Placement::minimal_uniform: return "minimal-uniform";
        case Placement::minimal_corner: return "minimal-corner";
    }
    return "?";
}

Placement placement_from_string(const std::string& s) {
    if (s == "poisson") return Placement::poisson;
    if (s == "minimal-uniform") return Placement::minimal_uniform;
    if (s == "minimal-corner") return Placement::minimal_corner;
    throw std::invalid_argument("unknown placement '" + s + "'");
}

std::vector<std::string> validate_mixing(const LatticeBox& box, const MixingParams& p) {
    std::vector<std::string> v;
    if (p.ell < 1) v.push_back("ell must be at least 1");
    if (p.K < p.ell) v.push_back("K must be at least ell");
    const int K = p.ell > 0 ? (p.K / p.ell) * p.ell : p.K;
    if (p.Kprime < 1 || p.Kprime >= K) v.push_back("need 0 < Kprime < K");
    if (K > box.side()) v.push_back("K exceeds the box side");
    if (!(p.eps > 0.0 && p.eps <= 1.0)) v.push_back("eps must lie in (0, 1]");
    if (p.beta < 0.0) v.push_back("beta must be nonnegative");
    if (!(p.lambda0 > 0.0)) v.push_back("lambda0 must be positive");
    if (p.deltas.empty()) v.push_back("Delta grid is empty");
    for (double delta : p.deltas) {
        if (!(delta > 0.0)) {
            v.push_back("Delta must be positive");
            continue;
        }
        const double need = required_margin(p.margin, delta, p.eps, p.ell, box.dim());
        if (static_cast<double>(K - p.Kprime) < need)
            v.push_back("K - Kprime = " + std::to_string(K - p.Kprime) + " below margin " + std::to_string(need) +
                        " (" + to_string(p.margin.policy) + ") at Delta=" + std::to_string(delta));
        if (p.confined && box.boundary() == Boundary::hard_wall) {
            const int rho = confinement_rho(delta, p.margin.c1);
            if (K + rho > box.side()) v.push_back("confinement cube leaves the hard-wall box at Delta=" + std::to_string(delta));
        }
    }
    if (p.reps == 0) v.push_back("reps must be positive");
    return v;
}

namespace {

// Kernels of every start in the outer cube restricted to the inner cube, plus
// a sampler for the endpoint conditioned to fall outside the inner cube.
class KernelProvider {
public:
    KernelProvider(const ConductanceField& field, const Tessellation& tess, double delta, std::optional<int> rho)
        : field_(field), jumps_(field), delta_(delta), rho_(rho) {
        const LatticeBox& box = field.box();
        const std::size_t n = field.num_vertices();
        outer_ = tess.outer_vertices(box);
        inner_ = tess.inner_vertices(box);
        outer_index_.assign(n, -1);
        inner_index_.assign(n, -1);
        for (std::size_t i = 0; i < outer_.size(); ++i) outer_index_[static_cast<std::size_t>(outer_[i])] = static_cast<std::int32_t>(i);
        for (std::size_t i = 0; i < inner_.size(); ++i) inner_index_[static_cast<std::size_t>(inner_[i])] = static_cast<std::int32_t>(i);
        entries_.resize(outer_.size());
        invariant_ = field.translation_invariant();
        if (invariant_) {
            center_ = box.center();
            const SparseKernel ref = rho ? confined_kernel(field, delta, *rho, center_) : free_kernel(field, delta, center_);
            ref_support_ = ref.support;
            ref_cdf_.resize(ref.prob.size());
            double acc = 0.0;
            for (std::size_t i = 0; i < ref.prob.size(); ++i) ref_cdf_[i] = (acc += ref.prob[i]);
            const auto dense = dense_of(ref, n);
            parallel_for(outer_.size(), [&](std::size_t i) {
                for (std::size_t a = 0; a < inner_.size(); ++a) {
                    const double g = dense[static_cast<std::size_t>(translate(box, center_, outer_[i], inner_[a]))];
                    if (g > 0.0) entries_[i].emplace_back(static_cast<std::uint32_t>(a), g);
                }
            });
        } else if (!rho) {
            // Reversibility: p(x, y) = mu_y p(y, x) / mu_x, one evolution per inner site.
            std::vector<std::vector<double>> col(inner_.size());
            parallel_for(inner_.size(), [&](std::size_t a) {
                std::vector<double> p(n, 0.0);
                p[static_cast<std::size_t>(inner_[a])] = 1.0;
                const auto full = evolve(field, std::move(p), delta).p;
                col[a].resize(outer_.size());
                for (std::size_t i = 0; i < outer_.size(); ++i) col[a][i] = full[static_cast<std::size_t>(outer_[i])];
            });
            for (std::size_t i = 0; i < outer_.size(); ++i) {
                const double mx = field.vertex_weight(outer_[i]);
                if (mx <= 0.0) {
                    if (inner_index_[static_cast<std::size_t>(outer_[i])] >= 0)
                        entries_[i].emplace_back(static_cast<std::uint32_t>(inner_index_[static_cast<std::size_t>(outer_[i])]), 1.0);
                    continue;
                }
                for (std::size_t a = 0; a < inner_.size(); ++a) {
                    const double g = field.vertex_weight(inner_[a]) * col[a][i] / mx;
                    if (g > 0.0) entries_[i].emplace_back(static_cast<std::uint32_t>(a), g);
                }
            }
        } else {
            parallel_for(outer_.size(), [&](std::size_t i) {
                const SparseKernel k = confined_kernel(field, delta, *rho, outer_[i]);
                for (std::size_t s = 0; s < k.support.size(); ++s) {
                    const std::int32_t a = inner_index_[static_cast<std::size_t>(k.support[s])];
                    if (a >= 0) entries_[i].emplace_back(static_cast<std::uint32_t>(a), k.prob[s]);
                }
                std::sort(entries_[i].begin(), entries_[i].end());
            });
        }
    }

    const KernelEntries* entries(Vertex x) const {
        return &entries_[static_cast<std::size_t>(outer_index_[static_cast<std::size_t>(x)])];
    }
    const std::vector<Vertex>& inner() const { return inner_; }
    const std::vector<Vertex>& outer() const { return outer_; }

    /// Endpoint of a walk from x conditioned to end outside the inner cube.
    Vertex sample_outside(Vertex x, Rng& rng) const {
        for (std::uint64_t tries = 0; tries < 100000000ULL; ++tries) {
            Vertex y;
            if (invariant_) {
                const double u = rng.uniform() * ref_cdf_.back();
                auto it = std::upper_bound(ref_cdf_.begin(), ref_cdf_.end(), u);
                if (it == ref_cdf_.end()) --it;
                const Vertex r = ref_support_[static_cast<std::size_t>(it - ref_cdf_.begin())];
                y = translate(field_.box(), x, center_, r);
            } else if (rho_) {
                std::uint64_t attempts = 0;
                y = confined_endpoint(jumps_, x, delta_, *rho_, 1e-6, rng, attempts);
            } else {
                y = walk_endpoint(jumps_, x, delta_, rng);
            }
            if (inner_index_[static_cast<std::size_t>(y)] < 0) return y;
        }
        throw std::runtime_error("outside-endpoint sampler did not terminate");
    }

private:
    const ConductanceField& field_;
    JumpTable jumps_;
    double delta_;
    std::optional<int> rho_;
    bool invariant_ = false;
    Vertex center_ = kNoVertex;
    std::vector<Vertex> outer_, inner_;
    std::vector<std::int32_t> outer_index_, inner_index_;
    std::vector<KernelEntries> entries_;
    std::vector<Vertex> ref_support_;
    std::vector<double> ref_cdf_;
};

std::vector<Vertex> place_particles(const ConductanceField& field, const Tessellation& tess, const MixingParams& p,
                                    std::uint64_t rep_seed, std::uint64_t& resamples) {
    const LatticeBox& box = field.box();
    std::vector<Vertex> starts;
    if (p.placement == Placement::poisson) {
        const auto outer = tess.outer_vertices(box);
        for (int attempt = 0; attempt <= p.max_density_resamples; ++attempt) {
            const ParticleCloud cloud = sample_cloud(field, p.lambda0, outer, derive_seed(rep_seed, static_cast<std::uint64_t>(attempt)));
            if (density_check(field, cloud, tess, p.beta).pass) {
                for (const auto& q : cloud.particles) starts.push_back(q.vertex);
                return starts;
            }
            ++resamples;
        }
        throw std::runtime_error("density certificate failed on every resample; raise lambda0");
    }
    Rng rng(rep_seed);
    const int d = box.dim();
    for (const Cube& c : tess.subcubes) {
        const auto verts = cube_vertices(box, c);
        double req = 0.0;
        for (Vertex v : verts) req += p.beta * field.vertex_weight(v);
        const auto need = static_cast<std::uint64_t>(std::ceil(req - 1e-9));
        if (p.placement == Placement::minimal_uniform) {
            for (std::uint64_t k = 0; k < need; ++k) starts.push_back(verts[rng.below(verts.size())]);
        } else {
            std::vector<Vertex> corner;
            for (int m = 0; m < (1 << d); ++m) {
                Coords x = c.lower;
                for (int a = 0; a < d; ++a) x[static_cast<std::size_t>(a)] += (m >> a) & 1;
                corner.push_back(box.vertex(x));
            }
            for (std::uint64_t k = 0; k < need; ++k) starts.push_back(corner[k % corner.size()]);
        }
    }
    return starts;
}

}  // namespace

MixingReport mixing_experiment(const ConductanceField& field, const MixingParams& p) {
    const auto problems = validate_mixing(field.box(), p);
    if (!problems.empty()) throw std::invalid_argument("mixing: " + problems.front());
    const Tessellation tess = Tessellation::make(field.box(), p.K, p.ell, p.Kprime);
    MixingReport report;
    for (std::size_t di = 0; di < p.deltas.size(); ++di) {
        const double delta = p.deltas[di];
        MixingPoint pt;
        pt.delta = delta;
        std::optional<int> rho;
        if (p.confined) {
            rho = confinement_rho(delta, p.margin.c1);
            pt.rho = *rho;
        }
        const KernelProvider kernels(field, tess, delta, rho);
        const auto& inner = kernels.inner();
        std::vector<double> zeta(inner.size());
        for (std::size_t a = 0; a < inner.size(); ++a) zeta[a] = p.beta * (1.0 - p.eps) * field.vertex_weight(inner[a]);

        struct RepOutcome {
            bool success = false, covered = false, contained = true;
            std::uint64_t resamples = 0, seed = 0, particles = 0;
            std::vector<std::uint32_t> failures;
        };
        std::vector<RepOutcome> outcomes(p.reps);
        const std::uint64_t delta_seed = derive_seed(p.seed, "mixing-delta", di);
        parallel_for(p.reps, [&](std::size_t r) {
            RepOutcome& o = outcomes[r];
            const std::uint64_t rep_seed = derive_seed(delta_seed, r);
            o.seed = rep_seed;
            const auto starts = place_particles(field, tess, p, derive_seed(rep_seed, 0), o.resamples);
            o.particles = starts.size();
            CouplingInput in;
            in.zeta = zeta;
            in.kernels.reserve(starts.size());
            for (Vertex x : starts) in.kernels.push_back(kernels.entries(x));
            const CouplingReport c = soft_local_time_coupling(in, derive_seed(rep_seed, 1));
            o.success = c.success;
            o.covered = c.psi_covered;
            o.failures = c.failures;
            if (!c.success) return;
            // Endpoints: inner claims are exact, outside claims are refined.
            std::vector<std::uint32_t> ends(inner.size(), 0);
            Rng refine(derive_seed(rep_seed, 2));
            for (std::size_t j = 0; j < starts.size(); ++j) {
                if (c.endpoint[j] >= 0) ++ends[static_cast<std::size_t>(c.endpoint[j])];
                else (void)kernels.sample_outside(starts[j], refine);
            }
            for (std::size_t a = 0; a < inner.size(); ++a) {
                if (c.psi_count[a] > ends[a] || c.matching[a].size() != c.psi_count[a]) o.contained = false;
                for (std::uint32_t j : c.matching[a])
                    if (c.endpoint[j] != static_cast<std::int64_t>(a)) o.contained = false;
            }
        });
        pt.reps = p.reps;
        pt.failure_profile.assign(inner.size(), 0);
        for (const auto& o : outcomes) {
            pt.density_resamples += o.resamples;
            if (o.success) {
                ++pt.successes;
                ++pt.containment_checked;
                if (!o.contained) ++pt.containment_failures;
                if (!o.covered) ++pt.success_without_cover;
            }
            for (auto y : o.failures) ++pt.failure_profile[y];
            MixingRep rec{o.seed, o.success, o.contained, o.particles, {}};
            for (auto y : o.failures) rec.failures.push_back(inner[y]);
            pt.rep_records.push_back(std::move(rec));
        }
        pt.frequency = static_cast<double>(pt.successes) / static_cast<double>(pt.reps);
        pt.ci = stats::wilson(pt.successes, pt.reps);
        report.points.push_back(std::move(pt));
    }
    return report;
}

}  // namespace clab
