// Acceptance run: one PASS/FAIL line per criterion. Pass criterion numbers as
// arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "clab/epidemic.hpp"
#include "clab/lattice.hpp"
#include "clab/mixing.hpp"
#include "clab/spectral.hpp"
#include "clab/stats.hpp"
#include "clab/surface.hpp"
#include "clab/walk.hpp"

using namespace clab;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

ConductanceField constant_torus(int side) {
    return sample_conductances(LatticeBox(2, side, Boundary::torus), Law::constant(1.0), 1);
}

// Dense generator built from coordinates, independent of the library tables.
Eigen::MatrixXd dense_generator(const ConductanceField& f) {
    const auto n = static_cast<Eigen::Index>(f.num_vertices());
    Eigen::MatrixXd L = Eigen::MatrixXd::Zero(n, n);
    const LatticeBox& box = f.box();
    for (Vertex x = 0; x < n; ++x) {
        for (int a = 0; a < box.dim(); ++a)
            for (int s : {1, -1}) {
                Coords c = box.coords(x);
                c[static_cast<std::size_t>(a)] += s;
                const Vertex y = box.vertex(c);
                if (y != kNoVertex) L(x, y) += f.weight(x, y) / f.vertex_weight(x);
            }
        L(x, x) -= 1.0;
    }
    return L;
}

Verdict c1_heat_kernel() {
    const auto f = constant_torus(8);
    std::vector<Vertex> all(64);
    for (Vertex x = 0; x < 64; ++x) all[static_cast<std::size_t>(x)] = x;
    const Eigen::MatrixXd L = dense_generator(f);
    double sup = 0.0, rev = 0.0, cons = 0.0, ck = 0.0;
    const double s = 1.7, t = 3.1;
    const auto ts = heat_kernel_exact(f, s, all);
    const auto tt = heat_kernel_exact(f, t, all);
    const auto tst = heat_kernel_exact(f, s + t, all);
    for (double time : {0.5, 3.1, 20.0}) {
        const Eigen::MatrixXd P = (time * L).exp();
        const auto tab = time == t ? tt : heat_kernel_exact(f, time, all);
        for (Vertex x = 0; x < 64; ++x)
            for (Vertex y = 0; y < 64; ++y)
                sup = std::max(sup, std::abs(tab.p[static_cast<std::size_t>(x)][static_cast<std::size_t>(y)] - P(x, y)));
    }
    for (Vertex x = 0; x < 64; ++x) {
        double mass = 0.0;
        for (Vertex y = 0; y < 64; ++y) {
            mass += tt.p[static_cast<std::size_t>(x)][static_cast<std::size_t>(y)];
            rev = std::max(rev, std::abs(tt.value(x, y) - tt.value(y, x)));
            double sum = 0.0;
            for (Vertex z = 0; z < 64; ++z)
                sum += ts.p[static_cast<std::size_t>(x)][static_cast<std::size_t>(z)] *
                       tt.p[static_cast<std::size_t>(z)][static_cast<std::size_t>(y)];
            ck = std::max(ck, std::abs(sum - tst.p[static_cast<std::size_t>(x)][static_cast<std::size_t>(y)]));
        }
        cons = std::max(cons, std::abs(mass - 1.0));
    }
    return {sup < 1e-9 && rev < 1e-10 && cons < 1e-9 && ck < 1e-8,
            "sup " + fmt("%.2e", sup) + ", reversibility " + fmt("%.2e", rev) + ", conservation " +
                fmt("%.2e", cons) + ", Chapman-Kolmogorov " + fmt("%.2e", ck)};
}

Verdict c2_monte_carlo() {
    const auto f = sample_conductances(LatticeBox(2, 16, Boundary::torus), Law::uniform_elliptic(2.0), 2);
    const Vertex x = f.box().center();
    const double t = 10.0;
    const std::vector<Vertex> src{x};
    const auto exact = heat_kernel_exact(f, t, src);
    const JumpTable jt(f);
    const std::uint64_t n = 100000;
    std::vector<std::uint64_t> counts(f.num_vertices(), 0);
    for (std::uint64_t i = 0; i < n; ++i) {
        Rng rng(derive_seed(2024, i));
        ++counts[static_cast<std::size_t>(walk_endpoint(jt, x, t, rng))];
    }
    std::size_t ok = 0;
    for (std::size_t y = 0; y < counts.size(); ++y) {
        const double p = exact.p[0][y];
        const double sd = std::sqrt(static_cast<double>(n) * p * (1.0 - p));
        ok += std::abs(static_cast<double>(counts[y]) - static_cast<double>(n) * p) <= 4.0 * sd + 1e-12;
    }
    const double frac = static_cast<double>(ok) / static_cast<double>(counts.size());
    return {frac >= 0.99, fmt("%.4f", frac) + " of vertices within 4 sigma"};
}

Verdict c3_gaussian() {
    const auto f = constant_torus(64);
    const std::vector<double> ts{8, 16, 32, 64, 128};
    const auto fit = gaussian_bound_fit(f, f.box().center(), ts, 16, Metric::euclidean);
    const bool ok = fit.regression.r2 >= 0.95 && fit.regression.slope < 0.0 && fit.upper_violations == 0 &&
                    fit.lower_violations == 0 && fit.upper_points > 0 && fit.lower_points > 0;
    return {ok, "R^2 " + fmt("%.4f", fit.regression.r2) + ", slope " + fmt("%.4f", fit.regression.slope) +
                    ", violations " + std::to_string(fit.upper_violations + fit.lower_violations) + " of " +
                    std::to_string(fit.upper_points + fit.lower_points)};
}

Verdict c4_exit_tail() {
    const auto f = constant_torus(128);
    const Vertex x = f.box().center();
    std::vector<ExitTailPoint> pts;
    std::uint64_t k = 0;
    for (int r : {10, 15, 20, 25, 30})
        for (double t : {5.0, 10.0, 20.0, 30.0, 50.0}) pts.push_back(empirical_exit_tail(f, x, r, t, 10000, ++k));
    const auto fit = fit_exit_tail(pts);
    return {fit.fit.slope < 0.0 && fit.fit.r2 >= 0.9,
            "slope " + fmt("%.4f", fit.fit.slope) + ", R^2 " + fmt("%.4f", fit.fit.r2) + " over " +
                std::to_string(fit.used) + " nonzero points"};
}

Verdict c5_poincare() {
    const ConductanceField two(LatticeBox(1, 2, Boundary::hard_wall), Law::constant(1.0), 0, {1.0, 0.0});
    const double two_cp = poincare_constant(two, 0, 1, 1.0).c_p;
    const auto f = sample_conductances(LatticeBox(2, 16, Boundary::torus), Law::dilute(0.25, 3.0), 2);
    const Vertex x = f.box().center();
    const int r = 3;
    const auto res = poincare_constant(f, x, r, 2.0);
    const auto forms = poincare_forms(f, x, r, 2.0);
    std::vector<double> g(forms.outer.size());
    Rng rng(5);
    double worst = 0.0;
    for (int trial = 0; trial < 10000; ++trial) {
        for (auto& v : g) v = rng.uniform() - 0.5;
        if (trial % 2)
            for (std::size_t i = 0; i < g.size(); ++i)
                g[i] = std::cos(0.4 * static_cast<double>(f.box().coords(forms.outer[i])[1]) + g[i]);
        const double dir = forms.dirichlet(g);
        if (dir > 0.0) worst = std::max(worst, forms.variance(g) / (r * r * dir));
    }
    const bool ok = std::abs(two_cp - 0.5) < 1e-9 && !res.infinite && worst <= res.c_p * (1.0 + 1e-12);
    return {ok, "two-vertex C_P " + fmt("%.12f", two_cp) + ", eigensolver " + fmt("%.5f", res.c_p) +
                    ", best random " + fmt("%.5f", worst)};
}

Verdict c6_oscillation() {
    const auto f = constant_torus(64);
    const Vertex x = f.box().center();
    const int r0 = 16;
    HarnackOptions opts;
    opts.time_points = 32;
    const auto h = harnack_constant(f, x, r0 / 2, opts);
    const double bound = 1.0 - 1.0 / h.c_h + 0.05;
    double worst = 0.0;
    std::size_t n = 0;
    const LatticeBox& box = f.box();
    Coords c = box.coords(x);
    std::vector<CaloricFunction> us{{x, 0.0, 1.0}, {x, 4.0, 1.0}};
    for (auto [dx, dy] : {std::pair{r0 / 2, 0}, {r0, r0}, {0, 3 * r0 / 2}}) {
        Coords z = c;
        z[0] += dx;
        z[1] += dy;
        us.push_back({box.vertex(z), 1.0, 1.0});
    }
    for (const auto& u : us)
        for (const auto& s : oscillation_decay_check(f, x, r0, u, 32)) {
            worst = std::max(worst, s.ratio);
            ++n;
        }
    return {n > 0 && worst <= bound,
            "C_H " + fmt("%.4f", h.c_h) + ", worst ratio " + fmt("%.4f", worst) + " vs bound " + fmt("%.4f", bound) +
                " over " + std::to_string(n) + " scales"};
}

Verdict c7_soft_local_times() {
    const KernelEntries g1{{0, 0.1}, {1, 0.2}, {2, 0.3}};  // 0.4 outside
    const KernelEntries g2{{0, 0.25}, {1, 0.05}, {3, 0.5}};
    CouplingInput in;
    in.kernels = {&g1, &g2, &g1};
    in.zeta = {0.3, 0.2, 0.3, 0.3};
    const int reps = 10000;
    std::vector<std::vector<std::uint64_t>> counts(3, std::vector<std::uint64_t>(5, 0));
    std::vector<std::vector<double>> xi(3);
    for (int r = 0; r < reps; ++r) {
        const auto rep = soft_local_time_coupling(in, derive_seed(77, static_cast<std::uint64_t>(r)));
        for (std::size_t j = 0; j < 3; ++j) {
            ++counts[j][rep.endpoint[j] < 0 ? 4 : static_cast<std::size_t>(rep.endpoint[j])];
            xi[j].push_back(rep.xi[j]);
        }
    }
    const std::vector<std::vector<double>> probs{
        {0.1, 0.2, 0.3, 0.0, 0.4}, {0.25, 0.05, 0.0, 0.5, 0.2}, {0.1, 0.2, 0.3, 0.0, 0.4}};
    double chi_min = 1.0, ks_min = 1.0;
    bool zero_ok = true;
    for (std::size_t j = 0; j < 3; ++j) {
        std::vector<std::uint64_t> obs;
        std::vector<double> p;
        for (std::size_t s = 0; s < 5; ++s) {
            if (probs[j][s] == 0.0) {
                zero_ok = zero_ok && counts[j][s] == 0;
                continue;
            }
            obs.push_back(counts[j][s]);
            p.push_back(probs[j][s]);
        }
        chi_min = std::min(chi_min, stats::chi_square_gof(obs, p).p_value);
        ks_min = std::min(ks_min, stats::ks_test_exponential(xi[j]));
    }
    return {zero_ok && chi_min > 0.01 && ks_min > 0.01,
            "min chi-square p " + fmt("%.4f", chi_min) + ", min KS p " + fmt("%.4f", ks_min)};
}

Verdict c8_mixing() {
    const auto f = constant_torus(128);
    MixingParams p;
    p.K = 64;
    p.ell = 8;
    p.Kprime = 16;
    p.beta = 1.0;
    p.eps = 0.5;
    p.lambda0 = 2.0;
    p.deltas = {64.0, 256.0, 1024.0};
    p.reps = 200;
    p.seed = 8;
    const auto rep = mixing_experiment(f, p);
    bool ordered = true, contained = true;
    std::string d;
    for (std::size_t k = 0; k < rep.points.size(); ++k) {
        const auto& pt = rep.points[k];
        if (k > 0) ordered = ordered && pt.ci.lo > rep.points[k - 1].ci.hi;
        contained = contained && pt.containment_failures == 0 && pt.containment_checked == pt.successes;
        d += (k ? "; " : "") + std::string("Delta ") + fmt("%.0f", pt.delta) + ": " + fmt("%.3f", pt.frequency) +
             " [" + fmt("%.3f", pt.ci.lo) + ", " + fmt("%.3f", pt.ci.hi) + "]";
    }
    const bool high = rep.points.back().frequency >= 0.9;
    return {ordered && high && contained,
            d + (ordered ? "" : "; CIs not strictly ordered") + (contained ? ", containment exact" : ", containment FAILED")};
}

Verdict c9_confined_oscillation() {
    const auto f = constant_torus(128);
    const std::vector<double> deltas{64.0, 128.0, 256.0};
    const auto rep = kernel_oscillation_check(f, deltas, 0, 4, 1.0);
    return {rep.loglog.slope <= -1.0, "log-log slope " + fmt("%.4f", rep.loglog.slope) + " (need <= -1)"};
}

Verdict c10_stationarity() {
    const auto f = sample_conductances(LatticeBox(2, 32, Boundary::torus), Law::uniform_elliptic(2.0), 10);
    const auto cloud = sample_cloud(f, 2.0, 100);
    double pmin = 1.0;
    std::string d;
    for (double t : {10.0, 50.0}) {
        const auto ev = evolve_cloud(f, cloud, t, std::nullopt, 101);
        const auto gof = stationarity_test(f, ev.cloud, 2.0);
        pmin = std::min(pmin, gof.p_value);
        d += (d.empty() ? "" : ", ") + std::string("t=") + fmt("%.0f", t) + " p " + fmt("%.4f", gof.p_value);
    }
    return {pmin > 0.01, d};
}

Verdict c11_si_speed() {
    const auto f = constant_torus(200);
    std::vector<double> grid;
    for (int t = 0; t <= 400; ++t) grid.push_back(t);
    int good = 0;
    double r2_min = 1.0;
    for (std::uint64_t s = 0; s < 10; ++s) {
        const auto series = run_si(f, 2.0, 400.0, grid, derive_seed(11, s));
        const auto sp = front_speed(series);
        if (sp.defined && sp.slope > 0.0 && sp.fit.r2 >= 0.9) ++good;
        r2_min = std::min(r2_min, sp.fit.r2);
    }
    return {good >= 9, std::to_string(good) + " of 10 seeds with slope > 0 and R^2 >= 0.9 (min R^2 " +
                           fmt("%.4f", r2_min) + ")"};
}

Verdict c12_sis() {
    const auto f = constant_torus(32);
    const std::vector<double> gammas{0.001, 0.01, 0.1, 1.0};
    const auto pts = sis_survival(f, 0.25, gammas, 100.0, 200, 12);
    bool mono = true;
    std::string d;
    for (std::size_t k = 0; k < pts.size(); ++k) {
        if (k) mono = mono && pts[k].frequency <= pts[k - 1].frequency && pts[k].ci.lo <= pts[k - 1].ci.lo &&
                      pts[k].ci.hi <= pts[k - 1].ci.hi;
        d += (k ? ", " : "") + std::string("gamma ") + fmt("%g", pts[k].gamma) + ": " + fmt("%.3f", pts[k].frequency);
    }
    const std::vector<double> ts;
    const auto si = run_si(f, 0.25, 50.0, ts, 99);
    const auto sis = run_sis(f, 0.25, 0.0, 50.0, ts, 99);
    const bool same = si.times == sis.times && si.front == sis.front && si.infected == sis.infected;
    return {mono && same, d + (same ? "; gamma=0 replays SI" : "; gamma=0 differs from SI")};
}

Verdict c13_collisions() {
    const auto f = constant_torus(384);
    CellEventSpec base;
    base.eta = 1;
    base.lambda0 = 0.5;
    const std::vector<int> ells{27, 64, 125};
    const auto sc = collision_scaling(f, base, ells, 200, 13, CensusMode::checkpoint);
    std::string d = "exponent " + fmt("%.4f", sc.loglog.slope) + "; means";
    for (std::size_t k = 0; k < ells.size(); ++k) d += " " + fmt("%.3f", sc.mean[k]);
    return {sc.loglog.slope >= 0.2 && sc.loglog.slope <= 0.6, d};
}

Verdict c14_spread() {
    const auto f = constant_torus(64);
    CellEventSpec spec;
    spec.ell = 8;
    spec.eta = 2;
    spec.beta_time = 4.0 * 64.0;
    const std::vector<std::uint64_t> Ns{5, 10, 20};
    const std::vector<int> z{2, 2};
    const auto rep = spread_scan(f, spec, Ns, z, SpreadPlacement::uniform, 4000, 14);
    std::string d = "slope " + fmt("%.5f", rep.log_failure.slope) + ", R^2 " + fmt("%.4f", rep.log_failure.r2) +
                    "; P";
    for (const auto& pt : rep.points) d += " " + fmt("%.4f", pt.probability);
    return {rep.log_failure.slope < 0.0 && rep.log_failure.r2 >= 0.8 && rep.log_failure.n == Ns.size(), d};
}

Verdict c15_chernoff() {
    bool ok = true;
    double worst = 0.0;
    for (double l : {1.0, 10.0, 100.0})
        for (int e = 1; e <= 9; ++e) {
            const auto c = chernoff_poisson(l, 0.1 * e);
            ok = ok && c.lower_exact < c.lower_bound && c.upper_exact < c.upper_bound;
            worst = std::max({worst, c.lower_exact / c.lower_bound, c.upper_exact / c.upper_bound});
        }
    return {ok, "largest exact/bound ratio " + fmt("%.4f", worst)};
}

Verdict c16_surface() {
    int equal = 0, minimal = 0, cases = 0;
    for (std::uint64_t s = 0; s < 200; ++s) {
        CellGrid g;
        g.base = {4, 4};
        g.h_min = -3;
        g.h_max = 3;
        const auto cells = simulate_iid_field(0.3, g, derive_seed(16, s));
        for (Side side : {Side::plus, Side::minus}) {
            ++cases;
            const auto fast = min_lipschitz_surface(cells, side);
            const auto slow = brute_force_min_surface(cells, side);
            if (fast.has_value() != slow.has_value()) continue;
            if (!fast) {
                ++equal;
                ++minimal;
                continue;
            }
            equal += *fast == *slow;
            minimal += is_admissible(cells, side, *fast) && is_pointwise_minimal(cells, side, *fast);
        }
    }
    CellGrid big;
    big.base = {32, 32};
    big.h_min = -16;
    big.h_max = 16;
    const std::vector<int> origin{16, 16};
    int around = 0;
    for (std::uint64_t s = 0; s < 100; ++s) {
        const auto cells = simulate_iid_field(0.01, big, derive_seed(160, s));
        const auto surf = two_sided_surface(cells);
        if (surf.exists() && surrounds(big, surface_mask(big, surf), origin, 0, 16)) ++around;
    }
    return {equal == cases && minimal == cases && around >= 95,
            std::to_string(equal) + "/" + std::to_string(cases) + " oracle matches, " + std::to_string(minimal) +
                " minimal, " + std::to_string(around) + "/100 existing and surrounding"};
}

struct Criterion {
    int id;
    const char* name;
    double budget;  // seconds, 0 for none
    std::function<Verdict()> run;
};

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> all = {
        {1, "heat-kernel exactness", 10, c1_heat_kernel},
        {2, "Monte Carlo consistency", 30, c2_monte_carlo},
        {3, "Gaussian-bound shape", 120, c3_gaussian},
        {4, "exit-tail shape", 120, c4_exit_tail},
        {5, "Poincare oracle equivalence", 0, c5_poincare},
        {6, "oscillation decay", 0, c6_oscillation},
        {7, "soft-local-times marginals", 0, c7_soft_local_times},
        {8, "mixing coupling", 300, c8_mixing},
        {9, "confined-kernel oscillation", 0, c9_confined_oscillation},
        {10, "stationarity", 0, c10_stationarity},
        {11, "SI front speed", 600, c11_si_speed},
        {12, "SIS monotonicity", 0, c12_sis},
        {13, "collision scaling", 0, c13_collisions},
        {14, "spread probability", 0, c14_spread},
        {15, "Chernoff bounds", 0, c15_chernoff},
        {16, "surface oracle equivalence", 0, c16_surface},
    };
    std::set<int> pick;
    for (int i = 1; i < argc; ++i) pick.insert(std::atoi(argv[i]));
    int failed = 0;
    for (const auto& c : all) {
        if (!pick.empty() && !pick.count(c.id)) continue;
        const auto start = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = c.run();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (c.budget > 0.0 && secs >= c.budget) {
            v.pass = false;
            v.detail += "; over the " + fmt("%.0f", c.budget) + " s budget";
        }
        failed += !v.pass;
        std::printf("C%-2d %s  %s: %s (%.1f s)\n", c.id, v.pass ? "PASS" : "FAIL", c.name, v.detail.c_str(), secs);
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
