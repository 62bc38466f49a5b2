#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "clab/lattice.hpp"
#include "clab/stats.hpp"
#include "clab/walk.hpp"

using namespace clab;

namespace {

ConductanceField constant_torus(int side, int d = 2) {
    return sample_conductances(LatticeBox(d, side, Boundary::torus), Law::constant(1.0), 1);
}

int linf(const LatticeBox& box, Vertex a, Vertex b) {
    const Coords c = box.delta(a, b);
    int m = 0;
    for (int k = 0; k < box.dim(); ++k) m = std::max(m, std::abs(c[static_cast<std::size_t>(k)]));
    return m;
}

int l1(const LatticeBox& box, Vertex a, Vertex b) {
    const Coords c = box.delta(a, b);
    int m = 0;
    for (int k = 0; k < box.dim(); ++k) m += std::abs(c[static_cast<std::size_t>(k)]);
    return m;
}

}  // namespace

TEST_CASE("horizon 0 gives no jumps") {
    const auto f = constant_torus(8);
    WalkConfig cfg;
    cfg.seed = 3;
    const auto tr = simulate_walk(f, 0, cfg);
    CHECK(tr.jumps() == 0);
    CHECK(tr.end() == 0);
}

TEST_CASE("each neighbour is chosen with frequency 1/4 on constant weights") {
    const auto f = constant_torus(8);
    const JumpTable jt(f);
    Rng rng(17);
    const Vertex x = f.box().center();
    std::map<Vertex, int> hits;
    const int n = 100000;
    for (int i = 0; i < n; ++i) ++hits[jt.sample_next(x, rng)];
    CHECK(hits.size() == 4);
    const double sd = std::sqrt(n * 0.25 * 0.75);
    for (auto [v, c] : hits) {
        CHECK(f.weight(x, v) == 1.0);
        CHECK(std::abs(c - n / 4.0) <= 3.0 * sd);
    }
}

TEST_CASE("jump-chain frequencies match mu_xy / mu_x on a random field") {
    const auto f = sample_conductances(LatticeBox(2, 10, Boundary::hard_wall), Law::dilute(0.2, 4.0), 8);
    const JumpTable jt(f);
    Rng rng(4);
    const int n = 40000;
    for (Vertex x : {Vertex{0}, Vertex{13}, Vertex{55}, Vertex{99}}) {
        if (f.vertex_weight(x) <= 0.0) continue;
        std::map<Vertex, int> hits;
        for (int i = 0; i < n; ++i) ++hits[jt.sample_next(x, rng)];
        for (auto [v, c] : hits) CHECK(f.weight(x, v) > 0.0);
        const auto nb = f.neighbors(x);
        for (Vertex v : nb) {
            if (v == kNoVertex) continue;
            const double p = f.weight(x, v) / f.vertex_weight(x);
            CHECK(std::abs(hits[v] - n * p) <= 3.0 * std::sqrt(n * p * (1 - p)) + 1e-9);
        }
    }
}

TEST_CASE("two-vertex graph: jump counts are Poisson(t), holding times exponential(1)") {
    const LatticeBox box(1, 2, Boundary::hard_wall);
    const ConductanceField f(box, Law::constant(1.0), 0, std::vector<double>{1.0, 0.0});
    const double t = 5.0;
    const int n = 10000;
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        WalkConfig cfg;
        cfg.horizon = t;
        cfg.seed = derive_seed(77, static_cast<std::uint64_t>(i));
        const auto tr = simulate_walk(f, 0, cfg);
        sum += static_cast<double>(tr.jumps());
        for (std::size_t k = 0; k < tr.jumps(); ++k) CHECK(tr.vertices[k] == static_cast<Vertex>((k + 1) % 2));
    }
    CHECK(std::abs(sum / n - t) <= 3.0 * std::sqrt(t / n));
    // Holding times from one long path.
    std::vector<double> gaps;
    WalkConfig cfg;
    cfg.horizon = 12000.0;
    cfg.seed = 5;
    const auto tr = simulate_walk(f, 0, cfg);
    double prev = 0.0;
    for (std::size_t k = 0; k < std::min<std::size_t>(tr.jumps(), 10000); ++k) {
        gaps.push_back(tr.times[k] - prev);
        prev = tr.times[k];
    }
    REQUIRE(gaps.size() == 10000);
    CHECK(stats::ks_test_exponential(gaps) > 0.01);
}

TEST_CASE("trajectory bookkeeping: sorted times, neighbouring steps, position_at") {
    const auto f = sample_conductances(LatticeBox(2, 12, Boundary::torus), Law::uniform_elliptic(3.0), 2);
    WalkConfig cfg;
    cfg.horizon = 40.0;
    cfg.seed = 9;
    const auto tr = simulate_walk(f, 7, cfg);
    REQUIRE(tr.jumps() > 0);
    Vertex prev = tr.start;
    for (std::size_t k = 0; k < tr.jumps(); ++k) {
        if (k) CHECK(tr.times[k] > tr.times[k - 1]);
        CHECK(tr.times[k] <= cfg.horizon);
        CHECK(f.weight(prev, tr.vertices[k]) > 0.0);
        prev = tr.vertices[k];
        CHECK(tr.position_at(tr.times[k]) == tr.vertices[k]);
    }
    CHECK(tr.position_at(0.0) == tr.start);
    const auto again = simulate_walk(f, 7, cfg);
    CHECK(again.times == tr.times);
    CHECK(again.vertices == tr.vertices);
}

TEST_CASE("exit_time: none for huge radii and empty trajectories, linear-scan oracle") {
    const auto f = constant_torus(16);
    WalkConfig cfg;
    cfg.horizon = 200.0;
    cfg.seed = 21;
    const auto tr = simulate_walk(f, 0, cfg);
    CHECK_FALSE(exit_time(f, tr, f.box().diameter()).has_value());
    Trajectory still;
    still.start = 3;
    CHECK_FALSE(exit_time(f, still, 1).has_value());
    for (int r = 1; r <= 6; ++r) {
        std::optional<double> want;
        for (std::size_t k = 0; k < tr.jumps(); ++k)
            if (l1(f.box(), tr.start, tr.vertices[k]) > r) {
                want = tr.times[k];
                break;
            }
        const auto got = exit_time(f, tr, r);
        REQUIRE(got.has_value() == want.has_value());
        if (got) CHECK(*got == *want);
    }
}

TEST_CASE("exit tail: zero at tiny t, below exp(-r^2/8t), monotone in r and t") {
    const auto f = constant_torus(128);
    const Vertex x = f.box().center();
    CHECK(empirical_exit_tail(f, x, 1, 1e-6, 1000, 1).exits == 0);
    const auto p20 = empirical_exit_tail(f, x, 20, 10.0, 10000, 5);
    CHECK(p20.frequency < std::exp(-400.0 / 80.0));
    double prev = 2.0;
    for (int r : {2, 4, 6, 8}) {
        const auto p = empirical_exit_tail(f, x, r, 10.0, 4000, 6);
        CHECK(p.frequency <= prev);
        prev = p.frequency;
    }
    prev = -1.0;
    for (double t : {1.0, 4.0, 8.0, 16.0}) {
        const auto p = empirical_exit_tail(f, x, 5, t, 4000, 6);
        CHECK(p.frequency >= prev);
        prev = p.frequency;
    }
}

TEST_CASE("confined walks: sure event accepts always, accepted paths stay in Q_rho") {
    const auto f = constant_torus(10);
    WalkConfig cfg;
    cfg.horizon = 20.0;
    cfg.rho = 4 * f.box().diameter();
    for (std::uint64_t s = 0; s < 50; ++s) {
        cfg.seed = s;
        const auto cw = simulate_confined_walk(f, 0, cfg);
        CHECK(cw.attempts == 1);
        CHECK(cw.acceptance() == 1.0);
    }
    const auto g = constant_torus(64);
    cfg.rho = 6;
    cfg.horizon = 10.0;
    std::uint64_t attempts = 0, accepted = 0;
    for (std::uint64_t s = 0; s < 200; ++s) {
        cfg.seed = s;
        const auto cw = simulate_confined_walk(g, 100, cfg);
        REQUIRE(cw.trajectory);
        attempts += cw.attempts;
        accepted += cw.accepted;
        for (Vertex v : cw.trajectory->vertices) CHECK(linf(g.box(), 100, v) <= 3);
    }
    CHECK(accepted == 200);
    CHECK(attempts > 200);
}

TEST_CASE("confined walk hits the rejection floor") {
    const auto f = constant_torus(32);
    WalkConfig cfg;
    cfg.horizon = 400.0;
    cfg.rho = 2;
    cfg.seed = 1;
    cfg.acceptance_floor = 1e-2;
    CHECK_THROWS_AS(simulate_confined_walk(f, 0, cfg), RejectionFloorError);
}

TEST_CASE("stay probability: matches unconditioned simulation and the fitted exit-tail bound") {
    const auto f = constant_torus(128);
    const Vertex x = f.box().center();
    // Oracle: plain walks, displacement checked after every jump.
    const int n = 4000;
    int stays = 0;
    for (int i = 0; i < n; ++i) {
        WalkConfig cfg;
        cfg.horizon = 25.0;
        cfg.seed = derive_seed(123, static_cast<std::uint64_t>(i));
        const auto tr = simulate_walk(f, x, cfg);
        bool ok = true;
        for (Vertex v : tr.vertices) ok = ok && linf(f.box(), x, v) <= 4;
        stays += ok;
    }
    double point = 0.0;
    const auto ci = estimate_stay_probability(f, x, 25.0, 8, 20000, 9, &point);
    const double oracle = static_cast<double>(stays) / n;
    CHECK(std::abs(point - oracle) <= 4.0 * std::sqrt(oracle * (1 - oracle) * (1.0 / n + 1.0 / 20000.0)));
    CHECK(ci.lo <= point);
    CHECK(point <= ci.hi);

    std::vector<ExitTailPoint> pts;
    for (int r : {6, 8, 10, 12})
        for (double t : {10.0, 15.0, 25.0}) pts.push_back(empirical_exit_tail(f, x, r, t, 10000, 31));
    const auto fit = fit_exit_tail(pts);
    REQUIRE(fit.c4 > 0.0);
    double p40 = 0.0;
    estimate_stay_probability(f, x, 25.0, 40, 20000, 10, &p40);
    CHECK(1.0 - p40 <= fit.c3 * std::exp(-fit.c4 * 1600.0 / 100.0));
}

TEST_CASE("long walks equilibrate to the uniform law on a constant torus") {
    const auto f = constant_torus(4);
    std::vector<std::uint64_t> counts(16, 0);
    const int n = 16000;
    for (int i = 0; i < n; ++i) {
        WalkConfig cfg;
        cfg.horizon = 60.0;
        cfg.seed = derive_seed(8, static_cast<std::uint64_t>(i));
        ++counts[static_cast<std::size_t>(simulate_walk(f, 0, cfg).end())];
    }
    const double sd = std::sqrt(n / 16.0 * 15.0 / 16.0);
    for (auto c : counts) CHECK(std::abs(static_cast<double>(c) - n / 16.0) <= 3.5 * sd);
}

TEST_CASE("trajectory JSONL has one line per jump plus the start") {
    const auto f = constant_torus(8);
    WalkConfig cfg;
    cfg.horizon = 5.0;
    cfg.seed = 2;
    const auto tr = simulate_walk(f, 0, cfg);
    const auto path = std::filesystem::temp_directory_path() / "clab_traj.jsonl";
    write_trajectory_jsonl(tr, path.string());
    std::ifstream in(path);
    std::size_t lines = 0;
    for (std::string s; std::getline(in, s);) ++lines;
    CHECK(lines == tr.jumps() + 1);
    std::filesystem::remove(path);
}
