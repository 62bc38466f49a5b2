#include <doctest.h>

#include <cmath>
#include <filesystem>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "clab/lattice.hpp"
#include "clab/rng.hpp"
#include "clab/spectral.hpp"

using namespace clab;

namespace {

ConductanceField constant_torus(int side) {
    return sample_conductances(LatticeBox(2, side, Boundary::torus), Law::constant(1.0), 1);
}

// Dense generator matrix L(x, y) = mu_xy / mu_x, L(x, x) = -1, built from
// coordinates; exp(tL) is the oracle for p_t.
Eigen::MatrixXd dense_generator(const ConductanceField& f) {
    const auto n = static_cast<Eigen::Index>(f.num_vertices());
    Eigen::MatrixXd L = Eigen::MatrixXd::Zero(n, n);
    const LatticeBox& box = f.box();
    for (Vertex x = 0; x < n; ++x) {
        if (f.vertex_weight(x) <= 0.0) continue;
        for (int a = 0; a < box.dim(); ++a)
            for (int s : {1, -1}) {
                Coords c = box.coords(x);
                c[static_cast<std::size_t>(a)] += s;
                const Vertex y = box.vertex(c);
                if (y == kNoVertex) continue;
                L(x, y) += f.weight(x, y) / f.vertex_weight(x);
            }
        L(x, x) -= 1.0;
    }
    return L;
}

}  // namespace

TEST_CASE("q_0 is the normalized delta") {
    const auto f = sample_conductances(LatticeBox(2, 6, Boundary::torus), Law::uniform_elliptic(2.0), 3);
    const std::vector<Vertex> src{0, 7};
    const auto tab = heat_kernel_exact(f, 0.0, src);
    for (Vertex x : src)
        for (Vertex y = 0; y < 36; ++y)
            CHECK(tab.value(x, y) == doctest::Approx(x == y ? 1.0 / f.vertex_weight(y) : 0.0));
}

TEST_CASE("two-vertex graph: P_x(Y_t = x) = (1 + exp(-2t)) / 2") {
    const ConductanceField f(LatticeBox(1, 2, Boundary::hard_wall), Law::constant(1.0), 0, {1.0, 0.0});
    const std::vector<Vertex> src{0};
    for (double t : {0.1, 1.0, 3.7, 40.0}) {
        const auto tab = heat_kernel_exact(f, t, src);
        Eigen::Matrix2d L;
        L << -1, 1, 1, -1;
        const Eigen::Matrix2d P = (t * L).exp();
        CHECK(tab.p[0][0] == doctest::Approx((1.0 + std::exp(-2.0 * t)) / 2.0).epsilon(1e-12));
        CHECK(tab.p[0][0] == doctest::Approx(P(0, 0)).epsilon(1e-12));
    }
}

TEST_CASE("uniformization matches the dense matrix exponential on random fields") {
    for (std::uint64_t seed : {1u, 2u}) {
        const auto f = sample_conductances(LatticeBox(2, 6, Boundary::torus), Law::dilute(0.2, 3.0), seed);
        const Eigen::MatrixXd L = dense_generator(f);
        std::vector<Vertex> src;
        for (Vertex x = 0; x < 36; ++x)
            if (f.vertex_weight(x) > 0.0) src.push_back(x);
        for (double t : {0.5, 5.0, 45.0}) {
            const Eigen::MatrixXd P = (t * L).exp();
            const auto tab = heat_kernel_exact(f, t, src);
            double err = 0.0;
            for (std::size_t i = 0; i < src.size(); ++i)
                for (Vertex y = 0; y < 36; ++y) err = std::max(err, std::abs(tab.p[i][static_cast<std::size_t>(y)] - P(src[i], y)));
            CHECK(err < 1e-10);
        }
    }
}

TEST_CASE("conservation, reversibility and Chapman-Kolmogorov") {
    const auto f = sample_conductances(LatticeBox(2, 7, Boundary::torus), Law::uniform_elliptic(4.0), 5);
    std::vector<Vertex> all(49);
    for (Vertex x = 0; x < 49; ++x) all[static_cast<std::size_t>(x)] = x;
    const double s = 1.3, t = 2.9;
    const auto ts = heat_kernel_exact(f, s, all);
    const auto tt = heat_kernel_exact(f, t, all);
    const auto tst = heat_kernel_exact(f, s + t, all);
    for (Vertex x = 0; x < 49; ++x) {
        double mass = 0.0;
        for (Vertex y = 0; y < 49; ++y) {
            mass += tt.value(x, y) * f.vertex_weight(y);
            CHECK(std::abs(tt.value(x, y) - tt.value(y, x)) < 1e-10);
            double ck = 0.0;
            for (Vertex z = 0; z < 49; ++z)
                ck += ts.p[static_cast<std::size_t>(x)][static_cast<std::size_t>(z)] *
                      tt.p[static_cast<std::size_t>(z)][static_cast<std::size_t>(y)];
            CHECK(std::abs(ck - tst.p[static_cast<std::size_t>(x)][static_cast<std::size_t>(y)]) < 1e-8);
        }
        CHECK(std::abs(mass - 1.0) < 1e-9);
    }
    CHECK(tt.truncation < 1e-12);
}

TEST_CASE("kernel_series agrees with fresh evaluations") {
    const auto f = sample_conductances(LatticeBox(2, 8, Boundary::torus), Law::uniform_elliptic(2.0), 4);
    const std::vector<double> times{0.5, 2.0, 9.0};
    const auto series = kernel_series(f, 3, times);
    const std::vector<Vertex> src{3};
    for (std::size_t i = 0; i < times.size(); ++i) {
        const auto tab = heat_kernel_exact(f, times[i], src);
        for (std::size_t y = 0; y < 64; ++y) CHECK(std::abs(series[i][y] - tab.p[0][y]) < 1e-11);
    }
}

TEST_CASE("generator kills constants; caloric residual is second order") {
    const auto f = sample_conductances(LatticeBox(2, 8, Boundary::torus), Law::dilute(0.2, 2.0), 6);
    const std::vector<double> ones(64, 1.0);
    for (double v : apply_generator(f, ones)) CHECK(std::abs(v) < 1e-14);
    const auto c = constant_torus(8);
    const auto rep = check_caloric(c, 0, 4.0, 0.1);
    CHECK(rep.ratio == doctest::Approx(4.0).epsilon(0.1));
    CHECK(check_caloric(c, 0, 4.0, 1e-3).residual < 1e-6);
}

TEST_CASE("on-diagonal decay: t q_t(x, x) approaches 1 / (4 pi)") {
    const auto f = constant_torus(64);
    const std::vector<double> times{32.0, 64.0, 128.0};
    const auto series = kernel_series(f, 0, times);
    double prev = 1.0;
    for (std::size_t i = 0; i < times.size(); ++i) {
        const double v = times[i] * series[i][0] / 4.0;
        const double gap = std::abs(v - 1.0 / (4.0 * M_PI));
        CHECK(gap < prev);
        prev = gap;
    }
    CHECK(prev < 0.02 / (4.0 * M_PI));
}

TEST_CASE("gaussian fit: negative slope, good R^2, no violations of the fitted bounds") {
    const auto f = constant_torus(48);
    const std::vector<double> ts{8, 16, 32, 64};
    const auto fit = gaussian_bound_fit(f, f.box().center(), ts, 12);
    CHECK(fit.regression.slope < 0.0);
    CHECK(fit.regression.r2 >= 0.95);
    CHECK(fit.upper_points > 0);
    CHECK(fit.upper_violations == 0);
    CHECK(fit.lower_violations == 0);
}

TEST_CASE("poincare: two-vertex value, constants, random functions never beat the eigenvalue") {
    const ConductanceField two(LatticeBox(1, 2, Boundary::hard_wall), Law::constant(1.0), 0, {1.0, 0.0});
    const auto r2 = poincare_constant(two, 0, 1, 1.0);
    // Oracle: generalized 1x1 problem on the mean-zero direction f = (1, -1).
    Eigen::Vector2d fv(1.0, -1.0);
    CHECK(r2.c_p == doctest::Approx(fv.squaredNorm() / (4.0 * 1.0)).epsilon(1e-12));
    CHECK(r2.c_p == doctest::Approx(0.5).epsilon(1e-12));

    const auto f = sample_conductances(LatticeBox(2, 16, Boundary::torus), Law::dilute(0.25, 3.0), 2);
    const Vertex x = f.box().center();
    const auto res = poincare_constant(f, x, 3, 2.0);
    const auto forms = poincare_forms(f, x, 3, 2.0);
    std::vector<double> g(forms.outer.size(), 2.5);
    CHECK(forms.variance(g) == doctest::Approx(0.0));
    CHECK(forms.dirichlet(g) == doctest::Approx(0.0));
    Rng rng(3);
    double worst = 0.0;
    for (int trial = 0; trial < 10000; ++trial) {
        for (auto& v : g) v = rng.uniform() - 0.5;
        if (trial % 2)  // alternate noise with smooth profiles
            for (std::size_t i = 0; i < g.size(); ++i)
                g[i] = std::sin(0.3 * static_cast<double>(f.box().coords(forms.outer[i])[0]) + g[i]);
        const double dir = forms.dirichlet(g);
        if (dir > 0.0) worst = std::max(worst, forms.variance(g) / (9.0 * dir));
    }
    CHECK_FALSE(res.infinite);
    CHECK(worst <= res.c_p * (1.0 + 1e-9));

    const auto c = constant_torus(40);
    const double base = poincare_constant(c, c.box().center(), 4, 2.0).c_p;
    for (Vertex y : {Vertex{0}, Vertex{123}, Vertex{777}})
        CHECK(poincare_constant(c, y, 4, 2.0).c_p == doctest::Approx(base).epsilon(0.05));
}

TEST_CASE("harnack theta formula and clamping") {
    CHECK(harnack_theta(2.0) == doctest::Approx(1.0));
    CHECK(std::isfinite(harnack_theta(1.0)));
    CHECK(harnack_theta(1.0) > 25.0);
    CHECK(harnack_theta(1.0 + 1e-3) > harnack_theta(1.5));
}

TEST_CASE("harnack constant shrinks as sources move inward; oscillation ratios obey it") {
    const auto f = constant_torus(32);
    const Vertex x = f.box().center();
    HarnackOptions wide, narrow;
    wide.max_source_distance = 2.0;
    narrow.max_source_distance = 0.5;
    wide.time_points = narrow.time_points = 32;
    const auto hw = harnack_constant(f, x, 4, wide);
    const auto hn = harnack_constant(f, x, 4, narrow);
    CHECK(std::isfinite(hw.c_h));
    CHECK(hw.c_h > 1.0);
    CHECK(hn.c_h <= hw.c_h);
    CHECK(hn.family_size < hw.family_size);

    const auto flat = oscillation_decay_check(f, x, 8, CaloricFunction{kNoVertex, 0.0, 3.0}, 32);
    REQUIRE_FALSE(flat.empty());
    for (const auto& s : flat) {
        CHECK(s.osc == 0.0);
        CHECK(s.ratio == 0.0);
    }
    const auto heat = oscillation_decay_check(f, x, 8, CaloricFunction{x, 0.0, 1.0}, 32);
    REQUIRE_FALSE(heat.empty());
    CHECK(heat[0].k == 1);
    CHECK(heat[0].ratio <= 1.0);
    for (const auto& s : heat) CHECK(s.ratio <= 1.0 - 1.0 / hw.c_h);
}

TEST_CASE("goodness: constant weights give N_B = 1") {
    const auto f = constant_torus(32);
    const auto def = default_goodness_constants(f, 6);
    const auto rep = goodness_scan(f, f.box().center(), 6, 2.0, def.c_p, def.c_w);
    CHECK(rep.n_b == 1);
    CHECK(rep.balls_bad == 0);
    CHECK(rep.very_good);
}

TEST_CASE("kernel tables round-trip through the binary format") {
    const auto f = constant_torus(6);
    const std::vector<Vertex> src{0, 5};
    const auto tab = heat_kernel_exact(f, 1.5, src);
    const auto path = (std::filesystem::temp_directory_path() / "clab_kernel.bin").string();
    write_kernel_binary(tab, path);
    const auto back = read_kernel_binary(path);
    CHECK(back.sources == tab.sources);
    CHECK(back.p == tab.p);
    CHECK(back.t == tab.t);
    std::filesystem::remove(path);
}
