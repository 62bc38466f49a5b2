#include "clab/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <deque>
#include <fstream>
#include <limits>
#include <memory>
#include <stdexcept>

#include <Eigen/Dense>

#include "clab/parallel.hpp"

namespace clab {

void jump_step(const ConductanceField& field, std::span<const double> in, std::span<double> out) {
    const std::size_t n = field.num_vertices();
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t x = 0; x < n; ++x) {
        const double m = in[x];
        if (m == 0.0) continue;
        const double mu = field.vertex_weight(static_cast<Vertex>(x));
        if (mu <= 0.0) {
            out[x] += m;
            continue;
        }
        const auto ns = field.neighbors(static_cast<Vertex>(x));
        const auto ws = field.neighbor_weights(static_cast<Vertex>(x));
        const double scale = m / mu;
        for (std::size_t s = 0; s < ns.size(); ++s)
            if (ws[s] > 0.0) out[static_cast<std::size_t>(ns[s])] += scale * ws[s];
    }
}

std::vector<double> apply_generator(const ConductanceField& field, std::span<const double> f) {
    const std::size_t n = field.num_vertices();
    std::vector<double> out(n, 0.0);
    for (std::size_t x = 0; x < n; ++x) {
        const double mu = field.vertex_weight(static_cast<Vertex>(x));
        if (mu <= 0.0) continue;
        const auto ns = field.neighbors(static_cast<Vertex>(x));
        const auto ws = field.neighbor_weights(static_cast<Vertex>(x));
        double acc = 0.0;
        for (std::size_t s = 0; s < ns.size(); ++s)
            if (ws[s] > 0.0) acc += ws[s] * (f[static_cast<std::size_t>(ns[s])] - f[x]);
        out[x] = acc / mu;
    }
    return out;
}

Evolution evolve(const ConductanceField& field, std::vector<double> p0, double t, double tol) {
    if (t < 0.0) throw std::invalid_argument("evolve: negative time");
    if (!(tol > 0.0)) throw std::invalid_argument("evolve: tolerance must be positive");
    Evolution ev;
    ev.p = std::move(p0);
    if (t == 0.0) return ev;
    constexpr double kMaxChunk = 32.0;
    const auto chunks = static_cast<std::size_t>(std::ceil(t / kMaxChunk));
    const double s = t / static_cast<double>(chunks);
    const double tol_chunk = tol / static_cast<double>(chunks);
    const std::size_t n = ev.p.size();
    std::vector<double> cur(n), next(n), acc(n);
    for (std::size_t c = 0; c < chunks; ++c) {
        cur = ev.p;
        double w = std::exp(-s);
        for (std::size_t i = 0; i < n; ++i) acc[i] = w * cur[i];
        for (std::size_t k = 1;; ++k) {
            // Tail after term k-1 is bounded by a geometric series once k > s.
            const double kk = static_cast<double>(k);
            if (kk > s + 1.0) {
                const double tail = w * (s / kk) / (1.0 - s / (kk + 1.0));
                if (tail < tol_chunk) {
                    ev.truncation += tail;
                    break;
                }
            }
            jump_step(field, cur, next);
            std::swap(cur, next);
            ++ev.steps;
            w *= s / kk;
            for (std::size_t i = 0; i < n; ++i) acc[i] += w * cur[i];
        }
        std::swap(ev.p, acc);
    }
    return ev;
}

std::size_t HeatKernelTable::index_of(Vertex source) const {
    const auto it = std::find(sources.begin(), sources.end(), source);
    if (it == sources.end()) throw std::out_of_range("vertex is not a source of this table");
    return static_cast<std::size_t>(it - sources.begin());
}

namespace {

std::vector<double> point_mass(std::size_t n, Vertex x) {
    std::vector<double> p(n, 0.0);
    p[static_cast<std::size_t>(x)] = 1.0;
    return p;
}

std::vector<double> to_q(const ConductanceField& field, std::span<const double> p) {
    std::vector<double> q(p.size(), 0.0);
    for (std::size_t y = 0; y < p.size(); ++y) {
        const double mu = field.vertex_weight(static_cast<Vertex>(y));
        q[y] = mu > 0.0 ? p[y] / mu : 0.0;
    }
    return q;
}

std::vector<int> graph_distances(const ConductanceField& field, Vertex x) {
    std::vector<int> dist(field.num_vertices(), -1);
    std::deque<Vertex> queue{x};
    dist[static_cast<std::size_t>(x)] = 0;
    while (!queue.empty()) {
        const Vertex v = queue.front();
        queue.pop_front();
        const auto ns = field.neighbors(v);
        const auto ws = field.neighbor_weights(v);
        for (std::size_t s = 0; s < ns.size(); ++s) {
            const Vertex u = ns[s];
            if (u == kNoVertex || ws[s] <= 0.0 || dist[static_cast<std::size_t>(u)] >= 0) continue;
            dist[static_cast<std::size_t>(u)] = dist[static_cast<std::size_t>(v)] + 1;
            queue.push_back(u);
        }
    }
    return dist;
}

// Vertex at x + (y - z), the image of y under the shift taking z to x.
Vertex shift_to(const LatticeBox& box, Vertex x, Vertex z, Vertex y) {
    const Coords d = box.delta(z, y);
    Coords c = box.coords(x);
    for (int a = 0; a < box.dim(); ++a) c[static_cast<std::size_t>(a)] += d[static_cast<std::size_t>(a)];
    return box.vertex(c);
}

// `points` values evenly spaced on [a, b], or on (a, b] when open_left.
std::vector<double> time_grid(double a, double b, int points, bool open_left) {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(points));
    for (int j = 0; j < points; ++j) {
        const double frac = open_left ? static_cast<double>(j + 1) / points
                                      : (points == 1 ? 1.0 : static_cast<double>(j) / (points - 1));
        out.push_back(a + (b - a) * frac);
    }
    return out;
}

}  // namespace

HeatKernelTable heat_kernel_exact(const ConductanceField& field, double t, std::span<const Vertex> sources,
                                  double tol) {
    if (t < 0.0) throw std::invalid_argument("heat kernel: t must be nonnegative");
    if (!(tol > 0.0)) throw std::invalid_argument("heat kernel: tol must be positive");
    for (Vertex x : sources)
        if (field.vertex_weight(x) <= 0.0)
            throw std::invalid_argument("heat kernel: source " + std::to_string(x) + " is isolated");
    HeatKernelTable table;
    table.t = t;
    table.tol = tol;
    table.num_vertices = field.num_vertices();
    table.sources.assign(sources.begin(), sources.end());
    table.p.resize(sources.size());
    table.q.resize(sources.size());
    std::vector<double> trunc(sources.size(), 0.0);
    parallel_for(sources.size(), [&](std::size_t i) {
        Evolution ev = evolve(field, point_mass(field.num_vertices(), sources[i]), t, tol);
        trunc[i] = ev.truncation;
        table.q[i] = to_q(field, ev.p);
        table.p[i] = std::move(ev.p);
    });
    for (double e : trunc) table.truncation = std::max(table.truncation, e);
    return table;
}

std::vector<std::vector<double>> kernel_series(const ConductanceField& field, Vertex source,
                                               std::span<const double> times, double tol) {
    std::vector<std::vector<double>> out;
    out.reserve(times.size());
    std::vector<double> p = point_mass(field.num_vertices(), source);
    double now = 0.0;
    const double tol_each = tol / static_cast<double>(std::max<std::size_t>(1, times.size()));
    for (double t : times) {
        if (t < now) throw std::invalid_argument("kernel_series: times must be increasing");
        p = evolve(field, std::move(p), t - now, tol_each).p;
        now = t;
        out.push_back(p);
    }
    return out;
}

CaloricReport check_caloric(const ConductanceField& field, Vertex source, double t, double dt, double tol) {
    if (!(dt > 0.0) || dt >= t) throw std::invalid_argument("caloric check needs 0 < dt < t");
    auto residual = [&](double h) {
        const Vertex src[] = {source};
        const auto lo = heat_kernel_exact(field, t - h, src, tol);
        const auto mid = heat_kernel_exact(field, t, src, tol);
        const auto hi = heat_kernel_exact(field, t + h, src, tol);
        const auto lq = apply_generator(field, mid.q[0]);
        double worst = 0.0;
        for (std::size_t y = 0; y < lq.size(); ++y) {
            if (field.vertex_weight(static_cast<Vertex>(y)) <= 0.0) continue;
            const double dq = (hi.q[0][y] - lo.q[0][y]) / (2.0 * h);
            worst = std::max(worst, std::fabs(dq - lq[y]));
        }
        return worst;
    };
    CaloricReport rep;
    rep.residual = residual(dt);
    rep.residual_half = residual(dt / 2.0);
    rep.ratio = rep.residual_half > 0.0 ? rep.residual / rep.residual_half : 0.0;
    return rep;
}

GaussianFit gaussian_bound_fit(const ConductanceField& field, Vertex source, std::span<const double> t_grid,
                               int r_max, Metric metric) {
    const LatticeBox& box = field.box();
    const int d = box.dim();
    const auto gd = graph_distances(field, source);
    const std::size_t n = field.num_vertices();
    std::vector<double> r2(n, 0.0);
    for (std::size_t y = 0; y < n; ++y) {
        if (metric == Metric::graph) {
            r2[y] = static_cast<double>(gd[y]) * gd[y];
        } else {
            const Coords c = box.delta(source, static_cast<Vertex>(y));
            double s = 0.0;
            for (int a = 0; a < d; ++a) s += static_cast<double>(c[static_cast<std::size_t>(a)]) * c[static_cast<std::size_t>(a)];
            r2[y] = s;
        }
    }
    std::vector<double> sorted(t_grid.begin(), t_grid.end());
    std::sort(sorted.begin(), sorted.end());
    const auto series = kernel_series(field, source, sorted);

    struct Pt {
        double x, logv;
        bool upper, lower;
    };
    std::vector<Pt> pts;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        const double t = sorted[i];
        const auto q = to_q(field, series[i]);
        const double scale = std::pow(t, 0.5 * d);
        for (std::size_t y = 0; y < n; ++y) {
            if (gd[y] < 0 || q[y] <= 0.0) continue;
            const double g = gd[y];
            const bool upper = g <= t;
            const bool lower = std::pow(g, 1.5) <= t && gd[y] <= r_max;
            if (!upper && !lower) continue;
            pts.push_back({r2[y] / t, std::log(q[y] * scale), upper, lower});
        }
    }
    GaussianFit fit;
    std::vector<double> xs, ys;
    for (const auto& p : pts)
        if (p.lower) {
            xs.push_back(p.x);
            ys.push_back(p.logv);
        }
    if (xs.size() < 2) throw std::invalid_argument("gaussian fit: fewer than two points in the validity window");
    fit.regression = stats::linear_fit(xs, ys);
    const double c = std::max(0.0, -fit.regression.slope);
    fit.c2 = fit.c4 = c;
    double log_c1 = -std::numeric_limits<double>::infinity();
    double log_c3 = std::numeric_limits<double>::infinity();
    for (const auto& p : pts) {
        const double shifted = p.logv + c * p.x;
        if (p.upper) {
            log_c1 = std::max(log_c1, shifted);
            ++fit.upper_points;
        }
        if (p.lower) {
            log_c3 = std::min(log_c3, shifted);
            ++fit.lower_points;
        }
    }
    fit.c1 = std::exp(log_c1) * (1.0 + 1e-12);
    fit.c3 = std::exp(log_c3) * (1.0 - 1e-12);
    for (const auto& p : pts) {
        const double v = std::exp(p.logv);
        if (p.upper && v > fit.c1 * std::exp(-c * p.x)) ++fit.upper_violations;
        if (p.lower && v < fit.c3 * std::exp(-c * p.x)) ++fit.lower_violations;
    }
    return fit;
}

PoincareForms poincare_forms(const ConductanceField& field, Vertex x, int r, double c_w) {
    if (r < 1) throw std::invalid_argument("poincare: r must be at least 1");
    if (c_w < 1.0) throw std::invalid_argument("poincare: C_W must be at least 1");
    PoincareForms forms;
    forms.field = &field;
    const int outer_r = static_cast<int>(std::floor(c_w * r + 1e-12));
    const Ball outer = ball(field, x, outer_r);
    forms.outer = outer.vertices;
    forms.in_inner.resize(outer.vertices.size());
    forms.local.assign(field.num_vertices(), -1);
    for (std::size_t i = 0; i < outer.vertices.size(); ++i) {
        forms.local[static_cast<std::size_t>(outer.vertices[i])] = static_cast<std::int32_t>(i);
        forms.in_inner[i] = outer.distance[i] <= r ? 1 : 0;
    }
    return forms;
}

double PoincareForms::variance(std::span<const double> f) const {
    double mass = 0.0, mean = 0.0;
    for (std::size_t i = 0; i < outer.size(); ++i) {
        if (!in_inner[i]) continue;
        const double mu = field->vertex_weight(outer[i]);
        mass += mu;
        mean += mu * f[i];
    }
    if (mass <= 0.0) return 0.0;
    mean /= mass;
    double v = 0.0;
    for (std::size_t i = 0; i < outer.size(); ++i)
        if (in_inner[i]) v += (f[i] - mean) * (f[i] - mean) * field->vertex_weight(outer[i]);
    return v;
}

double PoincareForms::dirichlet(std::span<const double> f) const {
    double e = 0.0;
    const int d = field->box().dim();
    for (std::size_t i = 0; i < outer.size(); ++i) {
        const Vertex u = outer[i];
        for (int a = 0; a < d; ++a) {
            const double w = field->edge_weight(u, a);
            if (w <= 0.0) continue;
            const Vertex v = field->neighbors(u)[static_cast<std::size_t>(2 * a)];
            const std::int32_t j = local[static_cast<std::size_t>(v)];
            if (j < 0) continue;
            const double diff = f[i] - f[static_cast<std::size_t>(j)];
            e += w * diff * diff;
        }
    }
    return e;
}

PoincareResult poincare_constant(const ConductanceField& field, Vertex x, int r, double c_w) {
    const PoincareForms forms = poincare_forms(field, x, r, c_w);
    const auto n = static_cast<Eigen::Index>(forms.outer.size());
    PoincareResult res;
    res.outer_size = forms.outer.size();
    res.ball_size = static_cast<std::size_t>(std::count(forms.in_inner.begin(), forms.in_inner.end(), 1));

    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd m = Eigen::VectorXd::Zero(n);
    double mass = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!forms.in_inner[static_cast<std::size_t>(i)]) continue;
        m(i) = field.vertex_weight(forms.outer[static_cast<std::size_t>(i)]);
        mass += m(i);
    }
    if (mass <= 0.0) return res;
    A.diagonal() = m;
    A.noalias() -= m * m.transpose() / mass;

    Eigen::MatrixXd L = Eigen::MatrixXd::Zero(n, n);
    const int d = field.box().dim();
    for (Eigen::Index i = 0; i < n; ++i) {
        const Vertex u = forms.outer[static_cast<std::size_t>(i)];
        for (int a = 0; a < d; ++a) {
            const double w = field.edge_weight(u, a);
            if (w <= 0.0) continue;
            const Vertex v = field.neighbors(u)[static_cast<std::size_t>(2 * a)];
            const std::int32_t j = forms.local[static_cast<std::size_t>(v)];
            if (j < 0) continue;
            L(i, i) += w;
            L(j, j) += w;
            L(i, j) -= w;
            L(j, i) -= w;
        }
    }

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(L);
    const Eigen::VectorXd& lam = es.eigenvalues();
    const double lam_max = std::max(lam.maxCoeff(), 1.0);
    const double cut = 1e-10 * lam_max;
    std::vector<Eigen::Index> range, null;
    for (Eigen::Index i = 0; i < n; ++i) (lam(i) > cut ? range : null).push_back(i);

    const double a_scale = std::max(1.0, m.maxCoeff());
    if (!null.empty()) {
        Eigen::MatrixXd N(n, static_cast<Eigen::Index>(null.size()));
        for (std::size_t k = 0; k < null.size(); ++k) N.col(static_cast<Eigen::Index>(k)) = es.eigenvectors().col(null[k]);
        const Eigen::MatrixXd V0 = N.transpose() * A * N;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> nv(V0, Eigen::EigenvaluesOnly);
        if (nv.eigenvalues().maxCoeff() > 1e-9 * a_scale) {
            res.infinite = true;
            res.c_p = std::numeric_limits<double>::infinity();
            return res;
        }
    }
    if (range.empty()) return res;
    Eigen::MatrixXd W(n, static_cast<Eigen::Index>(range.size()));
    for (std::size_t k = 0; k < range.size(); ++k)
        W.col(static_cast<Eigen::Index>(k)) = es.eigenvectors().col(range[k]) / std::sqrt(lam(range[k]));
    const Eigen::MatrixXd M = W.transpose() * A * W;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ms(M, Eigen::EigenvaluesOnly);
    res.c_p = std::max(0.0, ms.eigenvalues().maxCoeff()) / (static_cast<double>(r) * r);
    return res;
}

double harnack_theta(double c_h) {
    const double c = std::max(c_h, 1.0 + 1e-9);
    return std::log2(c / (c - 1.0));
}

namespace {

std::vector<Vertex> harnack_sources(const LatticeBox& box, Vertex x, int R, double max_dist) {
    std::vector<Vertex> out{x};
    const int d = box.dim();
    const Coords cx = box.coords(x);
    for (int m = 1;; ++m) {
        const double dist = 0.5 * R * m;
        if (dist > max_dist * R + 1e-9) break;
        const int step = static_cast<int>(std::lround(dist));
        Coords axis = cx;
        axis[0] += step;
        Coords diag = cx;
        const int per = static_cast<int>(std::lround(dist / d));
        for (int a = 0; a < d; ++a) diag[static_cast<std::size_t>(a)] += per;
        for (const Coords& c : {axis, diag}) {
            if (box.boundary() == Boundary::hard_wall && !box.contains(c)) continue;
            const Vertex v = box.vertex(c);
            if (std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
        }
    }
    return out;
}

}  // namespace

HarnackEstimate harnack_constant(const ConductanceField& field, Vertex x, int R, const HarnackOptions& opts) {
    if (R < 2) throw std::invalid_argument("harnack: R must be at least 2");
    const double T = static_cast<double>(R) * R;
    const auto t_minus = time_grid(T / 4.0, T / 2.0, opts.time_points, false);
    const auto t_plus = time_grid(3.0 * T / 4.0, T, opts.time_points, false);
    std::vector<double> times;
    for (double t : t_minus) times.push_back(t + opts.time_offset);
    for (double t : t_plus) times.push_back(t + opts.time_offset);
    const auto inner = ball(field, x, R / 2).vertices;
    const auto sources = harnack_sources(field.box(), x, R, opts.max_source_distance);

    const bool shift = field.translation_invariant();
    std::vector<std::vector<double>> reference;
    if (shift) reference = kernel_series(field, x, times, opts.tol);

    HarnackEstimate est;
    std::vector<double> ratio(sources.size(), -1.0);
    parallel_for(sources.size(), [&](std::size_t i) {
        const Vertex z = sources[i];
        if (field.vertex_weight(z) <= 0.0) return;
        std::vector<std::vector<double>> own;
        if (!shift) own = kernel_series(field, z, times, opts.tol);
        const auto& series = shift ? reference : own;
        double sup_minus = 0.0;
        double inf_plus = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < times.size(); ++k) {
            const bool minus = k < t_minus.size();
            for (Vertex y : inner) {
                const Vertex yy = shift ? shift_to(field.box(), x, z, y) : y;
                const double mu = field.vertex_weight(y);
                const double q = series[k][static_cast<std::size_t>(yy)] / (mu > 0.0 ? mu : 1.0);
                if (minus) sup_minus = std::max(sup_minus, q);
                else inf_plus = std::min(inf_plus, q);
            }
        }
        if (!(inf_plus > 1e-300)) return;
        ratio[i] = sup_minus / inf_plus;
    });
    for (std::size_t i = 0; i < sources.size(); ++i) {
        if (ratio[i] < 0.0) {
            ++est.skipped;
            continue;
        }
        ++est.family_size;
        if (ratio[i] > est.c_h) {
            est.c_h = ratio[i];
            est.worst_source = sources[i];
        }
    }
    est.theta = harnack_theta(est.c_h);
    return est;
}

std::vector<OscillationScale> oscillation_decay_check(const ConductanceField& field, Vertex x, int r0,
                                                      const CaloricFunction& u, int time_points, double tol) {
    struct Scale {
        int k;
        double rk;
        std::vector<double> q_times, plus_times;
    };
    const double T = static_cast<double>(r0) * r0;
    std::vector<Scale> scales;
    std::vector<double> times;
    for (int k = 1;; ++k) {
        const double rk = r0 / std::pow(2.0, k);
        if (rk < 2.0) break;
        Scale s{k, rk, time_grid(T - rk * rk, T, time_points, true), time_grid(T - rk * rk / 4.0, T, time_points, false)};
        times.insert(times.end(), s.q_times.begin(), s.q_times.end());
        times.insert(times.end(), s.plus_times.begin(), s.plus_times.end());
        scales.push_back(std::move(s));
    }
    std::sort(times.begin(), times.end());
    times.erase(std::unique(times.begin(), times.end()), times.end());

    std::vector<std::vector<double>> series;
    if (u.source != kNoVertex) {
        std::vector<double> shifted(times);
        for (double& t : shifted) t += u.time_offset;
        series = kernel_series(field, u.source, shifted, tol);
    }
    auto value = [&](double t, Vertex y) {
        if (u.source == kNoVertex) return u.constant;
        const auto k = static_cast<std::size_t>(std::lower_bound(times.begin(), times.end(), t) - times.begin());
        const double mu = field.vertex_weight(y);
        return mu > 0.0 ? series[k][static_cast<std::size_t>(y)] / mu : 0.0;
    };
    auto osc = [&](const std::vector<Vertex>& verts, const std::vector<double>& ts) {
        double hi = -std::numeric_limits<double>::infinity();
        double lo = std::numeric_limits<double>::infinity();
        for (double t : ts)
            for (Vertex y : verts) {
                const double v = value(t, y);
                hi = std::max(hi, v);
                lo = std::min(lo, v);
            }
        return hi - lo;
    };
    std::vector<OscillationScale> out;
    for (const auto& s : scales) {
        OscillationScale o;
        o.k = s.k;
        o.r = static_cast<int>(std::floor(s.rk));
        const auto big = ball(field, x, o.r).vertices;
        const auto small = ball(field, x, static_cast<int>(std::floor(s.rk / 2.0))).vertices;
        o.osc = osc(big, s.q_times);
        o.osc_plus = osc(small, s.plus_times);
        o.ratio = o.osc > 0.0 ? o.osc_plus / o.osc : 0.0;
        out.push_back(o);
    }
    return out;
}

GoodnessReport goodness_scan(const ConductanceField& field, Vertex x, int R, double c_v, double c_p, double c_w) {
    if (R < 1) throw std::invalid_argument("goodness scan: R must be at least 1");
    GoodnessReport rep;
    rep.c_v = c_v;
    rep.c_p = c_p;
    rep.c_w = c_w;
    rep.R = R;
    rep.bad_by_radius.assign(static_cast<std::size_t>(R) + 1, 0);
    const int d = field.box().dim();
    const Ball big = ball(field, x, R);
    std::vector<char> inside(field.num_vertices(), 0);
    for (Vertex v : big.vertices) inside[static_cast<std::size_t>(v)] = 1;

    struct Job {
        Vertex y;
        int r;
    };
    std::vector<Job> jobs;
    for (int r = 1; r <= R; ++r) {
        for (std::size_t i = 0; i < big.vertices.size(); ++i) {
            if (big.distance[i] + r > R) {
                // Not implied by the triangle inequality; check membership directly.
                const Ball sub = ball(field, big.vertices[i], r);
                bool contained = true;
                for (Vertex v : sub.vertices) contained = contained && inside[static_cast<std::size_t>(v)];
                if (!contained) continue;
            }
            jobs.push_back({big.vertices[i], r});
        }
    }
    std::vector<char> bad(jobs.size(), 0);
    parallel_for(jobs.size(), [&](std::size_t j) {
        const auto [y, r] = jobs[j];
        const double vol = ball_volume(field, y, r);
        if (vol < c_v * std::pow(static_cast<double>(r), d)) {
            bad[j] = 1;
            return;
        }
        const auto pc = poincare_constant(field, y, r, c_w);
        if (pc.infinite || pc.c_p > c_p) bad[j] = 1;
    });
    rep.balls_checked = jobs.size();
    int worst = 0;
    for (std::size_t j = 0; j < jobs.size(); ++j) {
        if (!bad[j]) continue;
        ++rep.balls_bad;
        ++rep.bad_by_radius[static_cast<std::size_t>(jobs[j].r)];
        worst = std::max(worst, jobs[j].r);
    }
    rep.n_b = worst + 1;
    rep.very_good = rep.n_b <= std::pow(static_cast<double>(R), 1.0 / (d + 2)) + 1e-12;
    return rep;
}

GoodnessDefaults default_goodness_constants(const ConductanceField& reference, int R) {
    const int d = reference.box().dim();
    const Vertex c = reference.box().center();
    double worst = 0.0;
    for (int r = 1; r <= R; ++r) worst = std::max(worst, poincare_constant(reference, c, r, 2.0).c_p);
    return {0.9 * 2.0 * d, 2.0 * worst, 2.0};
}

void write_kernel_csv(const HeatKernelTable& table, const std::string& path) {
    std::unique_ptr<std::FILE, int (*)(std::FILE*)> f(std::fopen(path.c_str(), "w"), &std::fclose);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::fprintf(f.get(), "# kernel t=%.17g tol=%.17g\nsource,vertex,value\n", table.t, table.tol);
    for (std::size_t i = 0; i < table.sources.size(); ++i)
        for (std::size_t y = 0; y < table.num_vertices; ++y)
            std::fprintf(f.get(), "%d,%zu,%.17g\n", table.sources[i], y, table.q[i][y]);
}

namespace {
constexpr char kKernelMagic[8] = {'C', 'L', 'K', 'E', 'R', 'N', '0', '1'};
}

void write_kernel_binary(const HeatKernelTable& table, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path);
    auto put = [&](const auto& v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); };
    out.write(kKernelMagic, sizeof kKernelMagic);
    put(table.t);
    put(table.tol);
    put(table.truncation);
    put(static_cast<std::uint64_t>(table.num_vertices));
    put(static_cast<std::uint64_t>(table.sources.size()));
    for (Vertex s : table.sources) put(s);
    for (const auto& row : table.p) out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(double)));
    for (const auto& row : table.q) out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(double)));
}

HeatKernelTable read_kernel_binary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    char magic[sizeof kKernelMagic];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kKernelMagic, sizeof magic) != 0) throw std::runtime_error("not a kernel table: " + path);
    auto get = [&](auto& v) { in.read(reinterpret_cast<char*>(&v), sizeof v); };
    HeatKernelTable t;
    std::uint64_t n = 0, k = 0;
    get(t.t);
    get(t.tol);
    get(t.truncation);
    get(n);
    get(k);
    t.num_vertices = n;
    t.sources.resize(k);
    for (auto& s : t.sources) get(s);
    t.p.assign(k, std::vector<double>(n));
    t.q.assign(k, std::vector<double>(n));
    for (auto& row : t.p) in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(n * sizeof(double)));
    for (auto& row : t.q) in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw std::runtime_error("truncated kernel table: " + path);
    return t;
}

}  // namespace clab
