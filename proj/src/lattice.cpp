#include "clab/lattice.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "clab/rng.hpp"

namespace clab {

std::string to_string(Boundary b) { return b == Boundary::torus ? "torus" : "hard-wall"; }

Boundary boundary_from_string(const std::string& s) {
    if (s == "torus") return Boundary::torus;
    if (s == "hard-wall" || s == "hard_wall" || s == "hardwall") return Boundary::hard_wall;
    throw std::invalid_argument("unknown boundary '" + s + "'");
}

std::string to_string(LawKind k) {
    switch (k) {
        case LawKind::constant: return "constant";
        case LawKind::uniform_elliptic: return "uniform-elliptic";
        case LawKind::dilute: return "dilute";
    }
    return "?";
}

LawKind law_from_string(const std::string& s) {
    if (s == "constant") return LawKind::constant;
    if (s == "uniform-elliptic" || s == "uniform_elliptic" || s == "elliptic") return LawKind::uniform_elliptic;
    if (s == "dilute") return LawKind::dilute;
    throw std::invalid_argument("unknown law '" + s + "'");
}

LatticeBox::LatticeBox(int dim, int side, Boundary boundary)
    : dim_(dim), side_(side), boundary_(boundary), num_vertices_(1) {
    if (dim < 1 || dim > kMaxDim) throw std::invalid_argument("lattice dimension out of range");
    if (side < 2) throw std::invalid_argument("lattice side must be at least 2");
    for (int a = 0; a < dim; ++a) {
        stride_[static_cast<std::size_t>(a)] = num_vertices_;
        num_vertices_ *= static_cast<std::size_t>(side);
        if (num_vertices_ > static_cast<std::size_t>(std::numeric_limits<Vertex>::max()))
            throw std::invalid_argument("lattice too large");
    }
}

Coords LatticeBox::coords(Vertex v) const noexcept {
    Coords c{};
    auto u = static_cast<std::size_t>(v);
    for (int a = 0; a < dim_; ++a) {
        c[static_cast<std::size_t>(a)] = static_cast<int>(u % static_cast<std::size_t>(side_));
        u /= static_cast<std::size_t>(side_);
    }
    return c;
}

bool LatticeBox::contains(const Coords& c) const noexcept {
    for (int a = 0; a < dim_; ++a) {
        const int x = c[static_cast<std::size_t>(a)];
        if (x < 0 || x >= side_) return false;
    }
    return true;
}

Vertex LatticeBox::vertex(const Coords& c) const noexcept {
    std::size_t v = 0;
    for (int a = 0; a < dim_; ++a) {
        int x = c[static_cast<std::size_t>(a)];
        if (boundary_ == Boundary::torus) {
            x %= side_;
            if (x < 0) x += side_;
        } else if (x < 0 || x >= side_) {
            return kNoVertex;
        }
        v += static_cast<std::size_t>(x) * stride_[static_cast<std::size_t>(a)];
    }
    return static_cast<Vertex>(v);
}

Vertex LatticeBox::neighbor(Vertex v, int slot) const noexcept {
    const int axis = slot / 2;
    const int step = (slot % 2 == 0) ? 1 : -1;
    const auto s = stride_[static_cast<std::size_t>(axis)];
    const auto uv = static_cast<std::size_t>(v);
    const int x = static_cast<int>((uv / s) % static_cast<std::size_t>(side_));
    int y = x + step;
    if (y < 0 || y >= side_) {
        if (boundary_ == Boundary::hard_wall) return kNoVertex;
        y = (y + side_) % side_;
    }
    return static_cast<Vertex>(uv + (static_cast<std::ptrdiff_t>(y) - x) * static_cast<std::ptrdiff_t>(s));
}

Coords LatticeBox::delta(Vertex a, Vertex b) const noexcept {
    const Coords ca = coords(a);
    const Coords cb = coords(b);
    Coords d{};
    for (int i = 0; i < dim_; ++i) {
        auto k = static_cast<std::size_t>(i);
        int x = cb[k] - ca[k];
        if (boundary_ == Boundary::torus) {
            if (x > side_ / 2) x -= side_;
            else if (x < -((side_ - 1) / 2)) x += side_;
        }
        d[k] = x;
    }
    return d;
}

Vertex LatticeBox::center() const noexcept {
    Coords c{};
    for (int a = 0; a < dim_; ++a) c[static_cast<std::size_t>(a)] = side_ / 2;
    return vertex(c);
}

int LatticeBox::diameter() const noexcept {
    return boundary_ == Boundary::torus ? dim_ * (side_ / 2) : dim_ * (side_ - 1);
}

GuardVerdict percolation_guard(int dim, double p0) {
    if (p0 < 0.0 || p0 > 1.0) return GuardVerdict::reject;
    if (dim <= 2) return p0 >= kBondPcD2 ? GuardVerdict::reject : GuardVerdict::ok;
    return p0 >= kBondPcD3 ? GuardVerdict::warn : GuardVerdict::ok;
}

ConductanceField::ConductanceField(LatticeBox box, Law law, std::uint64_t seed,
                                   std::vector<double> edge_weights)
    : box_(box), law_(law), seed_(seed), edges_(std::move(edge_weights)) {
    const std::size_t n = box_.num_vertices();
    const int d = box_.dim();
    const int slots = 2 * d;
    if (edges_.size() != n * static_cast<std::size_t>(d))
        throw std::invalid_argument("edge weight array has wrong length");
    for (std::size_t a = 0; a < static_cast<std::size_t>(d); ++a) {
        for (std::size_t v = 0; v < n; ++v) {
            double& w = edges_[a * n + v];
            if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("edge weights must be finite and nonnegative");
            if (box_.neighbor(static_cast<Vertex>(v), static_cast<int>(2 * a)) == kNoVertex) w = 0.0;
        }
    }
    mu_.assign(n, 0.0);
    nbr_.assign(n * static_cast<std::size_t>(slots), kNoVertex);
    nbr_w_.assign(n * static_cast<std::size_t>(slots), 0.0);
    for (std::size_t v = 0; v < n; ++v) {
        const auto vv = static_cast<Vertex>(v);
        for (int s = 0; s < slots; ++s) {
            const Vertex u = box_.neighbor(vv, s);
            const std::size_t k = v * static_cast<std::size_t>(slots) + static_cast<std::size_t>(s);
            nbr_[k] = u;
            if (u == kNoVertex) continue;
            const int axis = s / 2;
            const Vertex lo = (s % 2 == 0) ? vv : u;
            nbr_w_[k] = edge_weight(lo, axis);
            mu_[v] += nbr_w_[k];
        }
    }
}

bool ConductanceField::edge_exists(Vertex v, int axis) const noexcept {
    return box_.neighbor(v, 2 * axis) != kNoVertex;
}

double ConductanceField::weight(Vertex u, Vertex v) const noexcept {
    const auto ns = neighbors(u);
    const auto ws = neighbor_weights(u);
    double w = 0.0;
    // On a side-2 torus both slots of an axis reach the same neighbour.
    for (std::size_t s = 0; s < ns.size(); ++s)
        if (ns[s] == v) w += ws[s];
    return w;
}

bool ConductanceField::translation_invariant() const noexcept {
    if (box_.boundary() != Boundary::torus) return false;
    const std::size_t n = num_vertices();
    for (int a = 0; a < box_.dim(); ++a) {
        const double w0 = edges_[static_cast<std::size_t>(a) * n];
        for (std::size_t v = 1; v < n; ++v)
            if (edges_[static_cast<std::size_t>(a) * n + v] != w0) return false;
    }
    return true;
}

double ConductanceField::total_weight() const noexcept {
    return std::accumulate(mu_.begin(), mu_.end(), 0.0);
}

double ConductanceField::zero_fraction() const noexcept {
    std::size_t edges = 0, zeros = 0;
    const std::size_t n = num_vertices();
    for (int a = 0; a < box_.dim(); ++a) {
        for (std::size_t v = 0; v < n; ++v) {
            if (!edge_exists(static_cast<Vertex>(v), a)) continue;
            ++edges;
            if (edges_[static_cast<std::size_t>(a) * n + v] == 0.0) ++zeros;
        }
    }
    return edges == 0 ? 0.0 : static_cast<double>(zeros) / static_cast<double>(edges);
}

ConductanceField sample_conductances(const LatticeBox& box, const Law& law, std::uint64_t seed) {
    switch (law.kind) {
        case LawKind::constant:
            if (!(law.value > 0.0)) throw std::invalid_argument("constant weight must be positive");
            break;
        case LawKind::dilute:
            if (percolation_guard(box.dim(), law.p0) == GuardVerdict::reject)
                throw std::invalid_argument("dilute p0 is at or above the bond percolation threshold");
            [[fallthrough]];
        case LawKind::uniform_elliptic:
            if (!(law.c_m >= 1.0)) throw std::invalid_argument("ellipticity constant must be >= 1");
            break;
    }
    const std::size_t n = box.num_vertices();
    const auto d = static_cast<std::size_t>(box.dim());
    std::vector<double> w(n * d, 0.0);
    Rng rng(seed);
    const double lo = 1.0 / law.c_m;
    const double hi = law.c_m;
    for (std::size_t a = 0; a < d; ++a) {
        for (std::size_t v = 0; v < n; ++v) {
            if (box.neighbor(static_cast<Vertex>(v), static_cast<int>(2 * a)) == kNoVertex) continue;
            double x = law.value;
            if (law.kind != LawKind::constant) {
                if (law.kind == LawKind::dilute && rng.uniform() < law.p0) {
                    x = 0.0;
                } else {
                    x = lo + (hi - lo) * rng.uniform();
                }
            }
            w[a * n + v] = x;
        }
    }
    return ConductanceField(box, law, seed, std::move(w));
}

double vertex_weight(const ConductanceField& field, Vertex x) { return field.vertex_weight(x); }

Ball ball(const ConductanceField& field, Vertex x, int r) {
    Ball out;
    if (r < 0) return out;
    const std::size_t n = field.num_vertices();
    std::vector<int> dist(n, -1);
    std::deque<Vertex> queue{x};
    dist[static_cast<std::size_t>(x)] = 0;
    while (!queue.empty()) {
        const Vertex v = queue.front();
        queue.pop_front();
        const int dv = dist[static_cast<std::size_t>(v)];
        out.vertices.push_back(v);
        out.distance.push_back(dv);
        if (dv == r) continue;
        const auto ns = field.neighbors(v);
        const auto ws = field.neighbor_weights(v);
        for (std::size_t s = 0; s < ns.size(); ++s) {
            const Vertex u = ns[s];
            if (u == kNoVertex || ws[s] <= 0.0 || dist[static_cast<std::size_t>(u)] >= 0) continue;
            dist[static_cast<std::size_t>(u)] = dv + 1;
            queue.push_back(u);
        }
    }
    return out;
}

double ball_volume(const ConductanceField& field, Vertex x, int r) {
    double vol = 0.0;
    for (Vertex v : ball(field, x, r).vertices) vol += field.vertex_weight(v);
    return vol;
}

VolumeBoundReport check_volume_bound(const ConductanceField& field, double c_u, int r_max,
                                     std::span<const Vertex> centers) {
    VolumeBoundReport rep;
    std::vector<Vertex> all;
    if (centers.empty()) {
        all.resize(field.num_vertices());
        std::iota(all.begin(), all.end(), Vertex{0});
        centers = all;
    }
    const int d = field.box().dim();
    for (Vertex x : centers) {
        // One BFS to r_max gives every smaller radius by prefix sums.
        const Ball b = ball(field, x, r_max);
        std::vector<double> shell(static_cast<std::size_t>(r_max) + 1, 0.0);
        for (std::size_t i = 0; i < b.vertices.size(); ++i)
            shell[static_cast<std::size_t>(b.distance[i])] += field.vertex_weight(b.vertices[i]);
        double vol = shell[0];
        for (int r = 1; r <= r_max; ++r) {
            vol += shell[static_cast<std::size_t>(r)];
            const double ratio = vol / std::pow(static_cast<double>(r), d);
            if (ratio > rep.c_u) {
                rep.c_u = ratio;
                rep.worst_center = x;
                rep.worst_radius = r;
            }
        }
    }
    rep.holds = rep.c_u <= c_u;
    return rep;
}

namespace {

struct UnionFind {
    std::vector<std::int32_t> parent;
    std::vector<std::int32_t> size;
    explicit UnionFind(std::size_t n) : parent(n), size(n, 1) {
        std::iota(parent.begin(), parent.end(), 0);
    }
    std::int32_t find(std::int32_t x) {
        while (parent[static_cast<std::size_t>(x)] != x) {
            auto& p = parent[static_cast<std::size_t>(x)];
            p = parent[static_cast<std::size_t>(p)];
            x = p;
        }
        return x;
    }
    void unite(std::int32_t a, std::int32_t b) {
        a = find(a);
        b = find(b);
        if (a == b) return;
        if (size[static_cast<std::size_t>(a)] < size[static_cast<std::size_t>(b)]) std::swap(a, b);
        parent[static_cast<std::size_t>(b)] = a;
        size[static_cast<std::size_t>(a)] += size[static_cast<std::size_t>(b)];
    }
};

}  // namespace

ClusterMap largest_cluster(const ConductanceField& field) {
    const std::size_t n = field.num_vertices();
    const int d = field.box().dim();
    UnionFind uf(n);
    for (int a = 0; a < d; ++a) {
        for (std::size_t v = 0; v < n; ++v) {
            if (field.edge_weight(static_cast<Vertex>(v), a) <= 0.0) continue;
            const Vertex u = field.box().neighbor(static_cast<Vertex>(v), 2 * a);
            if (u != kNoVertex) uf.unite(static_cast<std::int32_t>(v), u);
        }
    }
    ClusterMap out;
    out.label.resize(n);
    std::vector<std::int32_t> compact(n, -1);
    std::vector<std::size_t> sizes;
    for (std::size_t v = 0; v < n; ++v) {
        const std::int32_t root = uf.find(static_cast<std::int32_t>(v));
        auto& c = compact[static_cast<std::size_t>(root)];
        if (c < 0) {
            c = static_cast<std::int32_t>(sizes.size());
            sizes.push_back(0);
        }
        out.label[v] = c;
        ++sizes[static_cast<std::size_t>(c)];
    }
    out.num_components = sizes.size();
    for (std::size_t c = 0; c < sizes.size(); ++c) {
        if (sizes[c] > out.largest_size) {
            out.largest_size = sizes[c];
            out.largest_label = static_cast<std::int32_t>(c);
        }
    }
    const Vertex o = field.box().center();
    out.origin_in_largest = out.label[static_cast<std::size_t>(o)] == out.largest_label;
    out.origin_isolated = field.vertex_weight(o) == 0.0;
    return out;
}

}  // namespace clab
