#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace clab {

using Vertex = std::int32_t;
inline constexpr Vertex kNoVertex = -1;
inline constexpr int kMaxDim = 6;

enum class Boundary { torus, hard_wall };

std::string to_string(Boundary b);
Boundary boundary_from_string(const std::string& s);

/// Integer coordinates; only the first `dim` entries are meaningful.
using Coords = std::array<int, kMaxDim>;

/// Finite box of Z^d with `side` vertices per axis.
class LatticeBox {
public:
    LatticeBox(int dim, int side, Boundary boundary);

    int dim() const noexcept { return dim_; }
    int side() const noexcept { return side_; }
    Boundary boundary() const noexcept { return boundary_; }
    std::size_t num_vertices() const noexcept { return num_vertices_; }

    Coords coords(Vertex v) const noexcept;
    /// Vertex at `c`; coordinates are wrapped on a torus and must be in range
    /// for a hard-wall box (kNoVertex otherwise).
    Vertex vertex(const Coords& c) const noexcept;
    bool contains(const Coords& c) const noexcept;

    /// Neighbour across slot `slot` in [0, 2d): slot 2a is +e_a, 2a+1 is -e_a.
    Vertex neighbor(Vertex v, int slot) const noexcept;

    /// Minimal-image coordinate difference b - a (torus) or plain difference.
    Coords delta(Vertex a, Vertex b) const noexcept;

    /// Vertex with every coordinate equal to side/2. Plays the role of the
    /// lattice origin: cubes centred here never wrap.
    Vertex center() const noexcept;

    /// Largest graph distance between two vertices of the full box.
    int diameter() const noexcept;

    friend bool operator==(const LatticeBox&, const LatticeBox&) = default;

private:
    int dim_;
    int side_;
    Boundary boundary_;
    std::size_t num_vertices_;
    std::array<std::size_t, kMaxDim> stride_{};
};

enum class LawKind { constant, uniform_elliptic, dilute };

std::string to_string(LawKind k);
LawKind law_from_string(const std::string& s);

/// Conductance law. `value` is the constant weight, `c_m` the ellipticity
/// constant and `p0` the probability of a zero weight.
struct Law {
    LawKind kind = LawKind::constant;
    double value = 1.0;
    double c_m = 1.0;
    double p0 = 0.0;

    static Law constant(double c) { return {LawKind::constant, c, 1.0, 0.0}; }
    static Law uniform_elliptic(double c_m) { return {LawKind::uniform_elliptic, 1.0, c_m, 0.0}; }
    static Law dilute(double p0, double c_m) { return {LawKind::dilute, 1.0, c_m, p0}; }
};

/// Bond-percolation thresholds used to guard dilute laws.
inline constexpr double kBondPcD2 = 0.5;
inline constexpr double kBondPcD3 = 0.2488;

enum class GuardVerdict { ok, warn, reject };
GuardVerdict percolation_guard(int dim, double p0);

/// Symmetric edge weights on a LatticeBox. Immutable after construction.
///
/// Edge (v, v + e_a) is stored at index a * N + v ("axis-major"). On a
/// hard-wall box the slots leaving the box are kept at zero and are not
/// edges.
class ConductanceField {
public:
    ConductanceField(LatticeBox box, Law law, std::uint64_t seed, std::vector<double> edge_weights);

    const LatticeBox& box() const noexcept { return box_; }
    const Law& law() const noexcept { return law_; }
    std::uint64_t seed() const noexcept { return seed_; }
    std::size_t num_vertices() const noexcept { return box_.num_vertices(); }
    int degree_slots() const noexcept { return 2 * box_.dim(); }

    std::span<const double> edge_weights() const noexcept { return edges_; }
    bool edge_exists(Vertex v, int axis) const noexcept;

    /// mu_{v, v+e_axis}.
    double edge_weight(Vertex v, int axis) const noexcept {
        return edges_[static_cast<std::size_t>(axis) * num_vertices() + static_cast<std::size_t>(v)];
    }
    /// mu_{u,v} for lattice neighbours (0 otherwise).
    double weight(Vertex u, Vertex v) const noexcept;

    /// mu_x = sum of incident weights.
    double vertex_weight(Vertex v) const noexcept { return mu_[static_cast<std::size_t>(v)]; }
    std::span<const double> vertex_weights() const noexcept { return mu_; }

    /// Neighbour table per slot (kNoVertex when absent) and matching weights.
    std::span<const Vertex> neighbors(Vertex v) const noexcept {
        return {nbr_.data() + static_cast<std::size_t>(v) * degree_slots(),
                static_cast<std::size_t>(degree_slots())};
    }
    std::span<const double> neighbor_weights(Vertex v) const noexcept {
        return {nbr_w_.data() + static_cast<std::size_t>(v) * degree_slots(),
                static_cast<std::size_t>(degree_slots())};
    }

    /// True when every shift of the torus is an automorphism of the field.
    bool translation_invariant() const noexcept;

    double total_weight() const noexcept;
    double zero_fraction() const noexcept;

private:
    LatticeBox box_;
    Law law_;
    std::uint64_t seed_;
    std::vector<double> edges_;
    std::vector<double> mu_;
    std::vector<Vertex> nbr_;
    std::vector<double> nbr_w_;
};

/// I.i.d. conductances; identical seed gives a bit-identical field.
ConductanceField sample_conductances(const LatticeBox& box, const Law& law, std::uint64_t seed);

double vertex_weight(const ConductanceField& field, Vertex x);

/// Vertices within graph distance r of x along positive-weight edges, with
/// their distances, in BFS order.
struct Ball {
    std::vector<Vertex> vertices;
    std::vector<int> distance;
};
Ball ball(const ConductanceField& field, Vertex x, int r);

double ball_volume(const ConductanceField& field, Vertex x, int r);

struct VolumeBoundReport {
    double c_u = 0.0;  ///< smallest C_U making mu(B(x,r)) <= C_U r^d on the sample
    Vertex worst_center = kNoVertex;
    int worst_radius = 0;
    bool holds = false;  ///< c_u <= requested bound
};

/// Scans r in [1, r_max] at every centre in `centers` (all vertices when empty).
VolumeBoundReport check_volume_bound(const ConductanceField& field, double c_u, int r_max,
                                     std::span<const Vertex> centers = {});

struct ClusterMap {
    std::vector<std::int32_t> label;
    std::int32_t largest_label = -1;
    std::size_t largest_size = 0;
    std::size_t num_components = 0;
    bool origin_in_largest = false;
    bool origin_isolated = false;
};

/// Connected components of the positive-weight subgraph (union-find). The
/// origin is LatticeBox::center().
ClusterMap largest_cluster(const ConductanceField& field);

}  // namespace clab
