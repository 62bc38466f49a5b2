#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "clab/epidemic.hpp"
#include "clab/lattice.hpp"

namespace clab {

/// Space-time cell (i, tau) relabelled with spatial axis height_dim
/// (1-based) as height: b is the other spatial coordinates followed by tau.
struct BaseHeight {
    std::vector<int> b;
    int h = 0;
};
BaseHeight to_base_height(std::span<const int> i, int tau, int height_dim);

struct SpaceTimeCell {
    std::vector<int> i;
    int tau = 0;
};
SpaceTimeCell from_base_height(std::span<const int> b, int h, int height_dim);

/// Finite index box of base-height cells: base coordinates in [0, base[k])
/// with the first axis fastest, heights in [h_min, h_max].
struct CellGrid {
    std::vector<int> base;
    int h_min = 0;
    int h_max = 0;

    std::size_t base_count() const;
    std::size_t height_count() const { return static_cast<std::size_t>(h_max - h_min + 1); }
    std::size_t size() const { return base_count() * height_count(); }
    std::size_t index(std::size_t b, int h) const { return b * height_count() + static_cast<std::size_t>(h - h_min); }
    std::vector<int> base_coords(std::size_t b) const;
    std::size_t base_index(std::span<const int> coords) const;
    /// Base indices at l1 distance one.
    std::vector<std::size_t> base_neighbors(std::size_t b) const;
};

enum class CellSource { iid, simulated };

struct CellField {
    CellGrid grid;
    std::vector<char> good;  ///< indexed by CellGrid::index
    CellSource source = CellSource::iid;
    double p_bad = 0.0;
    std::string note;

    bool is_good(std::size_t b, int h) const { return good[grid.index(b, h)] != 0; }
};

/// I.i.d. Bernoulli(p_bad) bad cells from one stream, in index order.
CellField simulate_iid_field(double p_bad, const CellGrid& grid, std::uint64_t seed);

enum class Side { plus, minus };

/// Height per base index.
using HeightFunction = std::vector<int>;

/// Pointwise-minimal |F| Lipschitz function on the given side with every
/// (b, F(b)) good, by raising from 0 until nothing changes; nothing when the
/// height range runs out. The minus side mirrors heights.
std::optional<HeightFunction> min_lipschitz_surface(const CellField& cells, Side side);

/// Exhaustive oracle for base boxes of at most 4 x 4 and at most four
/// heights per side. Throws std::invalid_argument on larger instances.
std::optional<HeightFunction> brute_force_min_surface(const CellField& cells, Side side);

/// Lipschitz, sign and all-good conditions.
bool is_admissible(const CellField& cells, Side side, const HeightFunction& f);
/// Lowering any single value towards 0 breaks admissibility.
bool is_pointwise_minimal(const CellField& cells, Side side, const HeightFunction& f);

struct TwoSidedSurface {
    std::optional<HeightFunction> plus;
    std::optional<HeightFunction> minus;
    bool exists() const { return plus.has_value() && minus.has_value(); }
};
TwoSidedSurface two_sided_surface(const CellField& cells);

/// Cells of the surface as a mask over the grid.
std::vector<char> surface_mask(const CellGrid& grid, const TwoSidedSurface& s);

/// True when every l1 path from (b, h) that reaches l1 distance > D meets the
/// mask. Paths are confined to the grid; a start inside the mask is
/// surrounded trivially.
bool surrounds(const CellGrid& grid, std::span<const char> mask, std::span<const int> b, int h, int D);

/// Good/bad flags from independent cell-event draws, one per cell (or the
/// majority of reps_per_cell). Refuses grids above 8^(d+1) cells.
CellField classify_cells_from_sim(const ConductanceField& field, const CellEventSpec& spec, const CellGrid& grid,
                                  std::uint64_t reps_per_cell, std::uint64_t seed);

}  // namespace clab
