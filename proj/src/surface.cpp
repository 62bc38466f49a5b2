#include "clab/surface.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <stdexcept>

#include "clab/parallel.hpp"
#include "clab/rng.hpp"

namespace clab {

BaseHeight to_base_height(std::span<const int> i, int tau, int height_dim) {
    const int d = static_cast<int>(i.size());
    if (height_dim < 1 || height_dim > d) throw std::invalid_argument("height_dim must lie in 1..d");
    BaseHeight out;
    for (int k = 0; k < d; ++k) {
        if (k == height_dim - 1) out.h = i[static_cast<std::size_t>(k)];
        else out.b.push_back(i[static_cast<std::size_t>(k)]);
    }
    out.b.push_back(tau);
    return out;
}

SpaceTimeCell from_base_height(std::span<const int> b, int h, int height_dim) {
    const int d = static_cast<int>(b.size());
    if (d < 1 || height_dim < 1 || height_dim > d) throw std::invalid_argument("height_dim must lie in 1..d");
    SpaceTimeCell out;
    std::size_t k = 0;
    for (int a = 0; a < d; ++a) {
        if (a == height_dim - 1) out.i.push_back(h);
        else out.i.push_back(b[k++]);
    }
    out.tau = b.back();
    return out;
}

std::size_t CellGrid::base_count() const {
    std::size_t n = 1;
    for (int e : base) n *= static_cast<std::size_t>(e);
    return n;
}

std::vector<int> CellGrid::base_coords(std::size_t b) const {
    std::vector<int> c(base.size());
    for (std::size_t k = 0; k < base.size(); ++k) {
        c[k] = static_cast<int>(b % static_cast<std::size_t>(base[k]));
        b /= static_cast<std::size_t>(base[k]);
    }
    return c;
}

std::size_t CellGrid::base_index(std::span<const int> coords) const {
    if (coords.size() != base.size()) throw std::invalid_argument("base coordinate rank mismatch");
    std::size_t idx = 0, stride = 1;
    for (std::size_t k = 0; k < base.size(); ++k) {
        if (coords[k] < 0 || coords[k] >= base[k]) throw std::out_of_range("base coordinate outside the grid");
        idx += stride * static_cast<std::size_t>(coords[k]);
        stride *= static_cast<std::size_t>(base[k]);
    }
    return idx;
}

std::vector<std::size_t> CellGrid::base_neighbors(std::size_t b) const {
    std::vector<std::size_t> out;
    std::size_t stride = 1;
    std::size_t rest = b;
    for (std::size_t k = 0; k < base.size(); ++k) {
        const auto e = static_cast<std::size_t>(base[k]);
        const std::size_t c = rest % e;
        rest /= e;
        if (c > 0) out.push_back(b - stride);
        if (c + 1 < e) out.push_back(b + stride);
        stride *= e;
    }
    return out;
}

CellField simulate_iid_field(double p_bad, const CellGrid& grid, std::uint64_t seed) {
    if (!(p_bad >= 0.0 && p_bad <= 1.0)) throw std::invalid_argument("p_bad must lie in [0, 1]");
    if (grid.base.empty() || grid.h_min > 0 || grid.h_max < 0) throw std::invalid_argument("grid must contain height 0");
    CellField f;
    f.grid = grid;
    f.source = CellSource::iid;
    f.p_bad = p_bad;
    f.good.resize(grid.size());
    Rng rng(seed);
    for (auto& g : f.good) g = rng.bernoulli(p_bad) ? 0 : 1;
    return f;
}

namespace {

// Flags seen from the requested side: height k >= 0 maps to +k or -k.
struct SideView {
    const CellField& cells;
    Side side;
    int max_level() const { return side == Side::plus ? cells.grid.h_max : -cells.grid.h_min; }
    int height(int level) const { return side == Side::plus ? level : -level; }
    bool good(std::size_t b, int level) const { return cells.is_good(b, height(level)); }
};

void check_grid(const CellField& cells) {
    if (cells.good.size() != cells.grid.size()) throw std::invalid_argument("cell flags do not match the grid");
    if (cells.grid.h_min > 0 || cells.grid.h_max < 0) throw std::invalid_argument("grid must contain height 0");
}

}  // namespace

std::optional<HeightFunction> min_lipschitz_surface(const CellField& cells, Side side) {
    check_grid(cells);
    const SideView view{cells, side};
    const CellGrid& g = cells.grid;
    const std::size_t nb = g.base_count();
    const int top = view.max_level();
    std::vector<int> level(nb, 0);
    std::vector<std::vector<std::size_t>> nbrs(nb);
    for (std::size_t b = 0; b < nb; ++b) nbrs[b] = g.base_neighbors(b);
    std::deque<std::size_t> work;
    std::vector<char> queued(nb, 1);
    for (std::size_t b = 0; b < nb; ++b) work.push_back(b);
    while (!work.empty()) {
        const std::size_t b = work.front();
        work.pop_front();
        queued[b] = 0;
        while (!view.good(b, level[b])) {
            if (++level[b] > top) return std::nullopt;
        }
        for (std::size_t n : nbrs[b]) {
            if (level[n] < level[b] - 1) {
                level[n] = level[b] - 1;
                if (!queued[n]) {
                    queued[n] = 1;
                    work.push_back(n);
                }
            }
        }
    }
    HeightFunction f(nb);
    for (std::size_t b = 0; b < nb; ++b) f[b] = view.height(level[b]);
    return f;
}

std::optional<HeightFunction> brute_force_min_surface(const CellField& cells, Side side) {
    check_grid(cells);
    const CellGrid& g = cells.grid;
    for (int e : g.base)
        if (e > 4) throw std::invalid_argument("brute force needs a base of at most 4 x 4");
    if (g.base_count() > 16) throw std::invalid_argument("brute force needs a base of at most 4 x 4");
    const SideView view{cells, side};
    const int top = view.max_level();
    if (top + 1 > 4) throw std::invalid_argument("brute force needs at most four heights per side");
    const std::size_t nb = g.base_count();
    std::vector<std::vector<std::size_t>> earlier(nb);
    for (std::size_t b = 0; b < nb; ++b)
        for (std::size_t n : g.base_neighbors(b))
            if (n < b) earlier[b].push_back(n);

    std::vector<int> cur(nb, 0), best(nb, std::numeric_limits<int>::max());
    bool found = false;
    // Depth-first over every admissible assignment; keep the pointwise minimum.
    auto dfs = [&](auto&& self, std::size_t b) -> void {
        if (b == nb) {
            found = true;
            for (std::size_t k = 0; k < nb; ++k) best[k] = std::min(best[k], cur[k]);
            return;
        }
        for (int v = 0; v <= top; ++v) {
            if (!view.good(b, v)) continue;
            bool ok = true;
            for (std::size_t n : earlier[b])
                if (std::abs(cur[n] - v) > 1) ok = false;
            if (!ok) continue;
            cur[b] = v;
            self(self, b + 1);
        }
    };
    dfs(dfs, 0);
    if (!found) return std::nullopt;
    HeightFunction f(nb);
    for (std::size_t b = 0; b < nb; ++b) f[b] = view.height(best[b]);
    return f;
}

bool is_admissible(const CellField& cells, Side side, const HeightFunction& f) {
    const CellGrid& g = cells.grid;
    if (f.size() != g.base_count()) return false;
    for (std::size_t b = 0; b < f.size(); ++b) {
        if (side == Side::plus ? f[b] < 0 : f[b] > 0) return false;
        if (f[b] < g.h_min || f[b] > g.h_max || !cells.is_good(b, f[b])) return false;
        for (std::size_t n : g.base_neighbors(b))
            if (std::abs(f[n] - f[b]) > 1) return false;
    }
    return true;
}

bool is_pointwise_minimal(const CellField& cells, Side side, const HeightFunction& f) {
    if (!is_admissible(cells, side, f)) return false;
    HeightFunction g = f;
    for (std::size_t b = 0; b < f.size(); ++b) {
        if (f[b] == 0) continue;
        g[b] = side == Side::plus ? f[b] - 1 : f[b] + 1;
        if (is_admissible(cells, side, g)) return false;
        g[b] = f[b];
    }
    return true;
}

TwoSidedSurface two_sided_surface(const CellField& cells) {
    return {min_lipschitz_surface(cells, Side::plus), min_lipschitz_surface(cells, Side::minus)};
}

std::vector<char> surface_mask(const CellGrid& grid, const TwoSidedSurface& s) {
    std::vector<char> mask(grid.size(), 0);
    for (const auto* f : {&s.plus, &s.minus}) {
        if (!f->has_value()) continue;
        for (std::size_t b = 0; b < (*f)->size(); ++b) mask[grid.index(b, (**f)[b])] = 1;
    }
    return mask;
}

bool surrounds(const CellGrid& grid, std::span<const char> mask, std::span<const int> b, int h, int D) {
    if (mask.size() != grid.size()) throw std::invalid_argument("mask does not match the grid");
    if (h < grid.h_min || h > grid.h_max) throw std::out_of_range("height outside the grid");
    const std::size_t b0 = grid.base_index(b);
    const std::size_t start = grid.index(b0, h);
    if (mask[start]) return true;
    const std::size_t nb = grid.base_count();
    std::vector<std::vector<int>> coords(nb);
    for (std::size_t k = 0; k < nb; ++k) coords[k] = grid.base_coords(k);
    auto dist = [&](std::size_t bb, int hh) {
        int s = std::abs(hh - h);
        for (std::size_t k = 0; k < coords[bb].size(); ++k) s += std::abs(coords[bb][k] - b[k]);
        return s;
    };
    std::vector<char> seen(grid.size(), 0);
    std::deque<std::pair<std::size_t, int>> queue{{b0, h}};
    seen[start] = 1;
    while (!queue.empty()) {
        const auto [bb, hh] = queue.front();
        queue.pop_front();
        if (dist(bb, hh) > D) return false;
        auto visit = [&](std::size_t nbb, int nh) {
            if (nh < grid.h_min || nh > grid.h_max) return;
            const std::size_t idx = grid.index(nbb, nh);
            if (seen[idx] || mask[idx]) return;
            seen[idx] = 1;
            queue.emplace_back(nbb, nh);
        };
        visit(bb, hh + 1);
        visit(bb, hh - 1);
        for (std::size_t n : grid.base_neighbors(bb)) visit(n, hh);
    }
    return true;
}

CellField classify_cells_from_sim(const ConductanceField& field, const CellEventSpec& spec, const CellGrid& grid,
                                  std::uint64_t reps_per_cell, std::uint64_t seed) {
    if (reps_per_cell == 0) throw std::invalid_argument("reps_per_cell must be positive");
    if (grid.h_min > 0 || grid.h_max < 0) throw std::invalid_argument("grid must contain height 0");
    const double budget = std::pow(8.0, static_cast<double>(grid.base.size() + 1));
    if (static_cast<double>(grid.size()) > budget) throw std::invalid_argument("cell grid exceeds the simulation budget");
    CellField f;
    f.grid = grid;
    f.source = CellSource::simulated;
    f.note = "adjacent super cells overlap, so neighbouring flags are dependent; these draws are independent";
    f.good.assign(grid.size(), 0);
    parallel_for(grid.size(), [&](std::size_t i) {
        const auto rep = estimate_cell_event(field, spec, reps_per_cell, derive_seed(seed, "cell", i));
        f.good[i] = 2 * rep.successes > reps_per_cell ? 1 : 0;
    });
    return f;
}

}  // namespace clab
