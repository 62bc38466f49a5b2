#include "clab/epidemic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "clab/parallel.hpp"
#include "clab/walk.hpp"

namespace clab {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Event {
    double t;
    std::uint32_t particle;
    std::uint8_t kind;  // 0 jump, 1 recovery
};

struct Later {
    bool operator()(const Event& a, const Event& b) const noexcept {
        if (a.t != b.t) return a.t > b.t;
        if (a.particle != b.particle) return a.particle > b.particle;
        return a.kind > b.kind;
    }
};

// Calendar queue: fixed-width time buckets, the current one kept as a heap.
class Calendar {
public:
    Calendar(double horizon, double rate) : horizon_(horizon) {
        width_ = std::clamp(4096.0 / std::max(rate, 1.0), 1e-9, std::max(horizon, 1e-9));
        buckets_.resize(static_cast<std::size_t>(horizon / width_) + 1);
    }

    void push(const Event& e) {
        if (e.t > horizon_) return;
        const std::size_t b = std::min(static_cast<std::size_t>(e.t / width_), buckets_.size() - 1);
        if (active_ && b <= cur_) {
            heap_.push_back(e);
            std::push_heap(heap_.begin(), heap_.end(), Later{});
        } else {
            buckets_[b].push_back(e);
        }
    }

    bool pop(Event& e) {
        while (heap_.empty()) {
            if (!active_) active_ = true;
            else ++cur_;
            if (cur_ >= buckets_.size()) return false;
            heap_.swap(buckets_[cur_]);
            std::vector<Event>().swap(buckets_[cur_]);
            std::make_heap(heap_.begin(), heap_.end(), Later{});
        }
        std::pop_heap(heap_.begin(), heap_.end(), Later{});
        e = heap_.back();
        heap_.pop_back();
        return true;
    }

private:
    double horizon_;
    double width_ = 1.0;
    std::vector<std::vector<Event>> buckets_;
    std::vector<Event> heap_;
    std::size_t cur_ = 0;
    bool active_ = false;
};

std::vector<double> default_grid(double horizon) {
    std::vector<double> g;
    for (double t = 0.0; t <= horizon; t += 1.0) g.push_back(t);
    return g;
}

}  // namespace

EpidemicSetup seeded_cloud(const ConductanceField& field, double lambda0, std::uint64_t seed) {
    if (lambda0 < 0.0) throw std::invalid_argument("lambda0 must be nonnegative");
    const Vertex origin = field.box().center();
    if (field.vertex_weight(origin) <= 0.0) throw std::invalid_argument("origin is isolated; resample the field");
    EpidemicSetup s;
    s.starts.push_back(origin);
    s.infected.push_back(1);
    if (lambda0 > 0.0) {
        const ParticleCloud cloud = sample_cloud(field, lambda0, derive_seed(seed, "cloud", 0));
        for (const auto& p : cloud.particles) {
            s.starts.push_back(p.vertex);
            s.infected.push_back(0);
        }
    }
    return s;
}

EpidemicRun simulate_epidemic(const ConductanceField& field, const EpidemicSetup& setup,
                              const EpidemicOptions& opts) {
    const std::size_t M = setup.starts.size();
    const std::size_t N = field.num_vertices();
    if (setup.infected.size() != M) throw std::invalid_argument("epidemic: status and start sizes differ");
    if (!(opts.horizon >= 0.0)) throw std::invalid_argument("epidemic: horizon must be nonnegative");
    if (!(opts.gamma >= 0.0)) throw std::invalid_argument("epidemic: gamma must be nonnegative");
    if (M > std::numeric_limits<std::int32_t>::max()) throw std::invalid_argument("epidemic: too many particles");
    for (Vertex v : setup.starts)
        if (v < 0 || static_cast<std::size_t>(v) >= N) throw std::invalid_argument("epidemic: start outside the box");
    const std::vector<double> samples = opts.sample_times.empty() ? default_grid(opts.horizon) : opts.sample_times;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i] < 0.0 || samples[i] > opts.horizon) throw std::invalid_argument("epidemic: sample time outside [0, horizon]");
        if (i > 0 && samples[i] <= samples[i - 1]) throw std::invalid_argument("epidemic: sample times must increase");
    }

    const LatticeBox& box = field.box();
    const int d = box.dim();
    const JumpTable jumps(field);
    const Coords origin = box.coords(box.center());

    EpidemicRun run;
    std::vector<Vertex>& pos = run.final_vertex;
    std::vector<char>& inf = run.final_infected;
    pos = setup.starts;
    inf.assign(M, 0);
    run.first_infection.assign(M, kInf);
    std::vector<Rng> jump_rng, rec_rng;
    jump_rng.reserve(M);
    for (std::size_t j = 0; j < M; ++j) jump_rng.emplace_back(derive_seed(opts.seed, j));
    if (opts.gamma > 0.0) {
        rec_rng.reserve(M);
        for (std::size_t j = 0; j < M; ++j) rec_rng.emplace_back(derive_seed(opts.seed, "recovery", j));
    }
    std::vector<std::int32_t> unwrapped(M * static_cast<std::size_t>(d));
    for (std::size_t j = 0; j < M; ++j) {
        const Coords c = box.coords(pos[j]);
        for (int a = 0; a < d; ++a) unwrapped[j * static_cast<std::size_t>(d) + static_cast<std::size_t>(a)] = c[static_cast<std::size_t>(a)];
    }

    // Susceptibles per site as intrusive lists; infected only as counts.
    std::vector<std::int32_t> head(N, -1), next(M, -1), prev(M, -1);
    std::vector<std::uint32_t> n_inf(N, 0);
    std::vector<std::uint32_t> infected_list;
    std::vector<std::int32_t> list_pos(M, -1);
    auto link = [&](std::uint32_t j, Vertex v) {
        const auto h = head[static_cast<std::size_t>(v)];
        next[j] = h;
        prev[j] = -1;
        if (h >= 0) prev[static_cast<std::size_t>(h)] = static_cast<std::int32_t>(j);
        head[static_cast<std::size_t>(v)] = static_cast<std::int32_t>(j);
    };
    auto unlink = [&](std::uint32_t j, Vertex v) {
        if (prev[j] >= 0) next[static_cast<std::size_t>(prev[j])] = next[j];
        else head[static_cast<std::size_t>(v)] = next[j];
        if (next[j] >= 0) prev[static_cast<std::size_t>(next[j])] = prev[j];
        next[j] = prev[j] = -1;
    };
    auto trace = [&](double t, std::uint32_t j, EventKind k, Vertex v) {
        if (opts.record_trace) run.trace.push_back({t, j, k, v});
    };

    Calendar cal(opts.horizon, static_cast<double>(M) * (1.0 + opts.gamma));
    auto mark_infected = [&](std::uint32_t j, double t) {
        inf[j] = 1;
        ++n_inf[static_cast<std::size_t>(pos[j])];
        list_pos[j] = static_cast<std::int32_t>(infected_list.size());
        infected_list.push_back(j);
        run.first_infection[j] = std::min(run.first_infection[j], t);
        if (opts.gamma > 0.0) cal.push({t + rec_rng[j].exponential(opts.gamma), j, 1});
    };
    auto infect_site = [&](Vertex v, double t) {
        std::int32_t j = head[static_cast<std::size_t>(v)];
        head[static_cast<std::size_t>(v)] = -1;
        while (j >= 0) {
            const auto nx = next[static_cast<std::size_t>(j)];
            next[static_cast<std::size_t>(j)] = prev[static_cast<std::size_t>(j)] = -1;
            mark_infected(static_cast<std::uint32_t>(j), t);
            trace(t, static_cast<std::uint32_t>(j), EventKind::infection, v);
            j = nx;
        }
    };

    for (std::uint32_t j = 0; j < M; ++j) {
        if (setup.infected[j]) mark_infected(j, 0.0);
        else link(j, pos[j]);
    }
    for (std::uint32_t j = 0; j < M; ++j)
        if (inf[j] && head[static_cast<std::size_t>(pos[j])] >= 0) infect_site(pos[j], 0.0);
    for (std::uint32_t j = 0; j < M; ++j)
        if (!jumps.isolated(pos[j])) cal.push({jump_rng[j].exp1(), j, 0});
    if (infected_list.empty()) run.series.extinction_time = 0.0;

    std::size_t next_sample = 0;
    auto record = [&](double s) {
        long best = 0;
        for (std::uint32_t j : infected_list) {
            long l1 = 0;
            for (int a = 0; a < d; ++a)
                l1 += std::labs(static_cast<long>(unwrapped[j * static_cast<std::size_t>(d) + static_cast<std::size_t>(a)]) -
                                origin[static_cast<std::size_t>(a)]);
            best = std::max(best, l1);
        }
        run.series.times.push_back(s);
        run.series.front.push_back(static_cast<double>(best));
        run.series.infected.push_back(infected_list.size());
    };

    bool stopped = opts.stop_on_extinction && run.series.extinction_time.has_value();
    Event e{};
    while (!stopped && cal.pop(e)) {
        while (next_sample < samples.size() && samples[next_sample] < e.t) record(samples[next_sample++]);
        ++run.events;
        const std::uint32_t j = e.particle;
        const Vertex u = pos[j];
        if (e.kind == 0) {
            const int slot = jumps.sample_slot(u, jump_rng[j]);
            const Vertex v = field.neighbors(u)[static_cast<std::size_t>(slot)];
            const std::size_t k = j * static_cast<std::size_t>(d) + static_cast<std::size_t>(slot / 2);
            unwrapped[k] += slot % 2 == 0 ? 1 : -1;
            pos[j] = v;
            trace(e.t, j, EventKind::jump, v);
            if (inf[j]) {
                --n_inf[static_cast<std::size_t>(u)];
                ++n_inf[static_cast<std::size_t>(v)];
                if (head[static_cast<std::size_t>(v)] >= 0) infect_site(v, e.t);
            } else {
                unlink(j, u);
                if (n_inf[static_cast<std::size_t>(v)] > 0) {
                    mark_infected(j, e.t);
                    trace(e.t, j, EventKind::infection, v);
                } else {
                    link(j, v);
                }
            }
            cal.push({e.t + jump_rng[j].exp1(), j, 0});
        } else {
            if (n_inf[static_cast<std::size_t>(u)] > 1) {
                trace(e.t, j, EventKind::reinfection, u);
                cal.push({e.t + rec_rng[j].exponential(opts.gamma), j, 1});
                continue;
            }
            trace(e.t, j, EventKind::recovery, u);
            inf[j] = 0;
            --n_inf[static_cast<std::size_t>(u)];
            const auto at = static_cast<std::size_t>(list_pos[j]);
            infected_list[at] = infected_list.back();
            list_pos[infected_list[at]] = static_cast<std::int32_t>(at);
            infected_list.pop_back();
            list_pos[j] = -1;
            link(j, u);
            if (infected_list.empty()) {
                run.series.extinction_time = e.t;
                stopped = opts.stop_on_extinction;
            }
        }
    }
    while (next_sample < samples.size()) record(samples[next_sample++]);
    return run;
}

FrontSeries run_si(const ConductanceField& field, double lambda0, double horizon,
                   std::span<const double> sample_times, std::uint64_t seed) {
    EpidemicOptions o;
    o.horizon = horizon;
    o.sample_times.assign(sample_times.begin(), sample_times.end());
    o.seed = seed;
    return simulate_epidemic(field, seeded_cloud(field, lambda0, seed), o).series;
}

FrontSeries run_sis(const ConductanceField& field, double lambda0, double gamma, double horizon,
                    std::span<const double> sample_times, std::uint64_t seed) {
    EpidemicOptions o;
    o.horizon = horizon;
    o.gamma = gamma;
    o.sample_times.assign(sample_times.begin(), sample_times.end());
    o.seed = seed;
    return simulate_epidemic(field, seeded_cloud(field, lambda0, seed), o).series;
}

FrontSpeed front_speed(const FrontSeries& series, double burn_in_fraction) {
    FrontSpeed fs;
    if (series.extinction_time || series.times.empty()) return fs;
    const double cut = series.times.front() + burn_in_fraction * (series.times.back() - series.times.front());
    std::vector<double> x, y;
    for (std::size_t i = 0; i < series.times.size(); ++i) {
        if (series.times[i] < cut) continue;
        x.push_back(series.times[i]);
        y.push_back(series.front[i]);
    }
    if (x.size() < 2) return fs;
    fs.fit = stats::linear_fit(x, y);
    fs.slope = fs.fit.slope;
    fs.defined = true;
    fs.positive = fs.slope > 1e-12;
    return fs;
}

std::vector<SurvivalPoint> sis_survival(const ConductanceField& field, double lambda0,
                                        std::span<const double> gammas, double horizon, std::uint64_t reps,
                                        std::uint64_t seed) {
    std::vector<SurvivalPoint> out;
    for (double g : gammas) {
        std::vector<char> alive(reps, 0);
        parallel_for(reps, [&](std::size_t r) {
            EpidemicOptions o;
            o.horizon = horizon;
            o.gamma = g;
            o.seed = derive_seed(seed, r);
            o.sample_times = {horizon};
            alive[r] = !simulate_epidemic(field, seeded_cloud(field, lambda0, o.seed), o).series.extinction_time;
        });
        SurvivalPoint p;
        p.gamma = g;
        p.reps = reps;
        for (char a : alive) p.survived += a ? 1 : 0;
        p.frequency = reps ? static_cast<double>(p.survived) / static_cast<double>(reps) : 0.0;
        p.ci = stats::wilson(p.survived, reps);
        out.push_back(p);
    }
    return out;
}

double CellEventSpec::time_cell() const {
    return beta_time > 0.0 ? beta_time : beta_ratio * static_cast<double>(ell) * static_cast<double>(ell);
}

double CellEventSpec::collision_time() const {
    return T > 0.0 ? T : std::pow(static_cast<double>(ell), 5.0 / 3.0);
}

std::vector<std::string> validate_cell_spec(const LatticeBox& box, const CellEventSpec& s) {
    std::vector<std::string> v;
    if (s.ell < 1) v.push_back("ell must be at least 1");
    if (s.eta < 1) v.push_back("eta must be at least 1");
    if (!(s.time_cell() > 0.0)) v.push_back("beta_time must be positive");
    if (!(s.collision_time() > 0.0)) v.push_back("T must be positive");
    if (!(s.collision_time() < s.time_cell())) v.push_back("T must be smaller than beta_time");
    if (s.ell >= 1 && s.eta >= 1 && (2 * s.eta + 1) * s.ell > box.side()) v.push_back("super cube exceeds the box");
    if (s.lambda0 < 0.0) v.push_back("lambda0 must be nonnegative");
    if (s.w < 0.0) v.push_back("w must be nonnegative");
    if (s.gamma < 0.0) v.push_back("gamma must be nonnegative");
    if (!(s.c1 > 0.0)) v.push_back("c1 must be positive");
    return v;
}

CellGeometry cell_geometry(const LatticeBox& box, const CellEventSpec& s) {
    const auto problems = validate_cell_spec(box, s);
    if (!problems.empty()) throw std::invalid_argument("cell: " + problems.front());
    const int d = box.dim();
    CellGeometry g;
    g.start = box.center();
    g.center = centered_cube(box, s.ell);
    g.super.side = (2 * s.eta + 1) * s.ell;
    g.inner.side = (2 * s.eta - 1) * s.ell;
    for (int a = 0; a < d; ++a) {
        const auto i = static_cast<std::size_t>(a);
        g.super.lower[i] = g.center.lower[i] - s.eta * s.ell;
        g.inner.lower[i] = g.center.lower[i] - (s.eta - 1) * s.ell;
    }
    const int per = 2 * s.eta + 1;
    std::size_t count = 1;
    for (int a = 0; a < d; ++a) count *= static_cast<std::size_t>(per);
    for (std::size_t k = 0; k < count; ++k) {
        Cube c;
        c.side = s.ell;
        c.lower = g.super.lower;
        std::size_t rest = k;
        for (int a = 0; a < d; ++a) {
            c.lower[static_cast<std::size_t>(a)] += s.ell * static_cast<int>(rest % static_cast<std::size_t>(per));
            rest /= static_cast<std::size_t>(per);
        }
        g.cubes.push_back(c);
    }
    return g;
}

namespace {

// Membership with offsets from the lower corner wrapped into [0, box side).
bool in_cube(const LatticeBox& box, const Cube& c, Vertex v) {
    const Coords x = box.coords(v);
    for (int a = 0; a < box.dim(); ++a) {
        const auto i = static_cast<std::size_t>(a);
        int off = (x[i] - c.lower[i]) % box.side();
        if (off < 0) off += box.side();
        if (off >= c.side) return false;
    }
    return true;
}

// Index of the ell-cube of the super cube containing v, or -1.
int sub_cube(const LatticeBox& box, const Cube& super, int ell, Vertex v) {
    const Coords x = box.coords(v);
    const int per = super.side / ell;
    int idx = 0, stride = 1;
    for (int a = 0; a < box.dim(); ++a) {
        const auto i = static_cast<std::size_t>(a);
        int off = (x[i] - super.lower[i]) % box.side();
        if (off < 0) off += box.side();
        if (off >= super.side) return -1;
        idx += stride * (off / ell);
        stride *= per;
    }
    return idx;
}

// Occupation intervals of the tagged path, indexed by vertex.
class Visits {
public:
    explicit Visits(std::size_t n) : head_(n, -1) {}

    void build(const Trajectory& tr, double until) {
        double a = 0.0;
        Vertex v = tr.start;
        for (std::size_t i = 0; i <= tr.times.size(); ++i) {
            const double b = i < tr.times.size() ? std::min(tr.times[i], until) : until;
            if (b > a) add(v, a, b);
            if (i == tr.times.size() || tr.times[i] >= until) break;
            a = tr.times[i];
            v = tr.vertices[i];
        }
    }

    bool overlaps(Vertex v, double a, double b) const {
        for (std::int32_t k = head_[static_cast<std::size_t>(v)]; k >= 0; k = items_[static_cast<std::size_t>(k)].next) {
            const auto& it = items_[static_cast<std::size_t>(k)];
            if (std::max(a, it.a) < std::min(b, it.b)) return true;
        }
        return false;
    }

private:
    struct Item {
        double a, b;
        std::int32_t next;
    };
    void add(Vertex v, double a, double b) {
        items_.push_back({a, b, head_[static_cast<std::size_t>(v)]});
        head_[static_cast<std::size_t>(v)] = static_cast<std::int32_t>(items_.size() - 1);
    }
    std::vector<std::int32_t> head_;
    std::vector<Item> items_;
};

struct Probe {
    bool collided = false;
    bool left = false;
    Vertex at_T = kNoVertex;
    Vertex at_end = kNoVertex;
};

struct ProbeConfig {
    double T = 0.0;
    double end = 0.0;
    int half = -1;               // displacement bound, -1 for none
    const Cube* stay = nullptr;  // region whose exit before T is recorded
    bool stop_if_missed = true;  // stop at T when no collision happened
};

// Runs one background walk; returns nothing when the displacement bound is
// breached (the caller retries).
std::optional<Probe> probe_once(const JumpTable& jumps, const LatticeBox& box, Vertex x, const Visits& tagged,
                                const ProbeConfig& cfg, Rng& rng) {
    Probe p;
    Coords disp{};
    double t = 0.0;
    Vertex v = x;
    const bool frozen = jumps.isolated(x);
    while (true) {
        const double t_next = frozen ? kInf : t + rng.exp1();
        if (t < cfg.T && !p.collided) {
            const double b = std::min(t_next, cfg.T);
            if (tagged.overlaps(v, t, b)) p.collided = true;
        }
        if (t_next >= cfg.T && p.at_T == kNoVertex) {
            p.at_T = v;
            if (cfg.stop_if_missed && !p.collided && cfg.half < 0) return p;
        }
        if (t_next >= cfg.end) {
            p.at_end = v;
            return p;
        }
        const int slot = jumps.sample_slot(v, rng);
        v = jumps.field().neighbors(v)[static_cast<std::size_t>(slot)];
        if (cfg.half >= 0) {
            int& k = disp[static_cast<std::size_t>(slot / 2)];
            k += slot % 2 == 0 ? 1 : -1;
            if (k > cfg.half || k < -cfg.half) return std::nullopt;
        }
        if (cfg.stay && t_next < cfg.T && !in_cube(box, *cfg.stay, v)) p.left = true;
        t = t_next;
    }
}

Probe probe(const JumpTable& jumps, const LatticeBox& box, Vertex x, const Visits& tagged, const ProbeConfig& cfg,
            Rng& rng, double floor) {
    const auto limit = static_cast<std::uint64_t>(std::ceil(1.0 / floor));
    for (std::uint64_t miss = 0; miss < limit; ++miss)
        if (auto p = probe_once(jumps, box, x, tagged, cfg, rng)) return *p;
    throw RejectionFloorError("background walk rejected " + std::to_string(limit) + " times in a row");
}

// Tagged path on [0, horizon], kept inside `region` (absolute) during [0, T]
// and/or within displacement `half` over the whole horizon.
Trajectory tagged_path(const JumpTable& jumps, const LatticeBox& box, Vertex start, double horizon, double T,
                       const Cube* region, int half, Rng& rng, double floor, std::uint64_t& attempts) {
    const auto limit = static_cast<std::uint64_t>(std::ceil(1.0 / floor));
    for (std::uint64_t miss = 0; miss < limit; ++miss) {
        ++attempts;
        Trajectory tr;
        tr.start = start;
        tr.horizon = horizon;
        tr.isolated_start = jumps.isolated(start);
        if (tr.isolated_start) return tr;
        Coords disp{};
        Vertex v = start;
        double t = rng.exp1();
        bool ok = true;
        while (t < horizon) {
            const int slot = jumps.sample_slot(v, rng);
            v = jumps.field().neighbors(v)[static_cast<std::size_t>(slot)];
            if (half >= 0) {
                int& k = disp[static_cast<std::size_t>(slot / 2)];
                k += slot % 2 == 0 ? 1 : -1;
                if (k > half || k < -half) { ok = false; break; }
            }
            if (region && t < T && !in_cube(box, *region, v)) { ok = false; break; }
            tr.times.push_back(t);
            tr.vertices.push_back(v);
            t += rng.exp1();
        }
        if (ok) return tr;
    }
    throw RejectionFloorError("tagged walk rejected " + std::to_string(limit) + " times in a row");
}

// Poisson(intensity mu_x) particles on the super cube minus the tagged start.
std::vector<Vertex> background(const ConductanceField& field, const CellGeometry& g, double intensity,
                               std::uint64_t seed) {
    std::vector<Vertex> region;
    for (Vertex v : cube_vertices(field.box(), g.super))
        if (v != g.start) region.push_back(v);
    std::vector<Vertex> out;
    if (intensity <= 0.0) return out;
    for (const auto& p : sample_cloud(field, intensity, region, derive_seed(seed, "cloud", 0)).particles)
        out.push_back(p.vertex);
    return out;
}

// Particles first meeting the tagged path at checkpoint j, sampled through
// reversibility: the cloud Poisson(intensity mu) is stationary and reversible,
// so the particles at v = tagged_at[j] at time t_j are Poisson(intensity mu_v)
// and their pasts are walks from v run for t_j. A candidate counts when its
// past starts in the super cube away from the tagged start, misses the earlier
// checkpoints, and neither past nor future leaves the super cube before T.
// `candidates` accumulates the number of particles examined.
std::uint32_t reverse_checkpoint_count(const JumpTable& jumps, const CellGeometry& g, double intensity,
                                       const std::vector<double>& checkpoints, const std::vector<Vertex>& tagged_at,
                                       std::size_t j, double T, std::uint64_t seed, std::uint32_t& candidates) {
    const LatticeBox& box = jumps.field().box();
    const Vertex v = tagged_at[j];
    const double tj = checkpoints[j];
    Rng nrng(derive_seed(seed, "count", 0));
    const std::uint64_t n = jumps.isolated(v) ? 0 : nrng.poisson(intensity * jumps.field().vertex_weight(v));
    candidates += static_cast<std::uint32_t>(n);
    std::uint32_t count = 0;
    for (std::uint64_t k = 0; k < n; ++k) {
        Rng rng(derive_seed(seed, k));
        // Past: backward time u corresponds to forward time tj - u. Earlier
        // checkpoints are visited in decreasing order.
        Vertex x = v;
        double u = 0.0;
        std::size_t next = j;  // checkpoints[next - 1] is the next earlier one
        bool ok = true;
        while (ok) {
            const double u_next = u + rng.exp1();
            while (next > 0 && tj - checkpoints[next - 1] < u_next) {
                if (x == tagged_at[next - 1]) ok = false;
                --next;
            }
            if (!ok || u_next >= tj) break;
            x = jumps.sample_next(x, rng);
            if (!in_cube(box, g.super, x)) ok = false;
            u = u_next;
        }
        if (!ok || x == g.start) continue;
        // Future from tj to T.
        x = v;
        double t = tj;
        while (true) {
            t += rng.exp1();
            if (t >= T) break;
            x = jumps.sample_next(x, rng);
            if (!in_cube(box, g.super, x)) {
                ok = false;
                break;
            }
        }
        if (ok) ++count;
    }
    return count;
}

}  // namespace

CensusResult collision_census(const ConductanceField& field, const CellEventSpec& spec, std::uint64_t seed,
                              CensusMode mode, double acceptance_floor) {
    const LatticeBox& box = field.box();
    const CellGeometry g = cell_geometry(box, spec);
    const double T = spec.collision_time();
    const JumpTable jumps(field);
    CensusResult res;
    Rng trng(derive_seed(seed, "tagged", 0));
    const Trajectory tagged = tagged_path(jumps, box, g.start, T, T, &g.inner, -1, trng, acceptance_floor,
                                          res.tagged_attempts);
    if (mode == CensusMode::checkpoint) {
        const double W = std::pow(static_cast<double>(spec.ell), 4.0 / 3.0);
        std::vector<double> checkpoints;
        std::vector<Vertex> tagged_at;
        for (int j = 1; j * W <= T * (1.0 + 1e-12); ++j) {
            checkpoints.push_back(std::min(j * W, T));
            tagged_at.push_back(tagged.position_at(checkpoints.back()));
        }
        const double intensity = spec.lambda0 / 2.0;
        for (std::size_t j = 0; j < checkpoints.size(); ++j)
            res.count += reverse_checkpoint_count(jumps, g, intensity, checkpoints, tagged_at, j, T,
                                                  derive_seed(seed, "checkpoint", j), res.particles);
        return res;
    }
    Visits visits(field.num_vertices());
    visits.build(tagged, T);
    const auto starts = background(field, g, spec.lambda0 / 2.0, seed);
    res.particles = static_cast<std::uint32_t>(starts.size());
    ProbeConfig cfg;
    cfg.T = T;
    cfg.end = T;
    cfg.stay = &g.super;
    for (std::size_t j = 0; j < starts.size(); ++j) {
        Rng rng(derive_seed(seed, j));
        const Probe p = probe(jumps, box, starts[j], visits, cfg, rng, acceptance_floor);
        if (p.collided && !p.left) ++res.count;
    }
    return res;
}

CollisionScaling collision_scaling(const ConductanceField& field, const CellEventSpec& base,
                                   std::span<const int> ells, std::uint64_t reps, std::uint64_t seed,
                                   CensusMode mode) {
    CollisionScaling out;
    std::vector<double> lx, ly;
    for (int ell : ells) {
        CellEventSpec s = base;
        s.ell = ell;
        s.T = 0.0;
        s.beta_time = 0.0;
        std::vector<double> counts(reps);
        const std::uint64_t ell_seed = derive_seed(seed, "census", static_cast<std::uint64_t>(ell));
        parallel_for(reps, [&](std::size_t r) {
            counts[r] = collision_census(field, s, derive_seed(ell_seed, r), mode).count;
        });
        const double m = stats::mean(counts);
        out.ells.push_back(ell);
        out.mean.push_back(m);
        out.stderr_mean.push_back(reps > 1 ? std::sqrt(stats::variance(counts) / static_cast<double>(reps)) : 0.0);
        if (m > 0.0) {
            lx.push_back(std::log(static_cast<double>(ell)));
            ly.push_back(std::log(m));
        }
    }
    if (lx.size() >= 2) out.loglog = stats::linear_fit(lx, ly);
    return out;
}

std::string to_string(SpreadPlacement p) {
    return p == SpreadPlacement::uniform ? "uniform" : "worst-corner";
}

SpreadPlacement spread_placement_from_string(const std::string& s) {
    if (s == "uniform") return SpreadPlacement::uniform;
    if (s == "worst-corner") return SpreadPlacement::worst_corner;
    throw std::invalid_argument("unknown spread placement '" + s + "'");
}

SpreadReport spread_scan(const ConductanceField& field, const CellEventSpec& spec, std::span<const std::uint64_t> Ns,
                         std::span<const int> z, SpreadPlacement placement, std::uint64_t reps, std::uint64_t seed) {
    const LatticeBox& box = field.box();
    const int d = box.dim();
    const CellGeometry g = cell_geometry(box, spec);
    if (static_cast<int>(z.size()) != d) throw std::invalid_argument("spread: z needs one entry per axis");
    Cube target;
    target.side = spec.ell;
    for (int a = 0; a < d; ++a) {
        const auto i = static_cast<std::size_t>(a);
        if (std::abs(z[i]) > spec.eta) throw std::invalid_argument("spread: z outside {-eta..eta}");
        target.lower[i] = g.center.lower[i] + z[i] * spec.ell;
    }
    // Corner of the super cube farthest from the target centre, per axis.
    Coords corner = g.super.lower;
    for (int a = 0; a < d; ++a) {
        const auto i = static_cast<std::size_t>(a);
        const double mid = target.lower[i] + (spec.ell - 1) / 2.0;
        const int lo = g.super.lower[i], hi = g.super.lower[i] + g.super.side - 1;
        corner[i] = std::fabs(hi - mid) > std::fabs(lo - mid) ? hi : lo;
    }
    const Vertex corner_v = box.vertex(corner);
    const auto super_vertices = cube_vertices(box, g.super);
    const double duration = spec.time_cell() - spec.collision_time();
    std::uint64_t n_max = 0;
    for (auto n : Ns) n_max = std::max(n_max, n);
    const JumpTable jumps(field);

    // First particle index that lands in the target, per replica.
    std::vector<std::uint64_t> first_hit(reps, std::numeric_limits<std::uint64_t>::max());
    parallel_for(reps, [&](std::size_t r) {
        const std::uint64_t rs = derive_seed(seed, r);
        for (std::uint64_t j = 0; j < n_max; ++j) {
            Rng rng(derive_seed(rs, j));
            const Vertex x = placement == SpreadPlacement::uniform ? super_vertices[rng.below(super_vertices.size())]
                                                                   : corner_v;
            if (in_cube(box, target, walk_endpoint(jumps, x, duration, rng))) {
                first_hit[r] = j;
                return;
            }
        }
    });
    SpreadReport rep;
    std::vector<double> x, y;
    for (auto n : Ns) {
        SpreadPoint p;
        p.N = n;
        p.reps = reps;
        for (auto h : first_hit) p.hits += h < n ? 1 : 0;
        p.probability = reps ? static_cast<double>(p.hits) / static_cast<double>(reps) : 0.0;
        p.ci = stats::wilson(p.hits, reps);
        rep.points.push_back(p);
        if (p.hits < reps) {
            x.push_back(static_cast<double>(n));
            y.push_back(std::log(1.0 - p.probability));
        }
    }
    if (x.size() >= 2) {
        rep.log_failure = stats::linear_fit(x, y);
        rep.c_p = -rep.log_failure.slope;
    }
    return rep;
}

SpreadPoint spread_probability(const ConductanceField& field, const CellEventSpec& spec, std::uint64_t N,
                               std::span<const int> z, SpreadPlacement placement, std::uint64_t reps,
                               std::uint64_t seed) {
    const std::uint64_t ns[] = {N};
    return spread_scan(field, spec, ns, z, placement, reps, seed).points.front();
}

CellOutcome sample_cell_event(const ConductanceField& field, const CellEventSpec& spec, double intensity,
                              std::uint64_t seed, double acceptance_floor) {
    const LatticeBox& box = field.box();
    const CellGeometry g = cell_geometry(box, spec);
    const double T = spec.collision_time();
    const double beta = spec.time_cell();
    const int half = spec.w > 0.0 ? confinement_radius(static_cast<int>(std::lround(spec.w * spec.ell))) : -1;
    const JumpTable jumps(field);
    CellOutcome out;

    Rng trng(derive_seed(seed, "tagged", 0));
    std::uint64_t attempts = 0;
    const Trajectory tagged = tagged_path(jumps, box, g.start, half >= 0 ? beta : T, T, nullptr, half, trng,
                                          acceptance_floor, attempts);
    out.f1 = true;
    for (std::size_t i = 0; i < tagged.times.size() && tagged.times[i] < T; ++i)
        if (!in_cube(box, g.inner, tagged.vertices[i])) out.f1 = false;
    bool tagged_alive = true;
    if (spec.gamma > 0.0) tagged_alive = Rng(derive_seed(seed, "recovery", 0)).exponential(spec.gamma) >= beta;

    Visits visits(field.num_vertices());
    visits.build(tagged, T);
    const auto starts = background(field, g, intensity, seed);
    out.particles = static_cast<std::uint32_t>(starts.size());
    ProbeConfig cfg;
    cfg.T = T;
    cfg.end = beta;
    cfg.half = half;
    std::vector<char> covered(g.cubes.size(), 0), covered_f3(g.cubes.size(), 0);
    for (std::size_t j = 0; j < starts.size(); ++j) {
        Rng rng(derive_seed(seed, j));
        const Probe p = probe(jumps, box, starts[j], visits, cfg, rng, acceptance_floor);
        if (!p.collided) continue;
        if (spec.gamma > 0.0 && Rng(derive_seed(seed, "recovery", j + 1)).exponential(spec.gamma) < beta) continue;
        ++out.collided;
        const bool inside = in_cube(box, g.super, p.at_T);
        if (inside) ++out.collided_inside;
        const int c = sub_cube(box, g.super, spec.ell, p.at_end);
        if (c >= 0) {
            covered[static_cast<std::size_t>(c)] = 1;
            if (inside) covered_f3[static_cast<std::size_t>(c)] = 1;
        }
    }
    const bool all = std::all_of(covered.begin(), covered.end(), [](char c) { return c != 0; });
    out.e_st = tagged_alive && all;
    out.f2 = static_cast<double>(out.collided_inside) >= spec.c1 * spec.lambda0 * std::cbrt(static_cast<double>(spec.ell)) / 2.0;
    out.f3 = std::all_of(covered_f3.begin(), covered_f3.end(), [](char c) { return c != 0; });
    return out;
}

namespace {

CellEventReport cell_report(const ConductanceField& field, const CellEventSpec& spec, double intensity,
                            std::uint64_t reps, std::uint64_t seed) {
    (void)cell_geometry(field.box(), spec);
    CellEventReport rep;
    rep.spec = spec;
    rep.intensity = intensity;
    rep.reps = reps;
    rep.outcomes.resize(reps);
    parallel_for(reps, [&](std::size_t r) {
        rep.outcomes[r] = sample_cell_event(field, spec, intensity, derive_seed(seed, r));
    });
    std::uint64_t f1 = 0, f2 = 0, f3 = 0;
    for (const auto& o : rep.outcomes) {
        rep.successes += o.e_st ? 1 : 0;
        f1 += o.f1 ? 1 : 0;
        f2 += o.f2 ? 1 : 0;
        f3 += o.f3 ? 1 : 0;
    }
    const double n = reps ? static_cast<double>(reps) : 1.0;
    rep.probability = static_cast<double>(rep.successes) / n;
    rep.ci = stats::wilson(rep.successes, reps);
    rep.f1 = static_cast<double>(f1) / n;
    rep.f2 = static_cast<double>(f2) / n;
    rep.f3 = static_cast<double>(f3) / n;
    return rep;
}

}  // namespace

CellEventReport estimate_cell_event(const ConductanceField& field, const CellEventSpec& spec, std::uint64_t reps,
                                    std::uint64_t seed) {
    return cell_report(field, spec, spec.lambda0 / 2.0, reps, seed);
}

CellEventReport estimate_nu(const ConductanceField& field, const CellEventSpec& spec, double eps,
                            std::uint64_t reps, std::uint64_t seed) {
    if (!(eps >= 0.0 && eps <= 1.0)) throw std::invalid_argument("nu: eps must lie in [0, 1]");
    return cell_report(field, spec, (1.0 - eps) * spec.lambda0, reps, seed);
}

ChernoffCheck chernoff_poisson(double lambda, double eps) {
    if (!(lambda > 0.0)) throw std::invalid_argument("chernoff: lambda must be positive");
    if (!(eps > 0.0 && eps < 1.0)) throw std::invalid_argument("chernoff: eps must lie in (0, 1)");
    ChernoffCheck c;
    c.lambda = lambda;
    c.eps = eps;
    c.lower_bound = std::exp(-lambda * eps * eps / 2.0);
    c.upper_bound = std::exp(-lambda * eps * eps / 4.0);
    // P < x  <=>  P <= ceil(x) - 1;  P > x  <=>  P >= floor(x) + 1.
    const auto below = static_cast<std::int64_t>(std::ceil((1.0 - eps) * lambda)) - 1;
    const auto above = static_cast<std::int64_t>(std::floor((1.0 + eps) * lambda));
    c.lower_exact = stats::poisson_cdf(below, lambda);
    c.upper_exact = 1.0 - stats::poisson_cdf(above, lambda);
    c.holds = c.lower_exact < c.lower_bound && c.upper_exact < c.upper_bound;
    return c;
}

}  // namespace clab
