#include "clab/experiments.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <set>

#include <json.hpp>

#include "clab/epidemic.hpp"
#include "clab/io.hpp"
#include "clab/lattice.hpp"
#include "clab/mixing.hpp"
#include "clab/rng.hpp"
#include "clab/spectral.hpp"
#include "clab/surface.hpp"
#include "clab/walk.hpp"

#ifndef CLAB_VERSION
#define CLAB_VERSION "unknown"
#endif

namespace clab {

using nlohmann::json;

const std::vector<ExperimentInfo>& experiment_registry() {
    static const std::vector<ExperimentInfo> reg = {
        {"stationarity", "a Poisson(lambda0 mu) cloud of independent walks keeps its law over time"},
        {"exit-tail", "P[walk leaves B(x,r) before t] decays like c3 exp(-c4 r^2/t)"},
        {"gaussian-fit", "two-sided Gaussian bounds on q_t(x,y) once t >= |x-y|^(3/2)"},
        {"phi", "parabolic Harnack inequality and the dyadic oscillation decay it implies"},
        {"poincare", "weak Poincare inequality on balls, C_P from the generalized eigenproblem"},
        {"mixing", "after time Delta a dense cloud dominates a fresh Poisson cloud on the inner cube"},
        {"confined-mixing", "the same domination with walks confined to displacement cubes Q_rho"},
        {"si-speed", "the SI infection front grows at least linearly in time"},
        {"sis-survival", "SIS infection survives with positive probability for small recovery rates"},
        {"cell-event", "the space-time cell event holds with probability 1 - exp(-C lambda0 ell^(1/3))"},
        {"nu", "associated probability of the cell event under thinned, confined motion"},
        {"surface", "a two-sided Lipschitz surface of good cells exists and surrounds the origin"},
    };
    return reg;
}

std::string hex_digest(const std::string& bytes) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(bytes)));
    return buf;
}

namespace {

// JSON object reader that remembers which keys were read, so the rest can
// be reported as unknown.
class Params {
public:
    Params(const json& j, std::string prefix, std::vector<std::string>& violations)
        : j_(j), prefix_(std::move(prefix)), v_(violations) {}

    template <class T>
    T get(const std::string& key, T fallback) {
        used_.insert(key);
        if (!j_.contains(key)) return fallback;
        try {
            return j_.at(key).get<T>();
        } catch (const std::exception&) {
            v_.push_back(prefix_ + key + ": wrong type");
            return fallback;
        }
    }

    bool has(const std::string& key) const { return j_.contains(key); }

    const json* object(const std::string& key) {
        used_.insert(key);
        if (!j_.contains(key)) return nullptr;
        if (!j_.at(key).is_object()) {
            v_.push_back(prefix_ + key + ": expected an object");
            return nullptr;
        }
        return &j_.at(key);
    }

    void finish() {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!used_.count(it.key())) v_.push_back(prefix_ + it.key() + ": unknown key");
    }

    void require(bool ok, const std::string& msg) {
        if (!ok) v_.push_back(prefix_ + msg);
    }

private:
    const json& j_;
    std::string prefix_;
    std::vector<std::string>& v_;
    std::set<std::string> used_;
};

struct FieldSpec {
    int dim = 2;
    int side = 32;
    std::string boundary = "torus";
    std::string law = "constant";
    double value = 1.0;
    double c_m = 1.0;
    double p0 = 0.0;
    std::uint64_t seed = 1;
    std::string file;
};

FieldSpec field_defaults(int side) {
    FieldSpec f;
    f.side = side;
    return f;
}

FieldSpec parse_field(Params& top, FieldSpec def, std::vector<std::string>& v) {
    FieldSpec f = def;
    f.file = top.get<std::string>("field_file", "");
    const json* obj = top.object("field");
    if (!obj) return f;
    if (!f.file.empty()) v.push_back("field and field_file are exclusive");
    Params p(*obj, "field.", v);
    f.dim = p.get("dim", f.dim);
    f.side = p.get("side", f.side);
    f.boundary = p.get("boundary", f.boundary);
    f.law = p.get("law", f.law);
    f.value = p.get("value", f.value);
    f.c_m = p.get("c_m", f.c_m);
    f.p0 = p.get("p0", f.p0);
    f.seed = p.get("seed", f.seed);
    p.finish();
    p.require(f.dim >= 1 && f.dim <= kMaxDim, "dim must lie in 1..6");
    p.require(f.side >= 2, "side must be at least 2");
    try {
        (void)boundary_from_string(f.boundary);
        const LawKind k = law_from_string(f.law);
        if (k == LawKind::dilute && percolation_guard(f.dim, f.p0) == GuardVerdict::reject)
            v.push_back("field.p0: at or above the bond percolation threshold");
        if (k == LawKind::constant) p.require(f.value > 0.0, "value must be positive");
        else p.require(f.c_m >= 1.0, "c_m must be at least 1");
        p.require(f.p0 >= 0.0 && f.p0 < 1.0, "p0 must lie in [0, 1)");
    } catch (const std::exception& e) {
        v.push_back(std::string("field: ") + e.what());
    }
    return f;
}

struct Context {
    std::string name;
    std::string statement;
    std::filesystem::path out;
    std::uint64_t seed = 0;  // experiment seed derived from the master
    std::uint64_t reps = 0;
    RunManifest* manifest = nullptr;

    std::string header(const std::string& schema) const {
        return "# experiment=" + name + " schema=" + schema + " statement=\"" + statement + "\"\n";
    }
    void write(const std::string& file, const std::string& text) const {
        write_text((out / file).string(), text);
        manifest->outputs.emplace_back(file, hex_digest(text));
    }
    json json_head(const std::string& schema) const {
        return {{"experiment", name}, {"schema", schema}, {"statement", statement}};
    }
};

// Samples the field; resamples while the origin is outside the largest cluster.
ConductanceField build_field(const FieldSpec& f, Context& ctx) {
    if (!f.file.empty()) {
        const std::string ext = std::filesystem::path(f.file).extension().string();
        ConductanceField field = ext == ".json" ? read_field_json(f.file) : read_field_binary(f.file);
        ctx.manifest->field_seed = field.seed();
        return field;
    }
    const LatticeBox box(f.dim, f.side, boundary_from_string(f.boundary));
    Law law;
    law.kind = law_from_string(f.law);
    law.value = f.value;
    law.c_m = f.c_m;
    law.p0 = f.p0;
    if (law.kind == LawKind::constant) law.c_m = 1.0;
    for (std::uint64_t k = 0; k < 1000; ++k) {
        const std::uint64_t s = k == 0 ? f.seed : derive_seed(f.seed, "field-resample", k);
        ConductanceField field = sample_conductances(box, law, s);
        if (law.kind != LawKind::dilute || largest_cluster(field).origin_in_largest) {
            ctx.manifest->field_seed = s;
            return field;
        }
    }
    throw std::runtime_error("origin outside the largest cluster for 1000 field seeds");
}

std::string csv_row(std::initializer_list<std::string> cells) {
    std::string s;
    for (const auto& c : cells) {
        if (!s.empty()) s += ",";
        s += c;
    }
    return s + "\n";
}

std::string fd(double x) { return format_double(x); }
std::string fu(std::uint64_t x) { return std::to_string(x); }

using Runner = std::function<void(Context&)>;
using Parser = std::function<Runner(Params&, std::uint64_t reps_override, std::vector<std::string>&)>;

std::uint64_t reps_or(std::uint64_t over, std::uint64_t fallback) { return over ? over : fallback; }

CellEventSpec parse_cell(Params& p, CellEventSpec s) {
    s.ell = p.get("ell", s.ell);
    s.eta = p.get("eta", s.eta);
    s.beta_time = p.get("beta_time", s.beta_time);
    s.beta_ratio = p.get("beta_ratio", s.beta_ratio);
    s.T = p.get("T", s.T);
    s.lambda0 = p.get("lambda0", s.lambda0);
    s.w = p.get("w", s.w);
    s.gamma = p.get("gamma", s.gamma);
    s.c1 = p.get("c1", s.c1);
    return s;
}

LatticeBox box_of(const FieldSpec& f) {
    return LatticeBox(std::max(1, std::min(f.dim, kMaxDim)), std::max(2, f.side),
                      f.boundary == "hard-wall" ? Boundary::hard_wall : Boundary::torus);
}

Runner parse_stationarity(Params& p, std::uint64_t reps, std::vector<std::string>& v) {
    FieldSpec fs = parse_field(p, field_defaults(32), v);
    const double lambda0 = p.get("lambda0", 2.0);
    const auto times = p.get("times", std::vector<double>{10.0, 50.0});
    const int rho = p.get("rho", 0);
    p.require(lambda0 > 0.0, "lambda0 must be positive");
    p.require(!times.empty(), "times must not be empty");
    for (double t : times) p.require(t >= 0.0, "times must be nonnegative");
    (void)reps;
    return [=](Context& ctx) {
        const ConductanceField field = build_field(fs, ctx);
        const ParticleCloud cloud = sample_cloud(field, lambda0, derive_seed(ctx.seed, "cloud", 0));
        std::string csv = ctx.header("stationarity-v1") + "t,particles,statistic,dof,p_value\n";
        for (std::size_t i = 0; i < times.size(); ++i) {
            const std::uint64_t s = derive_seed(ctx.seed, i);
            ctx.manifest->replica_seeds.push_back(s);
            const auto ev = evolve_cloud(field, cloud, times[i], rho > 0 ? std::optional<int>(rho) : std::nullopt, s);
            const auto g = stationarity_test(field, ev.cloud, lambda0);
            csv += csv_row({fd(times[i]), fu(ev.cloud.size()), fd(g.statistic), fd(g.dof), fd(g.p_value)});
        }
        ctx.write("stationarity.csv", csv);
    };
}

Runner parse_exit_tail(Params& p, std::uint64_t reps, std::vector<std::string>& v) {
    FieldSpec fs = parse_field(p, field_defaults(128), v);
    const auto rs = p.get("r", std::vector<int>{10, 15, 20, 25, 30});
    const auto ts = p.get("t", std::vector<double>{5.0, 10.0, 20.0, 30.0, 50.0});
    const std::uint64_t n = reps_or(reps, p.get<std::uint64_t>("n", 10000));
    p.require(!rs.empty() && !ts.empty(), "r and t grids must not be empty");
    for (int r : rs) p.require(r >= 1, "r must be positive");
    for (double t : ts) p.require(t > 0.0, "t must be positive");
    return [=](Context& ctx) {
        const ConductanceField field = build_field(fs, ctx);
        const Vertex x = field.box().center();
        std::vector<ExitTailPoint> pts;
        std::string csv = ctx.header("exit-tail-v1") + "r,t,n,exits,frequency,ci_lo,ci_hi\n";
        std::uint64_t k = 0;
        for (int r : rs)
            for (double t : ts) {
                const std::uint64_t s = derive_seed(ctx.seed, k++);
                ctx.manifest->replica_seeds.push_back(s);
                const auto pt = empirical_exit_tail(field, x, r, t, n, s);
                pts.push_back(pt);
                csv += csv_row({fu(static_cast<std::uint64_t>(r)), fd(t), fu(pt.n), fu(pt.exits), fd(pt.frequency),
                                fd(pt.ci.lo), fd(pt.ci.hi)});
            }
        ctx.write("exit_tail.csv", csv);
        json j = ctx.json_head("exit-tail-fit-v1");
        try {
            const auto fit = fit_exit_tail(pts);
            j["c3"] = fit.c3;
            j["c4"] = fit.c4;
            j["slope"] = fit.fit.slope;
            j["r2"] = fit.fit.r2;
            j["used"] = fit.used;
        } catch (const std::invalid_argument& e) {
            j["error"] = e.what();
        }
        ctx.write("exit_tail_fit.json", j.dump(2) + "\n");
    };
}

Runner parse_gaussian(Params& p, std::uint64_t, std::vector<std::string>& v) {
    FieldSpec fs = parse_field(p, field_defaults(64), v);
    const auto ts = p.get("t_grid", std::vector<double>{8, 16, 32, 64, 128});
    const int r_max = p.get("r_max", 16);
    const std::string metric = p.get<std::string>("metric", "euclidean");
    p.require(metric == "euclidean" || metric == "graph", "metric must be euclidean or graph");
    p.require(r_max >= 1, "r_max must be positive");
    for (double t : ts) p.require(t > 0.0, "t_grid entries must be positive");
    return [=](Context& ctx) {
        const ConductanceField field = build_field(fs, ctx);
        const auto fit = gaussian_bound_fit(field, field.box().center(), ts, r_max,
                                            metric == "graph" ? Metric::graph : Metric::euclidean);
        json j = ctx.json_head("gaussian-fit-v1");
        j["slope"] = fit.regression.slope;
        j["intercept"] = fit.regression.intercept;
        j["r2"] = fit.regression.r2;
        j["points"] = fit.regression.n;
        j["c1"] = fit.c1;
        j["c2"] = fit.c2;
        j["c3"] = fit.c3;
        j["c4"] = fit.c4;
        j["upper_points"] = fit.upper_points;
        j["lower_points"] = fit.lower_points;
        j["upper_violations"] = fit.upper_violations;
        j["lower_violations"] = fit.lower_violations;
        ctx.write("gaussian_fit.json", j.dump(2) + "\n");
    };
}

Runner parse_phi(Params& p, std::uint64_t, std::vector<std::string>& v) {
    FieldSpec fs = parse_field(p, field_defaults(64), v);
    const int R = p.get("R", 8);
    const int r0 = p.get("r0", 16);
    const int points = p.get("time_points", 64);
    const double max_dist = p.get("max_source_distance", 2.0);
    const int source_offset = p.get("source_offset", 0);
    const double time_offset = p.get("time_offset", 1.0);
    p.require(R >= 2 && r0 >= 4, "need R >= 2 and r0 >= 4");
    p.require(points >= 2, "time_points must be at least 2");
    p.require(time_offset > 0.0, "time_offset must be positive");
    return [=](Context& ctx) {
        const ConductanceField field = build_field(fs, ctx);
        const Vertex x = field.box().center();
        HarnackOptions o;
        o.max_source_distance = max_dist;
        o.time_points = points;
        const auto h = harnack_constant(field, x, R, o);
        Coords c = field.box().coords(x);
        c[0] += source_offset;
        const CaloricFunction u{field.box().vertex(c), time_offset, 1.0};
        const auto scales = oscillation_decay_check(field, x, r0, u, points);
        json j = ctx.json_head("phi-v1");
        j["C_H"] = h.c_h;
        j["theta"] = h.theta;
        j["family_size"] = h.family_size;
        j["skipped"] = h.skipped;
        j["bound"] = 1.0 - 1.0 / h.c_h;
        json arr = json::array();
        for (const auto& s : scales)
            arr.push_back({{"k", s.k}, {"r", s.r}, {"osc", s.osc}, {"osc_plus", s.osc_plus}, {"ratio", s.ratio}});
        j["scales"] = arr;
        ctx.write("phi.json", j.dump(2) + "\n");
    };
}

Runner parse_poincare(Params& p, std::uint64_t, std::vector<std::string>& v) {
    FieldSpec fs = parse_field(p, field_defaults(32), v);
    const auto rs = p.get("r", std::vector<int>{1, 2, 3, 4, 5, 6});
    const double c_w = p.get("c_w", 2.0);
    p.require(c_w >= 1.0, "c_w must be at least 1");
    for (int r : rs) p.require(r >= 1, "r must be positive");
    return [=](Context& ctx) {
        const ConductanceField field = build_field(fs, ctx);
        std::string csv = ctx.header("poincare-v1") + "r,c_p,infinite,ball_size,outer_size\n";
        for (int r : rs) {
            const auto res = poincare_constant(field, field.box().center(), r, c_w);
            csv += csv_row({fu(static_cast<std::uint64_t>(r)), fd(res.c_p), res.infinite ? "1" : "0",
                            fu(res.ball_size), fu(res.outer_size)});
        }
        ctx.write("poincare.csv", csv);
    };
}

Runner parse_mixing(Params& p, std::uint64_t reps, std::vector<std::string>& v, bool confined) {
    FieldSpec fs = parse_field(p, field_defaults(128), v);
    MixingParams m;
    m.confined = confined;
    if (confined) {
        m.deltas = {16.0, 32.0, 64.0};
        m.margin.policy = MarginPolicy::sqrt_delta_log_delta;
    }
    m.K = p.get("K", m.K);
    m.ell = p.get("ell", m.ell);
    m.Kprime = p.get("Kprime", m.Kprime);
    m.eps = p.get("eps", m.eps);
    m.beta = p.get("beta", m.beta);
    m.lambda0 = p.get("lambda0", m.lambda0);
    m.deltas = p.get("Delta", m.deltas);
    m.margin.c1 = p.get("c1", m.margin.c1);
    m.margin.c3 = p.get("c3", m.margin.c3);
    m.margin.c4 = p.get("c4", m.margin.c4);
    m.max_density_resamples = p.get("max_density_resamples", m.max_density_resamples);
    m.reps = reps_or(reps, p.get<std::uint64_t>("reps", m.reps));
    try {
        m.margin.policy = margin_policy_from_string(p.get<std::string>("margin", to_string(m.margin.policy)));
        m.placement = placement_from_string(p.get<std::string>("placement", to_string(m.placement)));
    } catch (const std::exception& e) {
        v.push_back(e.what());
    }
    if (p.has("rho")) v.push_back("rho: set through c1 (rho = 2 ceil(c1 sqrt(Delta log Delta)))");
    (void)p.get("rho", 0);
    if (fs.file.empty()) {
        for (const auto& s : validate_mixing(box_of(fs), m)) v.push_back(s);
    }
    return [=](Context& ctx) {
        const ConductanceField field = build_field(fs, ctx);
        MixingParams mm = m;
        mm.seed = ctx.seed;
        const auto problems = validate_mixing(field.box(), mm);
        if (!problems.empty()) throw ConfigError(problems.front());
        const MixingReport rep = mixing_experiment(field, mm);
        std::string csv = ctx.header("mixing-v1") +
                          "Delta,rho,reps,successes,frequency,ci_lo,ci_hi,containment_checked,containment_failures,"
                          "success_without_cover,density_resamples\n";
        std::string jsonl;
        for (const auto& pt : rep.points) {
            csv += csv_row({fd(pt.delta), fu(static_cast<std::uint64_t>(pt.rho)), fu(pt.reps), fu(pt.successes),
                            fd(pt.frequency), fd(pt.ci.lo), fd(pt.ci.hi), fu(pt.containment_checked),
                            fu(pt.containment_failures), fu(pt.success_without_cover), fu(pt.density_resamples)});
            for (std::size_t r = 0; r < pt.rep_records.size(); ++r) {
                const auto& rec = pt.rep_records[r];
                ctx.manifest->replica_seeds.push_back(rec.seed);
                jsonl += json{{"Delta", pt.delta}, {"rep", r}, {"seed", rec.seed}, {"success", rec.success},
                              {"contained", rec.contained}, {"particles", rec.particles}, {"failures", rec.failures}}
                             .dump() +
                         "\n";
            }
        }
        ctx.write("mixing.csv", csv);
        ctx.write("mixing_reps.jsonl", jsonl);
    };
}

Runner parse_si(Params& p, std::uint64_t reps, std::vector<std::string>& v) {
    FieldSpec fs = parse_field(p, field_defaults(200), v);
    const double lambda0 = p.get("lambda0", 2.0);
    const double horizon = p.get("horizon", 400.0);
    const double burn = p.get("burn_in", 0.25);
    const double dt = p.get("sample_dt", 1.0);
    const std::uint64_t n = reps_or(reps, p.get<std::uint64_t>("reps", 10));
    p.require(lambda0 >= 0.0, "lambda0 must be nonnegative");
    p.require(horizon > 0.0 && dt > 0.0, "horizon and sample_dt must be positive");
    p.require(burn >= 0.0 && burn < 1.0, "burn_in must lie in [0, 1)");
    return [=](Context& ctx) {
        const ConductanceField field = build_field(fs, ctx);
        std::vector<double> grid;
        for (double t = 0.0; t <= horizon; t += dt) grid.push_back(t);
        std::string summary = ctx.header("si-speed-v1") + "rep,seed,slope,r2,positive\n";
        for (std::uint64_t r = 0; r < n; ++r) {
            const std::uint64_t s = derive_seed(ctx.seed, r);
            ctx.manifest->replica_seeds.push_back(s);
            const auto series = run_si(field, lambda0, horizon, grid, s);
            const auto sp = front_speed(series, burn);
            ctx.write("front_rep" + std::to_string(r) + ".csv", ctx.header("si-front-v1") + front_to_csv(series));
            summary += csv_row({fu(r), fu(s), fd(sp.slope), fd(sp.fit.r2), sp.positive ? "1" : "0"});
        }
        ctx.write("si_speed.csv", summary);
    };
}

Runner parse_sis(Params& p, std::uint64_t reps, std::vector<std::string>& v) {
    FieldSpec fs = parse_field(p, field_defaults(32), v);
    const double lambda0 = p.get("lambda0", 0.25);
    const auto gammas = p.get("gamma", std::vector<double>{0.001, 0.01, 0.1, 1.0});
    const double horizon = p.get("horizon", 100.0);
    const std::uint64_t n = reps_or(reps, p.get<std::uint64_t>("reps", 200));
    p.require(lambda0 >= 0.0, "lambda0 must be nonnegative");
    for (double g : gammas) p.require(g >= 0.0, "gamma must be nonnegative");
    p.require(horizon > 0.0, "horizon must be positive");
    return [=](Context& ctx) {
        const ConductanceField field = build_field(fs, ctx);
        for (std::uint64_t r = 0; r < n; ++r) ctx.manifest->replica_seeds.push_back(derive_seed(ctx.seed, r));
        const auto pts = sis_survival(field, lambda0, gammas, horizon, n, ctx.seed);
        std::string csv = ctx.header("sis-survival-v1") + "gamma,reps,survived,frequency,ci_lo,ci_hi\n";
        for (const auto& pt : pts)
            csv += csv_row({fd(pt.gamma), fu(pt.reps), fu(pt.survived), fd(pt.frequency), fd(pt.ci.lo), fd(pt.ci.hi)});
        ctx.write("sis_survival.csv", csv);
    };
}

Runner parse_cell_event(Params& p, std::uint64_t reps, std::vector<std::string>& v, bool nu) {
    FieldSpec fs = parse_field(p, field_defaults(128), v);
    const CellEventSpec spec = parse_cell(p, CellEventSpec{});
    const double eps = nu ? p.get("eps", 0.5) : 0.0;
    const std::uint64_t n = reps_or(reps, p.get<std::uint64_t>("reps", 100));
    if (nu) p.require(eps >= 0.0 && eps <= 1.0, "eps must lie in [0, 1]");
    if (fs.file.empty())
        for (const auto& s : validate_cell_spec(box_of(fs), spec)) v.push_back(s);
    return [=](Context& ctx) {
        const ConductanceField field = build_field(fs, ctx);
        const auto problems = validate_cell_spec(field.box(), spec);
        if (!problems.empty()) throw ConfigError(problems.front());
        for (std::uint64_t r = 0; r < n; ++r) ctx.manifest->replica_seeds.push_back(derive_seed(ctx.seed, r));
        const auto rep = nu ? estimate_nu(field, spec, eps, n, ctx.seed) : estimate_cell_event(field, spec, n, ctx.seed);
        json j = json::parse(cell_report_to_json(rep));
        j["experiment"] = ctx.name;
        j["statement"] = ctx.statement;
        if (nu) j["eps"] = eps;
        ctx.write(nu ? "nu.json" : "cell_event.json", j.dump(2) + "\n");
    };
}

Runner parse_surface(Params& p, std::uint64_t reps, std::vector<std::string>& v) {
    const std::string source = p.get<std::string>("source", "iid");
    const double p_bad = p.get("p_bad", 0.01);
    const auto base = p.get("base", std::vector<int>{32, 32});
    const int extent = p.get("height_extent", 16);
    int D = p.get("D", -1);
    const std::uint64_t n = reps_or(reps, p.get<std::uint64_t>("reps", 100));
    p.require(source == "iid" || source == "simulated", "source must be iid or simulated");
    p.require(p_bad >= 0.0 && p_bad <= 1.0, "p_bad must lie in [0, 1]");
    p.require(!base.empty(), "base must not be empty");
    for (int b : base) p.require(b >= 1, "base extents must be positive");
    p.require(extent >= 0, "height_extent must be nonnegative");
    CellGrid grid{base, -extent, extent};
    if (D < 0) D = extent;
    FieldSpec fs = field_defaults(128);
    CellEventSpec spec;
    if (const json* cell = p.object("cell")) {
        Params cp(*cell, "cell.", v);
        fs = parse_field(cp, fs, v);
        spec = parse_cell(cp, spec);
        cp.finish();
    }
    if (source == "simulated") {
        if (fs.file.empty()) {
            for (const auto& s : validate_cell_spec(box_of(fs), spec)) v.push_back("cell: " + s);
            p.require(static_cast<int>(base.size()) == fs.dim, "base needs d entries (d - 1 spatial axes plus time)");
        }
        p.require(static_cast<double>(grid.size()) <= std::pow(8.0, static_cast<double>(base.size() + 1)),
                  "simulated grids are limited to 8^(d+1) cells");
    }
    return [=](Context& ctx) {
        std::string csv = ctx.header("surface-v1") + "rep,seed,exists,surrounds\n";
        std::vector<int> origin(base.size());
        for (std::size_t k = 0; k < base.size(); ++k) origin[k] = base[k] / 2;
        std::optional<ConductanceField> field;
        if (source == "simulated") field.emplace(build_field(fs, ctx));
        for (std::uint64_t r = 0; r < n; ++r) {
            const std::uint64_t s = derive_seed(ctx.seed, r);
            ctx.manifest->replica_seeds.push_back(s);
            const CellField cells =
                source == "iid" ? simulate_iid_field(p_bad, grid, s) : classify_cells_from_sim(*field, spec, grid, 1, s);
            const auto surf = two_sided_surface(cells);
            bool around = false;
            if (surf.exists()) around = surrounds(grid, surface_mask(grid, surf), origin, 0, D);
            csv += csv_row({fu(r), fu(s), surf.exists() ? "1" : "0", around ? "1" : "0"});
            if (r == 0) {
                ctx.write("cells_rep0.json", cell_field_to_json(cells) + "\n");
                ctx.write("surface_rep0.json", surface_to_json(grid, surf) + "\n");
            }
        }
        ctx.write("surface.csv", csv);
    };
}

const std::map<std::string, Parser>& parsers() {
    static const std::map<std::string, Parser> m = {
        {"stationarity", parse_stationarity},
        {"exit-tail", parse_exit_tail},
        {"gaussian-fit", parse_gaussian},
        {"phi", parse_phi},
        {"poincare", parse_poincare},
        {"mixing", [](Params& p, std::uint64_t r, std::vector<std::string>& v) { return parse_mixing(p, r, v, false); }},
        {"confined-mixing",
         [](Params& p, std::uint64_t r, std::vector<std::string>& v) { return parse_mixing(p, r, v, true); }},
        {"si-speed", parse_si},
        {"sis-survival", parse_sis},
        {"cell-event",
         [](Params& p, std::uint64_t r, std::vector<std::string>& v) { return parse_cell_event(p, r, v, false); }},
        {"nu", [](Params& p, std::uint64_t r, std::vector<std::string>& v) { return parse_cell_event(p, r, v, true); }},
        {"surface", parse_surface},
    };
    return m;
}

struct Prepared {
    std::string name;
    std::string statement;
    std::uint64_t master_seed = 1;
    std::uint64_t reps = 0;
    std::string canonical;
    Runner runner;
};

Prepared prepare(const ExperimentConfig& cfg, std::vector<std::string>& v) {
    Prepared out;
    json j;
    try {
        j = json::parse(cfg.config);
    } catch (const std::exception& e) {
        v.push_back(std::string("config is not valid JSON: ") + e.what());
        return out;
    }
    if (!j.is_object()) {
        v.push_back("config must be a JSON object");
        return out;
    }
    Params p(j, "", v);
    const std::string named = p.get<std::string>("experiment", "");
    out.name = cfg.experiment.empty() ? named : cfg.experiment;
    if (!named.empty() && named != out.name) v.push_back("experiment: config names '" + named + "'");
    const auto it = parsers().find(out.name);
    if (it == parsers().end()) {
        v.push_back(out.name.empty() ? "experiment: missing" : "experiment: unknown name '" + out.name + "'");
        return out;
    }
    for (const auto& info : experiment_registry())
        if (info.name == out.name) out.statement = info.statement;
    out.master_seed = cfg.seed ? *cfg.seed : p.get<std::uint64_t>("seed", 1);
    (void)p.get<std::uint64_t>("seed", 1);
    out.reps = cfg.reps.value_or(0);
    if (cfg.reps && *cfg.reps == 0) v.push_back("reps must be positive");
    out.runner = it->second(p, out.reps, v);
    p.finish();
    json canon = j;
    canon["experiment"] = out.name;
    canon["seed"] = out.master_seed;
    if (cfg.reps) canon["reps_override"] = *cfg.reps;
    out.canonical = canon.dump();
    return out;
}

}  // namespace

std::vector<std::string> validate(const ExperimentConfig& cfg) {
    std::vector<std::string> v;
    (void)prepare(cfg, v);
    return v;
}

RunManifest run_experiment(const ExperimentConfig& cfg) {
    std::vector<std::string> v;
    Prepared prep = prepare(cfg, v);
    if (!v.empty()) {
        std::string msg;
        for (const auto& s : v) msg += (msg.empty() ? "" : "; ") + s;
        throw ConfigError(msg);
    }
    const auto start = std::chrono::steady_clock::now();
    RunManifest m;
    m.experiment = prep.name;
    m.statement = prep.statement;
    m.config_hash = hex_digest(prep.canonical);
    m.code_version = CLAB_VERSION;
    m.master_seed = prep.master_seed;
    std::filesystem::create_directories(cfg.out_dir);
    Context ctx;
    ctx.name = prep.name;
    ctx.statement = prep.statement;
    ctx.out = cfg.out_dir;
    ctx.seed = derive_seed(prep.master_seed, prep.name, 0);
    ctx.reps = prep.reps;
    ctx.manifest = &m;
    prep.runner(ctx);
    m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    json j{{"experiment", m.experiment},   {"statement", m.statement},       {"config_hash", m.config_hash},
           {"code_version", m.code_version}, {"master_seed", m.master_seed}, {"experiment_seed", ctx.seed},
           {"field_seed", m.field_seed},   {"replica_seeds", m.replica_seeds}, {"wall_seconds", m.wall_seconds}};
    json outs = json::array();
    for (const auto& [file, digest] : m.outputs) outs.push_back({{"file", file}, {"fnv1a64", digest}});
    j["outputs"] = outs;
    write_text((std::filesystem::path(cfg.out_dir) / "manifest.json").string(), j.dump(2) + "\n");
    return m;
}

int run_experiment_checked(const ExperimentConfig& cfg, RunManifest* manifest, std::string* message) {
    try {
        RunManifest m = run_experiment(cfg);
        if (manifest) *manifest = std::move(m);
        return kExitOk;
    } catch (const ConfigError& e) {
        if (message) *message = std::string("config error: ") + e.what();
        return kExitConfig;
    } catch (const std::exception& e) {
        if (message) *message = std::string("runtime abort: ") + e.what();
        return kExitRuntime;
    }
}

}  // namespace clab
