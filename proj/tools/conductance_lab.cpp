#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "clab/epidemic.hpp"
#include "clab/experiments.hpp"
#include "clab/io.hpp"
#include "clab/lattice.hpp"
#include "clab/spectral.hpp"
#include "clab/surface.hpp"
#include "clab/walk.hpp"

using namespace clab;
using nlohmann::json;

namespace {

// Field either loaded from --field or sampled from the law options.
struct FieldOptions {
    std::string file;
    int dim = 2;
    int side = 32;
    std::string boundary = "torus";
    std::string law = "constant";
    double value = 1.0;
    double c_m = 1.0;
    double p0 = 0.0;
    std::uint64_t seed = 1;

    void add(CLI::App* app, int default_side) {
        side = default_side;
        app->add_option("--field", file, "field file (.json or binary)");
        app->add_option("--d", dim, "dimension")->capture_default_str();
        app->add_option("--side", side, "box side")->capture_default_str();
        app->add_option("--boundary", boundary, "torus or hard-wall")->capture_default_str();
        app->add_option("--law", law, "constant, uniform-elliptic or dilute")->capture_default_str();
        app->add_option("--value", value, "weight of the constant law")->capture_default_str();
        app->add_option("--c-m", c_m, "ellipticity bound C_M")->capture_default_str();
        app->add_option("--p0", p0, "dilution probability")->capture_default_str();
        app->add_option("--field-seed", seed, "field seed")->capture_default_str();
    }

    ConductanceField build() const {
        if (!file.empty())
            return std::filesystem::path(file).extension() == ".json" ? read_field_json(file) : read_field_binary(file);
        Law l;
        l.kind = law_from_string(law);
        l.value = value;
        l.c_m = l.kind == LawKind::constant ? 1.0 : c_m;
        l.p0 = p0;
        if (l.kind == LawKind::dilute && percolation_guard(dim, p0) == GuardVerdict::reject)
            throw std::invalid_argument("p0 is at or above the bond percolation threshold");
        return sample_conductances(LatticeBox(dim, side, boundary_from_string(boundary)), l, seed);
    }
};

void emit(const std::string& out, const std::string& text) {
    if (out.empty() || out == "-") std::cout << text;
    else write_text(out, text);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Random walks, heat kernels and infection spread on random conductance lattices"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(CLAB_VERSION));

    // Experiment runner: one subcommand per registry entry.
    ExperimentConfig cfg;
    std::string config_file;
    std::uint64_t seed_arg = 0, reps_arg = 0;
    std::string selected;
    // "surface" doubles as the experiment name when no module subcommand follows it.
    CLI::App* surface = app.add_subcommand("surface", "Lipschitz surfaces of good cells (runs the experiment "
                                                      "when no subcommand is given)");
    std::vector<std::pair<std::string, CLI::App*>> experiments;
    for (const auto& info : experiment_registry()) {
        CLI::App* sub = info.name == "surface" ? surface : app.add_subcommand(info.name, info.statement);
        sub->add_option("--config", config_file, "JSON config file");
        sub->add_option("--seed", seed_arg, "master seed");
        sub->add_option("--reps", reps_arg, "replica count");
        sub->add_option("--out", cfg.out_dir, "output directory")->capture_default_str();
        experiments.emplace_back(info.name, sub);
    }

    CLI::App* val = app.add_subcommand("validate", "check a config without running it");
    std::string val_experiment;
    val->add_option("experiment", val_experiment, "experiment name")->required();
    val->add_option("--config", config_file, "JSON config file");

    // lattice
    CLI::App* lattice = app.add_subcommand("lattice", "conductance fields")->require_subcommand(1);
    CLI::App* lat_sample = lattice->add_subcommand("sample", "sample a field and write it");
    FieldOptions lat_field;
    std::string lat_out;
    lat_sample->add_option("--d", lat_field.dim, "dimension")->capture_default_str();
    lat_sample->add_option("--side", lat_field.side, "box side")->capture_default_str();
    lat_sample->add_option("--boundary", lat_field.boundary, "torus or hard-wall")->capture_default_str();
    lat_sample->add_option("--law", lat_field.law, "constant, uniform-elliptic or dilute")->capture_default_str();
    lat_sample->add_option("--value", lat_field.value, "weight of the constant law")->capture_default_str();
    lat_sample->add_option("--c-m", lat_field.c_m, "ellipticity bound C_M")->capture_default_str();
    lat_sample->add_option("--p0", lat_field.p0, "dilution probability")->capture_default_str();
    lat_sample->add_option("--seed", lat_field.seed, "seed")->capture_default_str();
    lat_sample->add_option("--out", lat_out, "output path; .json selects JSON")->required();

    // walk
    CLI::App* walk = app.add_subcommand("walk", "continuous-time random walks")->require_subcommand(1);
    CLI::App* walk_sim = walk->add_subcommand("simulate", "one trajectory as JSONL");
    FieldOptions walk_field;
    walk_field.add(walk_sim, 32);
    double walk_t = 10.0;
    std::uint64_t walk_seed = 1;
    int walk_rho = 0;
    std::string walk_out;
    walk_sim->add_option("--t", walk_t, "horizon")->capture_default_str();
    walk_sim->add_option("--seed", walk_seed, "walk seed")->capture_default_str();
    walk_sim->add_option("--rho", walk_rho, "confinement cube side (0 = free)");
    walk_sim->add_option("--out", walk_out, "output path (stdout when omitted)");

    CLI::App* walk_exit = walk->add_subcommand("exit-tail", "empirical P[exit B(x,r) before t]");
    FieldOptions exit_field;
    exit_field.add(walk_exit, 128);
    std::vector<int> exit_r{10};
    std::vector<double> exit_t{10.0};
    std::uint64_t exit_n = 10000, exit_seed = 1;
    walk_exit->add_option("--r", exit_r, "radii")->capture_default_str();
    walk_exit->add_option("--t", exit_t, "times")->capture_default_str();
    walk_exit->add_option("--n", exit_n, "walks per point")->capture_default_str();
    walk_exit->add_option("--seed", exit_seed, "seed")->capture_default_str();

    // spectral
    CLI::App* spectral = app.add_subcommand("spectral", "heat kernels and functional inequalities")->require_subcommand(1);
    CLI::App* sp_kernel = spectral->add_subcommand("kernel", "p_t from given sources");
    FieldOptions kernel_field;
    kernel_field.add(sp_kernel, 16);
    double kernel_t = 1.0;
    std::vector<std::int64_t> kernel_sources;
    std::string kernel_out;
    sp_kernel->add_option("--t", kernel_t, "time")->capture_default_str();
    sp_kernel->add_option("--sources", kernel_sources, "source vertex indices (default: centre)");
    sp_kernel->add_option("--out", kernel_out, "output path; .bin selects the binary table");

    CLI::App* sp_phi = spectral->add_subcommand("phi", "Harnack constant and oscillation decay");
    FieldOptions phi_field;
    phi_field.add(sp_phi, 64);
    int phi_R = 8, phi_r0 = 16, phi_points = 64;
    sp_phi->add_option("--R", phi_R, "Harnack radius")->capture_default_str();
    sp_phi->add_option("--r0", phi_r0, "oscillation radius")->capture_default_str();
    sp_phi->add_option("--time-points", phi_points, "time samples per interval")->capture_default_str();

    CLI::App* sp_poin = spectral->add_subcommand("poincare", "weak Poincare constant on B(x,r)");
    FieldOptions poin_field;
    poin_field.add(sp_poin, 32);
    std::vector<int> poin_r{4};
    double poin_cw = 2.0;
    sp_poin->add_option("--r", poin_r, "radii")->capture_default_str();
    sp_poin->add_option("--c-w", poin_cw, "outer ball factor C_W")->capture_default_str();

    // epi
    CLI::App* epi = app.add_subcommand("epi", "infection processes and cell events")->require_subcommand(1);
    FieldOptions epi_field;
    double epi_lambda0 = 1.0, epi_horizon = 50.0;
    std::uint64_t epi_seed = 1;
    std::string epi_out;
    CLI::App* epi_si = epi->add_subcommand("si", "SI front as CSV");
    CLI::App* epi_sis = epi->add_subcommand("sis", "SIS front as CSV");
    double epi_gamma = 0.1;
    for (CLI::App* sub : {epi_si, epi_sis}) {
        epi_field.add(sub, 64);
        sub->add_option("--lambda0", epi_lambda0, "particle density")->capture_default_str();
        sub->add_option("--horizon", epi_horizon, "time horizon")->capture_default_str();
        sub->add_option("--seed", epi_seed, "seed")->capture_default_str();
        sub->add_option("--out", epi_out, "output path (stdout when omitted)");
    }
    epi_sis->add_option("--gamma", epi_gamma, "recovery rate")->capture_default_str();

    CLI::App* epi_cell = epi->add_subcommand("cell", "estimate the space-time cell event");
    FieldOptions cell_field;
    cell_field.add(epi_cell, 128);
    CellEventSpec cell_spec;
    std::uint64_t cell_reps = 100, cell_seed = 1;
    epi_cell->add_option("--ell", cell_spec.ell, "cube side")->capture_default_str();
    epi_cell->add_option("--eta", cell_spec.eta, "super cube radius in cubes")->capture_default_str();
    epi_cell->add_option("--lambda0", cell_spec.lambda0, "particle density")->capture_default_str();
    epi_cell->add_option("--beta-time", cell_spec.beta_time, "time cell length (0 = beta ell^2)");
    epi_cell->add_option("--T", cell_spec.T, "collision window (0 = ell^2)");
    epi_cell->add_option("--gamma", cell_spec.gamma, "recovery rate")->capture_default_str();
    epi_cell->add_option("--reps", cell_reps, "replicas")->capture_default_str();
    epi_cell->add_option("--seed", cell_seed, "seed")->capture_default_str();

    CLI::App* epi_chern = epi->add_subcommand("chernoff", "Poisson concentration bounds against exact tails");
    double chern_lambda = 100.0, chern_eps = 0.2;
    epi_chern->add_option("--lambda", chern_lambda, "Poisson mean")->capture_default_str();
    epi_chern->add_option("--eps", chern_eps, "relative deviation")->capture_default_str();

    // surface
    CLI::App* surf_build = surface->add_subcommand("build", "i.i.d. cell field and its surfaces");
    double surf_p = 0.01;
    std::vector<int> surf_dims{32, 32};
    int surf_extent = 16;
    std::uint64_t surf_seed = 1;
    std::string surf_out;
    surf_build->add_option("--p-bad", surf_p, "bad cell probability")->capture_default_str();
    surf_build->add_option("--dims", surf_dims, "base extents")->capture_default_str();
    surf_build->add_option("--height", surf_extent, "heights run over [-h, h]")->capture_default_str();
    surf_build->add_option("--seed", surf_seed, "seed")->capture_default_str();
    surf_build->add_option("--out", surf_out, "write the cell field here");

    CLI::App* surf_sim = surface->add_subcommand("from-sim", "classify cells by simulating the cell event");
    std::string sim_spec_file;
    FieldOptions sim_field;
    sim_field.add(surf_sim, 128);
    std::vector<int> sim_dims{2, 2};
    int sim_extent = 1;
    std::uint64_t sim_reps = 1, sim_seed = 1;
    std::string sim_out;
    surf_sim->add_option("--spec", sim_spec_file, "JSON with cell keys ell, eta, lambda0, ...");
    surf_sim->add_option("--dims", sim_dims, "base extents")->capture_default_str();
    surf_sim->add_option("--height", sim_extent, "heights run over [-h, h]")->capture_default_str();
    surf_sim->add_option("--reps", sim_reps, "replicas per cell")->capture_default_str();
    surf_sim->add_option("--seed", sim_seed, "seed")->capture_default_str();
    surf_sim->add_option("--out", sim_out, "write the cell field here");

    CLI::App* surf_sur = surface->add_subcommand("surrounds", "does F^+ and F^- cut the point off within D");
    std::string sur_cells;
    int sur_D = 16, sur_h = 0;
    std::vector<int> sur_base;
    surf_sur->add_option("--cells", sur_cells, "cell field JSON")->required();
    surf_sur->add_option("--D", sur_D, "distance")->capture_default_str();
    surf_sur->add_option("--base", sur_base, "base point (default: centre)");
    surf_sur->add_option("--height", sur_h, "height of the point")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitConfig;
    }

    for (const auto& [name, sub] : experiments) {
        if (!sub->parsed() || !sub->get_subcommands().empty()) continue;
        selected = name;
        cfg.experiment = name;
        if (sub->count("--seed")) cfg.seed = seed_arg;
        if (sub->count("--reps")) cfg.reps = reps_arg;
    }

    try {
        if (!selected.empty() || val->parsed()) {
            if (!config_file.empty()) cfg.config = read_text(config_file);
            if (val->parsed()) {
                cfg.experiment = val_experiment;
                const auto v = validate(cfg);
                for (const auto& s : v) std::cout << s << "\n";
                return v.empty() ? kExitOk : kExitConfig;
            }
            RunManifest m;
            std::string msg;
            const int rc = run_experiment_checked(cfg, &m, &msg);
            if (rc != kExitOk) {
                std::cerr << msg << "\n";
                return rc;
            }
            for (const auto& [file, digest] : m.outputs) std::cout << digest << "  " << file << "\n";
            return kExitOk;
        }
        if (lat_sample->parsed()) {
            const ConductanceField f = lat_field.build();
            if (std::filesystem::path(lat_out).extension() == ".json") write_field_json(f, lat_out);
            else write_field_binary(f, lat_out);
        } else if (walk_sim->parsed()) {
            const ConductanceField f = walk_field.build();
            WalkConfig wc;
            wc.horizon = walk_t;
            wc.seed = walk_seed;
            Trajectory traj;
            if (walk_rho > 0) {
                wc.rho = walk_rho;
                auto cw = simulate_confined_walk(f, f.box().center(), wc);
                if (!cw.trajectory) throw RejectionFloorError("confined walk hit the rejection floor");
                traj = *cw.trajectory;
            } else {
                traj = simulate_walk(f, f.box().center(), wc);
            }
            std::string path = walk_out.empty() ? "/dev/stdout" : walk_out;
            write_trajectory_jsonl(traj, path);
        } else if (walk_exit->parsed()) {
            const ConductanceField f = exit_field.build();
            std::cout << "r,t,n,exits,frequency,ci_lo,ci_hi\n";
            std::uint64_t k = 0;
            for (int r : exit_r)
                for (double t : exit_t) {
                    const auto p = empirical_exit_tail(f, f.box().center(), r, t, exit_n, derive_seed(exit_seed, k++));
                    std::cout << r << "," << format_double(t) << "," << p.n << "," << p.exits << ","
                              << format_double(p.frequency) << "," << format_double(p.ci.lo) << ","
                              << format_double(p.ci.hi) << "\n";
                }
        } else if (sp_kernel->parsed()) {
            const ConductanceField f = kernel_field.build();
            std::vector<Vertex> src;
            for (auto s : kernel_sources) {
                if (s < 0 || static_cast<std::size_t>(s) >= f.box().num_vertices())
                    throw std::invalid_argument("source outside the box");
                src.push_back(static_cast<Vertex>(s));
            }
            if (src.empty()) src.push_back(f.box().center());
            const auto table = heat_kernel_exact(f, kernel_t, src);
            const std::string path = kernel_out.empty() ? "/dev/stdout" : kernel_out;
            if (std::filesystem::path(path).extension() == ".bin") write_kernel_binary(table, path);
            else write_kernel_csv(table, path);
        } else if (sp_phi->parsed()) {
            const ConductanceField f = phi_field.build();
            HarnackOptions o;
            o.time_points = phi_points;
            const Vertex x = f.box().center();
            const auto h = harnack_constant(f, x, phi_R, o);
            const auto scales = oscillation_decay_check(f, x, phi_r0, CaloricFunction{x, 1.0, 1.0}, phi_points);
            json j{{"C_H", h.c_h}, {"theta", h.theta}, {"family_size", h.family_size}, {"bound", 1.0 - 1.0 / h.c_h}};
            json arr = json::array();
            for (const auto& s : scales) arr.push_back({{"k", s.k}, {"r", s.r}, {"ratio", s.ratio}});
            j["scales"] = arr;
            std::cout << j.dump(2) << "\n";
        } else if (sp_poin->parsed()) {
            const ConductanceField f = poin_field.build();
            std::cout << "r,c_p,infinite\n";
            for (int r : poin_r) {
                const auto res = poincare_constant(f, f.box().center(), r, poin_cw);
                std::cout << r << "," << format_double(res.c_p) << "," << (res.infinite ? 1 : 0) << "\n";
            }
        } else if (epi_si->parsed() || epi_sis->parsed()) {
            const ConductanceField f = epi_field.build();
            std::vector<double> grid;
            for (double t = 0.0; t <= epi_horizon; t += 1.0) grid.push_back(t);
            const auto series = epi_si->parsed() ? run_si(f, epi_lambda0, epi_horizon, grid, epi_seed)
                                                 : run_sis(f, epi_lambda0, epi_gamma, epi_horizon, grid, epi_seed);
            emit(epi_out, front_to_csv(series));
        } else if (epi_cell->parsed()) {
            const ConductanceField f = cell_field.build();
            const auto problems = validate_cell_spec(f.box(), cell_spec);
            if (!problems.empty()) throw std::invalid_argument(problems.front());
            std::cout << json::parse(cell_report_to_json(estimate_cell_event(f, cell_spec, cell_reps, cell_seed)))
                             .dump(2)
                      << "\n";
        } else if (epi_chern->parsed()) {
            const auto c = chernoff_poisson(chern_lambda, chern_eps);
            std::cout << json{{"lambda", c.lambda},           {"eps", c.eps},
                              {"lower_bound", c.lower_bound}, {"upper_bound", c.upper_bound},
                              {"lower_exact", c.lower_exact}, {"upper_exact", c.upper_exact},
                              {"holds", c.holds}}
                             .dump(2)
                      << "\n";
        } else if (surf_build->parsed() || surf_sim->parsed()) {
            CellField cells;
            if (surf_build->parsed()) {
                cells = simulate_iid_field(surf_p, CellGrid{surf_dims, -surf_extent, surf_extent}, surf_seed);
            } else {
                CellEventSpec spec;
                if (!sim_spec_file.empty()) {
                    const json j = json::parse(read_text(sim_spec_file));
                    spec.ell = j.value("ell", spec.ell);
                    spec.eta = j.value("eta", spec.eta);
                    spec.beta_time = j.value("beta_time", spec.beta_time);
                    spec.beta_ratio = j.value("beta_ratio", spec.beta_ratio);
                    spec.T = j.value("T", spec.T);
                    spec.lambda0 = j.value("lambda0", spec.lambda0);
                    spec.w = j.value("w", spec.w);
                    spec.gamma = j.value("gamma", spec.gamma);
                    spec.c1 = j.value("c1", spec.c1);
                }
                const ConductanceField f = sim_field.build();
                const auto problems = validate_cell_spec(f.box(), spec);
                if (!problems.empty()) throw std::invalid_argument(problems.front());
                cells = classify_cells_from_sim(f, spec, CellGrid{sim_dims, -sim_extent, sim_extent}, sim_reps, sim_seed);
            }
            const std::string& out = surf_build->parsed() ? surf_out : sim_out;
            if (!out.empty()) write_text(out, cell_field_to_json(cells) + "\n");
            std::cout << surface_to_json(cells.grid, two_sided_surface(cells)) << "\n";
        } else if (surf_sur->parsed()) {
            const CellField cells = cell_field_from_json(read_text(sur_cells));
            std::vector<int> b = sur_base;
            if (b.empty())
                for (int e : cells.grid.base) b.push_back(e / 2);
            const auto s = two_sided_surface(cells);
            const bool around = s.exists() && surrounds(cells.grid, surface_mask(cells.grid, s), b, sur_h, sur_D);
            std::cout << json{{"exists", s.exists()}, {"surrounds", around}}.dump() << "\n";
        }
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::out_of_range& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "runtime abort: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitOk;
}
