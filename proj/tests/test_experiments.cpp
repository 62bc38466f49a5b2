#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "clab/experiments.hpp"

using namespace clab;
namespace fs = std::filesystem;

namespace {

// Small, fast configurations for every registered experiment.
const std::map<std::string, std::string>& small_configs() {
    static const std::map<std::string, std::string> c = {
        {"stationarity", R"({"field": {"side": 8}, "times": [1, 2]})"},
        {"exit-tail", R"({"field": {"side": 32}, "r": [2, 3], "t": [1, 2], "n": 50})"},
        {"gaussian-fit", R"({"field": {"side": 16}, "t_grid": [4, 8], "r_max": 4})"},
        {"phi", R"({"field": {"side": 24}, "R": 2, "r0": 4, "time_points": 4})"},
        {"poincare", R"({"field": {"side": 8}, "r": [1, 2]})"},
        {"mixing", R"({"field": {"side": 32}, "K": 32, "ell": 4, "Kprime": 8, "Delta": [16], "reps": 2})"},
        {"confined-mixing", R"({"field": {"side": 32}, "K": 32, "ell": 4, "Kprime": 8, "Delta": [4], "reps": 2})"},
        {"si-speed", R"({"field": {"side": 16}, "lambda0": 0.5, "horizon": 8, "reps": 1})"},
        {"sis-survival", R"({"field": {"side": 8}, "gamma": [0.5], "horizon": 4, "reps": 2})"},
        {"cell-event", R"({"field": {"side": 32}, "ell": 4, "eta": 1, "reps": 2})"},
        {"nu", R"({"field": {"side": 32}, "ell": 4, "eta": 1, "w": 3, "eps": 0.5, "reps": 2})"},
        {"surface", R"({"base": [4, 4], "height_extent": 2, "reps": 2})"},
    };
    return c;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("clab_exp_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

ExperimentConfig config_for(const std::string& name, const fs::path& out) {
    ExperimentConfig c;
    c.experiment = name;
    c.config = small_configs().at(name);
    c.seed = 5;
    c.out_dir = out.string();
    return c;
}

int run_tool(const std::string& args) {
    const char* tool = std::getenv("CLAB_TOOL");
    REQUIRE_MESSAGE(tool, "CLAB_TOOL is not set");
    const std::string cmd = std::string("\"") + tool + "\" " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("every registered experiment runs and names itself in each output") {
    REQUIRE(experiment_registry().size() == 12);
    for (const auto& info : experiment_registry()) {
        CAPTURE(info.name);
        REQUIRE(small_configs().count(info.name));
        const auto out = scratch(info.name);
        RunManifest m;
        std::string msg;
        REQUIRE_MESSAGE(run_experiment_checked(config_for(info.name, out), &m, &msg) == kExitOk, msg);
        CHECK(m.experiment == info.name);
        CHECK(m.statement == info.statement);
        CHECK(m.master_seed == 5);
        CHECK(m.config_hash.size() == 16);
        REQUIRE_FALSE(m.outputs.empty());
        for (const auto& [file, digest] : m.outputs) {
            CAPTURE(file);
            const std::string body = slurp(out / file);
            CHECK(hex_digest(body) == digest);
            if (file.ends_with(".csv")) {
                CHECK(body.rfind("# experiment=" + info.name + " ", 0) == 0);
                CHECK(body.find(info.statement) != std::string::npos);
            } else if (file.ends_with(".json") && file.find("rep0") == std::string::npos) {
                CHECK(nlohmann::json::parse(body).at("experiment") == info.name);
            }
        }
        const auto manifest = nlohmann::json::parse(slurp(out / "manifest.json"));
        CHECK(manifest.at("experiment") == info.name);
        CHECK(manifest.at("outputs").size() == m.outputs.size());
        fs::remove_all(out);
    }
}

TEST_CASE("a rerun with the same seed reproduces every digest") {
    for (const std::string name : {"exit-tail", "cell-event", "mixing", "surface", "si-speed"}) {
        CAPTURE(name);
        const auto a = run_experiment(config_for(name, scratch(name + "_a")));
        const auto b = run_experiment(config_for(name, scratch(name + "_b")));
        CHECK(a.outputs == b.outputs);
        CHECK(a.config_hash == b.config_hash);
        CHECK(a.field_seed == b.field_seed);
        CHECK(a.replica_seeds == b.replica_seeds);
        auto c = config_for(name, scratch(name + "_c"));
        c.seed = 6;
        const auto other = run_experiment(c);
        CHECK(other.config_hash != a.config_hash);
        CHECK(other.replica_seeds != a.replica_seeds);
    }
}

TEST_CASE("config errors: empty, invalid, unknown keys and experiments") {
    const auto out = scratch("errors");
    ExperimentConfig c;
    c.experiment = "exit-tail";
    c.out_dir = out.string();
    for (const std::string bad : {"", "{", "[1, 2]", R"({"r": [2], "bogus": 1})", R"({"field": {"sidee": 8}})"}) {
        CAPTURE(bad);
        c.config = bad;
        std::string msg;
        CHECK(run_experiment_checked(c, nullptr, &msg) == kExitConfig);
        CHECK_FALSE(msg.empty());
        CHECK_FALSE(validate(c).empty());
    }
    c.experiment = "no-such-experiment";
    c.config = "{}";
    CHECK(run_experiment_checked(c, nullptr, nullptr) == kExitConfig);
    c.experiment = "";
    c.config = R"({"experiment": "poincare", "field": {"side": 8}, "r": [1]})";
    CHECK(validate(c).empty());
}

TEST_CASE("validate cross-checks parameters without running") {
    ExperimentConfig c;
    c.experiment = "cell-event";
    c.config = R"({"field": {"side": 64}, "ell": 8, "T": 100, "beta_time": 50})";
    CHECK_FALSE(validate(c).empty());
    c.config = R"({"field": {"side": 64}, "ell": 8, "T": 10, "beta_time": 50})";
    CHECK(validate(c).empty());

    c.experiment = "mixing";
    c.config = R"({"field": {"side": 64}, "K": 32, "ell": 4, "Kprime": 28, "Delta": [1024]})";
    const auto v = validate(c);
    REQUIRE_FALSE(v.empty());
    CHECK(v.front().find("below margin") != std::string::npos);
    c.config = R"({"field": {"side": 64}, "K": 32, "ell": 4, "Kprime": 8, "Delta": [16]})";
    CHECK(validate(c).empty());

    c.experiment = "confined-mixing";
    c.config = R"({"field": {"side": 64}, "rho": 6})";
    CHECK_FALSE(validate(c).empty());

    c.experiment = "si-speed";
    c.config = R"({"field": {"law": "dilute", "p0": 0.6}})";
    CHECK_FALSE(validate(c).empty());

    for (const auto& [name, cfg] : small_configs()) {
        CAPTURE(name);
        ExperimentConfig ok;
        ok.experiment = name;
        ok.config = cfg;
        CHECK(validate(ok).empty());
    }
}

TEST_CASE("command-line exit codes") {
    const auto dir = scratch("cli");
    const auto write = [&](const std::string& file, const std::string& text) {
        std::ofstream(dir / file) << text;
        return (dir / file).string();
    };
    const std::string empty = write("empty.json", "");
    const std::string unknown = write("unknown.json", R"({"bogus": true})");
    const std::string good = write("good.json", small_configs().at("poincare"));
    CHECK(run_tool("--help") == 0);
    CHECK(run_tool("poincare --config " + empty + " --out " + dir.string()) == 2);
    CHECK(run_tool("poincare --config " + unknown + " --out " + dir.string()) == 2);
    CHECK(run_tool("validate poincare --config " + unknown) == 2);
    CHECK(run_tool("validate poincare --config " + good) == 0);
    CHECK(run_tool("poincare --config " + good + " --seed 3 --out " + (dir / "run").string()) == 0);
    CHECK(fs::exists(dir / "run" / "manifest.json"));
    CHECK(run_tool("walk simulate --field " + (dir / "missing.bin").string() + " --t 1 --out " +
                   (dir / "w.jsonl").string()) == 3);
    CHECK(run_tool("epi chernoff --lambda 100 --eps 0.5") == 0);
    CHECK(run_tool("epi chernoff --lambda 100 --eps 2") == 2);
    fs::remove_all(dir);
}
