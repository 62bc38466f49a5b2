#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace clab {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

/// Invalid configuration; maps to exit code 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ExperimentInfo {
    std::string name;
    std::string statement;  ///< property under test, echoed in output headers
};
const std::vector<ExperimentInfo>& experiment_registry();

/// A run request. `config` is JSON text (an object); keys not known to the
/// experiment are violations. Seed and reps given here override the config.
struct ExperimentConfig {
    std::string experiment;
    std::string config = "{}";
    std::optional<std::uint64_t> seed;
    std::optional<std::uint64_t> reps;
    std::string out_dir = ".";
};

/// Cross-checks without running anything; empty when the config is valid.
std::vector<std::string> validate(const ExperimentConfig& cfg);

struct RunManifest {
    std::string experiment;
    std::string statement;
    std::string config_hash;
    std::string code_version;
    std::uint64_t master_seed = 0;
    std::uint64_t field_seed = 0;  ///< after any resampling of the origin cluster
    std::vector<std::uint64_t> replica_seeds;
    double wall_seconds = 0.0;
    std::vector<std::pair<std::string, std::string>> outputs;  ///< file name, fnv1a64 digest
};

/// Runs the experiment and writes its outputs plus manifest.json into
/// out_dir. Throws ConfigError for invalid configurations; module failures
/// propagate as other exceptions.
RunManifest run_experiment(const ExperimentConfig& cfg);

/// run_experiment with exit-code mapping; the diagnostic goes to `message`.
int run_experiment_checked(const ExperimentConfig& cfg, RunManifest* manifest, std::string* message);

std::string hex_digest(const std::string& bytes);

}  // namespace clab
