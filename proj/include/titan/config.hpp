#pragma once

// Run configuration: one flat JSON object whose keys mirror the adaptation
// hyper-parameter names. Precedence, lowest first: built-in defaults, the
// config file (or the "config" object of a manifest), TITAN_SEED, then
// command-line overrides.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "titan/adaptation.hpp"
#include "titan/detector.hpp"
#include "titan/errors.hpp"
#include "titan/synth.hpp"

namespace titan {

/// Unknown key, wrong type, malformed document or out-of-range value.
class ConfigError : public InputError {
public:
    using InputError::InputError;
};

struct RunConfig {
    std::uint64_t seed = 1;
    std::string out_dir = "titan-out";

    DetectorConfig detector;

    // Datasets are generated from these specs unless a file path is given.
    DomainShiftSpec source_shift;
    DomainShiftSpec target_shift;
    int source_train_size = 1000;
    int source_val_size = 200;
    int target_train_size = 400;
    int target_val_size = 300;
    std::string source_train_path, source_val_path, target_train_path, target_val_path;

    PretrainConfig pretrain;
    AdaptConfig adapt;

    std::string checkpoint;           // input checkpoint of adapt, partition, eval and bound
    std::string eval_split = "target_val";
    std::string eval_group = "model";
    std::vector<double> fpi_points = kDefaultFpiPoints;
    double epsilon = 1.0;
    double data_norm = 1.0;  // ||X||_2 bound on discriminator inputs

    RunConfig();

    /// Throws ConfigError naming the offending key.
    void validate() const;

    /// Seeds of each stochastic stage, all derived from the root seed.
    std::uint64_t init_seed() const;
    std::uint64_t pretrain_seed() const;
    std::uint64_t adapt_seed() const;
    std::uint64_t data_seed(const std::string& split) const;
};

nlohmann::ordered_json config_to_json(const RunConfig& cfg);
/// Applies every key of a flat object onto cfg. Unknown keys are errors.
void apply_config_json(RunConfig& cfg, const nlohmann::ordered_json& j);
/// Sets one key from its command-line text.
void apply_override(RunConfig& cfg, const std::string& key, const std::string& value);
std::vector<std::string> config_keys();

/// Parses JSON text; syntax errors report line and column.
nlohmann::ordered_json parse_json_text(const std::string& text, const std::string& origin);

struct ConfigSources {
    std::filesystem::path config_file;    // flat config object
    std::filesystem::path manifest_file;  // replays manifest["config"]
    const char* env_seed = nullptr;       // TITAN_SEED
    std::vector<std::pair<std::string, std::string>> overrides;
};

RunConfig resolve_config(const ConfigSources& src);

}  // namespace titan
