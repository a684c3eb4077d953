#pragma once

#include "stainfocus/keyvalue.hpp"
#include "stainfocus/model.hpp"
#include "stainfocus/synthgen.hpp"
#include "stainfocus/training.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace stainfocus {

// Everything a command can be configured with. Serialized as dotted
// `key = value` lines; see known_config_keys() for the full list.
struct RunConfig {
    std::string run_name = "run";
    std::uint64_t seed = 0;

    std::filesystem::path data_dir = "data";
    std::filesystem::path manifest;  // empty: <data_dir>/manifest.csv
    std::filesystem::path out_dir = "out";
    std::filesystem::path checkpoint;

    std::string gen_profile = "default";  // default | uniform
    GenConfig gen;

    TrainConfig train;
    double test_fraction = 0.25;

    int tokens_per_stain = 2;
    int rank_tokens = 2;
    std::vector<int> anchors;
    int cond_hidden = 64;
    std::string stain_context = "a fluorescence image stained with";
    std::string rank_context = "with focus level";

    Variant variant = Variant::E;
    std::optional<BaselineKind> baseline;
    std::vector<std::string> ablation_variants{"A", "B", "C", "D", "E"};
    int ablation_seeds = 3;

    [[nodiscard]] std::filesystem::path manifest_path() const;
    [[nodiscard]] std::filesystem::path run_dir() const { return out_dir / run_name; }
    // Generation config with the stain profile and seed filled in.
    [[nodiscard]] GenConfig resolved_gen() const;
    [[nodiscard]] ModelConfig model_config(const std::vector<std::string>& stains, int levels) const;
};

const std::vector<std::string>& known_config_keys();

// Applies file or flag values on top of `config`; unknown keys and malformed values raise ConfigError.
void apply_key_values(RunConfig& config, const KeyValues& values);
KeyValues to_key_values(const RunConfig& config);
// Defaults, then FLUO_SEED (if set), then the file.
RunConfig load_run_config(const std::optional<std::filesystem::path>& path);

}  // namespace stainfocus
