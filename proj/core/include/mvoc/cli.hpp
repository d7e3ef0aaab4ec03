#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvoc/eval.hpp"
#include "mvoc/nets.hpp"
#include "mvoc/scenegen.hpp"
#include "mvoc/train.hpp"

namespace mvoc::cli {

inline constexpr const char* kToolVersion = "0.1.0";

// One config file drives every subcommand; sections are optional and default
// to the values in the corresponding module. Command line flags override
// individual fields after the file is loaded.
struct ExperimentConfig {
  DatasetConfig dataset;
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;
  std::string data_root;  // paths.data_root; flags and MVOC_DATA_ROOT also apply
  bool explicit_data_stats = false;  // model section pinned data_mean/data_std

  nlohmann::json to_json() const;
};

ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& file);

// Timestep list for `--targets`: comma-separated integers, integer ranges
// ("1..8"), and fractional annotations; each value must lie in (0, V].
std::vector<double> parse_targets(const std::string& text, int num_viewpoints);

// Images side by side on a white canvas, all required to be [H, W, 3].
Tensor image_grid(const std::vector<Tensor>& images);

// Entry point for the `mvoc` tool; args excludes the program name.
// Returns 0 on success, 1 on runtime failure, 2 on usage or config errors.
int run(const std::vector<std::string>& args);

}  // namespace mvoc::cli
