#pragma once

// JSON experiment configuration. A config file looks like
//   {"experiment": "reconstruct", "seed": 7, "output_dir": "out", "params": {...}}
// where "params" overrides individual fields of the experiment's defaults.
// Unknown keys are rejected.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "humankernel/experiments.hpp"
#include "humankernel/occam.hpp"

namespace hk {

struct ExperimentConfig {
  std::string experiment;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> output_dir;
  nlohmann::json params = nlohmann::json::object();
};

ExperimentConfig load_experiment_config(const std::filesystem::path& path);
ExperimentConfig parse_experiment_config(const nlohmann::json& j);

// Defaults overridden by the keys present in `params`.
ReconstructionConfig reconstruction_config(const nlohmann::json& params);
ProgressiveConfig progressive_config(const nlohmann::json& params);
UnconventionalConfig unconventional_config(const nlohmann::json& params);
OccamConfig occam_config(const nlohmann::json& params);
BiasConfig bias_config(const nlohmann::json& params);

// Fully resolved parameter records, as written next to experiment outputs.
nlohmann::json to_json_params(const ReconstructionConfig& c);
nlohmann::json to_json_params(const ProgressiveConfig& c);
nlohmann::json to_json_params(const UnconventionalConfig& c);
nlohmann::json to_json_params(const OccamConfig& c);
nlohmann::json to_json_params(const BiasConfig& c);

}  // namespace hk
