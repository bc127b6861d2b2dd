#pragma once

// Runs a named experiment from JSON parameters and writes its report, the
// resolved parameters (config.json) and the manifest to an output directory.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "humankernel/report.hpp"

namespace hk {

// reconstruct, progressive, unconventional, occam, bias
const std::vector<std::string>& experiment_names();

struct RunOutcome {
  std::string experiment;
  std::uint64_t seed = 0;
  nlohmann::json params;   // fully resolved
  nlohmann::json summary;  // the report summary
  Manifest manifest;
};

// Throws std::invalid_argument for an unknown experiment or bad params.
RunOutcome run_experiment(const std::string& experiment, const nlohmann::json& params, std::uint64_t seed,
                          const std::filesystem::path& output_dir);

}  // namespace hk
