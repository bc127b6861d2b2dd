#include "humankernel/runner.hpp"

#include <stdexcept>

#include "humankernel/config.hpp"
#include "humankernel/responses.hpp"

namespace hk {

using nlohmann::json;

const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names = {"reconstruct", "progressive", "unconventional", "occam", "bias"};
  return names;
}

RunOutcome run_experiment(const std::string& experiment, const json& params, std::uint64_t seed,
                          const std::filesystem::path& output_dir) {
  RunOutcome out;
  out.experiment = experiment;
  out.seed = seed;
  Report report;
  if (experiment == "reconstruct") {
    const auto cfg = reconstruction_config(params);
    out.params = to_json_params(cfg);
    report = run_reconstruction(cfg, seed).report;
  } else if (experiment == "progressive") {
    const auto cfg = progressive_config(params);
    out.params = to_json_params(cfg);
    report = run_progressive(cfg, seed).report;
  } else if (experiment == "unconventional") {
    const auto cfg = unconventional_config(params);
    out.params = to_json_params(cfg);
    report = run_unconventional(cfg, seed).report;
  } else if (experiment == "occam") {
    const auto cfg = occam_config(params);
    out.params = to_json_params(cfg);
    report = run_occam(cfg, seed).report;
  } else if (experiment == "bias") {
    const auto cfg = bias_config(params);
    out.params = to_json_params(cfg);
    report = run_bias_study(cfg, seed).report;
  } else {
    throw std::invalid_argument("unknown experiment '" + experiment + "'");
  }
  out.summary = report.summary;
  std::filesystem::create_directories(output_dir);
  const json config = {{"experiment", experiment}, {"seed", seed}, {"params", out.params}};
  write_file_atomic(output_dir / "config.json", config.dump(2) + "\n");
  out.manifest = emit_report(report, output_dir);
  return out;
}

}  // namespace hk
