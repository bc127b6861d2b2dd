// humankernel: run experiments, host the study service, export collected data.

#include <csignal>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "humankernel/config.hpp"
#include "humankernel/responses.hpp"
#include "humankernel/runner.hpp"
#include "humankernel/service.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kDefaultSeed = 1;

hk::HttpServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

struct Common {
  std::optional<std::uint64_t> seed;
  std::optional<fs::path> out;
  std::optional<fs::path> config;
};

void add_common(CLI::App* cmd, Common& c, bool with_config = false) {
  cmd->add_option("--seed", c.seed, "Random seed (default: config file, else 1)");
  cmd->add_option("--out", c.out, "Output directory");
  if (with_config) cmd->add_option("--config", c.config, "JSON experiment config file")->check(CLI::ExistingFile);
}

void run(const std::string& experiment, const Common& c) {
  hk::ExperimentConfig cfg;
  if (c.config) {
    cfg = hk::load_experiment_config(*c.config);
    if (!cfg.experiment.empty() && cfg.experiment != experiment)
      throw std::invalid_argument("config file is for '" + cfg.experiment + "', not '" + experiment + "'");
  }
  const std::uint64_t seed = c.seed.value_or(cfg.seed.value_or(kDefaultSeed));
  const fs::path out = c.out.value_or(cfg.output_dir.value_or(fs::path("results") / experiment));
  const hk::RunOutcome r = hk::run_experiment(experiment, cfg.params, seed, out);
  std::cout << experiment << " (seed " << seed << ") -> " << out.string() << "\n";
  for (const auto& p : r.manifest.written) std::cout << "  wrote " << p.filename().string() << "\n";
  for (const auto& o : r.manifest.omitted) std::cout << "  omitted " << o << " (empty)\n";
  std::cout << r.summary.dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Kernel learning from extrapolations: experiments, study service and data export"};
  app.require_subcommand(1);

  std::map<std::string, Common> common;
  for (const auto& name : hk::experiment_names()) {
    auto* cmd = app.add_subcommand(name, "Run the " + name + " experiment");
    add_common(cmd, common[name], true);
    cmd->callback([name, &common] { run(name, common[name]); });
  }

  Common init_c;
  int occam_tasks = 10;
  auto* init = app.add_subcommand("init-study", "Create a study directory for the service");
  add_common(init, init_c);
  init->add_option("--occam-tasks", occam_tasks, "Number of ranking tasks")->check(CLI::NonNegativeNumber);
  init->callback([&] {
    const fs::path root = init_c.out.value_or("study");
    hk::init_default_study(root, init_c.seed.value_or(kDefaultSeed), occam_tasks);
    std::cout << "study written to " << root.string() << "\n";
  });

  Common serve_c;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::optional<fs::path> static_dir;
  auto* serve = app.add_subcommand("serve", "Serve a study directory over HTTP, creating it if missing");
  add_common(serve, serve_c);
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port (0 picks a free one)")->check(CLI::Range(0, 65535));
  serve->add_option("--static", static_dir, "Directory of frontend files served at /")->check(CLI::ExistingDirectory);
  serve->callback([&] {
    const fs::path root = serve_c.out.value_or("study");
    if (!fs::exists(root / "study.json")) {
      hk::init_default_study(root, serve_c.seed.value_or(kDefaultSeed), 10);
      std::cout << "created a new study in " << root.string() << "\n";
    }
    hk::StudyService service(root);
    hk::HttpServer server(service, static_dir);
    const int bound = server.bind(host, port);
    g_server = &server;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::cout << "serving " << root.string() << " on http://" << host << ":" << bound << std::endl;
    server.listen();
    g_server = nullptr;
  });

  Common export_c;
  fs::path study = "study";
  auto* exp = app.add_subcommand("export", "Export collected responses and rankings");
  exp->add_option("--out", export_c.out, "Output directory");
  exp->add_option("--study", study, "Study directory")->check(CLI::ExistingDirectory);
  exp->callback([&] {
    const fs::path out = export_c.out.value_or("export");
    fs::create_directories(out);
    const auto stimuli = hk::load_stimuli(study / "stimuli.jsonl");
    const auto responses = hk::load_responses(study / "responses.jsonl");
    hk::write_file_atomic(out / "responses.csv", hk::responses_csv(stimuli, responses));
    for (const char* f : {"responses.jsonl", "rankings.jsonl", "stimuli.jsonl", "tasks.jsonl"})
      if (fs::exists(study / f)) hk::write_file_atomic(out / f, hk::read_file(study / f));
    std::cout << responses.size() << " responses, " << hk::load_rankings(study / "rankings.jsonl").size()
              << " rankings exported to " << out.string() << "\n";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
