// Command-line front end: train teachers, compress them, retrain students,
// and run the knowledge-transfer experiments from declarative config files.

#include <CLI11.hpp>

#include <cstdint>
#include <optional>
#include <string>

#include "edgekt/harness.hpp"

int main(int argc, char** argv) {
  CLI::App app{"edgekt: filter-pruning compression and selective layer-wise knowledge transfer"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 0;
  std::string out_dir, data_dir;
  bool seed_set = false;

  const std::vector<std::string> commands = {"train-teacher", "compress",  "retrain-student",
                                             "kt-incremental", "kt-unseen", "eval",
                                             "report"};
  for (const auto& name : commands) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "run configuration file");
    sub->add_option("--seed", seed, "master seed override")->each([&](const std::string&) {
      seed_set = true;
    });
    sub->add_option("--out", out_dir, "output directory override");
    sub->add_option("--data", data_dir, "dataset directory override");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;  // usage problems are config errors
  }

  edgekt::harness::CliOverrides overrides;
  if (seed_set) overrides.seed = seed;
  if (!out_dir.empty()) overrides.out = out_dir;
  if (!data_dir.empty()) overrides.data = data_dir;

  const std::string command = app.get_subcommands().front()->get_name();
  if (command != "report" && config_path.empty()) {
    std::fprintf(stderr, "config error: %s requires --config <path>\n", command.c_str());
    return 2;
  }
  return edgekt::harness::run_command(command, config_path, overrides);
}
