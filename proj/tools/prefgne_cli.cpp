// prefgne: run preference-driven GNE learning experiments.
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "prefgne/bench.hpp"
#include "prefgne/errors.hpp"

namespace {

int run_command(const std::string& config_path, std::optional<std::uint64_t> seed, std::optional<int> repeat,
                std::optional<std::string> out) {
  prefgne::ExperimentConfig cfg = prefgne::load_config(config_path);
  if (seed) cfg.seed = *seed;
  if (repeat) {
    if (*repeat < 1) throw prefgne::ConfigError("--repeat must be >= 1");
    cfg.repeat = *repeat;
  }
  if (out) cfg.out_dir = *out;
  const auto records = prefgne::run_repeated(cfg, cfg.out_dir);
  for (const auto& r : records) {
    std::cout << r.problem << " seed " << r.seed << ": " << r.iterations.rows.size() << " iterations, "
              << r.queries << " queries, " << r.wall_seconds << " s";
    for (std::size_t j = 0; j < r.metric_names.size(); ++j) {
      std::cout << ", " << r.metric_names[j] << " = " << r.final_metrics[j];
    }
    std::cout << "\n";
  }
  std::cout << "results in " << cfg.out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learn generalized Nash equilibria from pairwise preference queries"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> repeat;
  std::optional<std::string> out;
  auto* run = app.add_subcommand("run", "run an experiment from a JSON config");
  run->add_option("config", config_path, "config file")->required();
  run->add_option("--seed", seed, "run seed (overrides the config)");
  run->add_option("--repeat", repeat, "number of seeds, starting at --seed");
  run->add_option("--out", out, "output directory");

  app.add_subcommand("list-problems", "list registered problems");

  std::string run_dir;
  auto* evaluate = app.add_subcommand("evaluate", "recompute final metrics from a run directory");
  evaluate->add_option("run-dir", run_dir, "directory written by run")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (run->parsed()) return run_command(config_path, seed, repeat, out);
    if (app.got_subcommand("list-problems")) {
      const auto& reg = prefgne::default_registry();
      for (const auto& id : reg.ids()) {
        const auto& spec = reg.get(id);
        std::printf("%-20s delta=%g k_max=%d  %s\n", id.c_str(), spec.default_delta, spec.default_k_max,
                    spec.description.c_str());
      }
      return 0;
    }
    if (evaluate->parsed()) {
      for (const auto& [name, value] : prefgne::evaluate_run_dir(run_dir)) {
        std::printf("%s: %.17g\n", name.c_str(), value);
      }
      return 0;
    }
  } catch (const prefgne::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
