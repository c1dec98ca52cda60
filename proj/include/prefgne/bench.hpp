#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include "json.hpp"

#include "prefgne/active_loop.hpp"
#include "prefgne/game_model.hpp"

namespace prefgne {

inline constexpr const char* kCsvSchema = "prefgne-iterations/1";

struct ExperimentConfig {
  std::string problem;
  nlohmann::json params = nlohmann::json::object();  // problem-specific section
  LoopConfig loop;
  std::uint64_t seed = 0;
  std::string out_dir = "runs";
  int repeat = 1;

  /// Document form with every default filled in.
  nlohmann::json to_json() const;
};

/// A constructed problem: the game, its oracle and how to score an iterate.
struct ProblemInstance {
  ConstrainedGame game;
  std::shared_ptr<PreferenceOracle> oracle;
  std::vector<bool> zero_coupling;
  std::optional<Eigen::VectorXd> reference;  // known GNE, if any
  std::vector<std::string> metric_names;
  /// Metrics of the learned equilibrium at iteration k (k = k_max is the final one).
  std::function<std::vector<double>(const Eigen::VectorXd& x, int k, int k_max)> metrics;
};

struct ProblemSpec {
  std::string id;
  std::string description;
  double default_delta = 1.0;
  int default_k_max = 100;
  /// Keys accepted in the problem section; anything else is rejected.
  std::vector<std::string> param_keys;
  std::function<ProblemInstance(const nlohmann::json& params)> build;
};

class ProblemRegistry {
 public:
  void add(ProblemSpec spec);
  const ProblemSpec& get(const std::string& id) const;
  bool contains(const std::string& id) const { return specs_.count(id) > 0; }
  std::vector<std::string> ids() const;

 private:
  std::map<std::string, ProblemSpec> specs_;
};

/// Registry holding the built-in problems.
ProblemRegistry& default_registry();
void register_problem(ProblemSpec spec);

ExperimentConfig parse_config(const nlohmann::json& doc, const ProblemRegistry& registry = default_registry());
ExperimentConfig load_config(const std::filesystem::path& path, const ProblemRegistry& registry = default_registry());

/// Header plus one row per iteration; statuses and labels are stored as numbers.
struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  std::size_t column(const std::string& name) const;
  bool operator==(const CsvTable& other) const;  // NaN entries compare equal
};

struct RunRecord {
  std::string problem;
  std::uint64_t seed = 0;
  CsvTable iterations;
  std::vector<Eigen::VectorXd> thetas;
  Eigen::VectorXd x_final;
  std::vector<std::string> metric_names;
  std::vector<double> final_metrics;
  std::size_t queries = 0;
  double wall_seconds = 0.0;
};

/// Runs one seed. When `flush_dir` is set, the rows completed before an error are
/// written there as iterations.partial.csv before the error is rethrown.
RunRecord run_experiment(const ExperimentConfig& cfg, const ProblemRegistry& registry = default_registry(),
                         const std::optional<std::filesystem::path>& flush_dir = std::nullopt);

void export_csv(const CsvTable& table, const std::filesystem::path& path);
CsvTable import_csv(const std::filesystem::path& path);

/// Writes config.json, iterations.csv, theta.csv and summary.txt into `dir`.
void write_run_dir(const ExperimentConfig& cfg, const RunRecord& record, const std::filesystem::path& dir);

struct Aggregate {
  std::string name;
  double median = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
};

/// Median and quartiles of the final-row metric columns of each table.
std::vector<Aggregate> aggregate(const std::vector<CsvTable>& runs, const std::vector<std::string>& metric_names);

/// Runs seeds seed, seed+1, ... into <out>/seed-<s>/ and writes aggregate.csv.
std::vector<RunRecord> run_repeated(const ExperimentConfig& cfg, const std::filesystem::path& out,
                                    const ProblemRegistry& registry = default_registry());

/// Recomputes the final metrics of a run directory from its stored theta.
std::vector<std::pair<std::string, double>> evaluate_run_dir(const std::filesystem::path& dir,
                                                             const ProblemRegistry& registry = default_registry());

double median(std::vector<double> v);
double quantile(std::vector<double> v, double q);

}  // namespace prefgne
