#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "prefgne/game_model.hpp"
#include "prefgne/gne_solver.hpp"
#include "prefgne/preference_learning.hpp"

namespace prefgne {

struct ScheduleConfig {
  double delta = 1.0;
  double sigma = 0.3;
  double delta_floor = 0.001;
  double sigma_floor = 0.001;
  double p_delta = 5.0;
  double p_sigma = 4.0;
  int k_max = 100;

  /// delta > 0, sigma >= 0, floors in [0, initial value], exponents >= 1, k_max >= 1.
  void validate() const;
};

double delta_schedule(int k, const ScheduleConfig& cfg);
double sigma_schedule(int k, const ScheduleConfig& cfg);

enum class ExplorationMode { uniform, space_filling };

std::string to_string(ExplorationMode mode);
ExplorationMode exploration_mode_from_string(const std::string& s);

struct LoopConfig {
  ScheduleConfig schedule;
  TrainConfig train;
  ExplorationMode exploration = ExplorationMode::uniform;
  std::size_t m0 = 50;
  std::size_t space_filling_candidates = 512;
  int max_retries = 5;
  double tol_eq = kDefaultTolEq;
  GneOptions gne;
  /// Agents whose surrogate coupling A_i is pinned to zero.
  std::vector<bool> zero_coupling;
  /// Solve the learned game (no exploration) after every iteration.
  bool track_learned_equilibrium = true;
};

/// Per-iteration trace entry.
struct IterationRecord {
  int k = 0;
  double delta = 0.0;
  double sigma = 0.0;
  Eigen::VectorXd query_point;      // x^k from the exploration game
  GneStatus query_status = GneStatus::converged;
  double query_residual = 0.0;
  Eigen::VectorXd learned_point;    // equilibrium of the learned game at theta^k
  GneStatus learned_status = GneStatus::converged;
  double learned_residual = 0.0;
  std::vector<int> labels;
  int retries = 0;
  std::vector<double> metrics;      // filled by an IterationHook
};

struct ALState {
  int k = 0;
  std::uint64_t seed = 0;
  std::vector<ThetaVector> thetas;
  std::vector<PreferenceDataset> datasets;
  std::vector<IterationRecord> history;
  Eigen::VectorXd last_query;  // warm start for the next query game

  std::size_t dataset_size(std::size_t agent) const { return datasets.at(agent).size(); }
};

/// Deterministic generator for (seed, iteration, agent, purpose).
Rng split_rng(std::uint64_t seed, std::uint64_t k, std::uint64_t agent, std::uint64_t purpose);

/// Surrogate objectives for the current parameters.
std::vector<QuadraticAgentObjective> surrogate_objectives(const std::vector<ThetaVector>& thetas);

/// Candidate maximizing the minimum distance to every x1/x2 in the dataset.
Eigen::VectorXd space_filling_center(const std::vector<Eigen::VectorXd>& candidates,
                                     const PreferenceDataset& dataset);

Eigen::VectorXd exploration_center(const ConstrainedGame& game, std::size_t agent, const LoopConfig& cfg,
                                   const PreferenceDataset& dataset, Rng& rng);

/// Equilibrium of the surrogate game with exploration weight delta around the centers.
GNESolution query_gnep(const ConstrainedGame& game, const std::vector<ThetaVector>& thetas,
                       const std::vector<Eigen::VectorXd>& centers, double delta, const GneOptions& options);

struct PerturbedResponse {
  Eigen::VectorXd best;       // surrogate best response
  Eigen::VectorXd perturbed;  // best + sigma * w * |best|_inf, w ~ U[-0.5, 0.5]
};

PerturbedResponse perturbed_best_response(const ConstrainedGame& game, std::size_t agent,
                                          const ThetaVector& theta, const Eigen::VectorXd& x_others,
                                          double sigma, Rng& rng);

/// The noise formula alone, for a given w.
Eigen::VectorXd perturb(const Eigen::VectorXd& best, double sigma, const Eigen::VectorXd& w);

/// Random feasible pairs labelled by the oracle, M0 per agent.
std::vector<PreferenceDataset> initial_datasets(const ConstrainedGame& game, PreferenceOracle& oracle,
                                                std::size_t m0, std::uint64_t seed, double tol_eq);

/// Called after each iteration; the returned values are stored in the record.
using IterationHook = std::function<std::vector<double>(const ALState&, const IterationRecord&)>;

ALState initial_state(const ConstrainedGame& game, PreferenceOracle& oracle, const LoopConfig& cfg,
                      std::uint64_t seed);

/// One loop iteration; the input state is left untouched on error.
ALState al_iteration(const ALState& state, PreferenceOracle& oracle, const ConstrainedGame& game,
                     const LoopConfig& cfg, const IterationHook& hook = {});

struct RunResult {
  Eigen::VectorXd x_final;
  GNESolution final_solution;
  ALState state;
};

RunResult run(PreferenceOracle& oracle, const ConstrainedGame& game, const LoopConfig& cfg, std::uint64_t seed,
              const IterationHook& hook = {});

/// Equilibrium of the learned game (delta = 0).
GNESolution learned_equilibrium(const ConstrainedGame& game, const std::vector<ThetaVector>& thetas,
                                const GneOptions& options);

}  // namespace prefgne
