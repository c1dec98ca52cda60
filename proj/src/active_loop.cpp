#include "prefgne/active_loop.hpp"

#include <cmath>
#include <limits>

#include "prefgne/errors.hpp"

namespace prefgne {

void ScheduleConfig::validate() const {
  auto require = [](bool ok, const char* rule) {
    if (!ok) throw ConfigError(std::string("schedule: ") + rule);
  };
  require(delta > 0.0, "delta must be > 0");
  require(sigma >= 0.0, "sigma must be >= 0");
  require(delta_floor >= 0.0 && delta_floor <= delta, "delta_floor must lie in [0, delta]");
  require(sigma_floor >= 0.0 && sigma_floor <= sigma, "sigma_floor must lie in [0, sigma]");
  require(p_delta >= 1.0, "p_delta must be >= 1");
  require(p_sigma >= 1.0, "p_sigma must be >= 1");
  require(k_max >= 1, "k_max must be >= 1");
}

namespace {

double decay(int k, int k_max, double initial, double power, double floor) {
  if (k < 1 || k > k_max) {
    throw Error("schedule: iteration " + std::to_string(k) + " outside [1, " + std::to_string(k_max) + "]");
  }
  const double frac = 1.0 - static_cast<double>(k) / static_cast<double>(k_max);
  return std::max(initial * std::pow(frac, power), floor);
}

ConstrainedGame with_objectives(const ConstrainedGame& game, std::vector<QuadraticAgentObjective> objectives) {
  ConstrainedGame g = game;
  g.objectives = std::move(objectives);
  g.validate();
  return g;
}

}  // namespace

double delta_schedule(int k, const ScheduleConfig& cfg) {
  return decay(k, cfg.k_max, cfg.delta, cfg.p_delta, cfg.delta_floor);
}

double sigma_schedule(int k, const ScheduleConfig& cfg) {
  return decay(k, cfg.k_max, cfg.sigma, cfg.p_sigma, cfg.sigma_floor);
}

std::string to_string(ExplorationMode mode) {
  return mode == ExplorationMode::uniform ? "uniform" : "space-filling";
}

ExplorationMode exploration_mode_from_string(const std::string& s) {
  if (s == "uniform") return ExplorationMode::uniform;
  if (s == "space-filling") return ExplorationMode::space_filling;
  throw ConfigError("unknown exploration mode \"" + s + "\" (expected uniform or space-filling)");
}

Rng split_rng(std::uint64_t seed, std::uint64_t k, std::uint64_t agent, std::uint64_t purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(agent),
                    static_cast<std::uint32_t>(purpose)};
  return Rng(seq);
}

std::vector<QuadraticAgentObjective> surrogate_objectives(const std::vector<ThetaVector>& thetas) {
  std::vector<QuadraticAgentObjective> out;
  out.reserve(thetas.size());
  for (const auto& t : thetas) out.push_back(t.objective());
  return out;
}

Eigen::VectorXd space_filling_center(const std::vector<Eigen::VectorXd>& candidates,
                                     const PreferenceDataset& dataset) {
  if (candidates.empty()) throw Error("space filling: no candidates");
  double best_score = -1.0;
  std::size_t best = 0;
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    double score = std::numeric_limits<double>::infinity();
    for (const auto& s : dataset) {
      score = std::min({score, (candidates[c] - s.x1).norm(), (candidates[c] - s.x2).norm()});
    }
    if (score > best_score) {
      best_score = score;
      best = c;
    }
  }
  return candidates[best];
}

Eigen::VectorXd exploration_center(const ConstrainedGame& game, std::size_t agent, const LoopConfig& cfg,
                                   const PreferenceDataset& dataset, Rng& rng) {
  const BoxSet& box = game.sampling_box(agent);
  if (cfg.exploration == ExplorationMode::uniform || dataset.empty()) return box.sample(rng);
  std::vector<Eigen::VectorXd> candidates;
  candidates.reserve(cfg.space_filling_candidates);
  for (std::size_t c = 0; c < cfg.space_filling_candidates; ++c) candidates.push_back(box.sample(rng));
  return space_filling_center(candidates, dataset);
}

GNESolution query_gnep(const ConstrainedGame& game, const std::vector<ThetaVector>& thetas,
                       const std::vector<Eigen::VectorXd>& centers, double delta, const GneOptions& options) {
  if (delta < 0.0) throw Error("query game: delta must be >= 0");
  if (centers.size() != game.agents()) throw DimensionError("query game: one center per agent is required");
  Exploration exploration;
  for (const auto& c : centers) exploration.push_back({delta, c});
  return solve_gne(with_objectives(game, surrogate_objectives(thetas)), exploration, options);
}

GNESolution learned_equilibrium(const ConstrainedGame& game, const std::vector<ThetaVector>& thetas,
                                const GneOptions& options) {
  return solve_gne(with_objectives(game, surrogate_objectives(thetas)), {}, options);
}

Eigen::VectorXd perturb(const Eigen::VectorXd& best, double sigma, const Eigen::VectorXd& w) {
  if (w.size() != best.size()) throw DimensionError("perturbation: noise dimension mismatch");
  const double scale = best.size() == 0 ? 0.0 : best.lpNorm<Eigen::Infinity>();
  return best + sigma * scale * w;
}

PerturbedResponse perturbed_best_response(const ConstrainedGame& game, std::size_t agent,
                                          const ThetaVector& theta, const Eigen::VectorXd& x_others,
                                          double sigma, Rng& rng) {
  PerturbedResponse out;
  out.best = best_response(game, agent, theta.objective(), x_others);
  std::uniform_real_distribution<double> noise(-0.5, 0.5);
  Eigen::VectorXd w(out.best.size());
  for (Eigen::Index j = 0; j < w.size(); ++j) w[j] = noise(rng);
  out.perturbed = perturb(out.best, sigma, w);
  return out;
}

std::vector<PreferenceDataset> initial_datasets(const ConstrainedGame& game, PreferenceOracle& oracle,
                                                std::size_t m0, std::uint64_t seed, double tol_eq) {
  std::vector<PreferenceDataset> datasets(game.agents());
  for (std::size_t i = 0; i < game.agents(); ++i) {
    Rng rng = split_rng(seed, 0, i, 1);
    datasets[i].reserve(m0);
    for (std::size_t j = 0; j < m0; ++j) {
      const Eigen::VectorXd x = sample_feasible(game, 1, rng, tol_eq).front();
      PreferenceSample s;
      s.x1 = game.layout.extract(i, x);
      s.x_others = game.layout.others(i, x);
      s.x2 = sample_feasible_block(game, i, s.x_others, rng, tol_eq);
      s.label = oracle.query(i, s.x1, s.x2, s.x_others);
      datasets[i].push_back(std::move(s));
    }
  }
  return datasets;
}

ALState initial_state(const ConstrainedGame& game, PreferenceOracle& oracle, const LoopConfig& cfg,
                      std::uint64_t seed) {
  cfg.train.validate();
  if (cfg.m0 < 1) throw ConfigError("loop: m0 must be >= 1");
  if (!cfg.zero_coupling.empty() && cfg.zero_coupling.size() != game.agents()) {
    throw ConfigError("loop: zero_coupling needs one entry per agent");
  }
  ALState state;
  state.seed = seed;
  state.datasets = initial_datasets(game, oracle, cfg.m0, seed, cfg.tol_eq);
  for (std::size_t i = 0; i < game.agents(); ++i) {
    ThetaVector theta = ThetaVector::initial({game.layout.dim(i), game.layout.others_dim(i)}, cfg.train.chol_floor);
    if (!cfg.zero_coupling.empty() && cfg.zero_coupling[i]) theta.fix_coupling_to_zero();
    state.thetas.push_back(train(theta, state.datasets[i], cfg.train).theta);
  }
  state.last_query = Eigen::VectorXd::Zero(game.layout.total());
  return state;
}

ALState al_iteration(const ALState& state, PreferenceOracle& oracle, const ConstrainedGame& game,
                     const LoopConfig& cfg, const IterationHook& hook) {
  const int k = state.k + 1;
  if (k > cfg.schedule.k_max) throw Error("loop: k_max reached");
  try {
    ALState next = state;
    IterationRecord rec;
    rec.k = k;
    rec.delta = delta_schedule(k, cfg.schedule);
    rec.sigma = sigma_schedule(k, cfg.schedule);

    GneOptions query_opts = cfg.gne;
    query_opts.warm_start = state.last_query;

    const std::size_t n_agents = game.agents();
    std::vector<PerturbedResponse> responses(n_agents);
    GNESolution query;
    for (int attempt = 0;; ++attempt) {
      std::vector<Eigen::VectorXd> centers;
      for (std::size_t i = 0; i < n_agents; ++i) {
        Rng rng = split_rng(state.seed, static_cast<std::uint64_t>(k), i, 10 + static_cast<std::uint64_t>(attempt));
        centers.push_back(exploration_center(game, i, cfg, state.datasets[i], rng));
      }
      query = query_gnep(game, state.thetas, centers, rec.delta, query_opts);
      try {
        for (std::size_t i = 0; i < n_agents; ++i) {
          Rng rng = split_rng(state.seed, static_cast<std::uint64_t>(k), i, 100 + static_cast<std::uint64_t>(attempt));
          responses[i] = perturbed_best_response(game, i, state.thetas[i], game.layout.others(i, query.x), rec.sigma, rng);
        }
        rec.retries = attempt;
        break;
      } catch (const InfeasibleError&) {
        if (attempt >= cfg.max_retries) throw;
      }
    }
    rec.query_point = query.x;
    rec.query_status = query.status;
    rec.query_residual = query.residual;

    for (std::size_t i = 0; i < n_agents; ++i) {
      PreferenceSample s;
      s.x1 = game.layout.extract(i, query.x);
      s.x2 = responses[i].perturbed;
      s.x_others = game.layout.others(i, query.x);
      s.label = oracle.query(i, s.x1, s.x2, s.x_others);
      rec.labels.push_back(s.label);
      next.datasets[i].push_back(std::move(s));
    }
    for (std::size_t i = 0; i < n_agents; ++i) {
      next.thetas[i] = train(state.thetas[i], next.datasets[i], cfg.train).theta;
    }

    if (cfg.track_learned_equilibrium) {
      GneOptions opts = cfg.gne;
      opts.warm_start = query.x;
      const GNESolution learned = learned_equilibrium(game, next.thetas, opts);
      rec.learned_point = learned.x;
      rec.learned_status = learned.status;
      rec.learned_residual = learned.residual;
    }
    next.last_query = query.x;
    next.k = k;
    if (hook) rec.metrics = hook(next, rec);
    next.history.push_back(std::move(rec));
    return next;
  } catch (const IterationError&) {
    throw;
  } catch (const std::exception& e) {
    throw IterationError(k, e.what());
  }
}

RunResult run(PreferenceOracle& oracle, const ConstrainedGame& game, const LoopConfig& cfg, std::uint64_t seed,
              const IterationHook& hook) {
  RunResult result;
  result.state = initial_state(game, oracle, cfg, seed);
  for (int k = 1; k <= cfg.schedule.k_max; ++k) {
    result.state = al_iteration(result.state, oracle, game, cfg, hook);
  }
  GneOptions opts = cfg.gne;
  opts.warm_start = result.state.last_query;
  result.final_solution = learned_equilibrium(game, result.state.thetas, opts);
  result.x_final = result.final_solution.x;
  return result;
}

}  // namespace prefgne
