#include "prefgne/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "prefgne/errors.hpp"
#include "prefgne/gne_solver.hpp"
#include "prefgne/lqr_games.hpp"

namespace prefgne {

namespace {

using nlohmann::json;

std::string join_path(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

void reject_unknown(const json& obj, const std::string& path, const std::set<std::string>& allowed) {
  if (!obj.is_object()) throw ConfigError("config: " + (path.empty() ? std::string("document") : path) +
                                          " must be an object");
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    if (!allowed.count(key)) throw ConfigError("config: unknown key \"" + join_path(path, key) + "\"");
  }
}

template <typename T>
void read(const json& obj, const std::string& path, const std::string& key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: key \"" + join_path(path, key) + "\" has the wrong type");
  }
}

template <typename T>
T param(const json& params, const std::string& key, T fallback) {
  read(params, "params", key, fallback);
  return fallback;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw Error("CSV: cannot parse number \"" + s + "\"");
  return v;
}

double status_code(GneStatus s) {
  switch (s) {
    case GneStatus::converged: return 0.0;
    case GneStatus::max_iterations: return 1.0;
    case GneStatus::non_monotone_warning: return 2.0;
  }
  return -1.0;
}

std::vector<std::string> iteration_columns(std::size_t n, std::size_t agents, bool reference,
                                           const std::vector<std::string>& metrics) {
  std::vector<std::string> cols = {"k", "delta", "sigma"};
  for (std::size_t j = 0; j < n; ++j) cols.push_back("x_" + std::to_string(j + 1));
  cols.insert(cols.end(), {"query_status", "query_residual", "retries"});
  for (std::size_t j = 0; j < n; ++j) cols.push_back("xl_" + std::to_string(j + 1));
  cols.insert(cols.end(), {"learned_status", "learned_residual"});
  if (reference) {
    for (std::size_t j = 0; j < n; ++j) cols.push_back("ref_" + std::to_string(j + 1));
  }
  for (std::size_t i = 0; i < agents; ++i) cols.push_back("label_" + std::to_string(i + 1));
  cols.insert(cols.end(), metrics.begin(), metrics.end());
  return cols;
}

std::vector<double> iteration_row(const IterationRecord& rec, Eigen::Index n,
                                  const std::optional<Eigen::VectorXd>& reference) {
  std::vector<double> row = {static_cast<double>(rec.k), rec.delta, rec.sigma};
  for (Eigen::Index j = 0; j < n; ++j) row.push_back(rec.query_point[j]);
  row.insert(row.end(), {status_code(rec.query_status), rec.query_residual, static_cast<double>(rec.retries)});
  for (Eigen::Index j = 0; j < n; ++j) {
    row.push_back(rec.learned_point.size() == n ? rec.learned_point[j] : std::numeric_limits<double>::quiet_NaN());
  }
  row.insert(row.end(), {status_code(rec.learned_status), rec.learned_residual});
  if (reference) row.insert(row.end(), reference->data(), reference->data() + reference->size());
  for (int label : rec.labels) row.push_back(label);
  row.insert(row.end(), rec.metrics.begin(), rec.metrics.end());
  return row;
}

// ---- built-in problems ------------------------------------------------------

ProblemInstance quadratic_instance(ConstrainedGame game, std::vector<bool> zero_coupling = {}) {
  ProblemInstance inst;
  const GNESolution ref = solve_gne(game);
  if (ref.status != GneStatus::converged) throw Error("problem: reference equilibrium did not converge");
  inst.reference = ref.x;
  inst.oracle = std::shared_ptr<PreferenceOracle>(make_quadratic_oracle(game.objectives));
  inst.zero_coupling = std::move(zero_coupling);
  inst.game = std::move(game);
  inst.metric_names = {"err_inf"};
  const Eigen::VectorXd x_star = *inst.reference;
  inst.metrics = [x_star](const Eigen::VectorXd& x, int, int) {
    return std::vector<double>{(x - x_star).lpNorm<Eigen::Infinity>()};
  };
  return inst;
}

/// Random quadratic game with positive definite symmetric part and an interior NE.
ConstrainedGame random_quadratic_game(std::size_t agents, Eigen::Index dim, double box, double spread,
                                      double coupling, std::uint64_t seed) {
  std::seed_seq seq{seed, std::uint64_t{0x51}};
  Rng rng(seq);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<double> diag(0.5, 1.5);
  const AgentLayout layout(std::vector<Eigen::Index>(agents, dim));
  for (int attempt = 0; attempt < 1000; ++attempt) {
    std::vector<QuadraticAgentObjective> objs;
    for (std::size_t i = 0; i < agents; ++i) {
      Eigen::MatrixXd L = Eigen::MatrixXd::Zero(dim, dim);
      for (Eigen::Index r = 0; r < dim; ++r) {
        L(r, r) = diag(rng);
        for (Eigen::Index c = 0; c < r; ++c) L(r, c) = 0.3 * unit(rng);
      }
      Eigen::MatrixXd A(layout.others_dim(i), dim);
      for (Eigen::Index r = 0; r < A.rows(); ++r)
        for (Eigen::Index c = 0; c < dim; ++c) A(r, c) = coupling * unit(rng);
      objs.emplace_back(L, Eigen::VectorXd::Zero(dim), A);
    }
    const AffineGameOperator F = game_operator(layout, objs);
    const Eigen::MatrixXd sym = 0.5 * (F.M + F.M.transpose());
    if (Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(sym).eigenvalues().minCoeff() < 0.05) continue;
    Eigen::VectorXd x_star(layout.total());
    for (Eigen::Index j = 0; j < x_star.size(); ++j) x_star[j] = spread * unit(rng);
    const Eigen::VectorXd c = -F.M * x_star;
    for (std::size_t i = 0; i < agents; ++i) objs[i].q = layout.extract(i, c);
    std::vector<BoxSet> boxes;
    for (std::size_t i = 0; i < agents; ++i) boxes.push_back(BoxSet::uniform(dim, -box, box));
    return ConstrainedGame(layout, std::move(boxes), AffineConstraints::none(layout.total()), std::move(objs));
  }
  throw Error("synthetic-quadratic: could not draw a monotone game");
}

ProblemInstance build_synthetic(const json& p) {
  if (p.contains("game")) {
    ConstrainedGame game = game_from_json(p.at("game"));
    if (!game.has_objectives()) throw ConfigError("config: params.game needs objectives");
    return quadratic_instance(std::move(game));
  }
  const int agents = param(p, "agents", 2);
  const int dim = param(p, "dim", 1);
  const double box = param(p, "box", 5.0);
  const double spread = param(p, "spread", 1.0);
  const double coupling = param(p, "coupling", 0.5);
  const std::uint64_t seed = param<std::uint64_t>(p, "game_seed", 0);
  if (agents < 1 || dim < 1) throw ConfigError("config: params.agents and params.dim must be >= 1");
  if (!(box > 0.0) || !(spread >= 0.0) || spread > box) {
    throw ConfigError("config: params.box must be > 0 and params.spread in [0, box]");
  }
  return quadratic_instance(random_quadratic_game(static_cast<std::size_t>(agents), dim, box, spread, coupling, seed));
}

ProblemInstance build_lqr(const json& p) {
  const int n_xi = param(p, "n_xi", 6);
  const int m = param(p, "m", 6);
  const int agents = param(p, "agents", 3);
  const std::uint64_t sys_seed = param<std::uint64_t>(p, "system_seed", 0);
  const int horizon = param(p, "horizon", 50);
  const double radius = param(p, "radius", 1.1);
  const double bound = param(p, "bound", 10.0);
  const int eval_states = param(p, "eval_states", 100);
  const int rmse_every = param(p, "rmse_every", 10);
  if (n_xi < 1 || m < 1 || agents < 1 || m % agents != 0) {
    throw ConfigError("config: lqr-game needs n_xi, m, agents >= 1 with m divisible by agents");
  }
  if (horizon < 1 || eval_states < 2 || rmse_every < 1 || !(bound > 0.0) || !(radius > 0.0)) {
    throw ConfigError("config: lqr-game needs horizon >= 1, eval_states >= 2, rmse_every >= 1, bound > 0, radius > 0");
  }

  // Systems whose best-response iteration fails are redrawn from the next seed stream.
  std::optional<lqr::LinearSystem> sys;
  lqr::GainProfile nash;
  std::vector<lqr::LQRCost> costs;
  for (std::uint64_t attempt = 0; attempt < 50 && !sys; ++attempt) {
    std::seed_seq seq{sys_seed, attempt};
    Rng rng(seq);
    lqr::LinearSystem candidate = lqr::random_system(n_xi, m, static_cast<std::size_t>(agents), radius, rng);
    costs = lqr::block_costs(candidate);
    try {
      nash = lqr::nash_gains(candidate, costs, horizon);
    } catch (const Error&) {
      continue;
    }
    if (lqr::spectral_radius(lqr::closed_loop(candidate, nash, candidate.agents())) >= 1.0) continue;
    if (lqr::vectorize(nash).lpNorm<Eigen::Infinity>() > bound) continue;
    sys = std::move(candidate);
  }
  if (!sys) throw Error("lqr-game: no system with a stabilizing Nash solution found for this seed");

  std::seed_seq eval_seq{sys_seed, std::uint64_t{0xE7A1}};
  Rng eval_rng(eval_seq);
  const Eigen::MatrixXd xi0 = lqr::random_initial_states(sys->states(), static_cast<std::size_t>(eval_states), eval_rng);

  ProblemInstance inst;
  inst.game = lqr::gain_game(*sys, bound);
  inst.oracle = std::shared_ptr<PreferenceOracle>(lqr::lqr_preference_oracle(*sys, costs, horizon));
  inst.reference = lqr::vectorize(nash);
  for (int i = 0; i < agents; ++i) inst.metric_names.push_back("dev_" + std::to_string(i + 1));
  inst.metric_names.insert(inst.metric_names.end(), {"max_dev", "rmse"});
  const lqr::LinearSystem s = *sys;
  inst.metrics = [s, costs, nash, xi0, horizon, rmse_every](const Eigen::VectorXd& x, int k, int k_max) {
    const lqr::GainProfile K = lqr::unvectorize(s, x);
    std::vector<double> out;
    double worst = 0.0;
    for (std::size_t i = 0; i < s.agents(); ++i) {
      double dev = std::numeric_limits<double>::infinity();
      try {
        dev = lqr::br_deviation(s, i, costs, K, horizon);
      } catch (const RiccatiDivergence&) {
      }
      out.push_back(dev);
      worst = std::max(worst, dev);
    }
    out.push_back(worst);
    double rmse = std::numeric_limits<double>::quiet_NaN();
    if (k % rmse_every == 0 || k == k_max) {
      Eigen::VectorXd c_learned(xi0.cols()), c_ref(xi0.cols());
      for (Eigen::Index j = 0; j < xi0.cols(); ++j) {
        c_learned[j] = lqr::simulate(s, costs, K, xi0.col(j), horizon).costs.sum();
        c_ref[j] = lqr::simulate(s, costs, nash, xi0.col(j), horizon).costs.sum();
      }
      const double range = c_ref.maxCoeff() - c_ref.minCoeff();
      if (!(range > 0.0)) throw Error("lqr-game: reference costs have zero range");
      rmse = std::sqrt((c_learned - c_ref).squaredNorm() / static_cast<double>(c_ref.size())) / range;
    }
    out.push_back(rmse);
    return out;
  };
  return inst;
}

ProblemSpec literature_stub(const std::string& id, const std::string& citation, Eigen::Index n, std::size_t agents,
                            double delta, int k_max, bool zero_coupling) {
  ProblemSpec spec;
  spec.id = id;
  spec.description = citation + "; n = " + std::to_string(n) + ", N = " + std::to_string(agents) +
                     " (needs transcribed objectives in params.game)";
  spec.default_delta = delta;
  spec.default_k_max = k_max;
  spec.param_keys = {"game"};
  spec.build = [id, citation, n, agents, zero_coupling](const json& p) {
    if (!p.contains("game")) {
      throw ConfigError("problem \"" + id + "\" is a stub: its objectives come from " + citation +
                        " and must be supplied as params.game");
    }
    ConstrainedGame game = game_from_json(p.at("game"));
    if (!game.has_objectives()) throw ConfigError("config: params.game needs objectives");
    if (game.layout.total() != n || game.agents() != agents) {
      throw ConfigError("problem \"" + id + "\" expects n = " + std::to_string(n) + " and N = " +
                        std::to_string(agents));
    }
    return quadratic_instance(std::move(game), std::vector<bool>(agents, zero_coupling));
  };
  return spec;
}

ProblemRegistry make_default_registry() {
  ProblemRegistry reg;
  reg.add({"synthetic-quadratic", "random monotone quadratic game with a known interior NE", 1.0, 60,
           {"agents", "dim", "box", "spread", "coupling", "game_seed", "game"}, build_synthetic});
  reg.add({"lqr-game", "game-theoretic LQR with random unstable dynamics (spectral radius 1.1)", 5.0, 100,
           {"n_xi", "m", "agents", "system_seed", "horizon", "radius", "bound", "eval_states", "rmse_every"},
           build_lqr});
  reg.add(literature_stub("picheny-4.1", "Picheny et al. (J. Global Optim. 2019), Sec. 4.1", 2, 2, 0.5, 80, true));
  reg.add(literature_stub("facchinei-A3", "Facchinei and Kanzow (2009 report), Example A.3", 7, 3, 0.2, 150, false));
  reg.add(literature_stub("pavel-ex1", "Salehisadaghiani and Pavel (CoRR 2017), Example 1, as configured by Fabiani et al.",
                          10, 10, 0.3, 150, false));
  return reg;
}

json schedule_json(const ScheduleConfig& s) {
  return {{"delta", s.delta},           {"sigma", s.sigma},     {"delta_floor", s.delta_floor},
          {"sigma_floor", s.sigma_floor}, {"p_delta", s.p_delta}, {"p_sigma", s.p_sigma},
          {"k_max", s.k_max}};
}

json training_json(const TrainConfig& t) {
  return {{"adam_iters", t.adam_iters},
          {"adam_lr", t.adam_lr},
          {"adam_beta1", t.adam_beta1},
          {"adam_beta2", t.adam_beta2},
          {"adam_eps", t.adam_eps},
          {"lbfgs_max_iters", t.lbfgs_max_iters},
          {"lbfgs_history", t.lbfgs_history},
          {"lbfgs_tol", t.lbfgs_tol},
          {"chol_floor", t.chol_floor},
          {"reg_weight", t.reg_weight},
          {"eps_d", t.eps_d},
          {"p_clamp", t.p_clamp},
          {"dissimilarity", to_string(t.dissimilarity)}};
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed for " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

// ---- registry ----------------------------------------------------------------

void ProblemRegistry::add(ProblemSpec spec) {
  if (spec.id.empty()) throw Error("problem registry: empty id");
  if (!spec.build) throw Error("problem registry: \"" + spec.id + "\" has no builder");
  if (specs_.count(spec.id)) throw Error("problem registry: duplicate id \"" + spec.id + "\"");
  const std::string id = spec.id;
  specs_.emplace(id, std::move(spec));
}

const ProblemSpec& ProblemRegistry::get(const std::string& id) const {
  auto it = specs_.find(id);
  if (it == specs_.end()) {
    std::string list;
    for (const auto& name : ids()) list += (list.empty() ? "" : ", ") + name;
    throw ConfigError("unknown problem \"" + id + "\" (available: " + list + ")");
  }
  return it->second;
}

std::vector<std::string> ProblemRegistry::ids() const {
  std::vector<std::string> out;
  for (const auto& [id, spec] : specs_) out.push_back(id);
  return out;
}

ProblemRegistry& default_registry() {
  static ProblemRegistry reg = make_default_registry();
  return reg;
}

void register_problem(ProblemSpec spec) { default_registry().add(std::move(spec)); }

// ---- configuration -----------------------------------------------------------

ExperimentConfig parse_config(const json& doc, const ProblemRegistry& registry) {
  reject_unknown(doc, "", {"problem", "params", "schedule", "training", "m0", "exploration",
                           "space_filling_candidates", "max_retries", "gne", "seed", "out", "repeat"});
  ExperimentConfig cfg;
  if (!doc.contains("problem")) throw ConfigError("config: missing key \"problem\"");
  read(doc, "", "problem", cfg.problem);
  const ProblemSpec& spec = registry.get(cfg.problem);

  if (doc.contains("params")) cfg.params = doc.at("params");
  reject_unknown(cfg.params, "params", std::set<std::string>(spec.param_keys.begin(), spec.param_keys.end()));

  ScheduleConfig& s = cfg.loop.schedule;
  s.delta = spec.default_delta;
  s.k_max = spec.default_k_max;
  if (doc.contains("schedule")) {
    const json& j = doc.at("schedule");
    reject_unknown(j, "schedule", {"delta", "sigma", "delta_floor", "sigma_floor", "p_delta", "p_sigma", "k_max"});
    read(j, "schedule", "delta", s.delta);
    read(j, "schedule", "sigma", s.sigma);
    read(j, "schedule", "delta_floor", s.delta_floor);
    read(j, "schedule", "sigma_floor", s.sigma_floor);
    read(j, "schedule", "p_delta", s.p_delta);
    read(j, "schedule", "p_sigma", s.p_sigma);
    read(j, "schedule", "k_max", s.k_max);
  }
  s.validate();

  TrainConfig& t = cfg.loop.train;
  if (doc.contains("training")) {
    const json& j = doc.at("training");
    reject_unknown(j, "training", {"adam_iters", "adam_lr", "adam_beta1", "adam_beta2", "adam_eps", "lbfgs_max_iters",
                                   "lbfgs_history", "lbfgs_tol", "chol_floor", "reg_weight", "eps_d", "p_clamp", "dissimilarity"});
    read(j, "training", "adam_iters", t.adam_iters);
    read(j, "training", "adam_lr", t.adam_lr);
    read(j, "training", "adam_beta1", t.adam_beta1);
    read(j, "training", "adam_beta2", t.adam_beta2);
    read(j, "training", "adam_eps", t.adam_eps);
    read(j, "training", "lbfgs_max_iters", t.lbfgs_max_iters);
    read(j, "training", "lbfgs_history", t.lbfgs_history);
    read(j, "training", "lbfgs_tol", t.lbfgs_tol);
    read(j, "training", "chol_floor", t.chol_floor);
    read(j, "training", "reg_weight", t.reg_weight);
    read(j, "training", "eps_d", t.eps_d);
    read(j, "training", "p_clamp", t.p_clamp);
    std::string d = to_string(t.dissimilarity);
    read(j, "training", "dissimilarity", d);
    t.dissimilarity = dissimilarity_from_string(d);
  }
  t.validate();

  read(doc, "", "m0", cfg.loop.m0);
  if (cfg.loop.m0 < 1) throw ConfigError("config: m0 must be >= 1");
  std::string mode = to_string(cfg.loop.exploration);
  read(doc, "", "exploration", mode);
  cfg.loop.exploration = exploration_mode_from_string(mode);
  read(doc, "", "space_filling_candidates", cfg.loop.space_filling_candidates);
  if (cfg.loop.space_filling_candidates < 1) throw ConfigError("config: space_filling_candidates must be >= 1");
  read(doc, "", "max_retries", cfg.loop.max_retries);
  if (cfg.loop.max_retries < 0) throw ConfigError("config: max_retries must be >= 0");
  if (doc.contains("gne")) {
    const json& j = doc.at("gne");
    reject_unknown(j, "gne", {"tol", "max_iter"});
    read(j, "gne", "tol", cfg.loop.gne.tol);
    read(j, "gne", "max_iter", cfg.loop.gne.max_iter);
    if (!(cfg.loop.gne.tol > 0.0) || cfg.loop.gne.max_iter < 1) {
      throw ConfigError("config: gne.tol must be > 0 and gne.max_iter >= 1");
    }
  }
  read(doc, "", "seed", cfg.seed);
  read(doc, "", "out", cfg.out_dir);
  read(doc, "", "repeat", cfg.repeat);
  if (cfg.repeat < 1) throw ConfigError("config: repeat must be >= 1");
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path, const ProblemRegistry& registry) {
  json doc;
  try {
    doc = json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw ConfigError("config: " + path.string() + " is not valid JSON: " + e.what());
  } catch (const Error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return parse_config(doc, registry);
}

json ExperimentConfig::to_json() const {
  return {{"problem", problem},
          {"params", params},
          {"schedule", schedule_json(loop.schedule)},
          {"training", training_json(loop.train)},
          {"m0", loop.m0},
          {"exploration", prefgne::to_string(loop.exploration)},
          {"space_filling_candidates", loop.space_filling_candidates},
          {"max_retries", loop.max_retries},
          {"gne", {{"tol", loop.gne.tol}, {"max_iter", loop.gne.max_iter}}},
          {"seed", seed},
          {"out", out_dir},
          {"repeat", repeat}};
}

// ---- CSV ---------------------------------------------------------------------

std::size_t CsvTable::column(const std::string& name) const {
  auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) throw Error("CSV: no column \"" + name + "\"");
  return static_cast<std::size_t>(it - columns.begin());
}

bool CsvTable::operator==(const CsvTable& other) const {
  if (columns != other.columns || rows.size() != other.rows.size()) return false;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != other.rows[r].size()) return false;
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      const double a = rows[r][c], b = other.rows[r][c];
      if (std::isnan(a) && std::isnan(b)) continue;
      if (std::memcmp(&a, &b, sizeof a) != 0) return false;
    }
  }
  return true;
}

void export_csv(const CsvTable& table, const std::filesystem::path& path) {
  std::string text;
  for (std::size_t c = 0; c < table.columns.size(); ++c) text += (c ? "," : "") + table.columns[c];
  text += "\n";
  for (const auto& row : table.rows) {
    if (row.size() != table.columns.size()) throw Error("CSV: row width does not match the header");
    for (std::size_t c = 0; c < row.size(); ++c) text += (c ? "," : "") + format_double(row[c]);
    text += "\n";
  }
  write_text(path, text);
}

CsvTable import_csv(const std::filesystem::path& path) {
  std::istringstream in(read_text(path));
  CsvTable table;
  std::string line;
  auto split = [](const std::string& l) {
    std::vector<std::string> out;
    std::stringstream ss(l);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
  };
  if (!std::getline(in, line)) throw Error("CSV: " + path.string() + " is empty");
  table.columns = split(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    for (const auto& cell : split(line)) row.push_back(parse_double(cell));
    if (row.size() != table.columns.size()) throw Error("CSV: row width does not match the header");
    table.rows.push_back(std::move(row));
  }
  return table;
}

// ---- running -----------------------------------------------------------------

RunRecord run_experiment(const ExperimentConfig& cfg, const ProblemRegistry& registry,
                         const std::optional<std::filesystem::path>& flush_dir) {
  const auto start = std::chrono::steady_clock::now();
  ProblemInstance inst = registry.get(cfg.problem).build(cfg.params);
  LoopConfig loop = cfg.loop;
  loop.schedule.validate();
  loop.zero_coupling = inst.zero_coupling;
  loop.track_learned_equilibrium = true;
  const int k_max = loop.schedule.k_max;
  IterationHook hook;
  if (inst.metrics) {
    hook = [&inst, k_max](const ALState&, const IterationRecord& rec) {
      return inst.metrics(rec.learned_point, rec.k, k_max);
    };
  }

  const Eigen::Index n = inst.game.layout.total();
  RunRecord record;
  record.problem = cfg.problem;
  record.seed = cfg.seed;
  record.metric_names = inst.metric_names;
  record.iterations.columns = iteration_columns(static_cast<std::size_t>(n), inst.game.agents(),
                                                 inst.reference.has_value(), inst.metric_names);

  ALState state = initial_state(inst.game, *inst.oracle, loop, cfg.seed);
  try {
    for (int k = 1; k <= k_max; ++k) {
      state = al_iteration(state, *inst.oracle, inst.game, loop, hook);
      record.iterations.rows.push_back(iteration_row(state.history.back(), n, inst.reference));
    }
  } catch (...) {
    if (flush_dir) {
      std::filesystem::create_directories(*flush_dir);
      export_csv(record.iterations, *flush_dir / "iterations.partial.csv");
    }
    throw;
  }

  for (const auto& theta : state.thetas) record.thetas.push_back(theta.values);
  const IterationRecord& last = state.history.back();
  record.x_final = last.learned_point;
  record.final_metrics = last.metrics;
  record.queries = inst.oracle->query_count();
  record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return record;
}

void write_run_dir(const ExperimentConfig& cfg, const RunRecord& record, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  ExperimentConfig snapshot = cfg;
  snapshot.seed = record.seed;
  snapshot.repeat = 1;
  write_text(dir / "config.json", snapshot.to_json().dump(2) + "\n");
  export_csv(record.iterations, dir / "iterations.csv");

  std::string theta = "agent,index,value\n";
  for (std::size_t i = 0; i < record.thetas.size(); ++i) {
    for (Eigen::Index j = 0; j < record.thetas[i].size(); ++j) {
      theta += std::to_string(i + 1) + "," + std::to_string(j) + "," + format_double(record.thetas[i][j]) + "\n";
    }
  }
  write_text(dir / "theta.csv", theta);

  std::ostringstream os;
  os << "schema: " << kCsvSchema << "\n"
     << "problem: " << record.problem << "\n"
     << "seed: " << record.seed << "\n"
     << "iterations: " << record.iterations.rows.size() << "\n"
     << "queries: " << record.queries << "\n"
     << "wall_seconds: " << record.wall_seconds << "\n";
  for (std::size_t j = 0; j < record.metric_names.size(); ++j) {
    os << record.metric_names[j] << ": " << format_double(record.final_metrics.at(j)) << "\n";
  }
  os << "x_final:";
  for (Eigen::Index j = 0; j < record.x_final.size(); ++j) os << " " << format_double(record.x_final[j]);
  os << "\n";
  write_text(dir / "summary.txt", os.str());
}

double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw Error("quantile of an empty sample");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  if (frac == 0.0 || v[hi] == v[lo]) return v[lo];
  return v[lo] + frac * (v[hi] - v[lo]);
}

double median(std::vector<double> v) { return quantile(std::move(v), 0.5); }

std::vector<Aggregate> aggregate(const std::vector<CsvTable>& runs, const std::vector<std::string>& metric_names) {
  std::vector<Aggregate> out;
  for (const auto& name : metric_names) {
    std::vector<double> finals;
    for (const auto& t : runs) {
      if (t.rows.empty()) throw Error("aggregate: run without rows");
      finals.push_back(t.rows.back()[t.column(name)]);
    }
    out.push_back({name, median(finals), quantile(finals, 0.25), quantile(finals, 0.75)});
  }
  return out;
}

std::vector<RunRecord> run_repeated(const ExperimentConfig& cfg, const std::filesystem::path& out,
                                    const ProblemRegistry& registry) {
  std::vector<RunRecord> records;
  std::vector<CsvTable> tables;
  for (int r = 0; r < cfg.repeat; ++r) {
    ExperimentConfig one = cfg;
    one.seed = cfg.seed + static_cast<std::uint64_t>(r);
    one.repeat = 1;
    const std::filesystem::path dir = out / ("seed-" + std::to_string(one.seed));
    records.push_back(run_experiment(one, registry, dir));
    write_run_dir(one, records.back(), dir);
    tables.push_back(records.back().iterations);
  }
  std::string text = "metric,median,q1,q3\n";
  for (const auto& a : aggregate(tables, records.front().metric_names)) {
    text += a.name + "," + format_double(a.median) + "," + format_double(a.q1) + "," + format_double(a.q3) + "\n";
  }
  std::filesystem::create_directories(out);
  write_text(out / "aggregate.csv", text);
  return records;
}

std::vector<std::pair<std::string, double>> evaluate_run_dir(const std::filesystem::path& dir,
                                                             const ProblemRegistry& registry) {
  if (!std::filesystem::is_regular_file(dir / "config.json")) {
    throw Error("evaluate: " + dir.string() + " is not a run directory (no config.json)");
  }
  const ExperimentConfig cfg = load_config(dir / "config.json", registry);
  ProblemInstance inst = registry.get(cfg.problem).build(cfg.params);
  const CsvTable iterations = import_csv(dir / "iterations.csv");
  if (iterations.rows.empty()) throw Error("evaluate: iterations.csv has no rows");

  std::vector<ThetaVector> thetas;
  for (std::size_t i = 0; i < inst.game.agents(); ++i) {
    ThetaVector t = ThetaVector::initial({inst.game.layout.dim(i), inst.game.layout.others_dim(i)},
                                         cfg.loop.train.chol_floor);
    if (!inst.zero_coupling.empty() && inst.zero_coupling[i]) t.fix_coupling_to_zero();
    thetas.push_back(std::move(t));
  }
  std::vector<Eigen::Index> filled(thetas.size(), 0);
  const CsvTable theta_table = import_csv(dir / "theta.csv");
  for (const auto& row : theta_table.rows) {
    const auto agent = static_cast<std::size_t>(row.at(0)) - 1;
    const auto index = static_cast<Eigen::Index>(row.at(1));
    if (agent >= thetas.size() || index < 0 || index >= thetas[agent].values.size()) {
      throw Error("evaluate: theta.csv does not match the problem dimensions");
    }
    thetas[agent].values[index] = row.at(2);
    ++filled[agent];
  }
  for (std::size_t i = 0; i < thetas.size(); ++i) {
    if (filled[i] != thetas[i].values.size()) throw Error("evaluate: theta.csv is incomplete");
  }

  const auto& last = iterations.rows.back();
  const Eigen::Index n = inst.game.layout.total();
  Eigen::VectorXd warm(n);
  for (Eigen::Index j = 0; j < n; ++j) warm[j] = last[iterations.column("x_" + std::to_string(j + 1))];
  GneOptions opts = cfg.loop.gne;
  opts.warm_start = warm;
  const GNESolution sol = learned_equilibrium(inst.game, thetas, opts);

  std::vector<std::pair<std::string, double>> out;
  out.emplace_back("residual", sol.residual);
  if (inst.metrics) {
    const int k_max = cfg.loop.schedule.k_max;
    const std::vector<double> values = inst.metrics(sol.x, k_max, k_max);
    for (std::size_t j = 0; j < values.size(); ++j) out.emplace_back(inst.metric_names[j], values[j]);
  }
  for (Eigen::Index j = 0; j < n; ++j) out.emplace_back("x_" + std::to_string(j + 1), sol.x[j]);
  return out;
}

}  // namespace prefgne
