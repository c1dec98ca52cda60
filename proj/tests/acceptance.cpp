// Acceptance suite: one PASS/FAIL line per criterion.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <string>

#include "prefgne/active_loop.hpp"
#include "prefgne/bench.hpp"
#include "prefgne/errors.hpp"
#include "prefgne/gne_solver.hpp"
#include "prefgne/lqr_games.hpp"
#include "prefgne/preference_learning.hpp"
#include "test_util.hpp"

using namespace prefgne;
using testutil::mat;
using testutil::vec;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void criterion(int id, const char* name, double limit_seconds, const std::function<Outcome()>& body) {
  const auto start = std::chrono::steady_clock::now();
  Outcome out;
  try {
    out = body();
  } catch (const std::exception& e) {
    out = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (limit_seconds > 0.0 && secs > limit_seconds) {
    out.pass = false;
    out.detail += " (over the " + std::to_string(static_cast<int>(limit_seconds)) + " s limit)";
  }
  if (!out.pass) ++failures;
  std::printf("%s criterion %d (%s): %s [%.2f s]\n", out.pass ? "PASS" : "FAIL", id, name, out.detail.c_str(), secs);
  std::fflush(stdout);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Outcome solver_oracle() {
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<int> agents(2, 3);
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    const int N = agents(rng);
    std::uniform_int_distribution<int> total(N, 20);
    const int n = total(rng);
    std::vector<Eigen::Index> dims(static_cast<std::size_t>(N), 1);
    std::uniform_int_distribution<int> pick(0, N - 1);
    for (int extra = n - N; extra > 0; --extra) ++dims[static_cast<std::size_t>(pick(rng))];
    const ConstrainedGame g = testutil::random_monotone_game(dims, rng);
    Eigen::MatrixXd M;
    Eigen::VectorXd c;
    testutil::stacked_system(g.layout, g.objectives, M, c);
    const Eigen::VectorXd expected = M.fullPivLu().solve(-c);
    worst = std::max(worst, (solve_gne(g).x - expected).lpNorm<Eigen::Infinity>());
  }
  return {worst <= 1e-6, "max |x - x_lin|_inf = " + fmt("%.3g", worst) + " over 50 games"};
}

Outcome constrained_brute_force() {
  std::mt19937_64 rng(202);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  int ok = 0;
  for (int t = 0; t < 20; ++t) {
    std::vector<QuadraticAgentObjective> objs;
    double lo[2], hi[2];
    for (;;) {
      objs.clear();
      double p[2], a[2];
      for (int i = 0; i < 2; ++i) {
        p[i] = 0.5 + 1.5 * (u(rng) + 1.0);
        a[i] = 2.0 * u(rng);
        objs.push_back(QuadraticAgentObjective::from_hessian(mat(1, 1, {p[i]}), vec({3.0 * u(rng)}), mat(1, 1, {a[i]})));
      }
      const double s = 0.5 * (a[0] + a[1]);
      if (p[0] * p[1] - s * s > 0.05 && p[0] > 0 && p[1] > 0) break;
    }
    for (int i = 0; i < 2; ++i) {
      const double x = u(rng), y = u(rng);
      lo[i] = std::min(x, y) - 0.05;
      hi[i] = std::max(x, y) + 0.05;
    }
    ConstrainedGame g(AgentLayout({1, 1}), {BoxSet::uniform(1, lo[0], hi[0]), BoxSet::uniform(1, lo[1], hi[1])},
                      AffineConstraints::none(2), objs);
    const Eigen::VectorXd x = solve_gne(g).x;
    bool fixed_point = true;
    for (int i = 0; i < 2; ++i) {
      const Eigen::VectorXd other = vec({x[1 - i]});
      const double cell = (hi[i] - lo[i]) / 2000.0;
      double best_v = 1e300, best_z = lo[i];
      for (int k = 0; k <= 2000; ++k) {
        const double z = lo[i] + cell * k;
        const double v = objs[static_cast<std::size_t>(i)].value(vec({z}), other);
        if (v < best_v) {
          best_v = v;
          best_z = z;
        }
      }
      if (std::abs(best_z - x[i]) > cell + 1e-12) fixed_point = false;
    }
    ok += fixed_point;
  }
  return {ok == 20, std::to_string(ok) + "/20 solutions within one grid cell of the grid best response"};
}

Outcome gradient_check() {
  std::mt19937_64 rng(303);
  std::uniform_int_distribution<int> dim(1, 3), others(0, 4), count(1, 30);
  TrainConfig cfg;
  double worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    const Eigen::Index ni = dim(rng), no = others(rng);
    const auto truth = testutil::random_objective(ni, no, rng);
    const PreferenceDataset data = testutil::labelled_pairs(truth, static_cast<std::size_t>(count(rng)), rng);
    ThetaVector th = ThetaVector::initial({ni, no});
    th.values = th.project(testutil::gaussian(th.layout.size(), 1, rng, 0.7).col(0));
    const Eigen::VectorXd g = training_gradient(th, data, cfg);
    Eigen::VectorXd fd(g.size());
    for (Eigen::Index j = 0; j < g.size(); ++j) {
      ThetaVector a = th, b = th;
      a.values[j] += 1e-6;
      b.values[j] -= 1e-6;
      fd[j] = (training_loss(a, data, cfg) - training_loss(b, data, cfg)) / 2e-6;
    }
    worst = std::max(worst, (g - fd).norm() / std::max(fd.norm(), 1e-12));
  }
  return {worst <= 1e-5, "max relative error " + fmt("%.3g", worst) + " over 20 instances"};
}

Outcome model_identities() {
  std::mt19937_64 rng(404);
  std::uniform_int_distribution<int> dim(1, 4), others(0, 3);
  const double eps_d = 1e-6;
  int bad_half = 0, bad_sum = 0, bad_d = 0;
  double worst_sum = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const Eigen::Index ni = dim(rng), no = others(rng);
    const auto obj = testutil::random_objective(ni, no, rng);
    const Eigen::VectorXd x1 = testutil::gaussian(ni, 1, rng, 3.0).col(0);
    const Eigen::VectorXd x2 = testutil::gaussian(ni, 1, rng, 3.0).col(0);
    const Eigen::VectorXd xo = testutil::gaussian(no, 1, rng, 3.0).col(0);
    bad_half += pref_probability(obj, x1, x1, xo, eps_d) != 0.5;
    const double s = pref_probability(obj, x1, x2, xo, eps_d) + pref_probability(obj, x2, x1, xo, eps_d);
    worst_sum = std::max(worst_sum, std::abs(s - 1.0));
    bad_sum += std::abs(s - 1.0) > 1e-15;
    bad_d += dissimilarity(x1, x1, eps_d) != std::log(1.0 + eps_d);
  }
  return {bad_half + bad_sum + bad_d == 0,
          "P(x,x) != 0.5: " + std::to_string(bad_half) + ", max |P12 + P21 - 1| = " + fmt("%.3g", worst_sum) +
              ", d(x,x) mismatches: " + std::to_string(bad_d) + " over 1000 draws"};
}

Outcome schedules() {
  ScheduleConfig s;
  s.delta = 5;
  s.p_delta = 5;
  s.sigma = 0.3;
  s.p_sigma = 4;
  s.k_max = 100;
  const double d50 = delta_schedule(50, s), d100 = delta_schedule(100, s);
  const double s50 = sigma_schedule(50, s), s100 = sigma_schedule(100, s);
  const bool ok = d50 == 0.15625 && d100 == 0.001 && std::abs(s50 - 0.3 * 0.0625) <= 1e-15 && s100 == 0.001;
  return {ok, "delta50 = " + fmt("%.17g", d50) + ", delta100 = " + fmt("%.17g", d100) + ", sigma50 = " +
                  fmt("%.17g", s50) + ", sigma100 = " + fmt("%.17g", s100)};
}

Outcome riccati() {
  const Eigen::MatrixXd I1 = Eigen::MatrixXd::Identity(1, 1);
  const double p = 0.5 * (0.25 + std::sqrt(0.0625 + 4.0));
  const double k_star = 0.5 * p / (1.0 + p);
  const double k = lqr::riccati_gain(mat(1, 1, {0.5}), I1, I1, I1, 200)(0, 0);
  const bool scalar_ok = std::abs(k - k_star) <= 1e-6;

  Rng r1(17);
  const lqr::LinearSystem single = lqr::random_system(4, 2, 1, 1.1, r1);
  const auto single_costs = lqr::block_costs(single);
  const Eigen::MatrixXd br = lqr::best_response_gain(single, 0, single_costs[0], lqr::GainProfile::zeros(single), 50);
  const bool n1_ok = (lqr::nash_gains(single, single_costs, 50).K[0] - br).norm() <= 1e-12;

  int stable = 0;
  double worst_rho = 0.0;
  for (int t = 0; t < 10; ++t) {
    const Eigen::Index n = 2 + t % 7;
    const Eigen::Index m = 2 * (n / 2);
    Rng rng(1000 + static_cast<std::uint64_t>(t));
    const lqr::LinearSystem sys = lqr::random_system(n, m, 2, 1.1, rng);
    const auto costs = lqr::block_costs(sys);
    try {
      const lqr::GainProfile K = lqr::nash_gains(sys, costs, 50);
      const double rho = lqr::spectral_radius(lqr::closed_loop(sys, K, sys.agents()));
      worst_rho = std::max(worst_rho, rho);
      stable += rho < 1.0;
    } catch (const Error&) {
      worst_rho = std::max(worst_rho, std::numeric_limits<double>::infinity());
    }
  }
  return {scalar_ok && n1_ok && stable == 10,
          "scalar K = " + fmt("%.9f", k) + ", N=1 match " + (n1_ok ? "yes" : "no") + ", stable closed loops " +
              std::to_string(stable) + "/10 (max rho " + fmt("%.4f", worst_rho) + ")"};
}

Outcome self_consistent() {
  std::vector<double> errs;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ExperimentConfig cfg = parse_config(
        {{"problem", "synthetic-quadratic"}, {"schedule", {{"k_max", 60}}}, {"m0", 50}, {"seed", seed}});
    errs.push_back(run_experiment(cfg).final_metrics.at(0));
  }
  const double med = median(errs);
  return {med <= 0.05, "median |x_final - x*|_inf = " + fmt("%.4g", med) + " over 5 seeds"};
}

Outcome lqr_reproduction() {
  std::vector<double> devs, early, rmses;
  double slowest = 0.0;
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ExperimentConfig cfg = parse_config({{"problem", "lqr-game"}, {"seed", seed}});
    const auto start = std::chrono::steady_clock::now();
    try {
      const RunRecord r = run_experiment(cfg);
      const std::size_t col = r.iterations.column("max_dev");
      const double at10 = r.iterations.rows.at(9)[col];
      const double at100 = r.iterations.rows.back()[col];
      const double rmse = r.iterations.rows.back()[r.iterations.column("rmse")];
      devs.push_back(at100);
      early.push_back(at10);
      rmses.push_back(rmse);
      per_seed += " [seed " + std::to_string(seed) + ": J10 " + fmt("%.3g", at10) + ", J100 " + fmt("%.3g", at100) +
                  ", rmse " + fmt("%.3g", rmse) + "]";
    } catch (const Error& e) {
      devs.push_back(std::numeric_limits<double>::infinity());
      early.push_back(std::numeric_limits<double>::infinity());
      rmses.push_back(std::numeric_limits<double>::infinity());
      per_seed += " [seed " + std::to_string(seed) + ": aborted, " + e.what() + "]";
    }
    slowest = std::max(slowest, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  }
  const double med_dev = median(devs), med_early = median(early), med_rmse = median(rmses);
  const bool ok = med_dev <= 0.1 && med_rmse <= 0.01 && med_dev * 10.0 <= med_early && slowest < 1800.0;
  return {ok, "median max_i J_i = " + fmt("%.4g", med_dev) + " (<= 0.1), median normalized RMSE = " +
                  fmt("%.4g", med_rmse) + " (<= 0.01), median max_i J_i at k=10 = " + fmt("%.4g", med_early) +
                  " (needs >= 10x the final), slowest seed " + fmt("%.1f", slowest) + " s;" + per_seed};
}

Outcome bookkeeping() {
  const ExperimentConfig cfg =
      parse_config({{"problem", "synthetic-quadratic"}, {"schedule", {{"k_max", 8}}}, {"m0", 12}, {"seed", 4}});
  ProblemInstance inst = default_registry().get(cfg.problem).build(cfg.params);
  LoopConfig loop = cfg.loop;
  loop.zero_coupling = inst.zero_coupling;
  ALState state = initial_state(inst.game, *inst.oracle, loop, cfg.seed);
  bool sizes_ok = true;
  const std::size_t N = inst.game.agents();
  for (int k = 1; k <= loop.schedule.k_max; ++k) {
    state = al_iteration(state, *inst.oracle, inst.game, loop);
    for (std::size_t i = 0; i < N; ++i) sizes_ok &= state.dataset_size(i) == loop.m0 + static_cast<std::size_t>(k);
  }
  const std::size_t expected = N * (loop.m0 + static_cast<std::size_t>(loop.schedule.k_max));
  const bool queries_ok = inst.oracle->query_count() == expected;

  const auto dir = std::filesystem::temp_directory_path() / "prefgne-acceptance";
  std::filesystem::remove_all(dir);
  auto csv_text = [&](const std::string& name) {
    export_csv(run_experiment(cfg).iterations, dir / name);
    std::ifstream in(dir / name, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  std::filesystem::create_directories(dir);
  const bool identical = csv_text("a.csv") == csv_text("b.csv");
  return {sizes_ok && queries_ok && identical,
          std::string("M_k = M0 + k ") + (sizes_ok ? "holds" : "violated") + ", queries " +
              std::to_string(inst.oracle->query_count()) + "/" + std::to_string(expected) + ", same-seed CSVs " +
              (identical ? "identical" : "differ")};
}

}  // namespace

int main() {
  criterion(1, "solver oracle equivalence", 10.0, solver_oracle);
  criterion(2, "constrained GNE brute force", 10.0, constrained_brute_force);
  criterion(3, "gradient correctness", 0.0, gradient_check);
  criterion(4, "preference-model identities", 0.0, model_identities);
  criterion(5, "schedule arithmetic", 0.0, schedules);
  criterion(6, "Riccati desk checks", 0.0, riccati);
  criterion(7, "end-to-end self-consistent recovery", 300.0, self_consistent);
  criterion(8, "paper-scale LQR reproduction", 0.0, lqr_reproduction);
  criterion(9, "bookkeeping", 0.0, bookkeeping);
  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
