#include "doctest.h"

#include <memory>

#include "prefgne/active_loop.hpp"
#include "prefgne/errors.hpp"
#include "test_util.hpp"

using namespace prefgne;
using testutil::mat;
using testutil::vec;

namespace {

QuadraticAgentObjective scalar(double p, double q, double a) {
  return QuadraticAgentObjective::from_hessian(mat(1, 1, {p}), vec({q}), mat(1, 1, {a}));
}

// Two scalar agents on [-5, 5] with equilibrium (-8/7, 2/7).
ConstrainedGame scalar_pair() {
  return ConstrainedGame(AgentLayout({1, 1}), {BoxSet::uniform(1, -5, 5), BoxSet::uniform(1, -5, 5)},
                         AffineConstraints::none(2), {scalar(1, 1, 0.5), scalar(1, 0, 0.25)});
}

std::unique_ptr<PreferenceOracle> oracle_for(const ConstrainedGame& g) {
  std::vector<std::function<double(const Eigen::VectorXd&, const Eigen::VectorXd&)>> fs;
  for (const auto& obj : g.objectives) {
    fs.push_back([obj](const Eigen::VectorXd& x, const Eigen::VectorXd& xo) { return obj.value(x, xo); });
  }
  return make_preference_oracle(fs);
}

LoopConfig small_loop(int k_max) {
  LoopConfig cfg;
  cfg.schedule.k_max = k_max;
  cfg.schedule.delta = 0.5;
  return cfg;
}

}  // namespace

TEST_CASE("schedules") {
  ScheduleConfig s;
  s.delta = 5;
  s.p_delta = 5;
  s.k_max = 100;
  CHECK(delta_schedule(50, s) == 0.15625);
  CHECK(delta_schedule(100, s) == 0.001);
  s.p_delta = 1;
  CHECK(delta_schedule(25, s) == doctest::Approx(3.75));

  ScheduleConfig t;
  t.sigma = 0.3;
  t.p_sigma = 4;
  t.k_max = 200;
  CHECK(sigma_schedule(100, t) == doctest::Approx(0.01875).epsilon(1e-14));
  CHECK(sigma_schedule(200, t) == t.sigma_floor);

  ScheduleConfig off;
  off.sigma = 0;
  off.sigma_floor = 0;
  for (int k = 1; k <= off.k_max; ++k) CHECK(sigma_schedule(k, off) == 0.0);

  double prev = 1e300;
  for (int k = 1; k <= s.k_max; ++k) {
    const double d = delta_schedule(k, s);
    CHECK(d <= prev);
    CHECK(d >= s.delta_floor);
    prev = d;
  }
  CHECK_THROWS_AS(delta_schedule(0, s), Error);

  ScheduleConfig bad;
  bad.sigma = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = ScheduleConfig{};
  bad.p_delta = 0.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("exploration centers") {
  Rng rng(4);
  ConstrainedGame g(AgentLayout({2}), {BoxSet::uniform(2, 0, 1)}, AffineConstraints::none(2));
  LoopConfig cfg;
  const Eigen::VectorXd c = exploration_center(g, 0, cfg, {}, rng);
  CHECK(((c.array() >= 0).all() && (c.array() <= 1).all()));

  std::vector<Eigen::VectorXd> grid;
  for (int j = 0; j <= 20; ++j) grid.push_back(vec({0.1 * j}));
  const PreferenceDataset data = {{vec({0}), vec({2}), vec({}), 1}};
  CHECK(space_filling_center(grid, data)[0] == doctest::Approx(1.0));

  cfg.exploration = ExplorationMode::space_filling;
  ConstrainedGame line(AgentLayout({1}), {BoxSet::uniform(1, 0, 2)}, AffineConstraints::none(1));
  const Eigen::VectorXd empty_fallback = exploration_center(line, 0, cfg, {}, rng);
  CHECK(((empty_fallback[0] >= 0) && (empty_fallback[0] <= 2)));
  CHECK(std::abs(exploration_center(line, 0, cfg, data, rng)[0] - 1.0) < 0.05);

  ConstrainedGame open(AgentLayout({1}), {BoxSet::unbounded(1)}, AffineConstraints::none(1));
  CHECK_THROWS(exploration_center(open, 0, LoopConfig{}, {}, rng));
}

TEST_CASE("query_gnep") {
  const ConstrainedGame g = scalar_pair();
  const std::vector<ThetaVector> thetas = {ThetaVector::from_objective(g.objectives[0]),
                                           ThetaVector::from_objective(g.objectives[1])};
  const GNESolution with_ex = query_gnep(g, thetas, {vec({0}), vec({0})}, 1.0, {});
  CHECK((with_ex.x - vec({-16.0 / 31.0, 2.0 / 31.0})).lpNorm<Eigen::Infinity>() < 1e-8);
  const GNESolution pure = query_gnep(g, thetas, {vec({3}), vec({3})}, 0.0, {});
  CHECK((pure.x - vec({-8.0 / 7.0, 2.0 / 7.0})).lpNorm<Eigen::Infinity>() < 1e-8);

  ConstrainedGame decoupled(AgentLayout({1, 1}), {BoxSet::uniform(1, -1, 1), BoxSet::uniform(1, -1, 1)},
                            AffineConstraints::none(2), {scalar(1, 0, 0), scalar(1, 0, 0)});
  const std::vector<ThetaVector> d_thetas = {ThetaVector::from_objective(decoupled.objectives[0]),
                                             ThetaVector::from_objective(decoupled.objectives[1])};
  const GNESolution far = query_gnep(decoupled, d_thetas, {vec({0.5}), vec({4})}, 1e6, {});
  CHECK((far.x - vec({0.5, 1})).lpNorm<Eigen::Infinity>() < 1e-5);
  CHECK_THROWS(query_gnep(g, thetas, {vec({0}), vec({0})}, -1.0, {}));
}

TEST_CASE("perturbation") {
  CHECK((perturb(vec({2, -1}), 0.1, vec({0.5, -0.5})) - vec({2.1, -1.1})).norm() < 1e-15);
  CHECK(perturb(vec({2, -1}), 0.0, vec({0.3, 0.1})) == vec({2, -1}));
  CHECK(perturb(vec({0, 0}), 0.5, vec({0.5, -0.5})) == vec({0, 0}));

  const ConstrainedGame g = scalar_pair();
  Rng rng(1);
  const PerturbedResponse r =
      perturbed_best_response(g, 0, ThetaVector::from_objective(g.objectives[0]), vec({2}), 0.2, rng);
  CHECK(r.best[0] == doctest::Approx(-2.0).epsilon(1e-8));
  CHECK(std::abs(r.perturbed[0] - r.best[0]) <= 0.5 * 0.2 * 2.0 + 1e-12);
}

TEST_CASE("loop bookkeeping") {
  const ConstrainedGame g = scalar_pair();
  const LoopConfig cfg = small_loop(3);
  auto oracle = oracle_for(g);
  const ALState s0 = initial_state(g, *oracle, cfg, 5);
  CHECK(s0.dataset_size(0) == 50);
  CHECK(oracle->query_count() == 100);
  const ALState s1 = al_iteration(s0, *oracle, g, cfg);
  CHECK(s1.dataset_size(0) == 51);
  CHECK(s1.dataset_size(1) == 51);
  CHECK(oracle->query_count() == 102);
  CHECK(s0.dataset_size(0) == 50);
  CHECK(s1.history.size() == 1);
  CHECK(feasible(g, s1.history[0].query_point));
}

TEST_CASE("zero exploration and noise give ties") {
  const ConstrainedGame g = scalar_pair();
  LoopConfig cfg = small_loop(2);
  cfg.schedule.delta = 0;
  cfg.schedule.delta_floor = 0;
  cfg.schedule.sigma = 0;
  cfg.schedule.sigma_floor = 0;
  auto oracle = oracle_for(g);
  const ALState s = al_iteration(initial_state(g, *oracle, cfg, 2), *oracle, g, cfg);
  for (std::size_t i = 0; i < 2; ++i) {
    const PreferenceSample& last = s.datasets[i].back();
    CHECK((last.x1 - last.x2).norm() < 1e-6);
    CHECK(last.label == 1);
  }
}

TEST_CASE("determinism") {
  const ConstrainedGame g = scalar_pair();
  const LoopConfig cfg = small_loop(4);
  auto a = oracle_for(g), b = oracle_for(g);
  const RunResult ra = run(*a, g, cfg, 9), rb = run(*b, g, cfg, 9);
  REQUIRE(ra.state.history.size() == rb.state.history.size());
  for (std::size_t k = 0; k < ra.state.history.size(); ++k) {
    CHECK(ra.state.history[k].query_point == rb.state.history[k].query_point);
    CHECK(ra.state.history[k].labels == rb.state.history[k].labels);
  }
  CHECK(ra.x_final == rb.x_final);
  for (std::size_t i = 0; i < 2; ++i) CHECK(ra.state.thetas[i].values == rb.state.thetas[i].values);
}

TEST_CASE("run on an in-family game") {
  const ConstrainedGame g = scalar_pair();
  const Eigen::VectorXd star = vec({-8.0 / 7.0, 2.0 / 7.0});
  std::vector<double> errors;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    LoopConfig cfg = small_loop(60);
    auto oracle = oracle_for(g);
    const RunResult r = run(*oracle, g, cfg, seed);
    CHECK(feasible(g, r.x_final));
    CHECK(r.state.dataset_size(0) == 110);
    CHECK(oracle->query_count() == 2 * 110);
    errors.push_back((r.x_final - star).lpNorm<Eigen::Infinity>());
  }
  std::sort(errors.begin(), errors.end());
  MESSAGE("median error " << errors[2]);
  CHECK(errors[2] <= 0.05);
}
