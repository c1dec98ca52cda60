#include "doctest.h"

#include "prefgne/errors.hpp"
#include "prefgne/gne_solver.hpp"
#include "test_util.hpp"

using namespace prefgne;
using testutil::mat;
using testutil::vec;

namespace {

QuadraticAgentObjective scalar(double p, double q, double a) {
  return QuadraticAgentObjective::from_hessian(mat(1, 1, {p}), vec({q}), mat(1, 1, {a}));
}

ConstrainedGame two_scalar(double lo, double hi, std::vector<QuadraticAgentObjective> objs) {
  return ConstrainedGame(AgentLayout({1, 1}), {BoxSet::uniform(1, lo, hi), BoxSet::uniform(1, lo, hi)},
                         AffineConstraints::none(2), std::move(objs));
}

}  // namespace

TEST_CASE("pseudo_gradient") {
  const AgentLayout one({1});
  const std::vector<QuadraticAgentObjective> single = {
      QuadraticAgentObjective::from_hessian(mat(1, 1, {2}), vec({1}), Eigen::MatrixXd(0, 1))};
  CHECK(pseudo_gradient(one, single, vec({0}))[0] == doctest::Approx(1));
  CHECK(pseudo_gradient(one, single, vec({0}), {{1.0, vec({2})}})[0] == doctest::Approx(-1));

  const AgentLayout two({1, 1});
  const std::vector<QuadraticAgentObjective> pair = {scalar(1, 1, 0.5), scalar(1, 0, 0.25)};
  CHECK((pseudo_gradient(two, pair, vec({0, 0})) - vec({1, 0})).norm() < 1e-15);

  std::mt19937_64 rng(3);
  const ConstrainedGame g = testutil::random_monotone_game({2, 3}, rng);
  const AffineGameOperator op = game_operator(g.layout, g.objectives);
  const Eigen::VectorXd x = testutil::gaussian(5, 1, rng).col(0);
  CHECK((op(x) - pseudo_gradient(g.layout, g.objectives, x)).norm() < 1e-12);
}

TEST_CASE("solve_gne examples") {
  SUBCASE("unconstrained 2-agent scalar game") {
    ConstrainedGame g(AgentLayout({1, 1}), {BoxSet::unbounded(1), BoxSet::unbounded(1)}, AffineConstraints::none(2),
                      {scalar(1, 1, 0.5), scalar(1, 0, 0.25)});
    const GNESolution s = solve_gne(g);
    CHECK(s.status == GneStatus::converged);
    CHECK((s.x - vec({-8.0 / 7.0, 2.0 / 7.0})).lpNorm<Eigen::Infinity>() < 1e-8);
  }
  SUBCASE("single agent equals solve_qp") {
    AffineConstraints c = AffineConstraints::none(2);
    c.G = Eigen::MatrixXd::Ones(1, 2);
    c.g0 = vec({-1});
    const auto obj = QuadraticAgentObjective::from_hessian(Eigen::MatrixXd::Identity(2, 2), vec({-1, -1}),
                                                           Eigen::MatrixXd(0, 2));
    ConstrainedGame g(AgentLayout({2}), {BoxSet::uniform(2, -3, 3)}, c, {obj});
    const Eigen::VectorXd qp = solve_qp(obj.hessian(), obj.q, g.local[0], c);
    CHECK((solve_gne(g).x - qp).lpNorm<Eigen::Infinity>() < 1e-6);
  }
  SUBCASE("decoupled objectives clipped by boxes") {
    const GNESolution s = solve_gne(two_scalar(1, 2, {scalar(1, 0, 0), scalar(1, 0, 0)}));
    CHECK((s.x - vec({1, 1})).norm() < 1e-9);
  }
  SUBCASE("reported residual matches recomputation") {
    const ConstrainedGame g = two_scalar(-1, 1, {scalar(1, 2, 0.5), scalar(2, -1, -0.3)});
    const GNESolution s = solve_gne(g);
    CHECK(std::abs(gne_residual(g, {}, s.x, s.step) - s.residual) < 1e-10);
  }
}

TEST_CASE("exploration equals shifted objectives") {
  std::mt19937_64 rng(11);
  ConstrainedGame g = testutil::random_monotone_game({2, 2}, rng);
  const Exploration ex = {{0.7, vec({1, -1})}, {0.7, vec({0.5, 2})}};
  ConstrainedGame shifted = g;
  for (std::size_t i = 0; i < 2; ++i) shifted.objectives[i] = with_exploration(g.objectives[i], ex[i]);
  CHECK((shifted.objectives[0].hessian() - g.objectives[0].hessian() - 0.7 * Eigen::MatrixXd::Identity(2, 2)).norm() <
        1e-12);
  CHECK((shifted.objectives[1].q - (g.objectives[1].q - 0.7 * ex[1].center)).norm() < 1e-12);
  CHECK((solve_gne(g, ex).x - solve_gne(shifted).x).norm() < 1e-7);
}

TEST_CASE("random monotone games match the stacked linear solve") {
  std::mt19937_64 rng(21);
  for (int t = 0; t < 10; ++t) {
    const ConstrainedGame g = testutil::random_monotone_game({2, 3, 1}, rng);
    Eigen::MatrixXd M;
    Eigen::VectorXd c;
    testutil::stacked_system(g.layout, g.objectives, M, c);
    const Eigen::VectorXd expected = M.fullPivLu().solve(-c);
    const GNESolution s = solve_gne(g);
    CHECK((s.x - expected).lpNorm<Eigen::Infinity>() < 1e-6);
  }
}

TEST_CASE("converged solution is a best-response fixed point") {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 5; ++t) {
    ConstrainedGame g = testutil::random_monotone_game({2, 2}, rng);
    g.local = {BoxSet::uniform(2, -0.5, 0.5), BoxSet::uniform(2, -0.5, 0.5)};
    const GNESolution s = solve_gne(g);
    REQUIRE(s.status == GneStatus::converged);
    for (std::size_t i = 0; i < 2; ++i) {
      const Eigen::VectorXd br = best_response(g, i, g.layout.others(i, s.x));
      CHECK((br - g.layout.extract(i, s.x)).lpNorm<Eigen::Infinity>() < 1e-6);
    }
  }
}

TEST_CASE("non-monotone game with an interior equilibrium") {
  // M = [[1, 3], [-0.5, 1]] has symmetric part with a negative eigenvalue.
  ConstrainedGame g = two_scalar(-10, 10, {scalar(1, -1, 3), scalar(1, 1, -0.5)});
  const GNESolution s = solve_gne(g);
  Eigen::MatrixXd M;
  Eigen::VectorXd c;
  testutil::stacked_system(g.layout, g.objectives, M, c);
  CHECK((s.x - M.fullPivLu().solve(-c)).norm() < 1e-8);
}

TEST_CASE("best_response") {
  const AgentLayout layout({1, 1});
  SUBCASE("unconstrained") {
    ConstrainedGame g(layout, {BoxSet::unbounded(1), BoxSet::unbounded(1)}, AffineConstraints::none(2),
                      {scalar(1, 0, 1), scalar(1, 0, 0)});
    CHECK(best_response(g, 0, vec({2}))[0] == doctest::Approx(-2).epsilon(1e-8));
  }
  SUBCASE("clipped by box") {
    ConstrainedGame g(layout, {BoxSet::uniform(1, 0, 5), BoxSet::unbounded(1)}, AffineConstraints::none(2),
                      {scalar(1, 0, 1), scalar(1, 0, 0)});
    CHECK(std::abs(best_response(g, 0, vec({2}))[0]) < 1e-8);
  }
  SUBCASE("equality on the agent's own block") {
    AffineConstraints c = AffineConstraints::none(3);
    c.H = mat(1, 3, {1, 1, 0});
    c.h0 = vec({-1});
    ConstrainedGame g(AgentLayout({2, 1}), {BoxSet::unbounded(2), BoxSet::unbounded(1)}, c,
                      {QuadraticAgentObjective::from_hessian(Eigen::MatrixXd::Identity(2, 2), vec({0, 0}),
                                                             Eigen::MatrixXd::Zero(1, 2)),
                       QuadraticAgentObjective::from_hessian(mat(1, 1, {1}), vec({0}), Eigen::MatrixXd::Zero(2, 1))});
    CHECK((best_response(g, 0, vec({4})) - vec({0.5, 0.5})).norm() < 1e-8);
  }
  SUBCASE("infeasible given opponents") {
    AffineConstraints c = AffineConstraints::none(2);
    c.G = mat(1, 2, {1, 1});
    c.g0 = vec({0});
    ConstrainedGame g(layout, {BoxSet::uniform(1, 0, 1), BoxSet::uniform(1, 0, 5)}, c,
                      {scalar(1, 0, 0), scalar(1, 0, 0)});
    try {
      best_response(g, 0, vec({3}));
      FAIL("expected InfeasibleError");
    } catch (const InfeasibleError& e) {
      CHECK(std::string(e.what()).find("best-response infeasible given opponents") != std::string::npos);
    }
  }
}
