#include "doctest.h"

#include <cmath>

#include "prefgne/errors.hpp"
#include "prefgne/game_model.hpp"

using namespace prefgne;

namespace {

ConstrainedGame scalar_game(double lo, double hi, std::size_t agents = 1) {
  AgentLayout layout(std::vector<Eigen::Index>(agents, 1));
  std::vector<BoxSet> boxes(agents, BoxSet::uniform(1, lo, hi));
  return ConstrainedGame(layout, boxes, AffineConstraints::none(static_cast<Eigen::Index>(agents)));
}

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index k = 0;
  for (double x : v) out[k++] = x;
  return out;
}

}  // namespace

TEST_CASE("layout splits and joins agent blocks") {
  AgentLayout layout({2, 1, 3});
  CHECK(layout.total() == 6);
  Eigen::VectorXd x(6);
  x << 1, 2, 3, 4, 5, 6;
  CHECK(layout.extract(1, x) == vec({3}));
  CHECK(layout.others(1, x) == vec({1, 2, 4, 5, 6}));
  CHECK(layout.join(1, vec({9}), layout.others(1, x)) == layout.insert(1, vec({9}), x));
  CHECK(layout.join(2, layout.extract(2, x), layout.others(2, x)) == x);
  CHECK_THROWS_AS(layout.extract(0, vec({1, 2})), DimensionError);
}

TEST_CASE("feasible") {
  SUBCASE("unconstrained game accepts any point") {
    AgentLayout layout({2});
    ConstrainedGame g(layout, {BoxSet::unbounded(2)}, AffineConstraints::none(2));
    CHECK(feasible(g, vec({1e9, -3})));
  }
  SUBCASE("box violation") {
    CHECK_FALSE(feasible(scalar_game(0, 1), vec({1.5})));
  }
  SUBCASE("active inequality is feasible") {
    ConstrainedGame g = scalar_game(-10, 10);
    g.shared.G = Eigen::MatrixXd::Ones(1, 1);
    g.shared.g0 = vec({-1});
    CHECK(feasible(g, vec({1}), 1e-9));
    CHECK_FALSE(feasible(g, vec({1.01}), 1e-9));
  }
  SUBCASE("equality within tolerance") {
    AgentLayout layout({1, 1});
    AffineConstraints c = AffineConstraints::none(2);
    c.H = Eigen::MatrixXd::Ones(1, 2);
    c.h0 = vec({-1});
    ConstrainedGame g(layout, {BoxSet::unbounded(1), BoxSet::unbounded(1)}, c);
    CHECK(feasible(g, vec({0.4, 0.6 + 1e-10}), 1e-8));
    CHECK_FALSE(feasible(g, vec({0.4, 0.61}), 1e-8));
  }
  SUBCASE("dimension mismatch") {
    CHECK_THROWS_AS(feasible(scalar_game(0, 1), vec({1, 2})), DimensionError);
  }
}

TEST_CASE("sample_feasible") {
  Rng rng(7);
  SUBCASE("unit square") {
    AgentLayout layout({2});
    ConstrainedGame g(layout, {BoxSet::uniform(2, 0, 1)}, AffineConstraints::none(2));
    const auto pts = sample_feasible(g, 3, rng);
    REQUIRE(pts.size() == 3);
    for (const auto& p : pts) CHECK(((p.array() >= 0).all() && (p.array() <= 1).all()));
  }
  SUBCASE("half interval") {
    ConstrainedGame g = scalar_game(0, 1);
    g.shared.G = Eigen::MatrixXd::Ones(1, 1);
    g.shared.g0 = vec({-0.5});
    for (const auto& p : sample_feasible(g, 10, rng)) CHECK(p[0] <= 0.5);
  }
  SUBCASE("empty feasible set") {
    ConstrainedGame g = scalar_game(0, 1);
    g.shared.G = Eigen::MatrixXd::Ones(1, 1);
    g.shared.g0 = vec({1});
    try {
      sample_feasible(g, 1, rng, kDefaultTolEq, 20000);
      FAIL("expected SamplingError");
    } catch (const SamplingError& e) {
      CHECK(std::string(e.what()).find("feasible sampling failed") != std::string::npos);
      CHECK(std::string(e.what()).find("20000") != std::string::npos);
    }
  }
  SUBCASE("equality constraints hold after projection") {
    AgentLayout layout({1, 1});
    AffineConstraints c = AffineConstraints::none(2);
    c.H = Eigen::MatrixXd::Ones(1, 2);
    c.h0 = vec({-1});
    ConstrainedGame g(layout, {BoxSet::uniform(1, -2, 2), BoxSet::uniform(1, -2, 2)}, c);
    for (const auto& p : sample_feasible(g, 20, rng)) CHECK(feasible(g, p));
  }
  SUBCASE("unbounded box without a sampling box") {
    AgentLayout layout({1});
    ConstrainedGame g(layout, {BoxSet::unbounded(1)}, AffineConstraints::none(1));
    CHECK_THROWS_AS(sample_feasible(g, 1, rng), SamplingError);
  }
  SUBCASE("same seed, same samples") {
    ConstrainedGame g = scalar_game(-1, 1, 2);
    Rng a(3), b(3);
    CHECK(sample_feasible(g, 5, a) == sample_feasible(g, 5, b));
  }
}

TEST_CASE("preference oracle") {
  auto oracle = make_preference_oracle({[](const Eigen::VectorXd& x, const Eigen::VectorXd&) { return x.squaredNorm(); }});
  const Eigen::VectorXd none(0);
  CHECK(oracle->query(0, vec({1}), vec({2}), none) == 1);
  CHECK(oracle->query(0, vec({2}), vec({1}), none) == 0);
  CHECK(oracle->query(0, vec({3}), vec({3}), none) == 1);
  CHECK(oracle->query_count() == 3);
  oracle->objective(0, vec({1}), none);
  CHECK(oracle->query_count() == 3);
}

TEST_CASE("quadratic objective") {
  Eigen::MatrixXd L(2, 2);
  L << 2, 0, 1, 1;
  Eigen::MatrixXd A(1, 2);
  A << 0.5, -1;
  QuadraticAgentObjective obj(L, vec({1, 0}), A);
  const Eigen::VectorXd x = vec({1, 2}), xo = vec({3});
  const Eigen::MatrixXd P = L * L.transpose();
  CHECK(obj.value(x, xo) == doctest::Approx(0.5 * x.dot(P * x) + x[0] + xo.dot(A * x)));
  CHECK((obj.gradient(x, xo) - (P * x + vec({1, 0}) + A.transpose() * xo)).norm() < 1e-12);
  const auto back = QuadraticAgentObjective::from_hessian(P, obj.q, A);
  CHECK((back.hessian() - P).norm() < 1e-12);
}

TEST_CASE("game JSON round trip") {
  AgentLayout layout({1, 2});
  AffineConstraints c = AffineConstraints::none(3);
  c.G = Eigen::MatrixXd::Ones(1, 3);
  c.g0 = vec({-1});
  std::vector<BoxSet> boxes = {BoxSet::uniform(1, 0, 1), BoxSet::unbounded(2)};
  std::vector<QuadraticAgentObjective> objs = {
      QuadraticAgentObjective(Eigen::MatrixXd::Identity(1, 1), vec({1}), Eigen::MatrixXd::Zero(2, 1)),
      QuadraticAgentObjective(Eigen::MatrixXd::Identity(2, 2), vec({0, 1}), Eigen::MatrixXd::Ones(1, 2))};
  ConstrainedGame g(layout, boxes, c, objs, {BoxSet::uniform(1, 0, 1), BoxSet::uniform(2, -1, 1)});
  const ConstrainedGame back = game_from_json(game_to_json(g));
  CHECK(back.layout.dims() == g.layout.dims());
  CHECK(std::isinf(back.local[1].upper[0]));
  CHECK(back.shared.G == g.shared.G);
  CHECK(back.objectives[1].A == g.objectives[1].A);
  CHECK(back.sampling[1].lower == g.sampling[1].lower);

  nlohmann::json doc = game_to_json(g);
  doc["extra"] = 1;
  CHECK_THROWS_AS(game_from_json(doc), ConfigError);
}
