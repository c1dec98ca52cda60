#include "prefgne/lbfgs.hpp"

#include <cmath>
#include <deque>

#include "prefgne/errors.hpp"

namespace prefgne {

namespace {

struct Correction {
  Eigen::VectorXd s;
  Eigen::VectorXd y;
  double rho;
};

Eigen::VectorXd two_loop(const std::deque<Correction>& memory, const Eigen::VectorXd& g) {
  Eigen::VectorXd q = g;
  std::vector<double> alpha(memory.size());
  for (std::size_t k = memory.size(); k-- > 0;) {
    alpha[k] = memory[k].rho * memory[k].s.dot(q);
    q -= alpha[k] * memory[k].y;
  }
  if (!memory.empty()) {
    const auto& last = memory.back();
    q *= last.s.dot(last.y) / last.y.squaredNorm();
  }
  for (std::size_t k = 0; k < memory.size(); ++k) {
    const double beta = memory[k].rho * memory[k].y.dot(q);
    q += (alpha[k] - beta) * memory[k].s;
  }
  return q;
}

}  // namespace

LbfgsResult minimize_box(const ObjectiveWithGradient& fun, const Eigen::VectorXd& x0,
                         const Eigen::VectorXd& lower, const Eigen::VectorXd& upper,
                         const LbfgsOptions& options) {
  const Eigen::Index n = x0.size();
  if (lower.size() != n || upper.size() != n) throw DimensionError("L-BFGS: bound dimension mismatch");
  auto project = [&](const Eigen::VectorXd& v) { return v.cwiseMax(lower).cwiseMin(upper); };

  LbfgsResult res;
  Eigen::VectorXd x = project(x0);
  Eigen::VectorXd g(n);
  double f = fun(x, g);
  ++res.evaluations;
  std::deque<Correction> memory;

  for (res.iterations = 0; res.iterations < options.max_iter; ++res.iterations) {
    const Eigen::VectorXd pg = x - project(x - g);
    if ((options.pg_l2 ? pg.norm() : pg.lpNorm<Eigen::Infinity>()) <= options.pg_tol) {
      res.converged = true;
      res.message = "projected gradient below tolerance";
      break;
    }

    Eigen::VectorXd g_free = g;
    for (Eigen::Index j = 0; j < n; ++j) {
      if ((x[j] <= lower[j] && g[j] > 0.0) || (x[j] >= upper[j] && g[j] < 0.0)) g_free[j] = 0.0;
    }
    Eigen::VectorXd d = -two_loop(memory, g_free);
    for (Eigen::Index j = 0; j < n; ++j) {
      if (g_free[j] == 0.0 && g[j] != 0.0) d[j] = 0.0;
    }
    if (!(g.dot(d) < 0.0)) {
      memory.clear();
      d = -g_free;
    }

    double step = memory.empty() ? std::min(1.0, 1.0 / std::max(d.lpNorm<Eigen::Infinity>(), 1e-300)) : 1.0;
    Eigen::VectorXd x_new, g_new(n);
    double f_new = f;
    bool accepted = false;
    for (int bt = 0; bt < options.max_backtracks; ++bt) {
      x_new = project(x + step * d);
      f_new = fun(x_new, g_new);
      ++res.evaluations;
      if (std::isfinite(f_new) && f_new <= f + options.armijo * g.dot(x_new - x)) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      if (!memory.empty()) {
        memory.clear();
        continue;
      }
      res.line_search_failed = true;
      res.message = "line search failed";
      break;
    }

    const Eigen::VectorXd s = x_new - x;
    const Eigen::VectorXd y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * y.squaredNorm() && sy > 0.0) {
      memory.push_back({s, y, 1.0 / sy});
      if (static_cast<int>(memory.size()) > options.history) memory.pop_front();
    }
    const double decrease = f - f_new;
    x = x_new;
    g = g_new;
    f = f_new;
    if (decrease <= options.f_tol * std::max({std::abs(f), std::abs(f_new), 1.0})) {
      res.converged = true;
      res.message = "relative decrease below tolerance";
      ++res.iterations;
      break;
    }
  }
  if (res.message.empty()) res.message = "maximum iterations reached";
  res.x = x;
  res.f = f;
  return res;
}

}  // namespace prefgne
