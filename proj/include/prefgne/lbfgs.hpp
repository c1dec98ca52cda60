#pragma once

#include <functional>
#include <string>

#include <Eigen/Dense>

namespace prefgne {

/// f(x, grad) -> value; grad is resized by the caller.
using ObjectiveWithGradient = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>;

struct LbfgsOptions {
  int max_iter = 1000;
  int history = 10;
  double pg_tol = 1e-8;      // projected-gradient norm
  bool pg_l2 = false;        // measure it in the 2-norm instead of the infinity norm
  double f_tol = 1e-13;      // relative decrease
  double armijo = 1e-4;
  int max_backtracks = 40;
};

struct LbfgsResult {
  Eigen::VectorXd x;
  double f = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  bool line_search_failed = false;
  std::string message;
};

/**
 * Limited-memory BFGS with gradient projection for min f(x) s.t. lower <= x <= upper.
 *
 * Variables sitting at a bound with the gradient pointing outward are held
 * fixed when forming the quasi-Newton direction; steps are projected onto
 * the box and accepted by backtracking on the Armijo condition measured
 * along the projected path.
 */
LbfgsResult minimize_box(const ObjectiveWithGradient& fun, const Eigen::VectorXd& x0,
                         const Eigen::VectorXd& lower, const Eigen::VectorXd& upper,
                         const LbfgsOptions& options = {});

}  // namespace prefgne
