#pragma once

#include <Eigen/Dense>

namespace prefgne {

/**
 * Quadratic agent objective
 *
 *   J(x_i, x_o) = 1/2 x_i' P x_i + q' x_i + x_o' A x_i,   P = L L',
 *
 * where L is lower triangular with a positive diagonal and x_o stacks the
 * decisions of all other agents in agent order.
 */
struct QuadraticAgentObjective {
  Eigen::MatrixXd chol;  // n_i x n_i, lower triangular
  Eigen::VectorXd q;     // n_i
  Eigen::MatrixXd A;     // (n - n_i) x n_i

  QuadraticAgentObjective() = default;
  QuadraticAgentObjective(Eigen::MatrixXd chol_factor, Eigen::VectorXd linear,
                          Eigen::MatrixXd coupling);

  /// Builds an objective from an SPD Hessian (Cholesky factorized here).
  static QuadraticAgentObjective from_hessian(const Eigen::MatrixXd& P, Eigen::VectorXd linear,
                                              Eigen::MatrixXd coupling);

  Eigen::Index own_dim() const { return q.size(); }
  Eigen::Index others_dim() const { return A.rows(); }

  Eigen::MatrixXd hessian() const { return chol * chol.transpose(); }

  double value(const Eigen::VectorXd& x_i, const Eigen::VectorXd& x_others) const;

  /// Partial gradient with respect to the agent's own block.
  Eigen::VectorXd gradient(const Eigen::VectorXd& x_i, const Eigen::VectorXd& x_others) const;
};

}  // namespace prefgne
