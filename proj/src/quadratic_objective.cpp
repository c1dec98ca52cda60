#include "prefgne/quadratic_objective.hpp"

#include "prefgne/errors.hpp"

namespace prefgne {

QuadraticAgentObjective::QuadraticAgentObjective(Eigen::MatrixXd chol_factor,
                                                 Eigen::VectorXd linear,
                                                 Eigen::MatrixXd coupling)
    : chol(std::move(chol_factor)), q(std::move(linear)), A(std::move(coupling)) {
  if (chol.rows() != q.size() || chol.cols() != q.size()) {
    throw DimensionError("quadratic objective: Cholesky factor must be n_i x n_i");
  }
  if (A.cols() != q.size()) {
    throw DimensionError("quadratic objective: coupling must have n_i columns");
  }
  chol = chol.triangularView<Eigen::Lower>();
}

QuadraticAgentObjective QuadraticAgentObjective::from_hessian(const Eigen::MatrixXd& P,
                                                              Eigen::VectorXd linear,
                                                              Eigen::MatrixXd coupling) {
  Eigen::LLT<Eigen::MatrixXd> llt(P);
  if (llt.info() != Eigen::Success) {
    throw Error("quadratic objective: Hessian is not positive definite");
  }
  return {llt.matrixL(), std::move(linear), std::move(coupling)};
}

double QuadraticAgentObjective::value(const Eigen::VectorXd& x_i,
                                      const Eigen::VectorXd& x_others) const {
  const Eigen::VectorXd lx = chol.transpose() * x_i;
  return 0.5 * lx.squaredNorm() + q.dot(x_i) + x_others.dot(A * x_i);
}

Eigen::VectorXd QuadraticAgentObjective::gradient(const Eigen::VectorXd& x_i,
                                                  const Eigen::VectorXd& x_others) const {
  return chol * (chol.transpose() * x_i) + q + A.transpose() * x_others;
}

}  // namespace prefgne
