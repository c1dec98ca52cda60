#pragma once

#include <optional>
#include <string>

#include <Eigen/Dense>

#include "prefgne/game_model.hpp"

namespace prefgne {

struct QpSettings {
  double rho = 0.1;
  double sigma = 1e-6;
  double alpha = 1.6;           // over-relaxation
  double eps_abs = 1e-8;        // stop on max(primal, dual residual)
  double eps_infeasible = 1e-7;
  int max_iter = 10000;
  int check_every = 25;
  bool adaptive_rho = true;
  bool polish = true;
};

enum class QpStatus { solved, primal_infeasible, max_iterations };

struct QpResult {
  Eigen::VectorXd x;
  Eigen::VectorXd y;  // multipliers of the stacked constraint rows
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  int iterations = 0;
  bool polished = false;
  QpStatus status = QpStatus::max_iterations;
};

/**
 * ADMM solver (OSQP splitting) for
 *
 *   min 1/2 x'Px + q'x   s.t.   box.lower <= x <= box.upper,
 *                               G x + g0 <= 0,  H x + h0 = 0.
 *
 * P and the constraint set are fixed at construction and the KKT matrix is
 * factorized once per rho value, so repeated solves with different q (as in
 * projections) reuse the factorization.
 */
class AdmmQp {
 public:
  AdmmQp(Eigen::MatrixXd P, const BoxSet& box, const AffineConstraints& shared, QpSettings settings = {});

  QpResult solve(const Eigen::VectorXd& q, const std::optional<Eigen::VectorXd>& warm_start = std::nullopt);

  Eigen::Index dim() const { return P_.rows(); }

 private:
  void factorize();
  bool try_polish(const Eigen::VectorXd& q, const Eigen::VectorXd& z, QpResult& out) const;
  void residuals(const Eigen::VectorXd& q, const Eigen::VectorXd& x, const Eigen::VectorXd& z,
                 const Eigen::VectorXd& y, double& prim, double& dual) const;
  Eigen::VectorXd project_bounds(const Eigen::VectorXd& v) const;

  Eigen::MatrixXd P_;
  Eigen::MatrixXd C_;  // stacked constraint rows
  Eigen::VectorXd l_, u_;
  Eigen::VectorXd box_lower_, box_upper_;
  Eigen::VectorXd rho_vec_;
  double rho_;
  QpSettings settings_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
};

/// Minimizer of 1/2 x'Px + q'x over box ∩ shared. Throws InfeasibleError or SolverError.
Eigen::VectorXd solve_qp(const Eigen::MatrixXd& P, const Eigen::VectorXd& q, const BoxSet& box,
                         const AffineConstraints& shared, const QpSettings& settings = {});

QpResult solve_qp_detailed(const Eigen::MatrixXd& P, const Eigen::VectorXd& q, const BoxSet& box,
                           const AffineConstraints& shared, const QpSettings& settings = {});

/// Euclidean projection onto box ∩ shared.
Eigen::VectorXd project(const Eigen::VectorXd& point, const BoxSet& box, const AffineConstraints& shared);

std::string to_string(QpStatus status);

}  // namespace prefgne
