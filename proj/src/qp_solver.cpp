#include "prefgne/qp_solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "prefgne/errors.hpp"

namespace prefgne {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kRhoMin = 1e-6;
constexpr double kRhoMax = 1e6;
constexpr double kRhoEqScale = 1e3;
constexpr double kPolishTrigger = 1e-3;

double inf_norm(const Eigen::VectorXd& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

}  // namespace

std::string to_string(QpStatus status) {
  switch (status) {
    case QpStatus::solved: return "solved";
    case QpStatus::primal_infeasible: return "primal-infeasible";
    case QpStatus::max_iterations: return "max-iterations";
  }
  return "unknown";
}

AdmmQp::AdmmQp(Eigen::MatrixXd P, const BoxSet& box, const AffineConstraints& shared, QpSettings settings)
    : P_(std::move(P)), rho_(settings.rho), settings_(settings) {
  const Eigen::Index n = P_.rows();
  if (P_.cols() != n) throw DimensionError("QP: P must be square");
  if (box.size() != n) throw DimensionError("QP: box dimension does not match P");
  shared.check();
  if (shared.dim() != n && !shared.empty()) throw DimensionError("QP: constraint columns do not match P");
  box_lower_ = box.lower;
  box_upper_ = box.upper;

  std::vector<Eigen::Index> box_rows;
  for (Eigen::Index j = 0; j < n; ++j) {
    if (std::isfinite(box.lower[j]) || std::isfinite(box.upper[j])) box_rows.push_back(j);
  }
  const Eigen::Index m = static_cast<Eigen::Index>(box_rows.size()) + shared.n_ineq() + shared.n_eq();
  C_ = Eigen::MatrixXd::Zero(m, n);
  l_.resize(m);
  u_.resize(m);
  Eigen::Index r = 0;
  for (Eigen::Index j : box_rows) {
    C_(r, j) = 1.0;
    l_[r] = box.lower[j];
    u_[r] = box.upper[j];
    ++r;
  }
  for (Eigen::Index k = 0; k < shared.n_ineq(); ++k, ++r) {
    C_.row(r) = shared.G.row(k);
    l_[r] = -kInf;
    u_[r] = -shared.g0[k];
  }
  for (Eigen::Index k = 0; k < shared.n_eq(); ++k, ++r) {
    C_.row(r) = shared.H.row(k);
    l_[r] = u_[r] = -shared.h0[k];
  }
  factorize();
}

void AdmmQp::factorize() {
  const Eigen::Index m = C_.rows();
  rho_vec_.resize(m);
  for (Eigen::Index j = 0; j < m; ++j) rho_vec_[j] = (l_[j] == u_[j]) ? kRhoEqScale * rho_ : rho_;
  Eigen::MatrixXd K = P_;
  K.diagonal().array() += settings_.sigma;
  if (m > 0) K.noalias() += C_.transpose() * rho_vec_.asDiagonal() * C_;
  llt_.compute(K);
  if (llt_.info() != Eigen::Success) throw Error("QP: P is not positive semidefinite");
}

Eigen::VectorXd AdmmQp::project_bounds(const Eigen::VectorXd& v) const { return v.cwiseMax(l_).cwiseMin(u_); }

void AdmmQp::residuals(const Eigen::VectorXd& q, const Eigen::VectorXd& x, const Eigen::VectorXd& z,
                       const Eigen::VectorXd& y, double& prim, double& dual) const {
  prim = C_.rows() > 0 ? inf_norm(C_ * x - z) : 0.0;
  Eigen::VectorXd g = P_ * x + q;
  if (C_.rows() > 0) g.noalias() += C_.transpose() * y;
  dual = inf_norm(g);
}

bool AdmmQp::try_polish(const Eigen::VectorXd& q, const Eigen::VectorXd& z, QpResult& out) const {
  const Eigen::Index n = P_.rows();
  const Eigen::Index m = C_.rows();
  std::vector<Eigen::Index> active;
  std::vector<double> target;
  std::vector<int> side;  // -1 lower, +1 upper, 0 equality
  for (Eigen::Index j = 0; j < m; ++j) {
    if (l_[j] == u_[j]) {
      active.push_back(j);
      target.push_back(l_[j]);
      side.push_back(0);
    } else if (z[j] - l_[j] < -out.y[j]) {
      active.push_back(j);
      target.push_back(l_[j]);
      side.push_back(-1);
    } else if (u_[j] - z[j] < out.y[j]) {
      active.push_back(j);
      target.push_back(u_[j]);
      side.push_back(1);
    }
  }
  const auto na = static_cast<Eigen::Index>(active.size());
  Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n + na, n + na);
  Eigen::VectorXd rhs(n + na);
  kkt.topLeftCorner(n, n) = P_;
  rhs.head(n) = -q;
  for (Eigen::Index k = 0; k < na; ++k) {
    kkt.block(n + k, 0, 1, n) = C_.row(active[static_cast<std::size_t>(k)]);
    kkt.block(0, n + k, n, 1) = C_.row(active[static_cast<std::size_t>(k)]).transpose();
    rhs[n + k] = target[static_cast<std::size_t>(k)];
  }
  const Eigen::VectorXd sol = kkt.completeOrthogonalDecomposition().solve(rhs);
  if (!sol.allFinite()) return false;

  Eigen::VectorXd x = sol.head(n);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(m);
  for (Eigen::Index k = 0; k < na; ++k) {
    const double yk = sol[n + k];
    const int s = side[static_cast<std::size_t>(k)];
    if ((s < 0 && yk > settings_.eps_abs) || (s > 0 && yk < -settings_.eps_abs)) return false;
    y[active[static_cast<std::size_t>(k)]] = yk;
  }
  const Eigen::VectorXd cx = C_ * x;
  double prim = 0.0;
  double dual = 0.0;
  residuals(q, x, project_bounds(cx), y, prim, dual);
  if (prim > settings_.eps_abs || dual > settings_.eps_abs) return false;

  out.x = x;
  out.y = y;
  out.primal_residual = prim;
  out.dual_residual = dual;
  out.polished = true;
  out.status = QpStatus::solved;
  return true;
}

QpResult AdmmQp::solve(const Eigen::VectorXd& q, const std::optional<Eigen::VectorXd>& warm_start) {
  const Eigen::Index n = P_.rows();
  const Eigen::Index m = C_.rows();
  if (q.size() != n) throw DimensionError("QP: q dimension does not match P");

  QpResult out;
  if (m == 0) {
    out.x = P_.llt().solve(-q);
    out.y.resize(0);
    residuals(q, out.x, Eigen::VectorXd(0), out.y, out.primal_residual, out.dual_residual);
    out.status = QpStatus::solved;
    return out;
  }

  // Each solve starts from the same rho so results depend only on (q, warm start).
  if (rho_ != settings_.rho) {
    rho_ = settings_.rho;
    factorize();
  }

  Eigen::VectorXd x = warm_start ? *warm_start : Eigen::VectorXd::Zero(n);
  Eigen::VectorXd z = project_bounds(C_ * x);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd y_prev = y;

  for (int it = 1; it <= settings_.max_iter; ++it) {
    Eigen::VectorXd rhs = settings_.sigma * x - q;
    rhs.noalias() += C_.transpose() * (rho_vec_.cwiseProduct(z) - y);
    const Eigen::VectorXd x_tilde = llt_.solve(rhs);
    const Eigen::VectorXd z_tilde = C_ * x_tilde;
    x = settings_.alpha * x_tilde + (1.0 - settings_.alpha) * x;
    const Eigen::VectorXd z_relaxed = settings_.alpha * z_tilde + (1.0 - settings_.alpha) * z;
    const Eigen::VectorXd z_new = project_bounds(z_relaxed + y.cwiseQuotient(rho_vec_));
    y += rho_vec_.cwiseProduct(z_relaxed - z_new);
    z = z_new;

    if (it % settings_.check_every != 0 && it != settings_.max_iter) continue;

    double prim = 0.0;
    double dual = 0.0;
    residuals(q, x, z, y, prim, dual);
    out.iterations = it;
    out.x = x;
    out.y = y;
    out.primal_residual = prim;
    out.dual_residual = dual;

    if (prim <= settings_.eps_abs && dual <= settings_.eps_abs) {
      out.status = QpStatus::solved;
      break;
    }
    if (settings_.polish && prim <= kPolishTrigger && dual <= kPolishTrigger && try_polish(q, z, out)) break;

    // Infeasibility certificate from the change in the multipliers.
    const Eigen::VectorXd dy = y - y_prev;
    const double dy_norm = inf_norm(dy);
    if (dy_norm > 1e-12) {
      bool certificate = inf_norm(C_.transpose() * dy) <= settings_.eps_infeasible * dy_norm;
      double support = 0.0;
      for (Eigen::Index j = 0; certificate && j < m; ++j) {
        if (dy[j] > settings_.eps_infeasible * dy_norm) {
          if (!std::isfinite(u_[j])) certificate = false;
          else support += u_[j] * dy[j];
        } else if (dy[j] < -settings_.eps_infeasible * dy_norm) {
          if (!std::isfinite(l_[j])) certificate = false;
          else support += l_[j] * dy[j];
        }
      }
      if (certificate && support < -settings_.eps_infeasible * dy_norm) {
        out.status = QpStatus::primal_infeasible;
        return out;
      }
    }
    y_prev = y;

    if (settings_.adaptive_rho) {
      const Eigen::VectorXd cx = C_ * x;
      const Eigen::VectorXd px = P_ * x;
      const double prim_scale = std::max({inf_norm(cx), inf_norm(z), 1e-12});
      const double dual_scale = std::max({inf_norm(px), inf_norm(C_.transpose() * y), inf_norm(q), 1e-12});
      const double ratio = std::sqrt((prim / prim_scale) / std::max(dual / dual_scale, 1e-30));
      const double new_rho = std::clamp(rho_ * ratio, kRhoMin, kRhoMax);
      if (new_rho > 5.0 * rho_ || new_rho < 0.2 * rho_) {
        rho_ = new_rho;
        factorize();
      }
    }
  }

  if (out.status == QpStatus::solved) out.x = out.x.cwiseMax(box_lower_).cwiseMin(box_upper_);
  return out;
}

QpResult solve_qp_detailed(const Eigen::MatrixXd& P, const Eigen::VectorXd& q, const BoxSet& box,
                           const AffineConstraints& shared, const QpSettings& settings) {
  AdmmQp qp(P, box, shared, settings);
  return qp.solve(q);
}

Eigen::VectorXd solve_qp(const Eigen::MatrixXd& P, const Eigen::VectorXd& q, const BoxSet& box,
                         const AffineConstraints& shared, const QpSettings& settings) {
  QpResult res = solve_qp_detailed(P, q, box, shared, settings);
  if (res.status == QpStatus::primal_infeasible) throw InfeasibleError("QP infeasible");
  if (res.status != QpStatus::solved) {
    std::ostringstream os;
    os << "QP: no convergence after " << res.iterations << " iterations (primal residual "
       << res.primal_residual << ", dual residual " << res.dual_residual << ")";
    throw SolverError(os.str(), res.primal_residual, res.dual_residual);
  }
  return res.x;
}

Eigen::VectorXd project(const Eigen::VectorXd& point, const BoxSet& box, const AffineConstraints& shared) {
  if (shared.empty()) return box.project(point);
  const Eigen::Index n = point.size();
  return solve_qp(Eigen::MatrixXd::Identity(n, n), -point, box, shared);
}

}  // namespace prefgne
