#include "prefgne/gne_solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "prefgne/errors.hpp"

namespace prefgne {

namespace {

void check_exploration(const AgentLayout& layout, const Exploration& exploration) {
  if (exploration.empty()) return;
  if (exploration.size() != layout.agents()) throw DimensionError("exploration: one term per agent is required");
  for (std::size_t i = 0; i < layout.agents(); ++i) {
    if (exploration[i].weight != 0.0 && exploration[i].center.size() != layout.dim(i)) {
      throw DimensionError("exploration: center dimension mismatch for agent " + std::to_string(i));
    }
  }
}

double min_symmetric_eigenvalue(const Eigen::MatrixXd& M) {
  const Eigen::MatrixXd S = 0.5 * (M + M.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(S, Eigen::EigenvaluesOnly);
  return eig.eigenvalues().minCoeff();
}

/// Active-set Newton refinement of the affine VI over a box. Returns true
/// when x was replaced by a point with a smaller residual.
bool polish_box_vi(const AffineGameOperator& op, const BoxSet& box, double step, Eigen::VectorXd& x,
                   double& residual) {
  const Eigen::Index n = x.size();
  bool improved = false;
  Eigen::VectorXd current = x;
  for (int round = 0; round < 25; ++round) {
    const Eigen::VectorXd trial_point = current - step * op(current);
    std::vector<Eigen::Index> free_idx;
    Eigen::VectorXd fixed = current;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (trial_point[j] <= box.lower[j]) {
        fixed[j] = box.lower[j];
      } else if (trial_point[j] >= box.upper[j]) {
        fixed[j] = box.upper[j];
      } else {
        free_idx.push_back(j);
      }
    }
    Eigen::VectorXd candidate = fixed;
    if (!free_idx.empty()) {
      const auto nf = static_cast<Eigen::Index>(free_idx.size());
      Eigen::MatrixXd Mff(nf, nf);
      Eigen::VectorXd rhs(nf);
      for (Eigen::Index a = 0; a < nf; ++a) {
        const Eigen::Index ja = free_idx[static_cast<std::size_t>(a)];
        double r = -op.c[ja];
        for (Eigen::Index j = 0; j < n; ++j) {
          if (std::find(free_idx.begin(), free_idx.end(), j) == free_idx.end()) r -= op.M(ja, j) * fixed[j];
        }
        rhs[a] = r;
        for (Eigen::Index b = 0; b < nf; ++b) Mff(a, b) = op.M(ja, free_idx[static_cast<std::size_t>(b)]);
      }
      Eigen::FullPivLU<Eigen::MatrixXd> lu(Mff);
      if (!lu.isInvertible()) break;
      const Eigen::VectorXd xf = lu.solve(rhs);
      for (Eigen::Index a = 0; a < nf; ++a) candidate[free_idx[static_cast<std::size_t>(a)]] = xf[a];
    }
    candidate = box.project(candidate);
    if (!candidate.allFinite()) break;
    const double r = (candidate - box.project(candidate - step * op(candidate))).norm();
    if (r < residual) {
      x = candidate;
      residual = r;
      improved = true;
    }
    if ((candidate - current).lpNorm<Eigen::Infinity>() == 0.0) break;
    current = candidate;
  }
  return improved;
}

}  // namespace

std::string to_string(GneStatus status) {
  switch (status) {
    case GneStatus::converged: return "converged";
    case GneStatus::max_iterations: return "max-iterations";
    case GneStatus::non_monotone_warning: return "non-monotone-warning";
  }
  return "unknown";
}

AffineGameOperator game_operator(const AgentLayout& layout,
                                 const std::vector<QuadraticAgentObjective>& objectives,
                                 const Exploration& exploration) {
  if (objectives.size() != layout.agents()) throw DimensionError("game operator: one objective per agent is required");
  check_exploration(layout, exploration);
  const Eigen::Index n = layout.total();
  AffineGameOperator op{Eigen::MatrixXd::Zero(n, n), Eigen::VectorXd::Zero(n)};
  for (std::size_t i = 0; i < layout.agents(); ++i) {
    const auto& obj = objectives[i];
    const Eigen::Index off = layout.offset(i);
    const Eigen::Index d = layout.dim(i);
    if (obj.own_dim() != d || obj.others_dim() != layout.others_dim(i)) {
      throw DimensionError("game operator: objective " + std::to_string(i) + " does not match the layout");
    }
    const Eigen::MatrixXd At = obj.A.transpose();
    op.M.block(off, off, d, d) = obj.hessian();
    op.M.block(off, 0, d, off) = At.leftCols(off);
    op.M.block(off, off + d, d, n - off - d) = At.rightCols(n - off - d);
    op.c.segment(off, d) = obj.q;
    if (!exploration.empty() && exploration[i].weight != 0.0) {
      op.M.block(off, off, d, d).diagonal().array() += exploration[i].weight;
      op.c.segment(off, d) -= exploration[i].weight * exploration[i].center;
    }
  }
  return op;
}

Eigen::VectorXd pseudo_gradient(const AgentLayout& layout,
                                const std::vector<QuadraticAgentObjective>& objectives,
                                const Eigen::VectorXd& x, const Exploration& exploration) {
  layout.check(x);
  check_exploration(layout, exploration);
  Eigen::VectorXd g(layout.total());
  for (std::size_t i = 0; i < layout.agents(); ++i) {
    const Eigen::VectorXd xi = layout.extract(i, x);
    Eigen::VectorXd gi = objectives.at(i).gradient(xi, layout.others(i, x));
    if (!exploration.empty() && exploration[i].weight != 0.0) {
      gi += exploration[i].weight * (xi - exploration[i].center);
    }
    g.segment(layout.offset(i), layout.dim(i)) = gi;
  }
  return g;
}

QuadraticAgentObjective with_exploration(const QuadraticAgentObjective& obj, const ExplorationTerm& term) {
  if (term.weight == 0.0) return obj;
  Eigen::MatrixXd P = obj.hessian();
  P.diagonal().array() += term.weight;
  return QuadraticAgentObjective::from_hessian(P, obj.q - term.weight * term.center, obj.A);
}

JointProjector::JointProjector(const ConstrainedGame& game) : box_(game.joint_box()) {
  if (!game.shared.empty()) {
    const Eigen::Index n = game.layout.total();
    qp_.emplace(Eigen::MatrixXd::Identity(n, n), box_, game.shared);
  }
}

Eigen::VectorXd JointProjector::operator()(const Eigen::VectorXd& point) {
  if (!qp_) return box_.project(point);
  QpResult res = qp_->solve(-point, point);
  if (res.status == QpStatus::primal_infeasible) throw InfeasibleError("GNE: joint feasible set is empty");
  if (res.status != QpStatus::solved) {
    throw SolverError("GNE: projection onto the joint feasible set did not converge", res.primal_residual,
                      res.dual_residual);
  }
  return res.x;
}

double extragradient_step(const Eigen::MatrixXd& M) {
  const Eigen::Index n = M.rows();
  if (n == 0) return 1.0;
  Eigen::VectorXd v = Eigen::VectorXd::LinSpaced(n, 1.0, 2.0).normalized();
  double lambda = 0.0;
  for (int it = 0; it < 500; ++it) {
    Eigen::VectorXd w = M.transpose() * (M * v);
    const double norm = w.norm();
    if (norm == 0.0) return 1.0;
    const double next = v.dot(w);
    v = w / norm;
    if (std::abs(next - lambda) <= 1e-12 * std::abs(next)) {
      lambda = next;
      break;
    }
    lambda = next;
  }
  const double lip = std::sqrt(std::max(lambda, 0.0));
  return lip > 0.0 ? 0.9 / lip : 1.0;
}

double gne_residual(const ConstrainedGame& game, const Exploration& exploration, const Eigen::VectorXd& x,
                    double step) {
  const AffineGameOperator op = game_operator(game.layout, game.objectives, exploration);
  JointProjector proj(game);
  return (x - proj(x - step * op(x))).norm();
}

GNESolution solve_gne(const ConstrainedGame& game, const Exploration& exploration, const GneOptions& options) {
  if (!game.has_objectives()) throw Error("GNE: the game has no quadratic objectives");
  const Eigen::Index n = game.layout.total();
  const AffineGameOperator op = game_operator(game.layout, game.objectives, exploration);
  JointProjector proj(game);
  const BoxSet box = game.joint_box();

  GNESolution sol;
  sol.step = extragradient_step(op.M);
  const double step = sol.step;

  Eigen::VectorXd x = options.warm_start ? *options.warm_start : Eigen::VectorXd::Zero(n);
  game.layout.check(x);
  x = proj(x);
  Eigen::VectorXd y = proj(x - step * op(x));
  double r = (x - y).norm();

  Eigen::VectorXd best_x = x;
  double best_r = r;
  double window_start_best = best_r;
  std::optional<double> min_eig;
  bool polished_once = false;

  auto try_polish = [&]() {
    if (!options.polish || !proj.box_only()) return;
    double pr = best_r;
    Eigen::VectorXd px = best_x;
    if (polish_box_vi(op, box, step, px, pr)) {
      best_x = px;
      best_r = pr;
      x = px;
      y = proj(x - step * op(x));
      r = (x - y).norm();
    }
  };

  sol.status = GneStatus::max_iterations;
  int it = 0;
  for (; it < options.max_iter && best_r > options.tol; ++it) {
    x = proj(x - step * op(y));
    y = proj(x - step * op(x));
    r = (x - y).norm();
    if (r < best_r) {
      best_r = r;
      best_x = x;
    }
    if (!polished_once && best_r < 1e-3) {
      polished_once = true;
      try_polish();
    }
    if ((it + 1) % options.window == 0) {
      sol.residual_trace.push_back(best_r);
      try_polish();
      if (best_r <= options.tol) break;
      if (best_r >= 0.999 * window_start_best) {
        if (!min_eig) min_eig = min_symmetric_eigenvalue(op.M);
        if (*min_eig < 0.0) {
          sol.status = GneStatus::non_monotone_warning;
          break;
        }
      }
      window_start_best = best_r;
    }
  }
  sol.iterations = it;
  if (best_r > options.tol) try_polish();

  if (best_r <= options.tol) {
    sol.status = GneStatus::converged;
  } else if (sol.status == GneStatus::non_monotone_warning && proj.box_only()) {
    // Active-set refinement seeded at the stationary point of the unconstrained game.
    Eigen::FullPivLU<Eigen::MatrixXd> lu(op.M);
    if (lu.isInvertible()) {
      Eigen::VectorXd px = box.project(lu.solve(-op.c));
      double pr = (px - box.project(px - step * op(px))).norm();
      if (px.allFinite() && pr < best_r) {
        best_x = px;
        best_r = pr;
      }
      px = best_x;
      pr = best_r;
      if (polish_box_vi(op, box, step, px, pr)) {
        best_x = px;
        best_r = pr;
      }
    }
    if (best_r <= options.tol) sol.status = GneStatus::converged;
  }
  if (sol.status == GneStatus::non_monotone_warning && options.fallback_sweeps > 0) {
    // Damped Gauss-Seidel best response from the best extragradient iterate.
    Eigen::VectorXd z = best_x;
    try {
      for (int sweep = 0; sweep < options.fallback_sweeps; ++sweep) {
        for (std::size_t i = 0; i < game.agents(); ++i) {
          const QuadraticAgentObjective obj =
              exploration.empty() ? game.objectives[i] : with_exploration(game.objectives[i], exploration[i]);
          const Eigen::VectorXd br = best_response(game, i, obj, game.layout.others(i, z));
          const Eigen::VectorXd zi = game.layout.extract(i, z);
          z = game.layout.insert(i, (1.0 - options.fallback_damping) * zi + options.fallback_damping * br, z);
        }
        ++sol.iterations;
        const double rz = (z - proj(z - step * op(z))).norm();
        if (rz < best_r) {
          best_r = rz;
          best_x = z;
          sol.used_fallback = true;
        }
        if (best_r <= options.tol) break;
      }
    } catch (const Error&) {
      // keep the best extragradient iterate
    }
    if (best_r <= options.tol) sol.status = GneStatus::converged;
  }

  sol.x = best_x;
  sol.residual = best_r;
  return sol;
}

Eigen::VectorXd best_response(const ConstrainedGame& game, std::size_t agent, const QuadraticAgentObjective& obj,
                              const Eigen::VectorXd& x_others) {
  const AgentLayout& layout = game.layout;
  if (x_others.size() != layout.others_dim(agent)) throw DimensionError("best response: opponent dimension mismatch");
  const Eigen::VectorXd q = obj.q + obj.A.transpose() * x_others;
  AffineConstraints sliced = game.shared.slice(layout, agent, x_others);

  // Rows that do not involve the agent are either satisfied constants or make F_i empty.
  std::vector<Eigen::Index> keep_g, keep_h;
  for (Eigen::Index k = 0; k < sliced.n_ineq(); ++k) {
    if (sliced.G.row(k).lpNorm<Eigen::Infinity>() > 0.0) keep_g.push_back(k);
    else if (sliced.g0[k] > kDefaultTolEq) throw InfeasibleError("best-response infeasible given opponents");
  }
  for (Eigen::Index k = 0; k < sliced.n_eq(); ++k) {
    if (sliced.H.row(k).lpNorm<Eigen::Infinity>() > 0.0) keep_h.push_back(k);
    else if (std::abs(sliced.h0[k]) > kDefaultTolEq) throw InfeasibleError("best-response infeasible given opponents");
  }
  const Eigen::Index d = layout.dim(agent);
  AffineConstraints reduced{Eigen::MatrixXd(static_cast<Eigen::Index>(keep_g.size()), d),
                            Eigen::VectorXd(static_cast<Eigen::Index>(keep_g.size())),
                            Eigen::MatrixXd(static_cast<Eigen::Index>(keep_h.size()), d),
                            Eigen::VectorXd(static_cast<Eigen::Index>(keep_h.size()))};
  for (std::size_t k = 0; k < keep_g.size(); ++k) {
    reduced.G.row(static_cast<Eigen::Index>(k)) = sliced.G.row(keep_g[k]);
    reduced.g0[static_cast<Eigen::Index>(k)] = sliced.g0[keep_g[k]];
  }
  for (std::size_t k = 0; k < keep_h.size(); ++k) {
    reduced.H.row(static_cast<Eigen::Index>(k)) = sliced.H.row(keep_h[k]);
    reduced.h0[static_cast<Eigen::Index>(k)] = sliced.h0[keep_h[k]];
  }
  try {
    return solve_qp(obj.hessian(), q, game.local.at(agent), reduced);
  } catch (const InfeasibleError&) {
    throw InfeasibleError("best-response infeasible given opponents (agent " + std::to_string(agent) + ")");
  }
}

Eigen::VectorXd best_response(const ConstrainedGame& game, std::size_t agent, const Eigen::VectorXd& x_others) {
  if (!game.has_objectives()) throw Error("best response: the game has no quadratic objectives");
  return best_response(game, agent, game.objectives.at(agent), x_others);
}

}  // namespace prefgne
