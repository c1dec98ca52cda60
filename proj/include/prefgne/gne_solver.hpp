#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "prefgne/game_model.hpp"
#include "prefgne/qp_solver.hpp"

namespace prefgne {

/// Concave quadratic exploration z_i = -1/2 |x_i - center|^2 weighted by `weight`.
struct ExplorationTerm {
  double weight = 0.0;
  Eigen::VectorXd center;
};

/// One term per agent, or empty for no exploration.
using Exploration = std::vector<ExplorationTerm>;

/// Stacked pseudo-gradient of a quadratic game, F(x) = M x + c.
struct AffineGameOperator {
  Eigen::MatrixXd M;
  Eigen::VectorXd c;

  Eigen::VectorXd operator()(const Eigen::VectorXd& x) const { return M * x + c; }
};

AffineGameOperator game_operator(const AgentLayout& layout,
                                 const std::vector<QuadraticAgentObjective>& objectives,
                                 const Exploration& exploration = {});

/// Evaluates the pseudo-gradient agent by agent from the objectives.
Eigen::VectorXd pseudo_gradient(const AgentLayout& layout,
                                const std::vector<QuadraticAgentObjective>& objectives,
                                const Eigen::VectorXd& x, const Exploration& exploration = {});

/// Objective i with the exploration term folded in: P + wI, q - w*center.
QuadraticAgentObjective with_exploration(const QuadraticAgentObjective& obj, const ExplorationTerm& term);

enum class GneStatus { converged, max_iterations, non_monotone_warning };

std::string to_string(GneStatus status);

struct GneOptions {
  double tol = 1e-9;
  int max_iter = 100000;
  std::optional<Eigen::VectorXd> warm_start;
  int window = 1000;          // divergence check period
  bool polish = true;         // active-set refinement on box-only games
  int fallback_sweeps = 500;  // damped Gauss-Seidel best response
  double fallback_damping = 0.5;
};

struct GNESolution {
  Eigen::VectorXd x;
  double residual = 0.0;  // |x - proj(x - step F(x))|_2
  double step = 0.0;
  int iterations = 0;
  GneStatus status = GneStatus::max_iterations;
  bool used_fallback = false;
  std::vector<double> residual_trace;  // one entry per window
};

/// Euclidean projection onto the joint feasible set of a game.
class JointProjector {
 public:
  explicit JointProjector(const ConstrainedGame& game);
  Eigen::VectorXd operator()(const Eigen::VectorXd& point);
  bool box_only() const { return !qp_.has_value(); }

 private:
  BoxSet box_;
  std::optional<AdmmQp> qp_;
};

/// Step used by solve_gne: 0.9 / (spectral norm estimate of M).
double extragradient_step(const Eigen::MatrixXd& M);

/// Natural-map residual |x - proj(x - step F(x))|_2 of the game VI.
double gne_residual(const ConstrainedGame& game, const Exploration& exploration, const Eigen::VectorXd& x,
                    double step);

/**
 * Variational GNE of a quadratic game (objectives taken from `game`) by
 * projected extragradient. Status reports non-convergence instead of
 * throwing; infeasible joint sets throw InfeasibleError.
 */
GNESolution solve_gne(const ConstrainedGame& game, const Exploration& exploration = {},
                      const GneOptions& options = {});

/// argmin of obj(., x_others) over F_i(x_others). Throws InfeasibleError.
Eigen::VectorXd best_response(const ConstrainedGame& game, std::size_t agent, const QuadraticAgentObjective& obj,
                              const Eigen::VectorXd& x_others);

Eigen::VectorXd best_response(const ConstrainedGame& game, std::size_t agent, const Eigen::VectorXd& x_others);

}  // namespace prefgne
