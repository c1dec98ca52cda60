#pragma once

#include <string>

#include <Eigen/Dense>

#include "prefgne/game_model.hpp"
#include "prefgne/quadratic_objective.hpp"

namespace prefgne {

/// Lower bound on the diagonal of every learned Cholesky factor.
inline constexpr double kCholFloor = 1e-4;

/**
 * Packing of one agent's surrogate parameters: the lower triangle of L
 * (row-major), then q, then A (row-major).
 */
struct ThetaLayout {
  Eigen::Index own = 0;
  Eigen::Index others = 0;

  Eigen::Index chol_size() const { return own * (own + 1) / 2; }
  Eigen::Index q_offset() const { return chol_size(); }
  Eigen::Index a_offset() const { return chol_size() + own; }
  Eigen::Index size() const { return chol_size() + own + others * own; }
};

struct ThetaVector {
  ThetaLayout layout;
  Eigen::VectorXd values;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  /// L = I (or floor * I if the floor exceeds 1), q = 0, A = 0; diag(L) >= floor.
  static ThetaVector initial(const ThetaLayout& layout, double chol_floor = kCholFloor);
  static ThetaVector from_objective(const QuadraticAgentObjective& obj);

  QuadraticAgentObjective objective() const;
  /// Pins every entry of A to zero through its bounds.
  void fix_coupling_to_zero();
  Eigen::VectorXd project(const Eigen::VectorXd& v) const { return v.cwiseMax(lower).cwiseMin(upper); }
};

Eigen::VectorXd pack_theta(const QuadraticAgentObjective& obj);
QuadraticAgentObjective unpack_theta(const ThetaLayout& layout, const Eigen::VectorXd& values);

enum class Dissimilarity {
  log_inf,         // log(|x1 - x2|_inf + 1 + eps)
  euclidean,       // |x1 - x2|_2 + eps
  sqrt_euclidean,  // sqrt(|x1 - x2|_2) + eps
};

std::string to_string(Dissimilarity d);
Dissimilarity dissimilarity_from_string(const std::string& s);

struct TrainConfig {
  int adam_iters = 500;
  double adam_lr = 0.001;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int lbfgs_max_iters = 1000;
  int lbfgs_history = 10;
  double lbfgs_tol = 1e-3;  // 2-norm of the projected gradient
  double chol_floor = kCholFloor;  // lower bound on diag(L)
  double reg_weight = 0.001;
  double eps_d = 1e-6;
  double p_clamp = 1e-12;
  Dissimilarity dissimilarity = Dissimilarity::log_inf;

  /// Throws ConfigError naming the violated rule.
  void validate() const;
};

double dissimilarity(const Eigen::VectorXd& x1, const Eigen::VectorXd& x2, double eps_d,
                     Dissimilarity kind = Dissimilarity::log_inf);

/// Overflow-safe 1 / (1 + exp(t)).
double logistic_complement(double t);

/// Probability that x1 is preferred to x2 under the surrogate.
double pref_probability(const QuadraticAgentObjective& obj, const Eigen::VectorXd& x1, const Eigen::VectorXd& x2,
                        const Eigen::VectorXd& x_others, double eps_d, Dissimilarity kind = Dissimilarity::log_inf);

double cross_entropy(int p, double p_hat, double p_clamp);

/**
 * Regularized mean cross-entropy over one agent's dataset, with the
 * dataset-dependent pieces precomputed: the dissimilarities and the part
 * of J(x1) - J(x2) that is linear in (q, A).
 */
class PreferenceObjective {
 public:
  PreferenceObjective(const ThetaLayout& layout, const PreferenceDataset& data, const TrainConfig& cfg);

  double loss(const Eigen::VectorXd& theta) const;
  double loss_and_gradient(const Eigen::VectorXd& theta, Eigen::VectorXd& grad) const;

  Eigen::Index samples() const { return labels_.size(); }

 private:
  double evaluate(const Eigen::VectorXd& theta, Eigen::VectorXd* grad) const;

  ThetaLayout layout_;
  TrainConfig cfg_;
  Eigen::MatrixXd x1_;        // M x n_i
  Eigen::MatrixXd x2_;        // M x n_i
  Eigen::MatrixXd features_;  // M x (n_i + n_o n_i), linear part of the difference
  Eigen::VectorXd inv_d_;     // 1 / dissimilarity
  Eigen::VectorXi labels_;
};

double training_loss(const ThetaVector& theta, const PreferenceDataset& data, const TrainConfig& cfg);
Eigen::VectorXd training_gradient(const ThetaVector& theta, const PreferenceDataset& data, const TrainConfig& cfg);

struct AdamState {
  Eigen::VectorXd theta;
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  int t = 0;

  static AdamState start(const Eigen::VectorXd& theta);
};

/// One bias-corrected Adam step followed by projection onto [lower, upper].
AdamState adam_step(AdamState state, const Eigen::VectorXd& grad, const TrainConfig& cfg,
                    const Eigen::VectorXd& lower, const Eigen::VectorXd& upper);

struct TrainResult {
  ThetaVector theta;
  double loss = 0.0;
  double initial_loss = 0.0;
  int adam_iterations = 0;
  int lbfgs_iterations = 0;
  bool line_search_warning = false;
};

/// Adam followed by box-constrained L-BFGS; returns the lowest-loss iterate seen.
TrainResult train(const ThetaVector& init, const PreferenceDataset& data, const TrainConfig& cfg);

}  // namespace prefgne
