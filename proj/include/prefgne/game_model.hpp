#pragma once

#include <atomic>
#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <vector>

#include <Eigen/Dense>
#include "json.hpp"

#include "prefgne/quadratic_objective.hpp"

namespace prefgne {

using Rng = std::mt19937_64;

/// Default tolerance on equality constraints.
inline constexpr double kDefaultTolEq = 1e-8;

/// Splits the stacked decision vector x = (x_1, ..., x_N) into agent blocks.
class AgentLayout {
 public:
  AgentLayout() = default;
  explicit AgentLayout(std::vector<Eigen::Index> dims);

  std::size_t agents() const { return dims_.size(); }
  Eigen::Index dim(std::size_t i) const { return dims_.at(i); }
  Eigen::Index offset(std::size_t i) const { return offsets_.at(i); }
  Eigen::Index total() const { return total_; }
  Eigen::Index others_dim(std::size_t i) const { return total_ - dims_.at(i); }
  const std::vector<Eigen::Index>& dims() const { return dims_; }

  Eigen::VectorXd extract(std::size_t i, const Eigen::VectorXd& x) const;
  /// x_{-i}: all blocks except i, in agent order.
  Eigen::VectorXd others(std::size_t i, const Eigen::VectorXd& x) const;
  /// Copy of x with block i replaced by x_i.
  Eigen::VectorXd insert(std::size_t i, const Eigen::VectorXd& x_i, const Eigen::VectorXd& x) const;
  /// Reassembles x from (x_i, x_{-i}).
  Eigen::VectorXd join(std::size_t i, const Eigen::VectorXd& x_i,
                       const Eigen::VectorXd& x_others) const;
  /// Selects the columns of a matrix acting on x that belong to block i (or to x_{-i}).
  Eigen::MatrixXd own_columns(std::size_t i, const Eigen::MatrixXd& M) const;
  Eigen::MatrixXd other_columns(std::size_t i, const Eigen::MatrixXd& M) const;

  void check(const Eigen::VectorXd& x) const;

 private:
  std::vector<Eigen::Index> dims_;
  std::vector<Eigen::Index> offsets_;
  Eigen::Index total_ = 0;
};

struct BoxSet {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  BoxSet() = default;
  BoxSet(Eigen::VectorXd lo, Eigen::VectorXd hi);
  static BoxSet unbounded(Eigen::Index n);
  static BoxSet uniform(Eigen::Index n, double lo, double hi);

  Eigen::Index size() const { return lower.size(); }
  bool bounded() const;
  bool contains(const Eigen::VectorXd& x, double tol = 0.0) const;
  Eigen::VectorXd project(const Eigen::VectorXd& x) const;
  Eigen::VectorXd sample(Rng& rng) const;
};

/// Concatenates boxes in order.
BoxSet stack_boxes(const std::vector<BoxSet>& boxes);

/// G x + g0 <= 0 and H x + h0 = 0.
struct AffineConstraints {
  Eigen::MatrixXd G;
  Eigen::VectorXd g0;
  Eigen::MatrixXd H;
  Eigen::VectorXd h0;

  static AffineConstraints none(Eigen::Index n);

  Eigen::Index dim() const { return G.cols(); }
  Eigen::Index n_ineq() const { return G.rows(); }
  Eigen::Index n_eq() const { return H.rows(); }
  bool empty() const { return n_ineq() == 0 && n_eq() == 0; }
  bool satisfied(const Eigen::VectorXd& x, double tol_eq) const;
  void check() const;

  /// Constraints on block i alone with x_{-i} held fixed.
  AffineConstraints slice(const class AgentLayout& layout, std::size_t i,
                          const Eigen::VectorXd& x_others) const;
};

/**
 * Game with box local sets, shared affine constraints and, for games that
 * can be solved directly, quadratic objectives. Games driven only by a
 * preference oracle leave `objectives` empty.
 *
 * `sampling` holds bounded boxes used wherever points are drawn at random;
 * it defaults to the local sets.
 */
struct ConstrainedGame {
  AgentLayout layout;
  std::vector<BoxSet> local;
  AffineConstraints shared;
  std::vector<QuadraticAgentObjective> objectives;
  std::vector<BoxSet> sampling;

  ConstrainedGame() = default;
  ConstrainedGame(AgentLayout l, std::vector<BoxSet> local_sets, AffineConstraints shared_constraints,
                  std::vector<QuadraticAgentObjective> objs = {},
                  std::vector<BoxSet> sampling_boxes = {});

  std::size_t agents() const { return layout.agents(); }
  BoxSet joint_box() const { return stack_boxes(local); }
  const BoxSet& sampling_box(std::size_t i) const;
  bool has_objectives() const { return !objectives.empty(); }

  void validate() const;
};

/// True iff x satisfies the local boxes and the shared constraints.
bool feasible(const ConstrainedGame& game, const Eigen::VectorXd& x, double tol_eq = kDefaultTolEq);

/// Rejection sampler over the sampling boxes. Equality constraints are
/// enforced by orthogonal projection onto the affine subspace first.
std::vector<Eigen::VectorXd> sample_feasible(const ConstrainedGame& game, std::size_t count, Rng& rng,
                                             double tol_eq = kDefaultTolEq,
                                             std::size_t trial_budget = 100000);

/// Draws x_i such that (x_i, x_others) is feasible.
Eigen::VectorXd sample_feasible_block(const ConstrainedGame& game, std::size_t i,
                                      const Eigen::VectorXd& x_others, Rng& rng,
                                      double tol_eq = kDefaultTolEq,
                                      std::size_t trial_budget = 100000);

/**
 * Hidden objectives that answer pairwise preference queries.
 *
 * query() returns 1 exactly when J_i(x1, x_o) <= J_i(x2, x_o); ties answer 1
 * in both orders. Every call to query() increments an atomic counter.
 * objective() exposes J_i for evaluation code and does not count as a query.
 */
class PreferenceOracle {
 public:
  virtual ~PreferenceOracle() = default;

  int query(std::size_t agent, const Eigen::VectorXd& x1, const Eigen::VectorXd& x2,
            const Eigen::VectorXd& x_others);

  virtual double objective(std::size_t agent, const Eigen::VectorXd& x_i,
                           const Eigen::VectorXd& x_others) const = 0;

  std::size_t query_count() const { return count_.load(); }

 protected:
  /// Override when both candidates share expensive work.
  virtual int compare(std::size_t agent, const Eigen::VectorXd& x1, const Eigen::VectorXd& x2,
                      const Eigen::VectorXd& x_others) const;

 private:
  std::atomic<std::size_t> count_{0};
};

using AgentObjectiveFn = std::function<double(const Eigen::VectorXd&, const Eigen::VectorXd&)>;

class FunctionOracle : public PreferenceOracle {
 public:
  explicit FunctionOracle(std::vector<AgentObjectiveFn> objectives);

  double objective(std::size_t agent, const Eigen::VectorXd& x_i,
                   const Eigen::VectorXd& x_others) const override;

 private:
  std::vector<AgentObjectiveFn> objectives_;
};

std::unique_ptr<PreferenceOracle> make_preference_oracle(std::vector<AgentObjectiveFn> objectives);

/// Oracle answering with the true quadratic objectives of `game`.
std::unique_ptr<PreferenceOracle> make_quadratic_oracle(std::vector<QuadraticAgentObjective> objectives);

struct PreferenceSample {
  Eigen::VectorXd x1;
  Eigen::VectorXd x2;
  Eigen::VectorXd x_others;
  int label = 1;
};

using PreferenceDataset = std::vector<PreferenceSample>;

void check_sample(const AgentLayout& layout, std::size_t agent, const PreferenceSample& s);

// Structured-text (JSON) form of a game. Infinite bounds are written as the
// strings "inf" / "-inf"; matrices are arrays of rows.
nlohmann::json game_to_json(const ConstrainedGame& game);
ConstrainedGame game_from_json(const nlohmann::json& doc);

nlohmann::json vector_to_json(const Eigen::VectorXd& v);
Eigen::VectorXd vector_from_json(const nlohmann::json& j);
nlohmann::json matrix_to_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json(const nlohmann::json& j, Eigen::Index cols_if_empty);

}  // namespace prefgne
