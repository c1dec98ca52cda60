#pragma once

#include <memory>
#include <vector>

#include <Eigen/Dense>

#include "prefgne/game_model.hpp"

namespace prefgne::lqr {

/// xi(t+1) = A xi(t) + B u(t), with u split into per-agent column blocks.
struct LinearSystem {
  Eigen::MatrixXd A;
  Eigen::MatrixXd B;
  std::vector<Eigen::Index> input_dims;

  LinearSystem() = default;
  LinearSystem(Eigen::MatrixXd a, Eigen::MatrixXd b, std::vector<Eigen::Index> inputs);

  Eigen::Index states() const { return A.rows(); }
  std::size_t agents() const { return input_dims.size(); }
  Eigen::Index input_offset(std::size_t i) const;
  Eigen::MatrixXd input_block(std::size_t i) const { return B.middleCols(input_offset(i), input_dims.at(i)); }
};

struct LQRCost {
  Eigen::MatrixXd Q;  // n_xi x n_xi, PSD
  Eigen::MatrixXd R;  // m_i x m_i, PD
};

/// Per-agent feedback gains u_i = -K_i xi, K_i is m_i x n_xi.
struct GainProfile {
  std::vector<Eigen::MatrixXd> K;

  static GainProfile zeros(const LinearSystem& sys);
  static GainProfile from_stacked(const LinearSystem& sys, const Eigen::MatrixXd& stacked);
  Eigen::MatrixXd stacked() const;
  std::size_t agents() const { return K.size(); }
};

/// Spectral radius from the eigenvalue moduli.
double spectral_radius(const Eigen::MatrixXd& A);

/// Gaussian A rescaled to the requested spectral radius, Gaussian B, m split evenly over N agents.
LinearSystem random_system(Eigen::Index n_xi, Eigen::Index m, std::size_t agents, double radius, Rng& rng);

/// Q_i selects states [i m_i, (i+1) m_i), R_i = I, m_i = m / N.
std::vector<LQRCost> block_costs(const LinearSystem& sys);

/// Closed loop A - sum_{j != skip} B_j K_j (skip = agents() keeps every agent).
Eigen::MatrixXd closed_loop(const LinearSystem& sys, const GainProfile& K, std::size_t skip);

/**
 * Stage-0 gain of the T-step backward Riccati recursion for agent i with
 * the other agents' gains folded into the dynamics. Throws RiccatiDivergence
 * when the value matrix norm exceeds 1e12.
 */
Eigen::MatrixXd best_response_gain(const LinearSystem& sys, std::size_t agent, const LQRCost& cost,
                                   const GainProfile& K, int horizon);

/// Same recursion for an explicit (A, B, Q, R).
Eigen::MatrixXd riccati_gain(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, const Eigen::MatrixXd& Q,
                             const Eigen::MatrixXd& R, int horizon);

/// |K_i^*(K_{-i}) - K_i|_F^2.
double br_deviation(const LinearSystem& sys, std::size_t agent, const std::vector<LQRCost>& costs,
                    const GainProfile& K, int horizon);

double max_deviation(const LinearSystem& sys, const std::vector<LQRCost>& costs, const GainProfile& K, int horizon);

/// Cyclic iterated best response. Throws NashConvergenceError with the deviation trace.
GainProfile nash_gains(const LinearSystem& sys, const std::vector<LQRCost>& costs, int horizon, double tol = 1e-8,
                       int max_sweeps = 1000);

struct Simulation {
  Eigen::MatrixXd states;          // n_xi x (T + 1)
  Eigen::VectorXd costs;           // per agent
};

/// Closed-loop rollout for T steps with costs summed over j = 0..T.
Simulation simulate(const LinearSystem& sys, const std::vector<LQRCost>& costs, const GainProfile& K,
                    const Eigen::VectorXd& xi0, int horizon);

struct Evaluation {
  double normalized_rmse = 0.0;            // on the sum of agent costs
  double max_dev = 0.0;
  Eigen::VectorXd agent_normalized_rmse;   // same metric per agent
};

Evaluation evaluate_profile(const LinearSystem& sys, const std::vector<LQRCost>& costs, const GainProfile& learned,
                            const GainProfile& reference, const Eigen::MatrixXd& initial_states, int horizon);

Evaluation evaluate_profile(const LinearSystem& sys, const std::vector<LQRCost>& costs, const GainProfile& learned,
                            const GainProfile& reference, std::size_t n_states, int horizon, Rng& rng);

/// Standard-normal initial states, one per column.
Eigen::MatrixXd random_initial_states(Eigen::Index n_xi, std::size_t count, Rng& rng);

// Decision vectors of the learning problem are the row-major vectorized gains.
AgentLayout gain_layout(const LinearSystem& sys);
Eigen::VectorXd vectorize(const GainProfile& K);
GainProfile unvectorize(const LinearSystem& sys, const Eigen::VectorXd& x);

/// Gain-space game with every entry boxed to [-bound, bound] and no shared constraints.
ConstrainedGame gain_game(const LinearSystem& sys, double bound = 10.0);

/// Preference oracle whose hidden objective for agent i is br_deviation.
class LqrPreferenceOracle : public PreferenceOracle {
 public:
  LqrPreferenceOracle(LinearSystem sys, std::vector<LQRCost> costs, int horizon);

  double objective(std::size_t agent, const Eigen::VectorXd& x_i, const Eigen::VectorXd& x_others) const override;

  const LinearSystem& system() const { return sys_; }
  const std::vector<LQRCost>& costs() const { return costs_; }
  int horizon() const { return horizon_; }

 protected:
  int compare(std::size_t agent, const Eigen::VectorXd& x1, const Eigen::VectorXd& x2,
              const Eigen::VectorXd& x_others) const override;

 private:
  Eigen::MatrixXd response(std::size_t agent, const Eigen::VectorXd& x_others) const;
  Eigen::MatrixXd as_gain(std::size_t agent, const Eigen::VectorXd& x_i) const;

  LinearSystem sys_;
  std::vector<LQRCost> costs_;
  int horizon_;
  AgentLayout layout_;
};

std::unique_ptr<LqrPreferenceOracle> lqr_preference_oracle(const LinearSystem& sys, const std::vector<LQRCost>& costs,
                                                           int horizon);

}  // namespace prefgne::lqr
