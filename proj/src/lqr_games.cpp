#include "prefgne/lqr_games.hpp"

#include <cmath>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "prefgne/errors.hpp"

namespace prefgne::lqr {

namespace {

constexpr double kRiccatiLimit = 1e12;

}  // namespace

LinearSystem::LinearSystem(Eigen::MatrixXd a, Eigen::MatrixXd b, std::vector<Eigen::Index> inputs)
    : A(std::move(a)), B(std::move(b)), input_dims(std::move(inputs)) {
  if (A.rows() != A.cols()) throw DimensionError("LQR system: A must be square");
  if (B.rows() != A.rows()) throw DimensionError("LQR system: B must have n_xi rows");
  if (input_dims.empty()) throw DimensionError("LQR system: at least one agent is required");
  Eigen::Index total = 0;
  for (Eigen::Index d : input_dims) {
    if (d < 1) throw DimensionError("LQR system: every agent needs at least one input");
    total += d;
  }
  if (total != B.cols()) throw DimensionError("LQR system: input partition does not cover the columns of B");
}

Eigen::Index LinearSystem::input_offset(std::size_t i) const {
  Eigen::Index off = 0;
  for (std::size_t j = 0; j < i; ++j) off += input_dims.at(j);
  return off;
}

GainProfile GainProfile::zeros(const LinearSystem& sys) {
  GainProfile p;
  for (std::size_t i = 0; i < sys.agents(); ++i) p.K.push_back(Eigen::MatrixXd::Zero(sys.input_dims[i], sys.states()));
  return p;
}

GainProfile GainProfile::from_stacked(const LinearSystem& sys, const Eigen::MatrixXd& stacked) {
  if (stacked.rows() != sys.B.cols() || stacked.cols() != sys.states()) {
    throw DimensionError("gain profile: stacked gain must be m x n_xi");
  }
  GainProfile p;
  for (std::size_t i = 0; i < sys.agents(); ++i) {
    p.K.push_back(stacked.middleRows(sys.input_offset(i), sys.input_dims[i]));
  }
  return p;
}

Eigen::MatrixXd GainProfile::stacked() const {
  Eigen::Index rows = 0;
  for (const auto& k : K) rows += k.rows();
  Eigen::MatrixXd out(rows, K.empty() ? 0 : K.front().cols());
  Eigen::Index off = 0;
  for (const auto& k : K) {
    out.middleRows(off, k.rows()) = k;
    off += k.rows();
  }
  return out;
}

double spectral_radius(const Eigen::MatrixXd& A) {
  Eigen::EigenSolver<Eigen::MatrixXd> es(A, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

LinearSystem random_system(Eigen::Index n_xi, Eigen::Index m, std::size_t agents, double radius, Rng& rng) {
  if (n_xi < 1 || m < 1) throw DimensionError("random system: dimensions must be >= 1");
  if (agents < 1 || m % static_cast<Eigen::Index>(agents) != 0) {
    throw DimensionError("random system: m must split evenly over the agents");
  }
  if (!(radius > 0.0)) throw Error("random system: spectral radius must be > 0");
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd A0(n_xi, n_xi);
  double rho = 0.0;
  do {
    for (Eigen::Index r = 0; r < n_xi; ++r)
      for (Eigen::Index c = 0; c < n_xi; ++c) A0(r, c) = normal(rng);
    rho = spectral_radius(A0);
  } while (rho == 0.0);
  Eigen::MatrixXd B(n_xi, m);
  for (Eigen::Index r = 0; r < n_xi; ++r)
    for (Eigen::Index c = 0; c < m; ++c) B(r, c) = normal(rng);
  const Eigen::Index mi = m / static_cast<Eigen::Index>(agents);
  return {radius * A0 / rho, B, std::vector<Eigen::Index>(agents, mi)};
}

std::vector<LQRCost> block_costs(const LinearSystem& sys) {
  std::vector<LQRCost> costs;
  const Eigen::Index n = sys.states();
  for (std::size_t i = 0; i < sys.agents(); ++i) {
    const Eigen::Index mi = sys.input_dims[i];
    const Eigen::Index first = static_cast<Eigen::Index>(i) * mi;
    if (first + mi > n) throw DimensionError("block costs: state blocks exceed n_xi");
    LQRCost c{Eigen::MatrixXd::Zero(n, n), Eigen::MatrixXd::Identity(mi, mi)};
    c.Q.diagonal().segment(first, mi).setOnes();
    costs.push_back(std::move(c));
  }
  return costs;
}

Eigen::MatrixXd closed_loop(const LinearSystem& sys, const GainProfile& K, std::size_t skip) {
  if (K.agents() != sys.agents()) throw DimensionError("closed loop: gain count does not match the agents");
  Eigen::MatrixXd Acl = sys.A;
  for (std::size_t j = 0; j < sys.agents(); ++j) {
    if (j == skip) continue;
    Acl.noalias() -= sys.input_block(j) * K.K[j];
  }
  return Acl;
}

Eigen::MatrixXd riccati_gain(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, const Eigen::MatrixXd& Q,
                             const Eigen::MatrixXd& R, int horizon) {
  if (horizon < 1) throw Error("Riccati: horizon must be >= 1");
  Eigen::MatrixXd P = Q;
  Eigen::MatrixXd K(B.cols(), A.rows());
  for (int t = horizon - 1; t >= 0; --t) {
    const Eigen::MatrixXd PB = P * B;
    const Eigen::MatrixXd S = R + B.transpose() * PB;
    Eigen::LLT<Eigen::MatrixXd> llt(S);
    if (llt.info() != Eigen::Success) throw RiccatiDivergence("Riccati divergence: R + B'PB lost definiteness");
    K = llt.solve(PB.transpose() * A);
    Eigen::MatrixXd next = Q + A.transpose() * P * (A - B * K);
    P = 0.5 * (next + next.transpose());
    const double norm = P.norm();
    if (!std::isfinite(norm) || norm > kRiccatiLimit) {
      std::ostringstream os;
      os << "Riccati divergence: value matrix norm " << norm << " at stage " << t;
      throw RiccatiDivergence(os.str());
    }
  }
  return K;
}

Eigen::MatrixXd best_response_gain(const LinearSystem& sys, std::size_t agent, const LQRCost& cost,
                                   const GainProfile& K, int horizon) {
  if (agent >= sys.agents()) throw DimensionError("best response gain: agent index out of range");
  return riccati_gain(closed_loop(sys, K, agent), sys.input_block(agent), cost.Q, cost.R, horizon);
}

double br_deviation(const LinearSystem& sys, std::size_t agent, const std::vector<LQRCost>& costs,
                    const GainProfile& K, int horizon) {
  const Eigen::MatrixXd br = best_response_gain(sys, agent, costs.at(agent), K, horizon);
  return (br - K.K.at(agent)).squaredNorm();
}

double max_deviation(const LinearSystem& sys, const std::vector<LQRCost>& costs, const GainProfile& K, int horizon) {
  double worst = 0.0;
  for (std::size_t i = 0; i < sys.agents(); ++i) worst = std::max(worst, br_deviation(sys, i, costs, K, horizon));
  return worst;
}

GainProfile nash_gains(const LinearSystem& sys, const std::vector<LQRCost>& costs, int horizon, double tol,
                       int max_sweeps) {
  if (costs.size() != sys.agents()) throw DimensionError("Nash gains: one cost per agent is required");
  GainProfile K = GainProfile::zeros(sys);
  std::vector<double> trace;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    for (std::size_t i = 0; i < sys.agents(); ++i) K.K[i] = best_response_gain(sys, i, costs[i], K, horizon);
    trace.push_back(max_deviation(sys, costs, K, horizon));
    if (trace.back() <= tol) return K;
  }
  std::ostringstream os;
  os << "Nash gains: no convergence in " << max_sweeps << " sweeps (last max deviation " << trace.back() << ")";
  throw NashConvergenceError(os.str(), std::move(trace));
}

Simulation simulate(const LinearSystem& sys, const std::vector<LQRCost>& costs, const GainProfile& K,
                    const Eigen::VectorXd& xi0, int horizon) {
  if (xi0.size() != sys.states()) throw DimensionError("simulate: initial state dimension mismatch");
  if (costs.size() != sys.agents()) throw DimensionError("simulate: one cost per agent is required");
  const Eigen::MatrixXd Acl = closed_loop(sys, K, sys.agents());
  Simulation out;
  out.states.resize(sys.states(), horizon + 1);
  out.costs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(sys.agents()));
  Eigen::VectorXd xi = xi0;
  for (int j = 0; j <= horizon; ++j) {
    out.states.col(j) = xi;
    for (std::size_t i = 0; i < sys.agents(); ++i) {
      const Eigen::VectorXd u = -K.K[i] * xi;
      out.costs[static_cast<Eigen::Index>(i)] += xi.dot(costs[i].Q * xi) + u.dot(costs[i].R * u);
    }
    xi = Acl * xi;
  }
  return out;
}

Eigen::MatrixXd random_initial_states(Eigen::Index n_xi, std::size_t count, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd X(n_xi, static_cast<Eigen::Index>(count));
  for (Eigen::Index c = 0; c < X.cols(); ++c)
    for (Eigen::Index r = 0; r < n_xi; ++r) X(r, c) = normal(rng);
  return X;
}

Evaluation evaluate_profile(const LinearSystem& sys, const std::vector<LQRCost>& costs, const GainProfile& learned,
                            const GainProfile& reference, const Eigen::MatrixXd& initial_states, int horizon) {
  const Eigen::Index count = initial_states.cols();
  const auto n_agents = static_cast<Eigen::Index>(sys.agents());
  if (count < 1) throw Error("evaluation: at least one initial state is required");
  Eigen::MatrixXd c_learned(n_agents, count), c_ref(n_agents, count);
  for (Eigen::Index s = 0; s < count; ++s) {
    c_learned.col(s) = simulate(sys, costs, learned, initial_states.col(s), horizon).costs;
    c_ref.col(s) = simulate(sys, costs, reference, initial_states.col(s), horizon).costs;
  }
  auto normalized_rmse = [](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const double range = b.maxCoeff() - b.minCoeff();
    if (!(range > 0.0)) throw Error("evaluation: reference costs have zero range");
    const double rmse = std::sqrt((a - b).squaredNorm() / static_cast<double>(a.size()));
    return rmse / range;
  };
  Evaluation ev;
  ev.normalized_rmse = normalized_rmse(c_learned.colwise().sum().transpose(), c_ref.colwise().sum().transpose());
  ev.agent_normalized_rmse.resize(n_agents);
  for (Eigen::Index i = 0; i < n_agents; ++i) {
    ev.agent_normalized_rmse[i] = normalized_rmse(c_learned.row(i).transpose(), c_ref.row(i).transpose());
  }
  ev.max_dev = max_deviation(sys, costs, learned, horizon);
  return ev;
}

Evaluation evaluate_profile(const LinearSystem& sys, const std::vector<LQRCost>& costs, const GainProfile& learned,
                            const GainProfile& reference, std::size_t n_states, int horizon, Rng& rng) {
  return evaluate_profile(sys, costs, learned, reference, random_initial_states(sys.states(), n_states, rng), horizon);
}

AgentLayout gain_layout(const LinearSystem& sys) {
  std::vector<Eigen::Index> dims;
  for (Eigen::Index mi : sys.input_dims) dims.push_back(mi * sys.states());
  return AgentLayout(dims);
}

namespace {

Eigen::VectorXd row_major(const Eigen::MatrixXd& M) {
  Eigen::VectorXd v(M.size());
  Eigen::Index k = 0;
  for (Eigen::Index r = 0; r < M.rows(); ++r)
    for (Eigen::Index c = 0; c < M.cols(); ++c) v[k++] = M(r, c);
  return v;
}

Eigen::MatrixXd from_row_major(const Eigen::VectorXd& v, Eigen::Index rows, Eigen::Index cols) {
  if (v.size() != rows * cols) throw DimensionError("gain vector: length does not match m_i x n_xi");
  Eigen::MatrixXd M(rows, cols);
  Eigen::Index k = 0;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) M(r, c) = v[k++];
  return M;
}

}  // namespace

Eigen::VectorXd vectorize(const GainProfile& K) {
  Eigen::Index n = 0;
  for (const auto& k : K.K) n += k.size();
  Eigen::VectorXd x(n);
  Eigen::Index off = 0;
  for (const auto& k : K.K) {
    x.segment(off, k.size()) = row_major(k);
    off += k.size();
  }
  return x;
}

GainProfile unvectorize(const LinearSystem& sys, const Eigen::VectorXd& x) {
  const AgentLayout layout = gain_layout(sys);
  layout.check(x);
  GainProfile p;
  for (std::size_t i = 0; i < sys.agents(); ++i) {
    p.K.push_back(from_row_major(layout.extract(i, x), sys.input_dims[i], sys.states()));
  }
  return p;
}

ConstrainedGame gain_game(const LinearSystem& sys, double bound) {
  AgentLayout layout = gain_layout(sys);
  std::vector<BoxSet> boxes;
  for (std::size_t i = 0; i < layout.agents(); ++i) boxes.push_back(BoxSet::uniform(layout.dim(i), -bound, bound));
  const Eigen::Index n = layout.total();
  return ConstrainedGame(std::move(layout), std::move(boxes), AffineConstraints::none(n));
}

LqrPreferenceOracle::LqrPreferenceOracle(LinearSystem sys, std::vector<LQRCost> costs, int horizon)
    : sys_(std::move(sys)), costs_(std::move(costs)), horizon_(horizon), layout_(gain_layout(sys_)) {
  if (costs_.size() != sys_.agents()) throw DimensionError("LQR oracle: one cost per agent is required");
}

Eigen::MatrixXd LqrPreferenceOracle::as_gain(std::size_t agent, const Eigen::VectorXd& x_i) const {
  return from_row_major(x_i, sys_.input_dims.at(agent), sys_.states());
}

Eigen::MatrixXd LqrPreferenceOracle::response(std::size_t agent, const Eigen::VectorXd& x_others) const {
  const Eigen::VectorXd x = layout_.join(agent, Eigen::VectorXd::Zero(layout_.dim(agent)), x_others);
  return best_response_gain(sys_, agent, costs_[agent], unvectorize(sys_, x), horizon_);
}

double LqrPreferenceOracle::objective(std::size_t agent, const Eigen::VectorXd& x_i,
                                      const Eigen::VectorXd& x_others) const {
  return (response(agent, x_others) - as_gain(agent, x_i)).squaredNorm();
}

int LqrPreferenceOracle::compare(std::size_t agent, const Eigen::VectorXd& x1, const Eigen::VectorXd& x2,
                                 const Eigen::VectorXd& x_others) const {
  const Eigen::MatrixXd br = response(agent, x_others);
  return (br - as_gain(agent, x1)).squaredNorm() <= (br - as_gain(agent, x2)).squaredNorm() ? 1 : 0;
}

std::unique_ptr<LqrPreferenceOracle> lqr_preference_oracle(const LinearSystem& sys, const std::vector<LQRCost>& costs,
                                                           int horizon) {
  return std::make_unique<LqrPreferenceOracle>(sys, costs, horizon);
}

}  // namespace prefgne::lqr
