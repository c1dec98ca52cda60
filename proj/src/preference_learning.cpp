#include "prefgne/preference_learning.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "prefgne/errors.hpp"
#include "prefgne/lbfgs.hpp"

namespace prefgne {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace

// ---------------------------------------------------------------------------
// Parameter packing

Eigen::VectorXd pack_theta(const QuadraticAgentObjective& obj) {
  const ThetaLayout layout{obj.own_dim(), obj.others_dim()};
  Eigen::VectorXd v(layout.size());
  Eigen::Index k = 0;
  for (Eigen::Index r = 0; r < layout.own; ++r) {
    for (Eigen::Index c = 0; c <= r; ++c) v[k++] = obj.chol(r, c);
  }
  v.segment(layout.q_offset(), layout.own) = obj.q;
  k = layout.a_offset();
  for (Eigen::Index r = 0; r < layout.others; ++r) {
    for (Eigen::Index c = 0; c < layout.own; ++c) v[k++] = obj.A(r, c);
  }
  return v;
}

QuadraticAgentObjective unpack_theta(const ThetaLayout& layout, const Eigen::VectorXd& values) {
  if (values.size() != layout.size()) throw DimensionError("theta: length does not match the layout");
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(layout.own, layout.own);
  Eigen::Index k = 0;
  for (Eigen::Index r = 0; r < layout.own; ++r) {
    for (Eigen::Index c = 0; c <= r; ++c) L(r, c) = values[k++];
  }
  Eigen::MatrixXd A(layout.others, layout.own);
  k = layout.a_offset();
  for (Eigen::Index r = 0; r < layout.others; ++r) {
    for (Eigen::Index c = 0; c < layout.own; ++c) A(r, c) = values[k++];
  }
  return {L, values.segment(layout.q_offset(), layout.own), A};
}

ThetaVector ThetaVector::initial(const ThetaLayout& layout, double chol_floor) {
  if (!(chol_floor > 0.0)) throw ConfigError("theta: the Cholesky floor must be > 0");
  ThetaVector t;
  t.layout = layout;
  t.values = Eigen::VectorXd::Zero(layout.size());
  t.lower = Eigen::VectorXd::Constant(layout.size(), -kInf);
  t.upper = Eigen::VectorXd::Constant(layout.size(), kInf);
  Eigen::Index k = 0;
  for (Eigen::Index r = 0; r < layout.own; ++r) {
    for (Eigen::Index c = 0; c <= r; ++c, ++k) {
      if (r == c) {
        t.values[k] = std::max(1.0, chol_floor);
        t.lower[k] = chol_floor;
      }
    }
  }
  return t;
}

ThetaVector ThetaVector::from_objective(const QuadraticAgentObjective& obj) {
  ThetaVector t = initial({obj.own_dim(), obj.others_dim()});
  t.values = t.project(pack_theta(obj));
  return t;
}

QuadraticAgentObjective ThetaVector::objective() const { return unpack_theta(layout, values); }

void ThetaVector::fix_coupling_to_zero() {
  const Eigen::Index n = layout.others * layout.own;
  values.segment(layout.a_offset(), n).setZero();
  lower.segment(layout.a_offset(), n).setZero();
  upper.segment(layout.a_offset(), n).setZero();
}

// ---------------------------------------------------------------------------
// Preference model

std::string to_string(Dissimilarity d) {
  switch (d) {
    case Dissimilarity::log_inf: return "log";
    case Dissimilarity::euclidean: return "euclidean";
    case Dissimilarity::sqrt_euclidean: return "sqrt-euclidean";
  }
  return "unknown";
}

Dissimilarity dissimilarity_from_string(const std::string& s) {
  if (s == "log") return Dissimilarity::log_inf;
  if (s == "euclidean") return Dissimilarity::euclidean;
  if (s == "sqrt-euclidean") return Dissimilarity::sqrt_euclidean;
  throw ConfigError("unknown dissimilarity \"" + s + "\" (expected log, euclidean or sqrt-euclidean)");
}

void TrainConfig::validate() const {
  auto require = [](bool ok, const char* rule) {
    if (!ok) throw ConfigError(std::string("training: ") + rule);
  };
  require(adam_iters >= 0, "adam_iters must be >= 0");
  require(adam_lr > 0.0, "adam_lr must be > 0");
  require(adam_beta1 > 0.0 && adam_beta1 < 1.0, "adam_beta1 must lie in (0, 1)");
  require(adam_beta2 > 0.0 && adam_beta2 < 1.0, "adam_beta2 must lie in (0, 1)");
  require(adam_eps > 0.0, "adam_eps must be > 0");
  require(lbfgs_max_iters >= 0, "lbfgs_max_iters must be >= 0");
  require(lbfgs_history >= 1, "lbfgs_history must be >= 1");
  require(lbfgs_tol >= 0.0, "lbfgs_tol must be >= 0");
  require(chol_floor > 0.0, "chol_floor must be > 0");
  require(reg_weight > 0.0, "reg_weight must be > 0");
  require(eps_d > 0.0, "eps_d must be > 0");
  require(p_clamp > 0.0 && p_clamp < 0.5, "p_clamp must lie in (0, 0.5)");
}

double dissimilarity(const Eigen::VectorXd& x1, const Eigen::VectorXd& x2, double eps_d, Dissimilarity kind) {
  if (x1.size() != x2.size()) throw DimensionError("dissimilarity: dimension mismatch");
  switch (kind) {
    case Dissimilarity::log_inf: {
      const double dist = x1.size() == 0 ? 0.0 : (x1 - x2).lpNorm<Eigen::Infinity>();
      return std::log(dist + 1.0 + eps_d);
    }
    case Dissimilarity::euclidean: return (x1 - x2).norm() + eps_d;
    case Dissimilarity::sqrt_euclidean: return std::sqrt((x1 - x2).norm()) + eps_d;
  }
  return 0.0;
}

double logistic_complement(double t) {
  if (t >= 0.0) {
    const double e = std::exp(-t);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(t));
}

double pref_probability(const QuadraticAgentObjective& obj, const Eigen::VectorXd& x1, const Eigen::VectorXd& x2,
                        const Eigen::VectorXd& x_others, double eps_d, Dissimilarity kind) {
  const double diff = obj.value(x1, x_others) - obj.value(x2, x_others);
  return logistic_complement(diff / dissimilarity(x1, x2, eps_d, kind));
}

double cross_entropy(int p, double p_hat, double p_clamp) {
  const double ph = std::clamp(p_hat, p_clamp, 1.0 - p_clamp);
  return p == 1 ? -std::log(ph) : -std::log(1.0 - ph);
}

// ---------------------------------------------------------------------------
// Training objective

PreferenceObjective::PreferenceObjective(const ThetaLayout& layout, const PreferenceDataset& data,
                                         const TrainConfig& cfg)
    : layout_(layout), cfg_(cfg) {
  if (data.empty()) throw Error("training: dataset is empty");
  const auto m = static_cast<Eigen::Index>(data.size());
  const Eigen::Index ni = layout.own;
  const Eigen::Index no = layout.others;
  x1_.resize(m, ni);
  x2_.resize(m, ni);
  features_.resize(m, ni + no * ni);
  inv_d_.resize(m);
  labels_.resize(m);
  for (Eigen::Index j = 0; j < m; ++j) {
    const auto& s = data[static_cast<std::size_t>(j)];
    if (s.x1.size() != ni || s.x2.size() != ni || s.x_others.size() != no) {
      throw DimensionError("training: sample " + std::to_string(j) + " does not match the parameter layout");
    }
    if (s.label != 0 && s.label != 1) throw Error("training: labels must be 0 or 1");
    x1_.row(j) = s.x1.transpose();
    x2_.row(j) = s.x2.transpose();
    const Eigen::VectorXd dx = s.x1 - s.x2;
    features_.block(j, 0, 1, ni) = dx.transpose();
    for (Eigen::Index r = 0; r < no; ++r) {
      features_.block(j, ni + r * ni, 1, ni) = s.x_others[r] * dx.transpose();
    }
    inv_d_[j] = 1.0 / dissimilarity(s.x1, s.x2, cfg.eps_d, cfg.dissimilarity);
    labels_[j] = s.label;
  }
}

double PreferenceObjective::evaluate(const Eigen::VectorXd& theta, Eigen::VectorXd* grad) const {
  if (theta.size() != layout_.size()) throw DimensionError("training: theta length does not match the layout");
  const Eigen::Index ni = layout_.own;
  const Eigen::Index m = labels_.size();
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(ni, ni);
  Eigen::Index k = 0;
  for (Eigen::Index r = 0; r < ni; ++r) {
    for (Eigen::Index c = 0; c <= r; ++c) L(r, c) = theta[k++];
  }
  const Eigen::MatrixXd y1 = x1_ * L;
  const Eigen::MatrixXd y2 = x2_ * L;
  const Eigen::Index n_lin = features_.cols();
  const Eigen::VectorXd diff = 0.5 * (y1.rowwise().squaredNorm() - y2.rowwise().squaredNorm()) +
                               features_ * theta.segment(layout_.q_offset(), n_lin);

  double data_loss = 0.0;
  Eigen::VectorXd w(m);
  for (Eigen::Index j = 0; j < m; ++j) {
    const double p = logistic_complement(diff[j] * inv_d_[j]);
    data_loss += cross_entropy(labels_[j], p, cfg_.p_clamp);
    const bool clamped = p < cfg_.p_clamp || p > 1.0 - cfg_.p_clamp;
    w[j] = clamped ? 0.0 : (labels_[j] - p) * inv_d_[j] / static_cast<double>(m);
  }
  const double loss = cfg_.reg_weight * theta.squaredNorm() + data_loss / static_cast<double>(m);

  if (grad != nullptr) {
    grad->resize(theta.size());
    const Eigen::MatrixXd gl =
        x1_.transpose() * (w.asDiagonal() * y1) - x2_.transpose() * (w.asDiagonal() * y2);
    k = 0;
    for (Eigen::Index r = 0; r < ni; ++r) {
      for (Eigen::Index c = 0; c <= r; ++c) (*grad)[k++] = gl(r, c);
    }
    grad->segment(layout_.q_offset(), n_lin) = features_.transpose() * w;
    *grad += 2.0 * cfg_.reg_weight * theta;
  }
  return loss;
}

double PreferenceObjective::loss(const Eigen::VectorXd& theta) const { return evaluate(theta, nullptr); }

double PreferenceObjective::loss_and_gradient(const Eigen::VectorXd& theta, Eigen::VectorXd& grad) const {
  return evaluate(theta, &grad);
}

double training_loss(const ThetaVector& theta, const PreferenceDataset& data, const TrainConfig& cfg) {
  return PreferenceObjective(theta.layout, data, cfg).loss(theta.values);
}

Eigen::VectorXd training_gradient(const ThetaVector& theta, const PreferenceDataset& data, const TrainConfig& cfg) {
  Eigen::VectorXd g;
  PreferenceObjective(theta.layout, data, cfg).loss_and_gradient(theta.values, g);
  return g;
}

// ---------------------------------------------------------------------------
// Optimizers

AdamState AdamState::start(const Eigen::VectorXd& theta) {
  return {theta, Eigen::VectorXd::Zero(theta.size()), Eigen::VectorXd::Zero(theta.size()), 0};
}

AdamState adam_step(AdamState state, const Eigen::VectorXd& grad, const TrainConfig& cfg,
                    const Eigen::VectorXd& lower, const Eigen::VectorXd& upper) {
  if (grad.size() != state.theta.size()) throw DimensionError("adam: gradient dimension mismatch");
  state.t += 1;
  state.m = cfg.adam_beta1 * state.m + (1.0 - cfg.adam_beta1) * grad;
  state.v = cfg.adam_beta2 * state.v + (1.0 - cfg.adam_beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(cfg.adam_beta1, state.t);
  const double c2 = 1.0 - std::pow(cfg.adam_beta2, state.t);
  const Eigen::ArrayXd m_hat = state.m.array() / c1;
  const Eigen::ArrayXd v_hat = state.v.array() / c2;
  state.theta = (state.theta.array() - cfg.adam_lr * m_hat / (v_hat.sqrt() + cfg.adam_eps)).matrix();
  state.theta = state.theta.cwiseMax(lower).cwiseMin(upper);
  return state;
}

TrainResult train(const ThetaVector& init, const PreferenceDataset& data, const TrainConfig& cfg) {
  const PreferenceObjective objective(init.layout, data, cfg);

  TrainResult result;
  result.theta = init;
  Eigen::VectorXd best = init.project(init.values);
  Eigen::VectorXd grad;
  double best_loss = objective.loss_and_gradient(best, grad);
  result.initial_loss = best_loss;

  auto track = [&](const Eigen::VectorXd& theta, double f) {
    if (f < best_loss) {
      best_loss = f;
      best = theta;
    }
  };

  AdamState adam = AdamState::start(init.project(init.values));
  for (int it = 0; it < cfg.adam_iters; ++it) {
    const double f = objective.loss_and_gradient(adam.theta, grad);
    track(adam.theta, f);
    adam = adam_step(std::move(adam), grad, cfg, init.lower, init.upper);
    ++result.adam_iterations;
  }

  if (cfg.lbfgs_max_iters > 0) {
    LbfgsOptions opts;
    opts.max_iter = cfg.lbfgs_max_iters;
    opts.history = cfg.lbfgs_history;
    opts.pg_tol = cfg.lbfgs_tol;
    opts.pg_l2 = true;
    const ObjectiveWithGradient fun = [&](const Eigen::VectorXd& theta, Eigen::VectorXd& g) {
      const double f = objective.loss_and_gradient(theta, g);
      track(theta, f);
      return f;
    };
    const LbfgsResult lb = minimize_box(fun, adam.theta, init.lower, init.upper, opts);
    result.lbfgs_iterations = lb.iterations;
    result.line_search_warning = lb.line_search_failed;
  } else {
    track(adam.theta, objective.loss(adam.theta));
  }

  result.theta.values = best;
  result.loss = best_loss;
  return result;
}

}  // namespace prefgne
