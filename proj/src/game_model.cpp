#include "prefgne/game_model.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "prefgne/errors.hpp"

namespace prefgne {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string dim_message(const char* what, Eigen::Index expected, Eigen::Index got) {
  std::ostringstream os;
  os << what << ": expected dimension " << expected << ", got " << got;
  return os.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// AgentLayout

AgentLayout::AgentLayout(std::vector<Eigen::Index> dims) : dims_(std::move(dims)) {
  if (dims_.empty()) throw DimensionError("agent layout: at least one agent is required");
  offsets_.reserve(dims_.size());
  for (Eigen::Index d : dims_) {
    if (d < 1) throw DimensionError("agent layout: every agent needs dimension >= 1");
    offsets_.push_back(total_);
    total_ += d;
  }
}

void AgentLayout::check(const Eigen::VectorXd& x) const {
  if (x.size() != total_) throw DimensionError(dim_message("decision vector", total_, x.size()));
}

Eigen::VectorXd AgentLayout::extract(std::size_t i, const Eigen::VectorXd& x) const {
  check(x);
  return x.segment(offset(i), dim(i));
}

Eigen::VectorXd AgentLayout::others(std::size_t i, const Eigen::VectorXd& x) const {
  check(x);
  Eigen::VectorXd out(others_dim(i));
  const Eigen::Index off = offset(i);
  const Eigen::Index d = dim(i);
  out.head(off) = x.head(off);
  out.tail(total_ - off - d) = x.tail(total_ - off - d);
  return out;
}

Eigen::VectorXd AgentLayout::insert(std::size_t i, const Eigen::VectorXd& x_i,
                                    const Eigen::VectorXd& x) const {
  check(x);
  if (x_i.size() != dim(i)) throw DimensionError(dim_message("agent block", dim(i), x_i.size()));
  Eigen::VectorXd out = x;
  out.segment(offset(i), dim(i)) = x_i;
  return out;
}

Eigen::VectorXd AgentLayout::join(std::size_t i, const Eigen::VectorXd& x_i,
                                  const Eigen::VectorXd& x_others) const {
  if (x_i.size() != dim(i)) throw DimensionError(dim_message("agent block", dim(i), x_i.size()));
  if (x_others.size() != others_dim(i)) {
    throw DimensionError(dim_message("opponent block", others_dim(i), x_others.size()));
  }
  Eigen::VectorXd out(total_);
  const Eigen::Index off = offset(i);
  const Eigen::Index d = dim(i);
  out.head(off) = x_others.head(off);
  out.segment(off, d) = x_i;
  out.tail(total_ - off - d) = x_others.tail(total_ - off - d);
  return out;
}

Eigen::MatrixXd AgentLayout::own_columns(std::size_t i, const Eigen::MatrixXd& M) const {
  return M.middleCols(offset(i), dim(i));
}

Eigen::MatrixXd AgentLayout::other_columns(std::size_t i, const Eigen::MatrixXd& M) const {
  const Eigen::Index off = offset(i);
  const Eigen::Index d = dim(i);
  Eigen::MatrixXd out(M.rows(), total_ - d);
  out.leftCols(off) = M.leftCols(off);
  out.rightCols(total_ - off - d) = M.rightCols(total_ - off - d);
  return out;
}

// ---------------------------------------------------------------------------
// BoxSet

BoxSet::BoxSet(Eigen::VectorXd lo, Eigen::VectorXd hi) : lower(std::move(lo)), upper(std::move(hi)) {
  if (lower.size() != upper.size()) throw DimensionError("box: bound sizes differ");
  for (Eigen::Index j = 0; j < lower.size(); ++j) {
    if (std::isnan(lower[j]) || std::isnan(upper[j]) || lower[j] > upper[j]) {
      throw Error("box: lower bound exceeds upper bound at index " + std::to_string(j));
    }
  }
}

BoxSet BoxSet::unbounded(Eigen::Index n) {
  return {Eigen::VectorXd::Constant(n, -kInf), Eigen::VectorXd::Constant(n, kInf)};
}

BoxSet BoxSet::uniform(Eigen::Index n, double lo, double hi) {
  return {Eigen::VectorXd::Constant(n, lo), Eigen::VectorXd::Constant(n, hi)};
}

bool BoxSet::bounded() const { return lower.allFinite() && upper.allFinite(); }

bool BoxSet::contains(const Eigen::VectorXd& x, double tol) const {
  if (x.size() != size()) throw DimensionError(dim_message("box membership", size(), x.size()));
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    if (!(x[j] >= lower[j] - tol && x[j] <= upper[j] + tol)) return false;
  }
  return true;
}

Eigen::VectorXd BoxSet::project(const Eigen::VectorXd& x) const {
  if (x.size() != size()) throw DimensionError(dim_message("box projection", size(), x.size()));
  return x.cwiseMax(lower).cwiseMin(upper);
}

Eigen::VectorXd BoxSet::sample(Rng& rng) const {
  if (!bounded()) throw SamplingError("cannot sample from an unbounded box; supply a sampling box");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Eigen::VectorXd x(size());
  for (Eigen::Index j = 0; j < size(); ++j) {
    x[j] = lower[j] + (upper[j] - lower[j]) * unit(rng);
  }
  return x;
}

BoxSet stack_boxes(const std::vector<BoxSet>& boxes) {
  Eigen::Index n = 0;
  for (const auto& b : boxes) n += b.size();
  Eigen::VectorXd lo(n), hi(n);
  Eigen::Index off = 0;
  for (const auto& b : boxes) {
    lo.segment(off, b.size()) = b.lower;
    hi.segment(off, b.size()) = b.upper;
    off += b.size();
  }
  return {lo, hi};
}

// ---------------------------------------------------------------------------
// AffineConstraints

AffineConstraints AffineConstraints::none(Eigen::Index n) {
  return {Eigen::MatrixXd(0, n), Eigen::VectorXd(0), Eigen::MatrixXd(0, n), Eigen::VectorXd(0)};
}

void AffineConstraints::check() const {
  if (G.rows() != g0.size()) throw DimensionError("shared constraints: G and g0 row counts differ");
  if (H.rows() != h0.size()) throw DimensionError("shared constraints: H and h0 row counts differ");
  if (G.cols() != H.cols()) throw DimensionError("shared constraints: G and H column counts differ");
}

bool AffineConstraints::satisfied(const Eigen::VectorXd& x, double tol_eq) const {
  if (x.size() != dim()) throw DimensionError(dim_message("shared constraints", dim(), x.size()));
  if (n_ineq() > 0 && ((G * x + g0).array() > tol_eq).any()) return false;
  if (n_eq() > 0 && (H * x + h0).cwiseAbs().maxCoeff() > tol_eq) return false;
  return true;
}

AffineConstraints AffineConstraints::slice(const AgentLayout& layout, std::size_t i,
                                           const Eigen::VectorXd& x_others) const {
  if (dim() != layout.total()) throw DimensionError(dim_message("shared constraints", layout.total(), dim()));
  AffineConstraints out;
  out.G = layout.own_columns(i, G);
  out.g0 = g0 + layout.other_columns(i, G) * x_others;
  out.H = layout.own_columns(i, H);
  out.h0 = h0 + layout.other_columns(i, H) * x_others;
  return out;
}

// ---------------------------------------------------------------------------
// ConstrainedGame

ConstrainedGame::ConstrainedGame(AgentLayout l, std::vector<BoxSet> local_sets,
                                 AffineConstraints shared_constraints,
                                 std::vector<QuadraticAgentObjective> objs,
                                 std::vector<BoxSet> sampling_boxes)
    : layout(std::move(l)),
      local(std::move(local_sets)),
      shared(std::move(shared_constraints)),
      objectives(std::move(objs)),
      sampling(std::move(sampling_boxes)) {
  validate();
}

const BoxSet& ConstrainedGame::sampling_box(std::size_t i) const {
  return sampling.empty() ? local.at(i) : sampling.at(i);
}

void ConstrainedGame::validate() const {
  const std::size_t n_agents = layout.agents();
  if (local.size() != n_agents) throw DimensionError("game: one local box per agent is required");
  for (std::size_t i = 0; i < n_agents; ++i) {
    if (local[i].size() != layout.dim(i)) {
      throw DimensionError(dim_message("local box", layout.dim(i), local[i].size()));
    }
  }
  if (!sampling.empty()) {
    if (sampling.size() != n_agents) throw DimensionError("game: one sampling box per agent is required");
    for (std::size_t i = 0; i < n_agents; ++i) {
      if (sampling[i].size() != layout.dim(i)) {
        throw DimensionError(dim_message("sampling box", layout.dim(i), sampling[i].size()));
      }
    }
  }
  shared.check();
  if (shared.dim() != layout.total()) {
    throw DimensionError(dim_message("shared constraints", layout.total(), shared.dim()));
  }
  if (!objectives.empty()) {
    if (objectives.size() != n_agents) throw DimensionError("game: one objective per agent is required");
    for (std::size_t i = 0; i < n_agents; ++i) {
      if (objectives[i].own_dim() != layout.dim(i) || objectives[i].others_dim() != layout.others_dim(i)) {
        throw DimensionError("game: objective " + std::to_string(i) + " does not match the layout");
      }
    }
  }
}

bool feasible(const ConstrainedGame& game, const Eigen::VectorXd& x, double tol_eq) {
  game.layout.check(x);
  for (std::size_t i = 0; i < game.agents(); ++i) {
    if (!game.local[i].contains(game.layout.extract(i, x))) return false;
  }
  return game.shared.satisfied(x, tol_eq);
}

namespace {

/// Orthogonal projector onto {x : H x + h0 = 0}.
class AffineSubspace {
 public:
  AffineSubspace(const Eigen::MatrixXd& H, const Eigen::VectorXd& h0) : H_(H), h0_(h0) {
    if (H.rows() > 0) pinv_ = H.completeOrthogonalDecomposition().pseudoInverse();
  }

  Eigen::VectorXd project(const Eigen::VectorXd& x) const {
    if (H_.rows() == 0) return x;
    return x - pinv_ * (H_ * x + h0_);
  }

 private:
  Eigen::MatrixXd H_;
  Eigen::VectorXd h0_;
  Eigen::MatrixXd pinv_;
};

[[noreturn]] void sampling_failed(std::size_t budget) {
  throw SamplingError("feasible sampling failed: acceptance rate below 1e-4 over a budget of " +
                      std::to_string(budget) + " trials");
}

}  // namespace

std::vector<Eigen::VectorXd> sample_feasible(const ConstrainedGame& game, std::size_t count, Rng& rng,
                                             double tol_eq, std::size_t trial_budget) {
  std::vector<BoxSet> boxes;
  for (std::size_t i = 0; i < game.agents(); ++i) boxes.push_back(game.sampling_box(i));
  const BoxSet box = stack_boxes(boxes);
  const AffineSubspace subspace(game.shared.H, game.shared.h0);

  std::vector<Eigen::VectorXd> out;
  out.reserve(count);
  std::size_t trials = 0;
  std::size_t accepted_in_window = 0;
  while (out.size() < count) {
    Eigen::VectorXd x = subspace.project(box.sample(rng));
    ++trials;
    if (feasible(game, x, tol_eq)) {
      out.push_back(std::move(x));
      ++accepted_in_window;
    }
    if (trials % trial_budget == 0) {
      if (static_cast<double>(accepted_in_window) < 1e-4 * static_cast<double>(trial_budget)) {
        sampling_failed(trial_budget);
      }
      accepted_in_window = 0;
    }
  }
  return out;
}

Eigen::VectorXd sample_feasible_block(const ConstrainedGame& game, std::size_t i,
                                      const Eigen::VectorXd& x_others, Rng& rng, double tol_eq,
                                      std::size_t trial_budget) {
  const AffineConstraints sliced = game.shared.slice(game.layout, i, x_others);
  const AffineSubspace subspace(sliced.H, sliced.h0);
  const BoxSet& box = game.sampling_box(i);
  for (std::size_t trial = 0; trial < trial_budget; ++trial) {
    Eigen::VectorXd x_i = subspace.project(box.sample(rng));
    if (game.local[i].contains(x_i) && sliced.satisfied(x_i, tol_eq)) return x_i;
  }
  sampling_failed(trial_budget);
}

// ---------------------------------------------------------------------------
// Oracles

int PreferenceOracle::query(std::size_t agent, const Eigen::VectorXd& x1, const Eigen::VectorXd& x2,
                            const Eigen::VectorXd& x_others) {
  const int label = compare(agent, x1, x2, x_others);
  count_.fetch_add(1);
  return label;
}

int PreferenceOracle::compare(std::size_t agent, const Eigen::VectorXd& x1, const Eigen::VectorXd& x2,
                              const Eigen::VectorXd& x_others) const {
  return objective(agent, x1, x_others) <= objective(agent, x2, x_others) ? 1 : 0;
}

FunctionOracle::FunctionOracle(std::vector<AgentObjectiveFn> objectives)
    : objectives_(std::move(objectives)) {}

double FunctionOracle::objective(std::size_t agent, const Eigen::VectorXd& x_i,
                                 const Eigen::VectorXd& x_others) const {
  return objectives_.at(agent)(x_i, x_others);
}

std::unique_ptr<PreferenceOracle> make_preference_oracle(std::vector<AgentObjectiveFn> objectives) {
  return std::make_unique<FunctionOracle>(std::move(objectives));
}

std::unique_ptr<PreferenceOracle> make_quadratic_oracle(std::vector<QuadraticAgentObjective> objectives) {
  std::vector<AgentObjectiveFn> fns;
  for (auto& obj : objectives) {
    fns.emplace_back([obj = std::move(obj)](const Eigen::VectorXd& x_i, const Eigen::VectorXd& x_o) {
      return obj.value(x_i, x_o);
    });
  }
  return make_preference_oracle(std::move(fns));
}

void check_sample(const AgentLayout& layout, std::size_t agent, const PreferenceSample& s) {
  if (s.x1.size() != layout.dim(agent) || s.x2.size() != layout.dim(agent)) {
    throw DimensionError("preference sample: candidate dimension mismatch for agent " + std::to_string(agent));
  }
  if (s.x_others.size() != layout.others_dim(agent)) {
    throw DimensionError("preference sample: opponent dimension mismatch for agent " + std::to_string(agent));
  }
  if (s.label != 0 && s.label != 1) throw Error("preference sample: label must be 0 or 1");
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

nlohmann::json number_to_json(double v) {
  if (std::isinf(v)) return v > 0 ? nlohmann::json("inf") : nlohmann::json("-inf");
  return v;
}

double number_from_json(const nlohmann::json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return kInf;
    if (s == "-inf") return -kInf;
    throw ConfigError("expected a number or \"inf\"/\"-inf\", got \"" + s + "\"");
  }
  if (!j.is_number()) throw ConfigError("expected a number, got " + j.dump());
  return j.get<double>();
}

}  // namespace

nlohmann::json vector_to_json(const Eigen::VectorXd& v) {
  auto arr = nlohmann::json::array();
  for (Eigen::Index j = 0; j < v.size(); ++j) arr.push_back(number_to_json(v[j]));
  return arr;
}

Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw ConfigError("expected an array, got " + j.dump());
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t k = 0; k < j.size(); ++k) v[static_cast<Eigen::Index>(k)] = number_from_json(j[k]);
  return v;
}

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  auto arr = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) arr.push_back(vector_to_json(m.row(r).transpose()));
  return arr;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j, Eigen::Index cols_if_empty) {
  if (!j.is_array()) throw ConfigError("expected an array of rows, got " + j.dump());
  if (j.empty()) return Eigen::MatrixXd(0, cols_if_empty);
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j[0].size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Eigen::VectorXd row = vector_from_json(j[static_cast<std::size_t>(r)]);
    if (row.size() != cols) throw ConfigError("matrix rows have different lengths");
    m.row(r) = row.transpose();
  }
  return m;
}

nlohmann::json game_to_json(const ConstrainedGame& game) {
  nlohmann::json doc;
  doc["dims"] = game.layout.dims();
  auto boxes = [](const std::vector<BoxSet>& bs) {
    auto arr = nlohmann::json::array();
    for (const auto& b : bs) arr.push_back({{"lower", vector_to_json(b.lower)}, {"upper", vector_to_json(b.upper)}});
    return arr;
  };
  doc["local"] = boxes(game.local);
  if (!game.sampling.empty()) doc["sampling"] = boxes(game.sampling);
  doc["shared"] = {{"G", matrix_to_json(game.shared.G)},
                   {"g0", vector_to_json(game.shared.g0)},
                   {"H", matrix_to_json(game.shared.H)},
                   {"h0", vector_to_json(game.shared.h0)}};
  if (game.has_objectives()) {
    auto objs = nlohmann::json::array();
    for (const auto& o : game.objectives) {
      objs.push_back({{"chol", matrix_to_json(o.chol)}, {"q", vector_to_json(o.q)}, {"A", matrix_to_json(o.A)}});
    }
    doc["objectives"] = objs;
  }
  return doc;
}

ConstrainedGame game_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConfigError("game: expected an object");
  for (const auto& [key, _] : doc.items()) {
    if (key != "dims" && key != "local" && key != "sampling" && key != "shared" && key != "objectives") {
      throw ConfigError("game: unknown key \"" + key + "\"");
    }
  }
  if (!doc.contains("dims")) throw ConfigError("game: missing key \"dims\"");
  AgentLayout layout(doc.at("dims").get<std::vector<Eigen::Index>>());
  const Eigen::Index n = layout.total();

  auto boxes = [&](const nlohmann::json& arr, const char* name) {
    std::vector<BoxSet> out;
    if (!arr.is_array()) throw ConfigError(std::string("game: \"") + name + "\" must be an array");
    for (const auto& b : arr) out.emplace_back(vector_from_json(b.at("lower")), vector_from_json(b.at("upper")));
    return out;
  };

  std::vector<BoxSet> local;
  if (doc.contains("local")) {
    local = boxes(doc["local"], "local");
  } else {
    for (std::size_t i = 0; i < layout.agents(); ++i) local.push_back(BoxSet::unbounded(layout.dim(i)));
  }
  std::vector<BoxSet> sampling;
  if (doc.contains("sampling")) sampling = boxes(doc["sampling"], "sampling");

  AffineConstraints shared = AffineConstraints::none(n);
  if (doc.contains("shared")) {
    const auto& s = doc["shared"];
    if (s.contains("G")) shared.G = matrix_from_json(s["G"], n);
    if (s.contains("g0")) shared.g0 = vector_from_json(s["g0"]);
    if (s.contains("H")) shared.H = matrix_from_json(s["H"], n);
    if (s.contains("h0")) shared.h0 = vector_from_json(s["h0"]);
  }

  std::vector<QuadraticAgentObjective> objectives;
  if (doc.contains("objectives")) {
    std::size_t i = 0;
    for (const auto& o : doc["objectives"]) {
      const Eigen::Index ni = layout.dim(i);
      Eigen::VectorXd q = o.contains("q") ? vector_from_json(o["q"]) : Eigen::VectorXd::Zero(ni);
      Eigen::MatrixXd A = o.contains("A") ? matrix_from_json(o["A"], ni)
                                          : Eigen::MatrixXd::Zero(layout.others_dim(i), ni);
      if (A.rows() == 0 && layout.others_dim(i) == 0) A.resize(0, ni);
      if (o.contains("chol")) {
        objectives.emplace_back(matrix_from_json(o["chol"], ni), std::move(q), std::move(A));
      } else if (o.contains("P")) {
        objectives.push_back(QuadraticAgentObjective::from_hessian(matrix_from_json(o["P"], ni), std::move(q), std::move(A)));
      } else {
        throw ConfigError("game: objective " + std::to_string(i) + " needs \"chol\" or \"P\"");
      }
      ++i;
    }
  }
  return {std::move(layout), std::move(local), std::move(shared), std::move(objectives), std::move(sampling)};
}

}  // namespace prefgne
