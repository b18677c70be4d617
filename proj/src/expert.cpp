#include "goblin/expert.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include <Eigen/SVD>

#include "goblin/rng.hpp"

namespace goblin {

namespace {

std::vector<NodeId> collect(const std::vector<Role>& roles, Role r) {
  std::vector<NodeId> out;
  for (std::size_t i = 0; i < roles.size(); ++i) {
    if (roles[i] == r) out.push_back(static_cast<NodeId>(i));
  }
  return out;
}

Mat gather_rows(const Mat& m, std::span<const NodeId> rows) {
  Mat out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

}  // namespace

std::string_view role_name(Role r) {
  switch (r) {
    case Role::Fit:
      return "fit";
    case Role::Eval:
      return "eval";
    case Role::Unlabeled:
      return "unlabeled";
    case Role::Test:
      return "test";
  }
  return "";
}

Role parse_role(std::string_view s) {
  if (s == "fit") return Role::Fit;
  if (s == "eval") return Role::Eval;
  if (s == "unlabeled") return Role::Unlabeled;
  if (s == "test") return Role::Test;
  throw DataError("unknown split role '" + std::string(s) + "'");
}

TaskInstance::TaskInstance(std::shared_ptr<const Graph> graph, Mat features, std::vector<int> labels, int num_classes,
                           std::vector<Role> roles)
    : graph_(std::move(graph)),
      features_(std::move(features)),
      labels_(std::move(labels)),
      num_classes_(num_classes),
      roles_(std::move(roles)) {
  if (!graph_) throw DataError("task needs a graph");
  const auto n = graph_->num_nodes();
  if (static_cast<std::size_t>(features_.rows()) != n) throw DataError("feature rows do not match node count");
  if (labels_.size() != n || roles_.size() != n) throw DataError("labels/roles do not match node count");
  if (num_classes_ < 2) throw DataError("need at least 2 classes");
  if (!features_.allFinite()) throw DataError("features must be finite");
  fit_ = collect(roles_, Role::Fit);
  eval_ = collect(roles_, Role::Eval);
  test_ = collect(roles_, Role::Test);
  unlabeled_ = collect(roles_, Role::Unlabeled);
  labeled_ = fit_;
  labeled_.insert(labeled_.end(), eval_.begin(), eval_.end());
  std::sort(labeled_.begin(), labeled_.end());
  for (NodeId u : labeled_) {
    if (labels_[u] < 0 || labels_[u] >= num_classes_) {
      throw DataError("labeled node " + std::to_string(u) + " has no valid class");
    }
  }
}

Mat TaskInstance::one_hot(std::span<const NodeId> nodes) const {
  Mat y = Mat::Zero(static_cast<Eigen::Index>(nodes.size()), num_classes_);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const int c = labels_[nodes[i]];
    if (c < 0 || c >= num_classes_) throw DataError("node " + std::to_string(nodes[i]) + " has no label");
    y(static_cast<Eigen::Index>(i), c) = 1.0;
  }
  return y;
}

TaskInstance TaskInstance::with_features(Mat features) const {
  return TaskInstance(graph_, std::move(features), labels_, num_classes_, roles_);
}

void assign_fit_eval(std::vector<Role>& roles, std::span<const NodeId> labeled, std::uint64_t seed) {
  std::vector<NodeId> order(labeled.begin(), labeled.end());
  Rng rng = make_stream(seed, "splits/fit-eval");
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t half = order.size() / 2;
  for (std::size_t i = 0; i < order.size(); ++i) roles[order[i]] = i < half ? Role::Fit : Role::Eval;
}

// ---------------------------------------------------------------------------

Mat pseudo_inverse(const Mat& a, double rcond) {
  if (a.size() == 0) return Mat::Zero(a.cols(), a.rows());
  // Jacobi: divide-and-conquer loses small perturbations of clustered spectra.
  Eigen::JacobiSVD<Mat> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vec& s = svd.singularValues();
  const double cutoff = rcond * (s.size() ? s(0) : 0.0);
  Vec inv = Vec::Zero(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s(i) > cutoff && s(i) > 0.0) inv(i) = 1.0 / s(i);
  }
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

LinearExpert solve_expert(const TaskInstance& task, OperatorSpec spec, Mat propagated, FitSet fit_set) {
  const auto nodes = fit_set == FitSet::Fit ? task.fit_nodes() : task.labeled_nodes();
  if (nodes.empty()) throw DataError("expert fit set is empty");
  if (!propagated.allFinite()) throw NumericalError("propagated features are not finite for " + spec.to_string());

  LinearExpert e;
  e.spec = std::move(spec);
  e.fit_set = fit_set;
  const Mat sx_fit = gather_rows(propagated, nodes);
  if (sx_fit.cwiseAbs().maxCoeff() == 0.0) {
    e.degenerate = true;
    e.weights = Mat::Zero(propagated.cols(), task.num_classes());
  } else {
    e.weights = pseudo_inverse(sx_fit) * task.one_hot(nodes);
  }
  e.logits = propagated * e.weights;
  e.propagated = std::move(propagated);
  return e;
}

LinearExpert solve_expert(const TaskInstance& task, const OperatorMatrix& op, FitSet fit_set) {
  return solve_expert(task, op.spec(), op.apply(task.features()), fit_set);
}

LinearExpert refit(const LinearExpert& expert, const TaskInstance& task, FitSet fit_set) {
  auto e = solve_expert(task, expert.spec, expert.propagated, fit_set);
  e.score = expert.score;
  return e;
}

// ---------------------------------------------------------------------------

double margin(std::span<const double> logits) {
  if (logits.size() < 2) throw DataError("margin needs at least 2 classes");
  double top = -std::numeric_limits<double>::infinity();
  double second = top;
  for (double x : logits) {
    if (x > top) {
      second = top;
      top = x;
    } else if (x > second) {
      second = x;
    }
  }
  return top - second;
}

double margin(const Eigen::Ref<const Eigen::RowVectorXd>& logits) {
  Eigen::RowVectorXd row = logits;
  return margin(std::span<const double>(row.data(), static_cast<std::size_t>(row.size())));
}

int argmax(const Eigen::Ref<const Eigen::RowVectorXd>& logits) {
  int best = 0;
  for (Eigen::Index c = 1; c < logits.size(); ++c) {
    if (logits(c) > logits(best)) best = static_cast<int>(c);
  }
  return best;
}

std::vector<int> predict_classes(const Mat& logits) {
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index u = 0; u < logits.rows(); ++u) out[static_cast<std::size_t>(u)] = argmax(logits.row(u));
  return out;
}

double accuracy(std::span<const int> predictions, std::span<const int> truth, std::span<const NodeId> subset) {
  if (subset.empty()) throw DataError("accuracy over an empty subset");
  std::size_t correct = 0;
  for (NodeId u : subset) correct += predictions[u] == truth[u];
  return static_cast<double>(correct) / static_cast<double>(subset.size());
}

TrimmedScore trimmed_score(const Mat& logits, std::span<const int> labels, std::span<const NodeId> eval_nodes,
                           double trim_frac, int num_classes) {
  if (eval_nodes.empty()) throw DataError("trimmed score needs eval nodes");
  if (!(trim_frac >= 0.0 && trim_frac < 0.5)) throw DataError("trim fraction must lie in [0, 0.5)");
  struct Item {
    double margin;
    bool correct;
  };
  std::vector<Item> items;
  items.reserve(eval_nodes.size());
  for (NodeId u : eval_nodes) items.push_back({margin(logits.row(u)), argmax(logits.row(u)) == labels[u]});
  std::stable_sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.margin < b.margin; });

  const auto n = items.size();
  auto drop = static_cast<std::size_t>(std::floor(trim_frac * static_cast<double>(n)));
  TrimmedScore out;
  if (2 * drop >= n) {
    drop = 0;
    out.untrimmed_fallback = true;
  }
  std::size_t correct = 0;
  for (std::size_t i = drop; i < n - drop; ++i) correct += items[i].correct;
  out.kept = n - 2 * drop;
  out.raw_accuracy = static_cast<double>(correct) / static_cast<double>(out.kept);
  const double chance = 1.0 / num_classes;
  out.score = (out.raw_accuracy - chance) / (1.0 - chance);
  return out;
}

}  // namespace goblin
