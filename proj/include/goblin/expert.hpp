#pragma once

#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <vector>

#include "goblin/graph.hpp"
#include "goblin/operators.hpp"
#include "goblin/types.hpp"

namespace goblin {

enum class Role : std::uint8_t { Fit, Eval, Unlabeled, Test };

std::string_view role_name(Role r);
Role parse_role(std::string_view s);

// Transductive node-classification instance: graph, features, known labels
// and the node roles. Labeled = Fit u Eval; Unlabeled and Test nodes are
// hidden from every solve (Test labels, when present, are only used to
// report accuracy).
class TaskInstance {
 public:
  TaskInstance(std::shared_ptr<const Graph> graph, Mat features, std::vector<int> labels, int num_classes,
               std::vector<Role> roles);

  const Graph& graph() const { return *graph_; }
  const std::shared_ptr<const Graph>& graph_ptr() const { return graph_; }
  const Mat& features() const { return features_; }
  const std::vector<int>& labels() const { return labels_; }
  const std::vector<Role>& roles() const { return roles_; }
  int num_classes() const { return num_classes_; }
  std::size_t num_nodes() const { return roles_.size(); }

  std::span<const NodeId> fit_nodes() const { return fit_; }
  std::span<const NodeId> eval_nodes() const { return eval_; }
  std::span<const NodeId> labeled_nodes() const { return labeled_; }
  std::span<const NodeId> test_nodes() const { return test_; }
  std::span<const NodeId> unlabeled_nodes() const { return unlabeled_; }

  // One-hot rows for the given nodes; every node must carry a label.
  Mat one_hot(std::span<const NodeId> nodes) const;

  TaskInstance with_features(Mat features) const;

 private:
  std::shared_ptr<const Graph> graph_;
  Mat features_;
  std::vector<int> labels_;
  int num_classes_;
  std::vector<Role> roles_;
  std::vector<NodeId> fit_, eval_, labeled_, test_, unlabeled_;
};

// Splits `labeled` uniformly at random into halves: the first
// floor(n/2) of a seeded shuffle become Fit, the rest Eval.
void assign_fit_eval(std::vector<Role>& roles, std::span<const NodeId> labeled, std::uint64_t seed);

enum class FitSet { Fit, Labeled };

struct LinearExpert {
  OperatorSpec spec;
  Mat propagated;  // S X, N x d
  Mat weights;     // d x C
  Mat logits;      // S X W, N x C
  double score = std::numeric_limits<double>::quiet_NaN();
  FitSet fit_set = FitSet::Fit;
  bool degenerate = false;  // S X vanished on the fit rows; W = 0
};

// Moore-Penrose pseudo-inverse by one-sided Jacobi SVD; singular values below
// rcond * sigma_max are treated as zero.
Mat pseudo_inverse(const Mat& a, double rcond = 1e-10);

// Minimum-norm least-squares W = (SX)_fit^+ Y_fit.
LinearExpert solve_expert(const TaskInstance& task, OperatorSpec spec, Mat propagated, FitSet fit_set);
LinearExpert solve_expert(const TaskInstance& task, const OperatorMatrix& op, FitSet fit_set);

// Re-solves W against another label subset, keeping S X and the score.
LinearExpert refit(const LinearExpert& expert, const TaskInstance& task, FitSet fit_set);

// Top logit minus runner-up. Requires at least 2 entries.
double margin(std::span<const double> logits);
double margin(const Eigen::Ref<const Eigen::RowVectorXd>& logits);

// Argmax, ties to the lowest class index.
int argmax(const Eigen::Ref<const Eigen::RowVectorXd>& logits);
std::vector<int> predict_classes(const Mat& logits);

// Fraction of `subset` whose prediction equals the truth.
double accuracy(std::span<const int> predictions, std::span<const int> truth, std::span<const NodeId> subset);

struct TrimmedScore {
  double score = 0.0;
  double raw_accuracy = 0.0;
  std::size_t kept = 0;
  bool untrimmed_fallback = false;
};

// Sort the eval nodes by margin (ascending, stable), drop floor(trim * n)
// from each end, and rescale accuracy on the rest so chance (1/C) maps to 0
// and perfect to 1.
TrimmedScore trimmed_score(const Mat& logits, std::span<const int> labels, std::span<const NodeId> eval_nodes,
                           double trim_frac, int num_classes);

}  // namespace goblin
