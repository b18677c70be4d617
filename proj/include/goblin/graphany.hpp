#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include "goblin/expert.hpp"
#include "goblin/nn.hpp"

namespace goblin {

enum class BasisTag { Standard5, AdjPowers4, PreciseHop4, HopBins, HeatKernel };

std::string_view basis_tag_name(BasisTag t);
BasisTag parse_basis_tag(std::string_view s);

// standard5: {I, A, A^2, I - A, (I - A)^2}; adjpowers4: {I, A, .., A^4};
// precisehop4: {I, A, A_2, A_3, A_4}; hopbins and heatkernel as in the
// operator bases.
std::vector<OperatorSpec> fixed_basis_specs(BasisTag tag, const DistanceTable& distances);

// Builds and solves every basis operator against the given label subset.
std::vector<LinearExpert> solve_fixed_basis(const TaskInstance& task, const DistanceTable& distances,
                                            const std::vector<OperatorSpec>& specs, FitSet fit_set,
                                            const OperatorOptions& options = {});

// Per node, ||Yhat_u^(i) - Yhat_u^(j)||^2 for ordered pairs i != j in
// lexicographic order: t(t-1) columns. Throws DataError for t < 2.
Mat graphany_features(const std::vector<const LinearExpert*>& experts, std::span<const NodeId> nodes);

struct GraphAnyConfig {
  int hidden = 64;
  int hidden_layers = 2;
  double temperature = 1.0;
  int steps = 500;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
};

// Attention MLP t(t-1) -> hidden -> hidden -> t over squared-distance
// features; per-node expert weights softmax(logits / T).
class GraphAnyModel {
 public:
  GraphAnyModel() = default;
  GraphAnyModel(BasisTag tag, int num_experts, const GraphAnyConfig& config, Rng& init_rng);

  BasisTag tag() const { return tag_; }
  int num_experts() const { return num_experts_; }
  int feature_dim() const { return num_experts_ * (num_experts_ - 1); }
  double temperature() const { return temperature_; }
  const nn::Mlp& mlp() const { return mlp_; }
  const nn::Standardizer& standardizer() const { return standardizer_; }
  void set_standardizer(nn::Standardizer s) { standardizer_ = std::move(s); }

  // nodes x t attention weights from raw features.
  Mat weights(const Mat& raw_features) const;

  // Mean cross-entropy of the mixed prediction on `nodes`; gradient
  // accumulated into grads when given.
  double loss(const Mat& raw_features, const std::vector<Mat>& expert_logits, std::span<const int> targets,
              std::vector<Mat>* grads = nullptr) const;

  std::vector<Mat*> parameters() { return mlp_.parameters(); }
  std::vector<Mat> zero_grads() const { return mlp_.zero_grads(); }

  void save(std::ostream& out) const;
  static GraphAnyModel load(std::istream& in);

 private:
  BasisTag tag_ = BasisTag::Standard5;
  int num_experts_ = 0;
  double temperature_ = 1.0;
  nn::Mlp mlp_;
  nn::Standardizer standardizer_;
};

// Full-batch Adam on the Eval cross-entropy, experts solved on Fit.
GraphAnyModel train_graphany(const TaskInstance& task, const DistanceTable& distances, BasisTag tag,
                             const GraphAnyConfig& config, std::vector<double>* loss_trace = nullptr);

struct GraphAnyResult {
  Mat logits;  // N x C
  Mat alpha;   // N x t
  std::vector<LinearExpert> experts;
};

// Zero-shot: rebuilds the tagged basis on the target, refits on all labels
// and mixes. Throws DataError when `target_tag` differs from the model's.
GraphAnyResult infer_graphany(const GraphAnyModel& model, const TaskInstance& task, const DistanceTable& distances,
                              BasisTag target_tag);

// Mixing over already-solved experts; a single expert is returned as is.
GraphAnyResult infer_graphany(const GraphAnyModel& model, std::vector<LinearExpert> experts);

}  // namespace goblin
