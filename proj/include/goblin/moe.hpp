#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "goblin/expert.hpp"
#include "goblin/nn.hpp"
#include "goblin/search.hpp"

namespace goblin {

enum class WeightSelection { Standard, PreFilterHalf, PreFilterAll, MaskByDeepsetHalf, MaskByDeepsetAll };
enum class TrainMode { Pool, Stochastic };

std::string_view selection_name(WeightSelection w);
WeightSelection parse_selection(std::string_view s);
std::string_view train_mode_name(TrainMode m);
TrainMode parse_train_mode(std::string_view s);

using ExpertRefs = std::vector<const LinearExpert*>;

// Disagreement summaries per (node, expert): over j != i of
// D = ||Yhat_u^(i) - Yhat_u^(j)||^2 on raw logits, the mean, population
// variance, min and max; optionally the expert's trimmed score as a fifth
// column. Row index = node_position * num_experts + expert.
struct ExpertFeatures {
  std::size_t num_nodes = 0;
  std::size_t num_experts = 0;
  Mat values;

  auto row(std::size_t node, std::size_t expert) const {
    return values.row(static_cast<Eigen::Index>(node * num_experts + expert));
  }
};

// Throws DataError with fewer than 2 experts.
ExpertFeatures compute_features(const ExpertRefs& experts, std::span<const NodeId> nodes, bool score_feature = false);

struct MoeConfig {
  int hidden = 64;
  int phi_layers = 3;
  int head_layers = 1;
  double dropout = 0.1;
  double temperature = 2.0;
  WeightSelection selection = WeightSelection::PreFilterAll;
  bool score_feature = false;
  TrainMode mode = TrainMode::Pool;
  int batches = 500;
  double learning_rate = 3e-4;
  int pool_per_family = 25;
  int draw_size = 8;
  int node_batch = 128;  // stochastic mode minibatch of eval nodes
  int basis_size = 4;
  double diversity_penalty = 0.2;
  double redundancy_cos = 0.999;
  std::uint64_t seed = 0;
};

// One training or evaluation batch: features over `targets.size()` nodes,
// each expert's logit rows for those nodes, and the active-expert mask.
struct MoeBatch {
  ExpertFeatures features;
  std::vector<Mat> logits;  // per expert, nodes x C
  std::vector<int> targets;
  std::vector<bool> mask;
};

// Permutation-invariant mixture: E = phi(H), pooled P = sum_j E_j over every
// featured expert, logit = psi([E_i, P]), weights = softmax(logit / T) over
// the unmasked experts.
class MoeModel {
 public:
  MoeModel() = default;
  MoeModel(const MoeConfig& config, Rng& init_rng);

  int feature_dim() const { return score_feature_ ? 5 : 4; }
  double temperature() const { return temperature_; }
  WeightSelection selection() const { return selection_; }
  bool score_feature() const { return score_feature_; }
  const nn::Standardizer& standardizer() const { return standardizer_; }
  void set_standardizer(nn::Standardizer s) { standardizer_ = std::move(s); }
  const nn::Mlp& phi() const { return phi_; }
  const nn::Mlp& psi() const { return psi_; }

  // nodes x experts pre-softmax logits.
  Mat expert_logits(const ExpertFeatures& raw) const;
  Mat weights(const ExpertFeatures& raw, const std::vector<bool>& mask) const;

  // Mean cross-entropy of softmax(sum_i alpha_i Yhat_i) against targets.
  double loss(const MoeBatch& batch) const;
  // Same loss, accumulating gradients (phi params then psi params).
  double loss_and_grad(const MoeBatch& batch, std::vector<Mat>& grads, Rng* dropout_rng) const;

  std::vector<Mat*> parameters();
  std::vector<Mat> zero_grads() const;

  void save(std::ostream& out) const;
  static MoeModel load(std::istream& in);

 private:
  double forward_backward(const MoeBatch& batch, std::vector<Mat>* grads, Rng* dropout_rng) const;

  nn::Mlp phi_;
  nn::Mlp psi_;
  nn::Standardizer standardizer_;
  double temperature_ = 2.0;
  WeightSelection selection_ = WeightSelection::PreFilterAll;
  bool score_feature_ = false;
};

// Which experts the DeepSet sees and which may receive weight.
struct Selection {
  std::vector<std::size_t> featured;  // indices into the evaluated list, evaluation order
  std::vector<bool> mask;             // over featured
  std::optional<int> deepset_top_k;   // mask_by_deepset: resolve with top_k_by_mean_logit
};

// standard: featured = basis, all active. pre_filter_all: every evaluated
// expert that is not a near-duplicate (cosine > redundancy_cos) of a
// higher-scoring one; pre_filter_half: the top half by score; both masked
// to the basis, and basis members are always featured. mask_by_deepset_*:
// featured as pre_filter_*, mask left to the DeepSet.
Selection apply_weight_selection(WeightSelection mode, const std::vector<LinearExpert>& evaluated,
                                 const std::vector<OperatorSpec>& basis, std::span<const NodeId> eval_nodes,
                                 double redundancy_cos = 0.999);

// Mask of the k columns with the largest mean over rows; ties keep the lower index.
std::vector<bool> top_k_by_mean_logit(const Mat& logits, int k);

// Mixed logits for every node: sum_i alpha_ui Yhat_i.
Mat mix(const std::vector<const Mat*>& logits, const Mat& alpha);
Mat predict(const MoeModel& model, const ExpertRefs& experts, const std::vector<bool>& mask);

// Grid of experts solved on the training task's Fit set and scored on
// Eval: per_family mu values i * mu_max / n and sqrt(tau) values
// i * sqrt_tau_max / n, i = 1..n.
std::vector<LinearExpert> build_training_pool(const TaskInstance& task, const DistanceTable& distances,
                                              const SearchConfig& search, int per_family);

// Adam on the Eval cross-entropy with features from Fit-solved experts.
// Pool mode draws a random expert subset per batch; stochastic mode uses
// the given experts as a fixed set and draws node minibatches.
MoeModel train_moe(const TaskInstance& task, const std::vector<LinearExpert>& pool, const MoeConfig& config,
                   std::vector<double>* loss_trace = nullptr);

struct GoblinResult {
  Mat logits;                          // N x C
  Mat alpha;                           // N x featured
  std::vector<LinearExpert> featured;  // refit on all labels
  std::vector<bool> mask;
  SearchState state;
};

// Basis search on the target, weight selection, refit on all labels, mix.
GoblinResult goblin_infer(const MoeModel& model, const TaskInstance& task, const DistanceTable& distances,
                          const SearchConfig& search);

}  // namespace goblin
