#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "goblin/expert.hpp"

namespace goblin {

// Node ranges (NaN where the weight row is all zero) and their mean over the
// defined nodes.
struct NodeRanges {
  Vec node_range;
  double graph_range = 0.0;
  std::size_t defined = 0;
};

// rho_u = sum_v |S_uv| d(u,v) / sum_v |S_uv|. Pairs absent from the table
// are skipped when they lie in different components (known from an
// untruncated table or from `graph`); a nonzero entry beyond a truncation
// radius throws DataError.
NodeRanges operator_range(const OperatorMatrix& op, const DistanceTable& distances, const Graph* graph = nullptr);

// Same quantity for an arbitrary nonnegative sensitivity matrix, rows
// restricted to `rows` (all rows when empty).
NodeRanges sensitivity_range(const Mat& sensitivity, const DistanceTable& distances,
                             std::span<const NodeId> rows = {});

struct OperatorRangeRow {
  std::string spec;
  double graph_range = 0.0;
  double mean_alpha = 0.0;
  double score = 0.0;
};

struct RangeReport {
  std::vector<OperatorRangeRow> operators;
  double aggregate = 0.0;  // sum_i mean_alpha_i * graph_range_i
  std::optional<std::size_t> best;  // highest-scoring operator
  std::optional<double> blackbox;
};

// alpha: N x experts, rows summing to 1. Operators with zero mean weight
// (other than the best-scoring one) are not built; their range is NaN.
RangeReport model_range(const Graph& g, const DistanceTable& distances, const std::vector<LinearExpert>& experts,
                        const Mat& alpha, const OperatorOptions& options = {});

// operator_spec,rho_G,mean_alpha,score rows plus "aggregate" and, when
// present, "best_operator" and "blackbox" summary rows.
void write_range_csv(std::ostream& out, const RangeReport& report);

// Nodes for black-box sampling: all of them when N <= count, otherwise a
// seeded sample of `count`, sorted.
std::vector<NodeId> range_sample_nodes(std::size_t num_nodes, std::size_t count, std::uint64_t seed);

// Eq.-1 range through the full solve Yhat = S X (S X)_L^+ Y_L, with J_uv =
// sum |dYhat_uc / dX_vd| from central differences. N <= 512. Difference
// quotients below 1e-8 * max(1, |Yhat|) count as zero, so an output that does
// not depend on X at all gives NaN (no defined node).
double blackbox_range(const TaskInstance& task, const OperatorMatrix& op, const DistanceTable& distances,
                      std::span<const NodeId> sample_nodes, double eps = 1e-5);

// Central-difference ranges of Yhat = S X W with W held fixed, one entry per
// sample node.
Vec fixed_weight_range(const TaskInstance& task, const OperatorMatrix& op, const Mat& weights,
                       const DistanceTable& distances, std::span<const NodeId> sample_nodes, double eps = 1e-5);

}  // namespace goblin
