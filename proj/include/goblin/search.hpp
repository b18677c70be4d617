#pragma once

#include <optional>
#include <iosfwd>
#include <string>
#include <vector>

#include "goblin/expert.hpp"
#include "goblin/gp.hpp"
#include "goblin/operators.hpp"

namespace goblin {

struct SearchConfig {
  int budget = 25;
  double beta = 3.0;
  int basis_size = 4;
  double diversity_penalty = 0.2;
  double mu_scale = 1.25;        // 0 selects the fixed [0, 8] interval
  double sqrt_tau_scale = 1.25;  // 0 selects the fixed [0, 5] interval
  int mu_anchors = 5;
  int sqrt_tau_anchors = 1;
  bool adj_squared_anchor = true;
  bool anchors_consume_budget = false;
  double sigma = 0.5;  // LinGauss width for every sampled mu
  double trim_frac = 0.2;
  int grid_points = 201;
  GpConfig gp;
  OperatorOptions operators;
};

struct SearchBounds {
  double mu_max = 8.0;
  double sqrt_tau_max = 5.0;
};

SearchBounds search_bounds(double mean_distance, double mu_scale, double sqrt_tau_scale);

enum class SearchFamily { Gauss, Heat };

struct Proposal {
  SearchFamily family = SearchFamily::Gauss;
  double parameter = 0.0;
  double acquisition = 0.0;
};

// Grid argmax of mean + beta * std over `points` evenly spaced values on
// [0, max], skipping any value within 1e-9 of an evaluated parameter.
// Ties go to the lowest grid index. nullopt when every point is evaluated.
std::optional<Proposal> propose(const GaussianProcess& gp, SearchFamily family, double max,
                                const std::vector<double>& evaluated, double beta, int points);

struct TraceRow {
  int step = 0;
  std::string family;  // "lingauss", "linheat", "fixed"
  double parameter = 0.0;
  double score = 0.0;
  std::optional<double> acquisition;
  double best = 0.0;
  std::string spec;
};

struct SearchState {
  SearchConfig config;
  SearchBounds bounds;
  int budget_remaining = 0;
  GaussianProcess gauss_gp;
  GaussianProcess heat_gp;
  std::vector<double> gauss_evaluated;  // mu values
  std::vector<double> heat_evaluated;   // sqrt(tau) values
  std::vector<LinearExpert> experts;    // every evaluation, in order, fitted on Fit
  std::vector<OperatorSpec> selected;
  std::vector<TraceRow> trace;
  std::size_t solves = 0;
  bool exhausted = false;
};

// Read-only inputs every evaluation needs.
struct SearchContext {
  const TaskInstance& task;
  const DistanceTable& distances;
};

SearchState init_search(const SearchConfig& config, const SearchBounds& bounds);

// Builds, solves on Fit and scores on Eval; appends to the state's experts.
const LinearExpert& evaluate(SearchState& state, const SearchContext& ctx, OperatorSpec spec);

// mu anchors at i * mu_max / m (i = 1..m), sqrt(tau) anchors at
// i * sqrt_tau_max / (m + 1), plus A^2 when enabled. Anchors enter their
// family GP; A^2 is scored only.
void seed_anchors(SearchState& state, const SearchContext& ctx);

// One cross-family UCB evaluation. Throws DataError when no budget is left.
// Returns false (and marks the state exhausted) when both grids are used up.
bool ucb_step(SearchState& state, const SearchContext& ctx);

// Eval-row logits, flattened row-major and scaled to unit L2 norm.
Vec prediction_vector(const LinearExpert& expert, std::span<const NodeId> eval_nodes);

// Greedy pick: first the top score, then argmax of
// score - penalty * max cosine to the already-picked vectors. Ties keep the
// earlier index. Returns indices, at most k of them.
std::vector<std::size_t> select_basis(std::span<const double> scores, const std::vector<Vec>& unit_predictions, int k,
                                      double penalty);
std::vector<OperatorSpec> select_basis(SearchState& state, const SearchContext& ctx, int k, double penalty);

struct SearchResult {
  std::vector<LinearExpert> basis;  // fitted on Fit, in selection order
  SearchState state;
};

// bounds -> anchors -> UCB until the budget is spent -> greedy selection.
SearchResult run_search(const TaskInstance& task, const DistanceTable& distances, const SearchConfig& config);

void write_trace_csv(std::ostream& out, const SearchState& state);

}  // namespace goblin
