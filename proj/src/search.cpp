#include "goblin/search.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

namespace goblin {

namespace {

constexpr double kEvaluatedTol = 1e-9;

bool is_evaluated(const std::vector<double>& evaluated, double x) {
  return std::any_of(evaluated.begin(), evaluated.end(), [x](double e) { return std::abs(e - x) <= kEvaluatedTol; });
}

OperatorSpec spec_for(const SearchConfig& config, SearchFamily family, double parameter, Provenance provenance) {
  auto spec = family == SearchFamily::Gauss ? OperatorSpec::lin_gauss(parameter, config.sigma)
                                            : OperatorSpec::lin_heat(parameter * parameter);
  return spec.with_provenance(provenance);
}

void record(SearchState& state, std::string family, double parameter, std::optional<double> acquisition) {
  const auto& e = state.experts.back();
  TraceRow row;
  row.step = static_cast<int>(state.trace.size());
  row.family = std::move(family);
  row.parameter = parameter;
  row.score = e.score;
  row.acquisition = acquisition;
  row.best = state.trace.empty() ? e.score : std::max(state.trace.back().best, e.score);
  row.spec = e.spec.to_string();
  state.trace.push_back(std::move(row));
}

void observe(SearchState& state, const SearchContext& ctx, SearchFamily family, double parameter, Provenance prov,
             std::optional<double> acquisition) {
  const auto& e = evaluate(state, ctx, spec_for(state.config, family, parameter, prov));
  if (family == SearchFamily::Gauss) {
    state.gauss_gp.add(parameter, e.score);
    state.gauss_evaluated.push_back(parameter);
  } else {
    state.heat_gp.add(parameter, e.score);
    state.heat_evaluated.push_back(parameter);
  }
  record(state, family == SearchFamily::Gauss ? "lingauss" : "linheat", parameter, acquisition);
}

}  // namespace

SearchBounds search_bounds(double mean_distance, double mu_scale, double sqrt_tau_scale) {
  SearchBounds b;
  b.mu_max = mu_scale > 0.0 ? mean_distance * mu_scale : 8.0;
  b.sqrt_tau_max = sqrt_tau_scale > 0.0 ? mean_distance * sqrt_tau_scale : 5.0;
  return b;
}

std::optional<Proposal> propose(const GaussianProcess& gp, SearchFamily family, double max,
                                const std::vector<double>& evaluated, double beta, int points) {
  std::optional<Proposal> best;
  for (int i = 0; i < points; ++i) {
    const double x = points == 1 ? 0.0 : max * i / (points - 1);
    if (is_evaluated(evaluated, x)) continue;
    const auto post = gp.posterior(x);
    const double acq = post.mean + beta * post.std;
    if (!best || acq > best->acquisition) best = Proposal{family, x, acq};
  }
  return best;
}

SearchState init_search(const SearchConfig& config, const SearchBounds& bounds) {
  SearchState s;
  s.config = config;
  s.bounds = bounds;
  s.budget_remaining = config.budget;
  s.gauss_gp = GaussianProcess(config.gp);
  s.heat_gp = GaussianProcess(config.gp);
  return s;
}

const LinearExpert& evaluate(SearchState& state, const SearchContext& ctx, OperatorSpec spec) {
  Mat sx = apply_operator(ctx.task.graph(), ctx.distances, spec, ctx.task.features(), state.config.operators);
  auto expert = solve_expert(ctx.task, std::move(spec), std::move(sx), FitSet::Fit);
  expert.score = trimmed_score(expert.logits, ctx.task.labels(), ctx.task.eval_nodes(), state.config.trim_frac,
                               ctx.task.num_classes())
                     .score;
  ++state.solves;
  state.experts.push_back(std::move(expert));
  return state.experts.back();
}

void seed_anchors(SearchState& state, const SearchContext& ctx) {
  const auto& c = state.config;
  for (int i = 1; i <= c.mu_anchors; ++i) {
    observe(state, ctx, SearchFamily::Gauss, state.bounds.mu_max * i / c.mu_anchors, Provenance::Anchor, std::nullopt);
  }
  for (int i = 1; i <= c.sqrt_tau_anchors; ++i) {
    observe(state, ctx, SearchFamily::Heat, state.bounds.sqrt_tau_max * i / (c.sqrt_tau_anchors + 1),
            Provenance::Anchor, std::nullopt);
  }
  if (c.adj_squared_anchor) {
    evaluate(state, ctx, OperatorSpec::adj_power(2).with_provenance(Provenance::Anchor));
    record(state, "fixed", 2.0, std::nullopt);
  }
  if (c.anchors_consume_budget) {
    state.budget_remaining = std::max(0, state.budget_remaining - static_cast<int>(state.experts.size()));
  }
}

bool ucb_step(SearchState& state, const SearchContext& ctx) {
  if (state.budget_remaining <= 0) throw DataError("UCB step requested with no budget remaining");
  const auto& c = state.config;
  auto gauss = propose(state.gauss_gp, SearchFamily::Gauss, state.bounds.mu_max, state.gauss_evaluated, c.beta,
                       c.grid_points);
  auto heat = propose(state.heat_gp, SearchFamily::Heat, state.bounds.sqrt_tau_max, state.heat_evaluated, c.beta,
                      c.grid_points);
  if (!gauss && !heat) {
    state.exhausted = true;
    return false;
  }
  const Proposal winner = (gauss && (!heat || gauss->acquisition >= heat->acquisition)) ? *gauss : *heat;
  observe(state, ctx, winner.family, winner.parameter, Provenance::UcbSample, winner.acquisition);
  --state.budget_remaining;
  return true;
}

Vec prediction_vector(const LinearExpert& expert, std::span<const NodeId> eval_nodes) {
  const auto c = expert.logits.cols();
  Vec v(static_cast<Eigen::Index>(eval_nodes.size()) * c);
  for (std::size_t i = 0; i < eval_nodes.size(); ++i) {
    v.segment(static_cast<Eigen::Index>(i) * c, c) = expert.logits.row(eval_nodes[i]).transpose();
  }
  const double norm = v.norm();
  if (norm > 0.0) v /= norm;
  return v;
}

std::vector<std::size_t> select_basis(std::span<const double> scores, const std::vector<Vec>& unit_predictions, int k,
                                      double penalty) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> picked;
  std::vector<bool> used(n, false);
  std::vector<double> max_cos(n, -std::numeric_limits<double>::infinity());
  while (static_cast<int>(picked.size()) < k && picked.size() < n) {
    std::size_t best = n;
    double best_value = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (used[i]) continue;
      const double value = picked.empty() ? scores[i] : scores[i] - penalty * max_cos[i];
      if (best == n || value > best_value) {
        best = i;
        best_value = value;
      }
    }
    used[best] = true;
    picked.push_back(best);
    for (std::size_t i = 0; i < n; ++i) {
      if (!used[i]) max_cos[i] = std::max(max_cos[i], unit_predictions[i].dot(unit_predictions[best]));
    }
  }
  return picked;
}

std::vector<OperatorSpec> select_basis(SearchState& state, const SearchContext& ctx, int k, double penalty) {
  std::vector<double> scores;
  std::vector<Vec> preds;
  for (const auto& e : state.experts) {
    scores.push_back(e.score);
    preds.push_back(prediction_vector(e, ctx.task.eval_nodes()));
  }
  state.selected.clear();
  for (auto i : select_basis(scores, preds, k, penalty)) state.selected.push_back(state.experts[i].spec);
  return state.selected;
}

SearchResult run_search(const TaskInstance& task, const DistanceTable& distances, const SearchConfig& config) {
  if (task.fit_nodes().empty() || task.eval_nodes().empty()) throw DataError("search needs non-empty fit and eval sets");
  const SearchContext ctx{task, distances};
  SearchResult result;
  result.state =
      init_search(config, search_bounds(distances.mean_distance(), config.mu_scale, config.sqrt_tau_scale));
  auto& state = result.state;
  seed_anchors(state, ctx);
  while (state.budget_remaining > 0) {
    if (!ucb_step(state, ctx)) break;
  }
  select_basis(state, ctx, config.basis_size, config.diversity_penalty);
  for (const auto& spec : state.selected) {
    for (const auto& e : state.experts) {
      if (e.spec == spec) {
        result.basis.push_back(e);
        break;
      }
    }
  }
  return result;
}

void write_trace_csv(std::ostream& out, const SearchState& state) {
  out << "step,family,parameter,score,acquisition,cumulative_best,spec\n";
  auto prec = out.precision(17);
  for (const auto& r : state.trace) {
    out << r.step << ',' << r.family << ',' << r.parameter << ',' << r.score << ',';
    if (r.acquisition) out << *r.acquisition;
    out << ',' << r.best << ",\"" << r.spec << "\"\n";
  }
  out.precision(prec);
}

}  // namespace goblin
