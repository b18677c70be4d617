#include "goblin/moe.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>

namespace goblin {

namespace {

constexpr const char* kFormatTag = "goblin-checkpoint";
constexpr int kFormatVersion = 1;

Mat gather_rows(const Mat& m, std::span<const NodeId> rows) {
  Mat out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

// Stable log-sum-exp cross-entropy; writes softmax(row) - onehot into grad.
double cross_entropy_row(const Eigen::Ref<const Eigen::RowVectorXd>& logits, int target,
                         Eigen::Ref<Eigen::RowVectorXd> grad) {
  const double top = logits.maxCoeff();
  const Eigen::RowVectorXd e = (logits.array() - top).exp();
  const double sum = e.sum();
  grad = e / sum;
  grad(target) -= 1.0;
  return -(logits(target) - top - std::log(sum));
}

std::vector<std::size_t> order_by_score(const std::vector<LinearExpert>& experts) {
  std::vector<std::size_t> order(experts.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return experts[a].score > experts[b].score; });
  return order;
}

bool is_half(WeightSelection w) {
  return w == WeightSelection::PreFilterHalf || w == WeightSelection::MaskByDeepsetHalf;
}
bool is_deepset_mask(WeightSelection w) {
  return w == WeightSelection::MaskByDeepsetHalf || w == WeightSelection::MaskByDeepsetAll;
}

}  // namespace

std::string_view selection_name(WeightSelection w) {
  switch (w) {
    case WeightSelection::Standard:
      return "standard";
    case WeightSelection::PreFilterHalf:
      return "pre_filter_half";
    case WeightSelection::PreFilterAll:
      return "pre_filter_all";
    case WeightSelection::MaskByDeepsetHalf:
      return "mask_by_deepset_half";
    case WeightSelection::MaskByDeepsetAll:
      return "mask_by_deepset_all";
  }
  return "";
}

WeightSelection parse_selection(std::string_view s) {
  for (auto w : {WeightSelection::Standard, WeightSelection::PreFilterHalf, WeightSelection::PreFilterAll,
                 WeightSelection::MaskByDeepsetHalf, WeightSelection::MaskByDeepsetAll}) {
    if (selection_name(w) == s) return w;
  }
  throw DataError("unknown weight selection '" + std::string(s) + "'");
}

std::string_view train_mode_name(TrainMode m) { return m == TrainMode::Pool ? "pool" : "stochastic"; }

TrainMode parse_train_mode(std::string_view s) {
  if (s == "pool") return TrainMode::Pool;
  if (s == "stochastic") return TrainMode::Stochastic;
  throw DataError("unknown training mode '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------

ExpertFeatures compute_features(const ExpertRefs& experts, std::span<const NodeId> nodes, bool score_feature) {
  const std::size_t t = experts.size();
  if (t < 2) throw DataError("disagreement features need at least 2 experts");
  ExpertFeatures f;
  f.num_nodes = nodes.size();
  f.num_experts = t;
  f.values = Mat::Zero(static_cast<Eigen::Index>(nodes.size() * t), score_feature ? 5 : 4);
  Mat d(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(t));
  for (std::size_t n = 0; n < nodes.size(); ++n) {
    const NodeId u = nodes[n];
    for (std::size_t i = 0; i < t; ++i) {
      d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = 0.0;
      for (std::size_t j = i + 1; j < t; ++j) {
        const double v = (experts[i]->logits.row(u) - experts[j]->logits.row(u)).squaredNorm();
        d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
        d(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = v;
      }
    }
    for (std::size_t i = 0; i < t; ++i) {
      double sum = 0.0;
      double lo = std::numeric_limits<double>::infinity();
      double hi = -lo;
      for (std::size_t j = 0; j < t; ++j) {
        if (j == i) continue;
        const double v = d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        sum += v;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      const double mean = sum / static_cast<double>(t - 1);
      double var = 0.0;
      for (std::size_t j = 0; j < t; ++j) {
        if (j == i) continue;
        const double dv = d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) - mean;
        var += dv * dv;
      }
      var /= static_cast<double>(t - 1);
      auto r = f.values.row(static_cast<Eigen::Index>(n * t + i));
      r(0) = mean;
      r(1) = var;
      r(2) = lo;
      r(3) = hi;
      if (score_feature) r(4) = experts[i]->score;
    }
  }
  return f;
}

// ---------------------------------------------------------------------------

MoeModel::MoeModel(const MoeConfig& config, Rng& init_rng)
    : temperature_(config.temperature), selection_(config.selection), score_feature_(config.score_feature) {
  if (config.phi_layers < 1 || config.head_layers < 1) throw DataError("DeepSet needs >= 1 layer in phi and psi");
  std::vector<int> phi_dims{feature_dim()};
  for (int i = 0; i < config.phi_layers; ++i) phi_dims.push_back(config.hidden);
  std::vector<int> psi_dims{2 * config.hidden};
  for (int i = 1; i < config.head_layers; ++i) psi_dims.push_back(config.hidden);
  psi_dims.push_back(1);
  phi_ = nn::Mlp(phi_dims, true, config.dropout);
  psi_ = nn::Mlp(psi_dims, false, 0.0);
  phi_.init(init_rng);
  psi_.init(init_rng);
  std::vector<bool> logcols(static_cast<std::size_t>(feature_dim()), true);
  if (score_feature_) logcols.back() = false;
  standardizer_ = {logcols, Vec::Zero(feature_dim()), Vec::Ones(feature_dim())};
}

Mat MoeModel::expert_logits(const ExpertFeatures& raw) const {
  const auto m = static_cast<Eigen::Index>(raw.num_nodes);
  const auto t = static_cast<Eigen::Index>(raw.num_experts);
  const Mat e = phi_.forward(standardizer_.apply(raw.values));
  const auto h = e.cols();
  Mat cat(m * t, 2 * h);
  for (Eigen::Index u = 0; u < m; ++u) {
    const Eigen::RowVectorXd pooled = e.middleRows(u * t, t).colwise().sum();
    for (Eigen::Index i = 0; i < t; ++i) {
      cat.row(u * t + i) << e.row(u * t + i), pooled;
    }
  }
  const Mat z = psi_.forward(cat);
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(z.data(), m, t);
}

Mat MoeModel::weights(const ExpertFeatures& raw, const std::vector<bool>& mask) const {
  return nn::masked_softmax(expert_logits(raw), mask, temperature_);
}

double MoeModel::loss(const MoeBatch& batch) const { return forward_backward(batch, nullptr, nullptr); }

double MoeModel::loss_and_grad(const MoeBatch& batch, std::vector<Mat>& grads, Rng* dropout_rng) const {
  return forward_backward(batch, &grads, dropout_rng);
}

double MoeModel::forward_backward(const MoeBatch& batch, std::vector<Mat>* grads, Rng* dropout_rng) const {
  const auto m = static_cast<Eigen::Index>(batch.features.num_nodes);
  const auto t = static_cast<Eigen::Index>(batch.features.num_experts);
  const auto classes = batch.logits.front().cols();

  nn::Mlp::Tape phi_tape;
  nn::Mlp::Tape psi_tape;
  const Mat e = phi_.forward(standardizer_.apply(batch.features.values), &phi_tape, dropout_rng);
  const auto h = e.cols();
  Mat cat(m * t, 2 * h);
  for (Eigen::Index u = 0; u < m; ++u) {
    const Eigen::RowVectorXd pooled = e.middleRows(u * t, t).colwise().sum();
    for (Eigen::Index i = 0; i < t; ++i) cat.row(u * t + i) << e.row(u * t + i), pooled;
  }
  const Mat zcol = psi_.forward(cat, &psi_tape);
  Mat z(m, t);
  for (Eigen::Index u = 0; u < m; ++u) {
    for (Eigen::Index i = 0; i < t; ++i) z(u, i) = zcol(u * t + i, 0);
  }
  const Mat alpha = nn::masked_softmax(z, batch.mask, temperature_);

  double total = 0.0;
  Mat g_alpha = Mat::Zero(m, t);
  Eigen::RowVectorXd mixed(classes);
  Eigen::RowVectorXd g_mixed(classes);
  for (Eigen::Index u = 0; u < m; ++u) {
    mixed.setZero();
    for (Eigen::Index i = 0; i < t; ++i) mixed += alpha(u, i) * batch.logits[static_cast<std::size_t>(i)].row(u);
    total += cross_entropy_row(mixed, batch.targets[static_cast<std::size_t>(u)], g_mixed);
    for (Eigen::Index i = 0; i < t; ++i) {
      g_alpha(u, i) = g_mixed.dot(batch.logits[static_cast<std::size_t>(i)].row(u)) / static_cast<double>(m);
    }
  }
  const double loss = total / static_cast<double>(m);
  if (!grads) return loss;

  Mat gz_col = Mat::Zero(m * t, 1);
  for (Eigen::Index u = 0; u < m; ++u) {
    const double inner = alpha.row(u).dot(g_alpha.row(u));
    for (Eigen::Index i = 0; i < t; ++i) {
      if (!batch.mask[static_cast<std::size_t>(i)]) continue;
      gz_col(u * t + i, 0) = alpha(u, i) * (g_alpha(u, i) - inner) / temperature_;
    }
  }
  const auto n_phi = phi_.num_layers() * 2;
  std::vector<Mat> psi_grads(grads->begin() + static_cast<std::ptrdiff_t>(n_phi), grads->end());
  const Mat g_cat = psi_.backward(psi_tape, gz_col, psi_grads);
  std::copy(psi_grads.begin(), psi_grads.end(), grads->begin() + static_cast<std::ptrdiff_t>(n_phi));

  Mat g_e = g_cat.leftCols(h);
  for (Eigen::Index u = 0; u < m; ++u) {
    const Eigen::RowVectorXd g_pool = g_cat.middleRows(u * t, t).rightCols(h).colwise().sum();
    for (Eigen::Index i = 0; i < t; ++i) g_e.row(u * t + i) += g_pool;
  }
  std::vector<Mat> phi_grads(grads->begin(), grads->begin() + static_cast<std::ptrdiff_t>(n_phi));
  phi_.backward(phi_tape, g_e, phi_grads);
  std::copy(phi_grads.begin(), phi_grads.end(), grads->begin());
  return loss;
}

std::vector<Mat*> MoeModel::parameters() {
  auto p = phi_.parameters();
  auto q = psi_.parameters();
  p.insert(p.end(), q.begin(), q.end());
  return p;
}

std::vector<Mat> MoeModel::zero_grads() const {
  auto p = phi_.zero_grads();
  auto q = psi_.zero_grads();
  p.insert(p.end(), q.begin(), q.end());
  return p;
}

void MoeModel::save(std::ostream& out) const {
  out << kFormatTag << ' ' << kFormatVersion << '\n';
  out << "kind moe\n";
  out << "temperature " << nn::format_exact(temperature_) << '\n';
  out << "selection " << selection_name(selection_) << '\n';
  out << "score_feature " << (score_feature_ ? 1 : 0) << '\n';
  out << "dropout_placement phi_hidden\n";
  phi_.write(out, "phi");
  psi_.write(out, "psi");
  standardizer_.write(out);
  out << "end\n";
}

MoeModel MoeModel::load(std::istream& in) {
  nn::expect_token(in, kFormatTag);
  int version = 0;
  if (!(in >> version) || version != kFormatVersion) throw DataError("unsupported checkpoint version");
  nn::expect_token(in, "kind");
  nn::expect_token(in, "moe");
  MoeModel m;
  std::string tok;
  nn::expect_token(in, "temperature");
  in >> tok;
  m.temperature_ = nn::parse_exact(tok);
  nn::expect_token(in, "selection");
  in >> tok;
  m.selection_ = parse_selection(tok);
  nn::expect_token(in, "score_feature");
  int sf = 0;
  in >> sf;
  m.score_feature_ = sf != 0;
  nn::expect_token(in, "dropout_placement");
  nn::expect_token(in, "phi_hidden");
  m.phi_ = nn::Mlp::read(in, "phi");
  m.psi_ = nn::Mlp::read(in, "psi");
  m.standardizer_ = nn::Standardizer::read(in);
  nn::expect_token(in, "end");
  if (m.phi_.dims().front() != m.feature_dim() || m.standardizer_.mean.size() != m.feature_dim() ||
      m.psi_.dims().front() != 2 * m.phi_.dims().back() || m.psi_.dims().back() != 1) {
    throw DataError("checkpoint: inconsistent DeepSet shapes");
  }
  return m;
}

// ---------------------------------------------------------------------------

Selection apply_weight_selection(WeightSelection mode, const std::vector<LinearExpert>& evaluated,
                                 const std::vector<OperatorSpec>& basis, std::span<const NodeId> eval_nodes,
                                 double redundancy_cos) {
  auto in_basis = [&](const LinearExpert& e) {
    return std::any_of(basis.begin(), basis.end(), [&](const OperatorSpec& s) { return s == e.spec; });
  };
  Selection sel;
  const std::size_t n = evaluated.size();
  std::vector<bool> featured(n, false);
  if (mode == WeightSelection::Standard) {
    for (std::size_t i = 0; i < n; ++i) featured[i] = in_basis(evaluated[i]);
  } else {
    const auto order = order_by_score(evaluated);
    if (is_half(mode)) {
      const std::size_t keep = (n + 1) / 2;
      for (std::size_t r = 0; r < keep; ++r) featured[order[r]] = true;
    } else {
      std::vector<Vec> kept;
      for (std::size_t idx : order) {
        Vec p = prediction_vector(evaluated[idx], eval_nodes);
        const bool redundant =
            std::any_of(kept.begin(), kept.end(), [&](const Vec& q) { return p.dot(q) > redundancy_cos; });
        if (!redundant) {
          featured[idx] = true;
          kept.push_back(std::move(p));
        }
      }
    }
    for (std::size_t i = 0; i < n; ++i) featured[i] = featured[i] || in_basis(evaluated[i]);
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!featured[i]) continue;
    sel.featured.push_back(i);
    sel.mask.push_back(mode == WeightSelection::Standard || in_basis(evaluated[i]));
  }
  if (is_deepset_mask(mode)) {
    sel.deepset_top_k = static_cast<int>(basis.size());
    std::fill(sel.mask.begin(), sel.mask.end(), true);
  }
  return sel;
}

std::vector<bool> top_k_by_mean_logit(const Mat& logits, int k) {
  const Vec mean = logits.colwise().mean().transpose();
  std::vector<std::size_t> order(static_cast<std::size_t>(mean.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return mean(static_cast<Eigen::Index>(a)) > mean(static_cast<Eigen::Index>(b));
  });
  std::vector<bool> mask(order.size(), false);
  for (std::size_t r = 0; r < order.size() && static_cast<int>(r) < k; ++r) mask[order[r]] = true;
  return mask;
}

Mat mix(const std::vector<const Mat*>& logits, const Mat& alpha) {
  Mat out = Mat::Zero(logits.front()->rows(), logits.front()->cols());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out += alpha.col(static_cast<Eigen::Index>(i)).asDiagonal() * (*logits[i]);
  }
  return out;
}

Mat predict(const MoeModel& model, const ExpertRefs& experts, const std::vector<bool>& mask) {
  std::vector<const Mat*> logits;
  for (const auto* e : experts) logits.push_back(&e->logits);
  if (experts.size() == 1) return *logits.front();
  const auto n = experts.front()->logits.rows();
  std::vector<NodeId> nodes(static_cast<std::size_t>(n));
  std::iota(nodes.begin(), nodes.end(), 0);
  const auto features = compute_features(experts, nodes, model.score_feature());
  return mix(logits, model.weights(features, mask));
}

// ---------------------------------------------------------------------------

std::vector<LinearExpert> build_training_pool(const TaskInstance& task, const DistanceTable& distances,
                                              const SearchConfig& search, int per_family) {
  const auto bounds = search_bounds(distances.mean_distance(), search.mu_scale, search.sqrt_tau_scale);
  SearchConfig cfg = search;
  SearchState state = init_search(cfg, bounds);
  const SearchContext ctx{task, distances};
  for (int i = 1; i <= per_family; ++i) {
    evaluate(state, ctx, OperatorSpec::lin_gauss(bounds.mu_max * i / per_family, search.sigma));
  }
  for (int i = 1; i <= per_family; ++i) {
    const double r = bounds.sqrt_tau_max * i / per_family;
    evaluate(state, ctx, OperatorSpec::lin_heat(r * r));
  }
  return std::move(state.experts);
}

MoeModel train_moe(const TaskInstance& task, const std::vector<LinearExpert>& pool, const MoeConfig& config,
                   std::vector<double>* loss_trace) {
  if (pool.size() < 2) throw DataError("training pool needs at least 2 experts");
  const auto eval = task.eval_nodes();
  if (eval.empty()) throw DataError("training task has no eval nodes");
  for (const auto& e : pool) {
    if (e.fit_set != FitSet::Fit) throw DataError("training experts must be fitted on the fit split");
  }

  Rng init_rng = make_stream(config.seed, "moe/init");
  Rng draw_rng = make_stream(config.seed, "moe/draws");
  Rng drop_rng = make_stream(config.seed, "moe/dropout");
  Rng stats_rng = make_stream(config.seed, "moe/standardizer");
  MoeModel model(config, init_rng);

  std::vector<Vec> preds;
  for (const auto& e : pool) preds.push_back(prediction_vector(e, eval));

  const bool standard = config.selection == WeightSelection::Standard;
  const auto draw_size = std::min<std::size_t>(
      pool.size(), static_cast<std::size_t>(standard ? config.basis_size : config.draw_size));

  // Draw -> (featured pool indices, mask). DeepSet masks are resolved later.
  auto make_draw = [&](Rng& rng) {
    std::vector<std::size_t> idx(pool.size());
    std::iota(idx.begin(), idx.end(), 0);
    if (config.mode == TrainMode::Pool) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(draw_size);
      std::sort(idx.begin(), idx.end());
    }
    std::vector<double> scores;
    std::vector<Vec> p;
    for (auto i : idx) {
      scores.push_back(pool[i].score);
      p.push_back(preds[i]);
    }
    std::vector<bool> mask(idx.size(), true);
    if (!standard) {
      if (is_half(config.selection)) {
        const auto order = select_basis(scores, p, static_cast<int>((idx.size() + 1) / 2), 0.0);
        std::vector<bool> keep(idx.size(), false);
        for (auto r : order) keep[r] = true;
        std::vector<std::size_t> idx2;
        std::vector<double> s2;
        std::vector<Vec> p2;
        for (std::size_t r = 0; r < idx.size(); ++r) {
          if (!keep[r]) continue;
          idx2.push_back(idx[r]);
          s2.push_back(scores[r]);
          p2.push_back(p[r]);
        }
        idx = std::move(idx2);
        scores = std::move(s2);
        p = std::move(p2);
        mask.assign(idx.size(), true);
      }
      if (!is_deepset_mask(config.selection) && static_cast<int>(idx.size()) > config.basis_size) {
        mask.assign(idx.size(), false);
        for (auto r : select_basis(scores, p, config.basis_size, config.diversity_penalty)) mask[r] = true;
      }
    }
    return std::pair{idx, mask};
  };

  auto batch_for = [&](const std::vector<std::size_t>& idx, std::span<const NodeId> nodes) {
    ExpertRefs refs;
    for (auto i : idx) refs.push_back(&pool[i]);
    MoeBatch b;
    b.features = compute_features(refs, nodes, config.score_feature);
    for (auto i : idx) b.logits.push_back(gather_rows(pool[i].logits, nodes));
    for (NodeId u : nodes) b.targets.push_back(task.labels()[u]);
    return b;
  };

  // Frozen feature statistics from a fixed sample of draws.
  {
    Mat all;
    const int samples = config.mode == TrainMode::Pool ? 16 : 1;
    for (int s = 0; s < samples; ++s) {
      auto [idx, mask] = make_draw(stats_rng);
      ExpertRefs refs;
      for (auto i : idx) refs.push_back(&pool[i]);
      const auto f = compute_features(refs, eval, config.score_feature);
      Mat grown(all.rows() + f.values.rows(), f.values.cols());
      if (all.rows()) grown.topRows(all.rows()) = all;
      grown.bottomRows(f.values.rows()) = f.values;
      all = std::move(grown);
    }
    std::vector<bool> logcols(static_cast<std::size_t>(model.feature_dim()), true);
    if (config.score_feature) logcols.back() = false;
    model.set_standardizer(nn::Standardizer::fit(all, logcols));
  }

  nn::Adam adam(model.parameters(), config.learning_rate);
  std::vector<NodeId> node_pool(eval.begin(), eval.end());
  for (int step = 0; step < config.batches; ++step) {
    auto [idx, mask] = make_draw(draw_rng);
    std::vector<NodeId> nodes = node_pool;
    if (config.mode == TrainMode::Stochastic && static_cast<int>(nodes.size()) > config.node_batch) {
      std::shuffle(nodes.begin(), nodes.end(), draw_rng);
      nodes.resize(static_cast<std::size_t>(config.node_batch));
      std::sort(nodes.begin(), nodes.end());
    }
    MoeBatch batch = batch_for(idx, nodes);
    batch.mask = mask;
    if (is_deepset_mask(config.selection) && static_cast<int>(idx.size()) > config.basis_size) {
      batch.mask = top_k_by_mean_logit(model.expert_logits(batch.features), config.basis_size);
    }
    auto grads = model.zero_grads();
    const double l = model.loss_and_grad(batch, grads, &drop_rng);
    adam.step(grads);
    if (loss_trace) loss_trace->push_back(l);
  }
  return model;
}

GoblinResult goblin_infer(const MoeModel& model, const TaskInstance& task, const DistanceTable& distances,
                          const SearchConfig& search) {
  auto found = run_search(task, distances, search);
  GoblinResult out;
  const auto sel = apply_weight_selection(model.selection(), found.state.experts, found.state.selected,
                                          task.eval_nodes(), 0.999);
  for (auto i : sel.featured) out.featured.push_back(refit(found.state.experts[i], task, FitSet::Labeled));
  out.mask = sel.mask;
  out.state = std::move(found.state);

  ExpertRefs refs;
  std::vector<const Mat*> logits;
  for (const auto& e : out.featured) {
    refs.push_back(&e);
    logits.push_back(&e.logits);
  }
  const auto n = static_cast<Eigen::Index>(task.num_nodes());
  if (refs.size() == 1) {
    out.alpha = Mat::Ones(n, 1);
    out.logits = out.featured.front().logits;
    return out;
  }
  std::vector<NodeId> nodes(task.num_nodes());
  std::iota(nodes.begin(), nodes.end(), 0);
  const auto features = compute_features(refs, nodes, model.score_feature());
  if (sel.deepset_top_k) out.mask = top_k_by_mean_logit(model.expert_logits(features), *sel.deepset_top_k);
  out.alpha = model.weights(features, out.mask);
  out.logits = mix(logits, out.alpha);
  return out;
}

}  // namespace goblin
