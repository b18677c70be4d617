#include "goblin/graphany.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <string>

#include "goblin/moe.hpp"

namespace goblin {

namespace {

constexpr const char* kFormatTag = "goblin-checkpoint";
constexpr int kFormatVersion = 1;

Mat gather_rows(const Mat& m, std::span<const NodeId> rows) {
  Mat out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

}  // namespace

std::string_view basis_tag_name(BasisTag t) {
  switch (t) {
    case BasisTag::Standard5:
      return "standard5";
    case BasisTag::AdjPowers4:
      return "adjpowers4";
    case BasisTag::PreciseHop4:
      return "precisehop4";
    case BasisTag::HopBins:
      return "hopbins";
    case BasisTag::HeatKernel:
      return "heatkernel";
  }
  return "";
}

BasisTag parse_basis_tag(std::string_view s) {
  for (auto t : {BasisTag::Standard5, BasisTag::AdjPowers4, BasisTag::PreciseHop4, BasisTag::HopBins,
                 BasisTag::HeatKernel}) {
    if (basis_tag_name(t) == s) return t;
  }
  throw DataError("unknown basis tag '" + std::string(s) + "'");
}

std::vector<OperatorSpec> fixed_basis_specs(BasisTag tag, const DistanceTable& distances) {
  switch (tag) {
    case BasisTag::Standard5:
      return graphany_basis_specs();
    case BasisTag::AdjPowers4:
      return {OperatorSpec::identity(), OperatorSpec::adj_power(1), OperatorSpec::adj_power(2),
              OperatorSpec::adj_power(3), OperatorSpec::adj_power(4)};
    case BasisTag::PreciseHop4:
      return {OperatorSpec::identity(), OperatorSpec::adj_power(1), OperatorSpec::precise_hop(2),
              OperatorSpec::precise_hop(3), OperatorSpec::precise_hop(4)};
    case BasisTag::HopBins:
      return hopbins_basis_specs(distances);
    case BasisTag::HeatKernel:
      return heatkernel_basis_specs(distances);
  }
  return {};
}

std::vector<LinearExpert> solve_fixed_basis(const TaskInstance& task, const DistanceTable& distances,
                                            const std::vector<OperatorSpec>& specs, FitSet fit_set,
                                            const OperatorOptions& options) {
  std::vector<LinearExpert> out;
  out.reserve(specs.size());
  for (const auto& s : specs) {
    Mat sx = apply_operator(task.graph(), distances, s, task.features(), options);
    out.push_back(solve_expert(task, s.with_provenance(Provenance::FixedBasis), std::move(sx), fit_set));
  }
  return out;
}

Mat graphany_features(const std::vector<const LinearExpert*>& experts, std::span<const NodeId> nodes) {
  const std::size_t t = experts.size();
  if (t < 2) throw DataError("GraphAny features need at least 2 experts");
  Mat f(static_cast<Eigen::Index>(nodes.size()), static_cast<Eigen::Index>(t * (t - 1)));
  for (std::size_t n = 0; n < nodes.size(); ++n) {
    Eigen::Index col = 0;
    for (std::size_t i = 0; i < t; ++i) {
      for (std::size_t j = 0; j < t; ++j) {
        if (i == j) continue;
        f(static_cast<Eigen::Index>(n), col++) =
            (experts[i]->logits.row(nodes[n]) - experts[j]->logits.row(nodes[n])).squaredNorm();
      }
    }
  }
  return f;
}

// ---------------------------------------------------------------------------

GraphAnyModel::GraphAnyModel(BasisTag tag, int num_experts, const GraphAnyConfig& config, Rng& init_rng)
    : tag_(tag), num_experts_(num_experts), temperature_(config.temperature) {
  if (num_experts < 2) throw DataError("GraphAny needs at least 2 experts");
  std::vector<int> dims{feature_dim()};
  for (int i = 0; i < config.hidden_layers; ++i) dims.push_back(config.hidden);
  dims.push_back(num_experts);
  mlp_ = nn::Mlp(dims, false, 0.0);
  mlp_.init(init_rng);
  standardizer_ = {std::vector<bool>(static_cast<std::size_t>(feature_dim()), true), Vec::Zero(feature_dim()),
                   Vec::Ones(feature_dim())};
}

Mat GraphAnyModel::weights(const Mat& raw_features) const {
  const std::vector<bool> all(static_cast<std::size_t>(num_experts_), true);
  return nn::masked_softmax(mlp_.forward(standardizer_.apply(raw_features)), all, temperature_);
}

double GraphAnyModel::loss(const Mat& raw_features, const std::vector<Mat>& expert_logits,
                           std::span<const int> targets, std::vector<Mat>* grads) const {
  const auto m = raw_features.rows();
  const auto t = static_cast<Eigen::Index>(num_experts_);
  nn::Mlp::Tape tape;
  const Mat z = mlp_.forward(standardizer_.apply(raw_features), grads ? &tape : nullptr);
  const std::vector<bool> all(static_cast<std::size_t>(t), true);
  const Mat alpha = nn::masked_softmax(z, all, temperature_);

  double total = 0.0;
  Mat g_alpha(m, t);
  for (Eigen::Index u = 0; u < m; ++u) {
    Eigen::RowVectorXd mixed = Eigen::RowVectorXd::Zero(expert_logits.front().cols());
    for (Eigen::Index i = 0; i < t; ++i) mixed += alpha(u, i) * expert_logits[static_cast<std::size_t>(i)].row(u);
    const double top = mixed.maxCoeff();
    const Eigen::RowVectorXd e = (mixed.array() - top).exp();
    const double sum = e.sum();
    const int y = targets[static_cast<std::size_t>(u)];
    total -= mixed(y) - top - std::log(sum);
    Eigen::RowVectorXd g = e / sum;
    g(y) -= 1.0;
    for (Eigen::Index i = 0; i < t; ++i) {
      g_alpha(u, i) = g.dot(expert_logits[static_cast<std::size_t>(i)].row(u)) / static_cast<double>(m);
    }
  }
  if (grads) {
    Mat gz(m, t);
    for (Eigen::Index u = 0; u < m; ++u) {
      const double inner = alpha.row(u).dot(g_alpha.row(u));
      gz.row(u) = (alpha.row(u).array() * (g_alpha.row(u).array() - inner) / temperature_).matrix();
    }
    mlp_.backward(tape, gz, *grads);
  }
  return total / static_cast<double>(m);
}

void GraphAnyModel::save(std::ostream& out) const {
  out << kFormatTag << ' ' << kFormatVersion << '\n';
  out << "kind graphany\n";
  out << "basis_tag " << basis_tag_name(tag_) << '\n';
  out << "experts " << num_experts_ << '\n';
  out << "temperature " << nn::format_exact(temperature_) << '\n';
  mlp_.write(out, "attention");
  standardizer_.write(out);
  out << "end\n";
}

GraphAnyModel GraphAnyModel::load(std::istream& in) {
  nn::expect_token(in, kFormatTag);
  int version = 0;
  if (!(in >> version) || version != kFormatVersion) throw DataError("unsupported checkpoint version");
  nn::expect_token(in, "kind");
  nn::expect_token(in, "graphany");
  GraphAnyModel m;
  std::string tok;
  nn::expect_token(in, "basis_tag");
  in >> tok;
  m.tag_ = parse_basis_tag(tok);
  nn::expect_token(in, "experts");
  if (!(in >> m.num_experts_) || m.num_experts_ < 2) throw DataError("checkpoint: bad expert count");
  nn::expect_token(in, "temperature");
  in >> tok;
  m.temperature_ = nn::parse_exact(tok);
  m.mlp_ = nn::Mlp::read(in, "attention");
  m.standardizer_ = nn::Standardizer::read(in);
  nn::expect_token(in, "end");
  if (m.mlp_.dims().front() != m.feature_dim() || m.mlp_.dims().back() != m.num_experts_ ||
      m.standardizer_.mean.size() != m.feature_dim()) {
    throw DataError("checkpoint: inconsistent GraphAny shapes");
  }
  return m;
}

// ---------------------------------------------------------------------------

GraphAnyModel train_graphany(const TaskInstance& task, const DistanceTable& distances, BasisTag tag,
                             const GraphAnyConfig& config, std::vector<double>* loss_trace) {
  const auto eval = task.eval_nodes();
  if (eval.empty()) throw DataError("training task has no eval nodes");
  const auto experts = solve_fixed_basis(task, distances, fixed_basis_specs(tag, distances), FitSet::Fit);
  std::vector<const LinearExpert*> refs;
  std::vector<Mat> logits;
  for (const auto& e : experts) {
    refs.push_back(&e);
    logits.push_back(gather_rows(e.logits, eval));
  }
  Rng init_rng = make_stream(config.seed, "graphany/init");
  GraphAnyModel model(tag, static_cast<int>(experts.size()), config, init_rng);
  const Mat features = graphany_features(refs, eval);
  model.set_standardizer(
      nn::Standardizer::fit(features, std::vector<bool>(static_cast<std::size_t>(model.feature_dim()), true)));
  std::vector<int> targets;
  for (NodeId u : eval) targets.push_back(task.labels()[u]);

  nn::Adam adam(model.parameters(), config.learning_rate);
  for (int step = 0; step < config.steps; ++step) {
    auto grads = model.zero_grads();
    const double l = model.loss(features, logits, targets, &grads);
    adam.step(grads);
    if (loss_trace) loss_trace->push_back(l);
  }
  return model;
}

GraphAnyResult infer_graphany(const GraphAnyModel& model, const TaskInstance& task, const DistanceTable& distances,
                              BasisTag target_tag) {
  if (target_tag != model.tag()) {
    throw DataError("basis tag mismatch: model trained with " + std::string(basis_tag_name(model.tag())) +
                    ", target basis is " + std::string(basis_tag_name(target_tag)));
  }
  return infer_graphany(model,
                        solve_fixed_basis(task, distances, fixed_basis_specs(target_tag, distances), FitSet::Labeled));
}

GraphAnyResult infer_graphany(const GraphAnyModel& model, std::vector<LinearExpert> experts) {
  GraphAnyResult out;
  if (experts.empty()) throw DataError("GraphAny inference needs at least one expert");
  const auto n = experts.front().logits.rows();
  if (experts.size() == 1) {
    out.alpha = Mat::Ones(n, 1);
    out.logits = experts.front().logits;
    out.experts = std::move(experts);
    return out;
  }
  if (static_cast<int>(experts.size()) != model.num_experts()) {
    throw DataError("GraphAny model expects " + std::to_string(model.num_experts()) + " experts, got " +
                    std::to_string(experts.size()));
  }
  std::vector<const LinearExpert*> refs;
  std::vector<const Mat*> logits;
  for (const auto& e : experts) {
    refs.push_back(&e);
    logits.push_back(&e.logits);
  }
  std::vector<NodeId> nodes(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < nodes.size(); ++i) nodes[i] = static_cast<NodeId>(i);
  out.alpha = model.weights(graphany_features(refs, nodes));
  out.logits = mix(logits, out.alpha);
  out.experts = std::move(experts);
  return out;
}

}  // namespace goblin
