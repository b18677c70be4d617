#include "goblin/range.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

#include <Eigen/SVD>

#include "goblin/rng.hpp"

namespace goblin {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kMaxCondition = 1e12;
// Central differences of an exactly constant output leave roundoff of order
// 1e-16 / eps; entries under this relative floor are treated as zero.
constexpr double kNoiseFloor = 1e-8;

void finish(NodeRanges& r) {
  double sum = 0.0;
  r.defined = 0;
  for (Eigen::Index u = 0; u < r.node_range.size(); ++u) {
    if (std::isnan(r.node_range(u))) continue;
    sum += r.node_range(u);
    ++r.defined;
  }
  r.graph_range = r.defined ? sum / static_cast<double>(r.defined) : kNaN;
}

// Row u of the sensitivity as distance-weighted mean; absent pairs skipped.
double row_range(const DistanceTable& distances, NodeId u, const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  const auto targets = distances.row_targets(u);
  const auto hops = distances.row_distances(u);
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double w = std::abs(row(targets[i]));
    num += w * hops[i];
    den += w;
  }
  return den > 0.0 ? num / den : kNaN;
}

Mat full_solve(const Mat& sx, std::span<const NodeId> labeled, const Mat& y) {
  Mat rows(static_cast<Eigen::Index>(labeled.size()), sx.cols());
  for (std::size_t i = 0; i < labeled.size(); ++i) rows.row(static_cast<Eigen::Index>(i)) = sx.row(labeled[i]);
  return sx * (pseudo_inverse(rows) * y);
}

}  // namespace

NodeRanges operator_range(const OperatorMatrix& op, const DistanceTable& distances, const Graph* graph) {
  const auto n = op.size();
  if (static_cast<std::size_t>(n) != distances.num_nodes()) throw DataError("operator and distance table sizes differ");
  std::vector<std::uint32_t> comp;
  if (graph && distances.truncated()) comp = graph->components();
  NodeRanges r;
  r.node_range = Vec::Constant(n, kNaN);
  for (Eigen::Index u = 0; u < n; ++u) {
    double num = 0.0;
    double den = 0.0;
    const auto uid = static_cast<NodeId>(u);
    op.for_each_in_row(u, [&](NodeId v, double value) {
      if (value == 0.0) return;
      const auto d = distances.distance(uid, v);
      if (!d) {
        const bool cross = !distances.truncated() || (!comp.empty() && comp[uid] != comp[v]);
        if (!cross) {
          throw DataError("operator entry (" + std::to_string(uid) + "," + std::to_string(v) +
                          ") lies beyond the distance radius");
        }
        return;
      }
      num += std::abs(value) * *d;
      den += std::abs(value);
    });
    if (den > 0.0) r.node_range(u) = num / den;
  }
  finish(r);
  return r;
}

NodeRanges sensitivity_range(const Mat& sensitivity, const DistanceTable& distances, std::span<const NodeId> rows) {
  NodeRanges r;
  if (rows.empty()) {
    r.node_range.resize(sensitivity.rows());
    for (Eigen::Index u = 0; u < sensitivity.rows(); ++u) {
      r.node_range(u) = row_range(distances, static_cast<NodeId>(u), sensitivity.row(u));
    }
  } else {
    r.node_range.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      r.node_range(static_cast<Eigen::Index>(i)) = row_range(distances, rows[i], sensitivity.row(rows[i]));
    }
  }
  finish(r);
  return r;
}

RangeReport model_range(const Graph& g, const DistanceTable& distances, const std::vector<LinearExpert>& experts,
                        const Mat& alpha, const OperatorOptions& options) {
  if (alpha.cols() != static_cast<Eigen::Index>(experts.size())) throw DataError("alpha columns != expert count");
  RangeReport report;
  const Vec mean_alpha = alpha.colwise().mean().transpose();
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < experts.size(); ++i) {
    if (!std::isnan(experts[i].score) && experts[i].score > best_score) {
      best_score = experts[i].score;
      report.best = i;
    }
  }
  for (std::size_t i = 0; i < experts.size(); ++i) {
    OperatorRangeRow row;
    row.spec = experts[i].spec.to_string();
    row.mean_alpha = mean_alpha(static_cast<Eigen::Index>(i));
    row.score = experts[i].score;
    row.graph_range = kNaN;
    if (row.mean_alpha != 0.0 || report.best == i) {
      const auto op = build_operator(g, distances, experts[i].spec, options);
      row.graph_range = operator_range(op, distances, &g).graph_range;
      if (row.mean_alpha != 0.0) report.aggregate += row.mean_alpha * row.graph_range;
    }
    report.operators.push_back(std::move(row));
  }
  return report;
}

void write_range_csv(std::ostream& out, const RangeReport& report) {
  const auto prec = out.precision(17);
  out << "operator_spec,rho_G,mean_alpha,score\n";
  for (const auto& r : report.operators) {
    out << '"' << r.spec << "\"," << r.graph_range << ',' << r.mean_alpha << ',' << r.score << '\n';
  }
  out << "aggregate," << report.aggregate << ",1,\n";
  if (report.best) {
    const auto& b = report.operators[*report.best];
    out << "best_operator," << b.graph_range << ',' << b.mean_alpha << ',' << b.score << '\n';
  }
  if (report.blackbox) out << "blackbox," << *report.blackbox << ",,\n";
  out.precision(prec);
}

std::vector<NodeId> range_sample_nodes(std::size_t num_nodes, std::size_t count, std::uint64_t seed) {
  std::vector<NodeId> all(num_nodes);
  std::iota(all.begin(), all.end(), 0);
  if (num_nodes <= count) return all;
  Rng rng = make_stream(seed, "range/sample");
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(count);
  std::sort(all.begin(), all.end());
  return all;
}

double blackbox_range(const TaskInstance& task, const OperatorMatrix& op, const DistanceTable& distances,
                      std::span<const NodeId> sample_nodes, double eps) {
  const auto n = static_cast<Eigen::Index>(task.num_nodes());
  if (n > 512) throw DataError("black-box range is limited to N <= 512");
  const auto labeled = task.labeled_nodes();
  if (labeled.empty()) throw DataError("black-box range needs labeled nodes");
  const Mat s = op.dense();
  const Mat& x = task.features();
  const Mat y = task.one_hot(labeled);
  const Mat sx = s * x;

  Mat sx_l(static_cast<Eigen::Index>(labeled.size()), sx.cols());
  for (std::size_t i = 0; i < labeled.size(); ++i) sx_l.row(static_cast<Eigen::Index>(i)) = sx.row(labeled[i]);
  Eigen::JacobiSVD<Mat> svd(sx_l);
  const Vec sv = svd.singularValues();
  if (sv.size() == 0 || sv(0) == 0.0) throw NumericalError("black-box range: S X vanishes on the labeled rows");
  if (sv(sv.size() - 1) == 0.0 || sv(0) / sv(sv.size() - 1) > kMaxCondition) {
    throw NumericalError("black-box range: labeled system is ill-conditioned");
  }

  const double floor = kNoiseFloor * std::max(1.0, full_solve(sx, labeled, y).cwiseAbs().maxCoeff());
  Mat sensitivity = Mat::Zero(n, n);
  for (Eigen::Index v = 0; v < n; ++v) {
    for (Eigen::Index d = 0; d < x.cols(); ++d) {
      Mat plus = sx;
      Mat minus = sx;
      plus.col(d) += eps * s.col(v);
      minus.col(d) -= eps * s.col(v);
      const Mat diff = (full_solve(plus, labeled, y) - full_solve(minus, labeled, y)) / (2.0 * eps);
      sensitivity.col(v) += (diff.array().abs() < floor).select(0.0, diff.cwiseAbs()).rowwise().sum();
    }
  }
  return sensitivity_range(sensitivity, distances, sample_nodes).graph_range;
}

Vec fixed_weight_range(const TaskInstance& task, const OperatorMatrix& op, const Mat& weights,
                       const DistanceTable& distances, std::span<const NodeId> sample_nodes, double eps) {
  const auto n = static_cast<Eigen::Index>(task.num_nodes());
  const Mat s = op.dense();
  const Mat& x = task.features();
  Mat sensitivity = Mat::Zero(n, n);
  for (Eigen::Index v = 0; v < n; ++v) {
    for (Eigen::Index d = 0; d < x.cols(); ++d) {
      Mat plus = x;
      Mat minus = x;
      plus(v, d) += eps;
      minus(v, d) -= eps;
      const Mat diff = (s * plus * weights - s * minus * weights) / (2.0 * eps);
      sensitivity.col(v) += diff.cwiseAbs().rowwise().sum();
    }
  }
  return sensitivity_range(sensitivity, distances, sample_nodes).node_range;
}

}  // namespace goblin
