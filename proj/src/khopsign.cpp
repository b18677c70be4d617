#include "goblin/khopsign.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "goblin/rng.hpp"

namespace goblin {

double khopsign_weight(unsigned distance, unsigned k, double sigma_noise) {
  if (sigma_noise == 0.0) return distance == k ? 1.0 : 0.0;
  const double z = (static_cast<double>(distance) - static_cast<double>(k)) / sigma_noise;
  return std::exp(-0.5 * z * z);
}

TaskInstance KHopSignTask::instance() const {
  Mat x(features.size(), 1);
  x.col(0) = features;
  return TaskInstance(graph, std::move(x), labels, 2, roles);
}

KHopSignTask generate_khopsign(std::shared_ptr<const Graph> graph, std::shared_ptr<const DistanceTable> distances,
                               unsigned k, double sigma_noise, std::uint64_t seed) {
  if (!graph || !distances) throw DataError("kHopSign needs a graph and its distance table");
  if (!(sigma_noise >= 0.0)) throw DataError("sigma_noise must be >= 0");
  const std::size_t n = graph->num_nodes();
  if (distances->num_nodes() != n) throw DataError("distance table does not match the graph");
  const unsigned reach = distances->truncated() ? distances->max_distance() : distances->diameter().value_or(0);
  if (reach <= k) {
    throw DataError("graph diameter " + std::to_string(reach) + " must exceed k = " + std::to_string(k));
  }
  if (sigma_noise > 0.0 && !distances->covers(k + 3.0 * sigma_noise)) {
    throw DataError("distance table radius does not cover k + 3 sigma_noise");
  }

  KHopSignTask t;
  t.graph = std::move(graph);
  t.distances = std::move(distances);
  t.k = k;
  t.sigma_noise = sigma_noise;
  t.seed = seed;

  Rng feat_rng = make_stream(seed, "task/features");
  std::normal_distribution<double> normal(0.0, 1.0);
  t.features.resize(static_cast<Eigen::Index>(n));
  for (std::size_t u = 0; u < n; ++u) t.features(static_cast<Eigen::Index>(u)) = normal(feat_rng);

  t.labels.assign(n, 1);
  t.empty_shell.assign(n, false);
  for (std::size_t u = 0; u < n; ++u) {
    const auto targets = t.distances->row_targets(static_cast<NodeId>(u));
    const auto hops = t.distances->row_distances(static_cast<NodeId>(u));
    double sum = 0.0;
    bool shell = false;
    for (std::size_t i = 0; i < targets.size(); ++i) {
      if (hops[i] == k) shell = true;
      const double w = khopsign_weight(hops[i], k, sigma_noise);
      if (w != 0.0) sum += w * t.features(targets[i]);
    }
    t.labels[u] = sum < 0.0 ? 0 : 1;
    if (!shell) {
      t.empty_shell[u] = true;
      ++t.empty_shell_count;
    }
  }

  std::vector<NodeId> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng = make_stream(seed, "task/train-test");
  std::shuffle(order.begin(), order.end(), split_rng);
  const std::size_t train = n / 2;
  t.roles.assign(n, Role::Test);
  std::vector<NodeId> train_nodes(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(train));
  std::sort(train_nodes.begin(), train_nodes.end());
  assign_fit_eval(t.roles, train_nodes, seed);
  return t;
}

double task_range_estimate(const KHopSignTask& task) {
  const std::size_t n = task.graph->num_nodes();
  double total = 0.0;
  std::size_t defined = 0;
  for (std::size_t u = 0; u < n; ++u) {
    const auto hops = task.distances->row_distances(static_cast<NodeId>(u));
    double num = 0.0;
    double den = 0.0;
    for (auto h : hops) {
      const double w = khopsign_weight(h, task.k, task.sigma_noise);
      num += w * h;
      den += w;
    }
    if (den > 0.0) {
      total += num / den;
      ++defined;
    }
  }
  if (defined == 0) throw DataError("task range undefined: every weight row is zero");
  return total / static_cast<double>(defined);
}

}  // namespace goblin
