#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "goblin/expert.hpp"
#include "goblin/graph.hpp"

namespace goblin {

// Node label = sign of the Gaussian-weighted feature sum around hop k:
// y_u = sign(sum_v exp(-(d(u,v) - k)^2 / (2 s^2)) x_v), which with s = 0 is
// the plain sum over the k-hop shell. Zero sums map to class 1.
struct KHopSignTask {
  std::shared_ptr<const Graph> graph;
  std::shared_ptr<const DistanceTable> distances;
  unsigned k = 0;
  double sigma_noise = 0.0;
  std::uint64_t seed = 0;
  Vec features;                 // one standard normal scalar per node
  std::vector<int> labels;      // 0 for -1, 1 for +1
  std::vector<Role> roles;      // train half split into Fit/Eval, the rest Test
  std::vector<bool> empty_shell;  // hard case: no node at distance exactly k
  std::size_t empty_shell_count = 0;

  TaskInstance instance() const;
};

// Requires a pair at distance > k (the diameter when the table is full) and,
// for s > 0, a table covering k + 3 s. Features, the train/test split and
// the Fit/Eval split use separate named streams of `seed`.
KHopSignTask generate_khopsign(std::shared_ptr<const Graph> graph, std::shared_ptr<const DistanceTable> distances,
                               unsigned k, double sigma_noise, std::uint64_t seed);

// Dense label-generating weights for one node row: exp(-(d - k)^2 / 2s^2),
// or 1[d = k] when s = 0.
double khopsign_weight(unsigned distance, unsigned k, double sigma_noise);

// Eq.-1 range of the label-generating weights, averaged over nodes whose
// weight row is nonzero.
double task_range_estimate(const KHopSignTask& task);

}  // namespace goblin
