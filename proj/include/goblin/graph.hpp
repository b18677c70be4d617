#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "goblin/types.hpp"

namespace goblin {

using Edge = std::pair<NodeId, NodeId>;
using Point2 = std::array<double, 2>;

// Unweighted, undirected simple graph in CSR form. Immutable after
// construction; the normalized adjacency and symmetric Laplacian are built
// once with the topology.
class Graph {
 public:
  Graph() = default;

  std::size_t num_nodes() const { return offsets_.empty() ? 0 : offsets_.size() - 1; }
  std::size_t num_edges() const { return edges_.size(); }

  std::span<const NodeId> neighbors(NodeId u) const {
    return {targets_.data() + offsets_[u], targets_.data() + offsets_[u + 1]};
  }
  std::size_t degree(NodeId u) const { return offsets_[u + 1] - offsets_[u]; }

  // Undirected edges with first < second, sorted.
  const std::vector<Edge>& edges() const { return edges_; }

  // D^{-1} A_raw; isolated nodes get a zero row.
  const SpMat& normalized_adjacency() const { return adj_norm_; }
  // I - D^{-1/2} A_raw D^{-1/2}; isolated nodes keep the identity diagonal entry.
  const SpMat& sym_laplacian() const { return laplacian_; }

  // Node coordinates when the graph came from a geometric generator.
  const std::vector<Point2>& positions() const { return positions_; }

  // Stable hash of (num_nodes, edges); keys on-disk distance caches.
  std::uint64_t content_hash() const;

  // Connected component id per node, numbered in order of first appearance.
  std::vector<std::uint32_t> components() const;

 private:
  friend Graph build_graph(std::span<const Edge>, std::size_t);
  friend Graph random_geometric_graph(std::size_t, double, std::uint64_t);

  std::vector<std::size_t> offsets_;
  std::vector<NodeId> targets_;
  std::vector<Edge> edges_;
  std::vector<Point2> positions_;
  SpMat adj_norm_;
  SpMat laplacian_;
};

// Deduplicates, drops self-loops and symmetrizes. Throws DataError on
// num_nodes == 0 or an out-of-range index.
Graph build_graph(std::span<const Edge> edge_list, std::size_t num_nodes);

// n points uniform in the unit square, edge iff Euclidean distance <= radius.
Graph random_geometric_graph(std::size_t n, double radius, std::uint64_t seed);

// G(n, p).
Graph erdos_renyi_graph(std::size_t n, double p, std::uint64_t seed);

// Edge-list text: one "u v" pair per line, '#' comments. Node count is
// num_nodes if given, else a "# nodes N" header, else max index + 1.
Graph read_edge_list(std::istream& in, std::optional<std::size_t> num_nodes = std::nullopt);
Graph read_edge_list(const std::filesystem::path& path, std::optional<std::size_t> num_nodes = std::nullopt);
void write_edge_list(std::ostream& out, const Graph& g);

// Hop distances from every source, optionally truncated at a radius. Pairs
// that are disconnected or further than the radius have no entry; lookups
// return nullopt for them.
class DistanceTable {
 public:
  static constexpr std::size_t kMaxHops = 65534;

  DistanceTable() = default;

  std::size_t num_nodes() const { return offsets_.empty() ? 0 : offsets_.size() - 1; }
  std::optional<unsigned> radius() const { return radius_; }
  bool truncated() const { return radius_.has_value(); }

  std::optional<unsigned> distance(NodeId u, NodeId v) const;

  // Targets reachable from u within the radius (including u itself),
  // sorted by target id, with matching hop counts.
  std::span<const NodeId> row_targets(NodeId u) const {
    return {targets_.data() + offsets_[u], targets_.data() + offsets_[u + 1]};
  }
  std::span<const std::uint16_t> row_distances(NodeId u) const {
    return {hops_.data() + offsets_[u], hops_.data() + offsets_[u + 1]};
  }

  // Whether every pair at distance <= r is stored.
  bool covers(double r) const { return !radius_ || r <= static_cast<double>(*radius_); }

  // Mean over ordered pairs u != v with a stored distance. 0 with no such pair.
  double mean_distance() const { return mean_; }
  std::size_t num_finite_pairs() const { return finite_pairs_; }
  // Largest stored distance.
  unsigned max_distance() const { return max_; }
  // Only meaningful for an untruncated table.
  std::optional<unsigned> diameter() const;
  // Lower median over unordered finite pairs u < v.
  std::optional<unsigned> median_distance() const;
  // Number of unordered pairs u < v at each hop distance (index 0 unused).
  const std::vector<std::size_t>& histogram() const { return histogram_; }

  void save(std::ostream& out) const;
  static DistanceTable load(std::istream& in);

 private:
  friend DistanceTable apsd(const Graph&, std::optional<unsigned>);
  void finalize_stats();

  std::optional<unsigned> radius_;
  std::vector<std::size_t> offsets_;
  std::vector<NodeId> targets_;
  std::vector<std::uint16_t> hops_;
  std::vector<std::size_t> histogram_;
  double mean_ = 0.0;
  std::size_t finite_pairs_ = 0;
  unsigned max_ = 0;
};

// BFS from every node, truncated at radius when given (radius >= 1).
DistanceTable apsd(const Graph& g, std::optional<unsigned> radius = std::nullopt);

// apsd with an on-disk cache under cache_dir keyed by graph content hash and
// radius. Falls back to plain apsd when cache_dir is empty.
DistanceTable apsd_cached(const Graph& g, std::optional<unsigned> radius, const std::filesystem::path& cache_dir);

// Mean hop distance estimated by full BFS from `samples` evenly strided
// sources; exact when samples >= num_nodes. Used to size truncation radii on
// graphs too large for a full table.
double sampled_mean_distance(const Graph& g, std::size_t samples);

}  // namespace goblin
