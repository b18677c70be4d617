#include "goblin/graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <queue>
#include <sstream>
#include <string>

#include "goblin/rng.hpp"

namespace goblin {

namespace {

void build_caches(std::size_t n, const std::vector<std::size_t>& offsets, const std::vector<NodeId>& targets,
                  SpMat& adj_norm, SpMat& laplacian) {
  std::vector<Eigen::Triplet<double>> a_trip;
  std::vector<Eigen::Triplet<double>> l_trip;
  a_trip.reserve(targets.size());
  l_trip.reserve(targets.size() + n);
  for (std::size_t u = 0; u < n; ++u) {
    const auto deg = offsets[u + 1] - offsets[u];
    l_trip.emplace_back(u, u, 1.0);
    if (deg == 0) continue;
    const double inv = 1.0 / static_cast<double>(deg);
    for (std::size_t e = offsets[u]; e < offsets[u + 1]; ++e) {
      const NodeId v = targets[e];
      const auto deg_v = offsets[v + 1] - offsets[v];
      a_trip.emplace_back(u, v, inv);
      l_trip.emplace_back(u, v, -1.0 / std::sqrt(static_cast<double>(deg) * static_cast<double>(deg_v)));
    }
  }
  adj_norm.resize(n, n);
  adj_norm.setFromTriplets(a_trip.begin(), a_trip.end());
  laplacian.resize(n, n);
  laplacian.setFromTriplets(l_trip.begin(), l_trip.end());
}

}  // namespace

Graph build_graph(std::span<const Edge> edge_list, std::size_t num_nodes) {
  if (num_nodes == 0) throw DataError("graph must have at least one node");
  if (num_nodes > std::numeric_limits<NodeId>::max()) throw DataError("too many nodes");

  std::vector<Edge> edges;
  edges.reserve(edge_list.size());
  for (auto [u, v] : edge_list) {
    if (u >= num_nodes || v >= num_nodes) {
      throw DataError("edge (" + std::to_string(u) + ", " + std::to_string(v) + ") out of range for " +
                      std::to_string(num_nodes) + " nodes");
    }
    if (u == v) continue;
    edges.emplace_back(std::min(u, v), std::max(u, v));
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());

  Graph g;
  g.offsets_.assign(num_nodes + 1, 0);
  for (auto [u, v] : edges) {
    ++g.offsets_[u + 1];
    ++g.offsets_[v + 1];
  }
  std::partial_sum(g.offsets_.begin(), g.offsets_.end(), g.offsets_.begin());
  g.targets_.resize(2 * edges.size());
  std::vector<std::size_t> cursor(g.offsets_.begin(), g.offsets_.end() - 1);
  for (auto [u, v] : edges) {
    g.targets_[cursor[u]++] = v;
    g.targets_[cursor[v]++] = u;
  }
  for (std::size_t u = 0; u < num_nodes; ++u) {
    std::sort(g.targets_.begin() + static_cast<std::ptrdiff_t>(g.offsets_[u]),
              g.targets_.begin() + static_cast<std::ptrdiff_t>(g.offsets_[u + 1]));
  }
  g.edges_ = std::move(edges);
  build_caches(num_nodes, g.offsets_, g.targets_, g.adj_norm_, g.laplacian_);
  return g;
}

std::uint64_t Graph::content_hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::uint64_t x) {
    for (int i = 0; i < 8; ++i) {
      h ^= (x >> (8 * i)) & 0xffU;
      h *= 1099511628211ULL;
    }
  };
  mix(num_nodes());
  for (auto [u, v] : edges_) {
    mix(u);
    mix(v);
  }
  return h;
}

std::vector<std::uint32_t> Graph::components() const {
  const std::size_t n = num_nodes();
  constexpr auto kUnset = std::numeric_limits<std::uint32_t>::max();
  std::vector<std::uint32_t> comp(n, kUnset);
  std::uint32_t next = 0;
  std::vector<NodeId> stack;
  for (std::size_t s = 0; s < n; ++s) {
    if (comp[s] != kUnset) continue;
    comp[s] = next;
    stack.push_back(static_cast<NodeId>(s));
    while (!stack.empty()) {
      const NodeId u = stack.back();
      stack.pop_back();
      for (NodeId v : neighbors(u)) {
        if (comp[v] == kUnset) {
          comp[v] = next;
          stack.push_back(v);
        }
      }
    }
    ++next;
  }
  return comp;
}

Graph random_geometric_graph(std::size_t n, double radius, std::uint64_t seed) {
  if (n == 0) throw DataError("random geometric graph needs n >= 1");
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Point2> pts(n);
  for (auto& p : pts) {
    p[0] = unit(rng);
    p[1] = unit(rng);
  }

  std::vector<Edge> edges;
  if (radius > 0.0) {
    // Bucket points into cells of side >= radius; candidates live in the 3x3
    // neighbourhood of a point's cell.
    const std::size_t cells = std::max<std::size_t>(1, std::min<std::size_t>(static_cast<std::size_t>(1.0 / radius), 1024));
    auto cell_of = [cells](double x) {
      return std::min(cells - 1, static_cast<std::size_t>(x * static_cast<double>(cells)));
    };
    std::vector<std::vector<NodeId>> grid(cells * cells);
    for (std::size_t i = 0; i < n; ++i) grid[cell_of(pts[i][1]) * cells + cell_of(pts[i][0])].push_back(static_cast<NodeId>(i));
    const double r2 = radius * radius;
    for (std::size_t i = 0; i < n; ++i) {
      const auto cx = static_cast<std::ptrdiff_t>(cell_of(pts[i][0]));
      const auto cy = static_cast<std::ptrdiff_t>(cell_of(pts[i][1]));
      for (std::ptrdiff_t dy = -1; dy <= 1; ++dy) {
        for (std::ptrdiff_t dx = -1; dx <= 1; ++dx) {
          const auto x = cx + dx;
          const auto y = cy + dy;
          if (x < 0 || y < 0 || x >= static_cast<std::ptrdiff_t>(cells) || y >= static_cast<std::ptrdiff_t>(cells)) continue;
          for (NodeId j : grid[static_cast<std::size_t>(y) * cells + static_cast<std::size_t>(x)]) {
            if (j <= i) continue;
            const double ddx = pts[i][0] - pts[j][0];
            const double ddy = pts[i][1] - pts[j][1];
            if (ddx * ddx + ddy * ddy <= r2) edges.emplace_back(static_cast<NodeId>(i), j);
          }
        }
      }
    }
  }
  Graph g = build_graph(edges, n);
  g.positions_ = std::move(pts);
  return g;
}

Graph erdos_renyi_graph(std::size_t n, double p, std::uint64_t seed) {
  Rng rng(seed);
  std::bernoulli_distribution coin(std::clamp(p, 0.0, 1.0));
  std::vector<Edge> edges;
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t v = u + 1; v < n; ++v) {
      if (coin(rng)) edges.emplace_back(static_cast<NodeId>(u), static_cast<NodeId>(v));
    }
  }
  return build_graph(edges, n);
}

Graph read_edge_list(std::istream& in, std::optional<std::size_t> num_nodes) {
  std::vector<Edge> edges;
  std::size_t max_index = 0;
  bool any = false;
  std::optional<std::size_t> header_nodes;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!num_nodes && line.rfind("# nodes ", 0) == 0) {
      std::istringstream hs(line.substr(8));
      std::size_t declared = 0;
      if (hs >> declared) header_nodes = declared;
      continue;
    }
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    long long u = 0;
    long long v = 0;
    if (!(ls >> u)) continue;  // blank or comment-only
    if (!(ls >> v) || u < 0 || v < 0) {
      throw DataError("edge list line " + std::to_string(lineno) + ": expected two non-negative integers");
    }
    std::string rest;
    if (ls >> rest) throw DataError("edge list line " + std::to_string(lineno) + ": trailing tokens");
    edges.emplace_back(static_cast<NodeId>(u), static_cast<NodeId>(v));
    max_index = std::max<std::size_t>(max_index, static_cast<std::size_t>(std::max(u, v)));
    any = true;
  }
  const std::size_t n = num_nodes.value_or(header_nodes.value_or(any ? max_index + 1 : 0));
  return build_graph(edges, n);
}

Graph read_edge_list(const std::filesystem::path& path, std::optional<std::size_t> num_nodes) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open edge list " + path.string());
  return read_edge_list(in, num_nodes);
}

void write_edge_list(std::ostream& out, const Graph& g) {
  out << "# nodes " << g.num_nodes() << "\n";
  for (auto [u, v] : g.edges()) out << u << ' ' << v << '\n';
}

// ---------------------------------------------------------------------------

std::optional<unsigned> DistanceTable::distance(NodeId u, NodeId v) const {
  auto t = row_targets(u);
  auto it = std::lower_bound(t.begin(), t.end(), v);
  if (it == t.end() || *it != v) return std::nullopt;
  return row_distances(u)[static_cast<std::size_t>(it - t.begin())];
}

std::optional<unsigned> DistanceTable::diameter() const {
  if (radius_) return std::nullopt;
  return max_;
}

std::optional<unsigned> DistanceTable::median_distance() const {
  std::size_t total = 0;
  for (std::size_t h = 1; h < histogram_.size(); ++h) total += histogram_[h];
  if (total == 0) return std::nullopt;
  const std::size_t target = (total - 1) / 2;
  std::size_t seen = 0;
  for (std::size_t h = 1; h < histogram_.size(); ++h) {
    seen += histogram_[h];
    if (seen > target) return static_cast<unsigned>(h);
  }
  return std::nullopt;
}

void DistanceTable::finalize_stats() {
  const std::size_t n = num_nodes();
  histogram_.assign(1, 0);
  double sum = 0.0;
  finite_pairs_ = 0;
  max_ = 0;
  for (std::size_t u = 0; u < n; ++u) {
    auto t = row_targets(static_cast<NodeId>(u));
    auto d = row_distances(static_cast<NodeId>(u));
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (t[i] == u) continue;
      sum += d[i];
      ++finite_pairs_;
      max_ = std::max<unsigned>(max_, d[i]);
      if (t[i] > u) {
        if (histogram_.size() <= d[i]) histogram_.resize(d[i] + 1, 0);
        ++histogram_[d[i]];
      }
    }
  }
  mean_ = finite_pairs_ ? sum / static_cast<double>(finite_pairs_) : 0.0;
}

DistanceTable apsd(const Graph& g, std::optional<unsigned> radius) {
  if (radius && *radius < 1) throw DataError("distance radius must be >= 1");
  const std::size_t n = g.num_nodes();
  DistanceTable table;
  table.radius_ = radius;
  table.offsets_.assign(n + 1, 0);

  constexpr auto kUnseen = std::numeric_limits<std::uint32_t>::max();
  std::vector<std::uint32_t> dist(n, kUnseen);
  std::vector<NodeId> order;
  order.reserve(n);
  std::vector<std::pair<NodeId, std::uint16_t>> row;
  for (std::size_t s = 0; s < n; ++s) {
    order.clear();
    order.push_back(static_cast<NodeId>(s));
    dist[s] = 0;
    for (std::size_t head = 0; head < order.size(); ++head) {
      const NodeId u = order[head];
      if (radius && dist[u] >= *radius) continue;
      for (NodeId v : g.neighbors(u)) {
        if (dist[v] != kUnseen) continue;
        dist[v] = dist[u] + 1;
        if (dist[v] > DistanceTable::kMaxHops) throw DataError("hop distance exceeds 16-bit storage");
        order.push_back(v);
      }
    }
    row.clear();
    for (NodeId v : order) row.emplace_back(v, static_cast<std::uint16_t>(dist[v]));
    std::sort(row.begin(), row.end());
    for (auto [v, d] : row) {
      table.targets_.push_back(v);
      table.hops_.push_back(d);
      dist[v] = kUnseen;
    }
    table.offsets_[s + 1] = table.targets_.size();
  }
  table.finalize_stats();
  return table;
}

void DistanceTable::save(std::ostream& out) const {
  auto put = [&out](const auto& x) { out.write(reinterpret_cast<const char*>(&x), sizeof(x)); };
  const std::uint64_t magic = 0x31445350414e4c47ULL;  // "GLNAPSD1"
  put(magic);
  const std::uint64_t r = radius_ ? *radius_ : 0;
  put(r);
  const std::uint64_t n = num_nodes();
  const std::uint64_t m = targets_.size();
  put(n);
  put(m);
  for (auto o : offsets_) put(static_cast<std::uint64_t>(o));
  out.write(reinterpret_cast<const char*>(targets_.data()), static_cast<std::streamsize>(m * sizeof(NodeId)));
  out.write(reinterpret_cast<const char*>(hops_.data()), static_cast<std::streamsize>(m * sizeof(std::uint16_t)));
}

DistanceTable DistanceTable::load(std::istream& in) {
  auto get = [&in](auto& x) {
    in.read(reinterpret_cast<char*>(&x), sizeof(x));
    if (!in) throw DataError("truncated distance table");
  };
  std::uint64_t magic = 0;
  std::uint64_t r = 0;
  std::uint64_t n = 0;
  std::uint64_t m = 0;
  get(magic);
  if (magic != 0x31445350414e4c47ULL) throw DataError("not a distance table file");
  get(r);
  get(n);
  get(m);
  DistanceTable t;
  if (r) t.radius_ = static_cast<unsigned>(r);
  t.offsets_.resize(n + 1);
  for (auto& o : t.offsets_) {
    std::uint64_t x = 0;
    get(x);
    o = x;
  }
  t.targets_.resize(m);
  t.hops_.resize(m);
  in.read(reinterpret_cast<char*>(t.targets_.data()), static_cast<std::streamsize>(m * sizeof(NodeId)));
  in.read(reinterpret_cast<char*>(t.hops_.data()), static_cast<std::streamsize>(m * sizeof(std::uint16_t)));
  if (!in) throw DataError("truncated distance table");
  t.finalize_stats();
  return t;
}

DistanceTable apsd_cached(const Graph& g, std::optional<unsigned> radius, const std::filesystem::path& cache_dir) {
  if (cache_dir.empty()) return apsd(g, radius);
  std::ostringstream name;
  name << "apsd_" << std::hex << g.content_hash() << std::dec << "_r" << (radius ? *radius : 0) << ".bin";
  const auto path = cache_dir / name.str();
  if (std::ifstream in{path, std::ios::binary}) {
    auto t = DistanceTable::load(in);
    if (t.num_nodes() == g.num_nodes()) return t;
  }
  auto t = apsd(g, radius);
  std::filesystem::create_directories(cache_dir);
  std::ofstream out(path, std::ios::binary);
  if (out) t.save(out);
  return t;
}

double sampled_mean_distance(const Graph& g, std::size_t samples) {
  const std::size_t n = g.num_nodes();
  if (n == 0 || samples == 0) return 0.0;
  const std::size_t stride = std::max<std::size_t>(1, n / std::min(samples, n));
  constexpr auto kUnseen = std::numeric_limits<std::uint32_t>::max();
  std::vector<std::uint32_t> dist(n, kUnseen);
  std::vector<NodeId> order;
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t s = 0; s < n; s += stride) {
    order.assign(1, static_cast<NodeId>(s));
    dist[s] = 0;
    for (std::size_t head = 0; head < order.size(); ++head) {
      const NodeId u = order[head];
      for (NodeId v : g.neighbors(u)) {
        if (dist[v] != kUnseen) continue;
        dist[v] = dist[u] + 1;
        order.push_back(v);
      }
    }
    for (NodeId v : order) {
      if (v != s) {
        sum += dist[v];
        ++count;
      }
      dist[v] = kUnseen;
    }
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

}  // namespace goblin
