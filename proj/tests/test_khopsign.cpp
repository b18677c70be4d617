#include <gtest/gtest.h>

#include "goblin/experiment.hpp"
#include "goblin/khopsign.hpp"
#include "oracles.hpp"

using namespace goblin;

namespace {

struct Fixture {
  std::shared_ptr<const Graph> graph;
  std::shared_ptr<const DistanceTable> distances;
};

Fixture fixture(Graph g, std::optional<unsigned> radius = std::nullopt) {
  auto gp = std::make_shared<const Graph>(std::move(g));
  return {gp, std::make_shared<const DistanceTable>(apsd(*gp, radius))};
}

// Labels recomputed from scratch with Floyd-Warshall distances.
std::vector<int> dense_labels(const Graph& g, const Vec& x, unsigned k, double sigma) {
  const auto fw = oracle::floyd_warshall(g);
  const auto n = g.num_nodes();
  std::vector<int> out(n);
  for (std::size_t u = 0; u < n; ++u) {
    double sum = 0.0;
    for (std::size_t v = 0; v < n; ++v) {
      if (fw[u][v] == oracle::kInf) continue;
      const double w = sigma == 0.0 ? (fw[u][v] == static_cast<int>(k) ? 1.0 : 0.0)
                                    : std::exp(-std::pow(fw[u][v] - static_cast<double>(k), 2) / (2 * sigma * sigma));
      sum += w * x(static_cast<Eigen::Index>(v));
    }
    out[u] = sum < 0.0 ? 0 : 1;
  }
  return out;
}

}  // namespace

TEST(KHopSign, PathByHand) {
  const auto f = fixture(oracle::path_graph(3));
  auto task = generate_khopsign(f.graph, f.distances, 1, 0.0, 0);
  // Labels are a function of the drawn features; re-derive with (1, -5, 1).
  const Vec x = Eigen::Vector3d(1.0, -5.0, 1.0);
  EXPECT_EQ(dense_labels(*f.graph, x, 1, 0.0), (std::vector<int>{0, 1, 0}));
  EXPECT_EQ(task.labels, dense_labels(*f.graph, task.features, 1, 0.0));
  EXPECT_EQ(task.empty_shell_count, 0u);
  EXPECT_THROW(generate_khopsign(f.graph, f.distances, 2, 0.0, 0), DataError);
}

TEST(KHopSign, ZeroHopIsFeatureSign) {
  const auto f = fixture(random_geometric_graph(200, 0.15, 1));
  const auto task = generate_khopsign(f.graph, f.distances, 0, 0.0, 3);
  for (std::size_t u = 0; u < 200; ++u) EXPECT_EQ(task.labels[u], task.features(static_cast<Eigen::Index>(u)) < 0 ? 0 : 1);
  EXPECT_EQ(task_range_estimate(task), 0.0);
}

TEST(KHopSign, SoftLabelsMatchDenseOracle) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    auto g = oracle::random_graph(30, 0.1, rng);
    const auto f = fixture(std::move(g));
    if (f.distances->diameter().value_or(0) <= 3) continue;
    const auto task = generate_khopsign(f.graph, f.distances, 3, 1.0, static_cast<std::uint64_t>(trial));
    EXPECT_EQ(task.labels, dense_labels(*f.graph, task.features, 3, 1.0));
    const auto hard = generate_khopsign(f.graph, f.distances, 3, 0.0, static_cast<std::uint64_t>(trial));
    EXPECT_EQ(hard.labels, dense_labels(*f.graph, hard.features, 3, 0.0));
  }
}

TEST(KHopSign, HardCaseRangeIsExactlyK) {
  const auto task = make_khopsign(KHopSignSpec{1000, 0.1, 1, 0.0, 0});
  for (unsigned k = 1; k <= 8; ++k) {
    const auto t = generate_khopsign(task.graph, task.distances, k, 0.0, 0);
    EXPECT_EQ(task_range_estimate(t), static_cast<double>(k));
  }
}

TEST(KHopSign, SoftRangeMatchesDenseFormula) {
  const auto f = fixture(random_geometric_graph(200, 0.2, 0));
  const auto task = generate_khopsign(f.graph, f.distances, 3, 1.0, 0);
  const auto fw = oracle::floyd_warshall(*f.graph);
  double total = 0.0;
  int defined = 0;
  for (std::size_t u = 0; u < 200; ++u) {
    double num = 0.0, den = 0.0;
    for (std::size_t v = 0; v < 200; ++v) {
      if (fw[u][v] == oracle::kInf) continue;
      const double w = std::exp(-std::pow(fw[u][v] - 3.0, 2) / 2.0);
      num += w * fw[u][v];
      den += w;
    }
    if (den > 0) {
      total += num / den;
      ++defined;
    }
  }
  EXPECT_NEAR(task_range_estimate(task), total / defined, 1e-12);
}

TEST(KHopSign, WideNoiseApproachesMeanDistance) {
  const auto f = fixture(random_geometric_graph(200, 0.2, 0));
  ASSERT_EQ(f.distances->diameter().has_value(), true);
  const auto task = generate_khopsign(f.graph, f.distances, 1, 1e6, 0);
  // Uniform weights include the zero self-distance: mean over v of d(u, v) with u itself.
  double want = 0.0;
  for (NodeId u = 0; u < 200; ++u) {
    const auto hops = f.distances->row_distances(u);
    double s = 0.0;
    for (auto h : hops) s += h;
    want += s / static_cast<double>(hops.size());
  }
  want /= 200.0;
  EXPECT_NEAR(task_range_estimate(task), want, 1e-6);
  EXPECT_NEAR(want, f.distances->mean_distance(), 0.05 * f.distances->mean_distance());
}

TEST(KHopSign, DeterministicDrawsAndSplits) {
  const auto a = make_khopsign(KHopSignSpec{1000, 0.1, 4, 0.0, 9});
  const auto b = make_khopsign(KHopSignSpec{1000, 0.1, 4, 0.0, 9});
  EXPECT_EQ(a.features, b.features);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.roles, b.roles);
  EXPECT_EQ(std::count(a.roles.begin(), a.roles.end(), Role::Test), 500);
  EXPECT_EQ(std::count(a.roles.begin(), a.roles.end(), Role::Fit), 250);
  EXPECT_EQ(std::count(a.roles.begin(), a.roles.end(), Role::Eval), 250);
  const auto c = make_khopsign(KHopSignSpec{1000, 0.1, 4, 0.0, 10});
  EXPECT_NE(a.features, c.features);

  for (unsigned k = 1; k <= 8; ++k) {
    const auto t = generate_khopsign(a.graph, a.distances, k, 0.0, 9);
    // Features and splits do not depend on k.
    EXPECT_EQ(t.features, a.features);
    EXPECT_EQ(t.roles, a.roles);
  }
}

// Labels of one draw share most of their features, so the class-1 rate is
// estimated over 20 independent feature draws.
TEST(KHopSign, ClassBalanceOverDraws) {
  const auto a = make_khopsign(KHopSignSpec{1000, 0.1, 1, 0.0, 0});
  for (unsigned k = 1; k <= 8; ++k) {
    double rate = 0.0;
    for (std::uint64_t s = 0; s < 20; ++s) {
      const auto t = generate_khopsign(a.graph, a.distances, k, 0.0, s);
      rate += static_cast<double>(std::count(t.labels.begin(), t.labels.end(), 1)) / 1000.0 / 20.0;
    }
    EXPECT_LE(std::abs(rate - 0.5), 0.1) << "k=" << k;
  }
}

TEST(KHopSign, HardLabelIgnoresOffShellFeatures) {
  const auto f = fixture(random_geometric_graph(150, 0.18, 2));
  const auto task = generate_khopsign(f.graph, f.distances, 2, 0.0, 1);
  const NodeId u = 17;
  Vec x = task.features;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> gauss;
  for (NodeId v = 0; v < 150; ++v) {
    if (f.distances->distance(u, v) != 2u) x(v) = gauss(rng) * 100.0;
  }
  EXPECT_EQ(dense_labels(*f.graph, x, 2, 0.0)[u], task.labels[u]);
}

TEST(KHopSign, EmptyShellsAreFlaggedAndPositive) {
  // P5 with k = 3: the middle node sees hops 1 and 2 only.
  const auto f = fixture(oracle::path_graph(5));
  const auto task = generate_khopsign(f.graph, f.distances, 3, 0.0, 0);
  EXPECT_TRUE(task.empty_shell[2]);
  EXPECT_EQ(task.empty_shell_count, 1u);
  EXPECT_EQ(task.labels[2], 1);
}

TEST(KHopSign, Errors) {
  const auto f = fixture(random_geometric_graph(1000, 0.1, 0));
  try {
    generate_khopsign(f.graph, f.distances, 20, 0.0, 0);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("diameter 16"), std::string::npos) << e.what();
  }
  const auto t = fixture(random_geometric_graph(300, 0.15, 0), 4u);
  EXPECT_THROW(generate_khopsign(t.graph, t.distances, 3, 1.0, 0), DataError);
  EXPECT_NO_THROW(generate_khopsign(t.graph, t.distances, 3, 0.0, 0));
  EXPECT_THROW(generate_khopsign(f.graph, f.distances, 2, -1.0, 0), DataError);
}
