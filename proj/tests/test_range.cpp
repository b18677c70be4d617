#include <gtest/gtest.h>

#include <numeric>
#include <sstream>

#include "goblin/range.hpp"
#include "oracles.hpp"

using namespace goblin;

namespace {

TaskInstance random_task(const Graph& g, Eigen::Index dims, double labeled_frac, std::mt19937_64& rng) {
  const auto n = g.num_nodes();
  std::normal_distribution<double> gauss;
  std::bernoulli_distribution coin(labeled_frac);
  std::bernoulli_distribution cls(0.5);
  Mat x(static_cast<Eigen::Index>(n), dims);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = gauss(rng);
  std::vector<int> labels(n);
  std::vector<Role> roles(n);
  for (std::size_t u = 0; u < n; ++u) {
    labels[u] = cls(rng) ? 1 : 0;
    roles[u] = coin(rng) ? (u % 2 ? Role::Fit : Role::Eval) : Role::Test;
  }
  return TaskInstance(std::make_shared<Graph>(g), x, labels, 2, roles);
}

}  // namespace

TEST(OperatorRange, CanonicalOperators) {
  const auto g = random_geometric_graph(300, 0.15, 7);
  const auto d = apsd(g);
  const DistanceTable& dt = d;
  auto range_of = [&](const OperatorSpec& s) { return operator_range(build_operator(g, dt, s), dt); };
  const auto id = range_of(OperatorSpec::identity());
  EXPECT_EQ(id.graph_range, 0.0);
  EXPECT_EQ(id.defined, 300u);
  const auto a = range_of(OperatorSpec::adj_power(1));
  for (Eigen::Index u = 0; u < 300; ++u) {
    if (g.degree(static_cast<NodeId>(u)) > 0) {
      EXPECT_NEAR(a.node_range(u), 1.0, 1e-12);
    } else {
      EXPECT_TRUE(std::isnan(a.node_range(u)));
    }
  }
  for (unsigned k = 1; k <= 5; ++k) {
    const auto hop = range_of(OperatorSpec::precise_hop(k));
    for (Eigen::Index u = 0; u < 300; ++u) {
      if (!std::isnan(hop.node_range(u))) {
        EXPECT_NEAR(hop.node_range(u), k, 1e-12);
      }
    }
    EXPECT_NEAR(hop.graph_range, k, 1e-12);
  }
  const auto lap = range_of(OperatorSpec::rw_laplacian(1));
  for (Eigen::Index u = 0; u < 300; ++u) {
    if (g.degree(static_cast<NodeId>(u)) > 0) {
      EXPECT_NEAR(lap.node_range(u), 0.5, 1e-12);
    }
  }
}

TEST(OperatorRange, SquaredAdjacencyOnPathCenter) {
  // P3: A = [[0,1,0],[1/2,0,1/2],[0,1,0]]; row 1 of A^2 = (0, 1, 0) + ... by hand:
  // (A^2)_{1,0} = 1/2 * 0 + 0 + 1/2 * 0 = 0; (A^2)_{1,1} = 1/2 + 1/2 = 1; (A^2)_{1,2} = 0.
  // Row 0: (1/2, 0, 1/2) -> range (0 + 2 * 1/2) / 1 = 1.
  const auto g = oracle::path_graph(3);
  const auto d = apsd(g);
  const auto r = operator_range(build_operator(g, d, OperatorSpec::adj_power(2)), d);
  const Mat a = oracle::row_normalized(oracle::dense_adjacency(g));
  const Mat a2 = a * a;
  const auto fw = oracle::floyd_warshall(g);
  for (int u = 0; u < 3; ++u) {
    double num = 0, den = 0;
    for (int v = 0; v < 3; ++v) {
      num += std::abs(a2(u, v)) * fw[u][v];
      den += std::abs(a2(u, v));
    }
    EXPECT_NEAR(r.node_range(u), num / den, 1e-15);
  }
  EXPECT_EQ(r.node_range(1), 0.0);
  EXPECT_NEAR(r.node_range(0), 1.0, 1e-15);
}

TEST(OperatorRange, ScaleInvariantAndBoundedByPower) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 15; ++trial) {
    const auto g = oracle::random_graph(40, 0.08, rng);
    const auto d = apsd(g);
    for (unsigned k = 1; k <= 4; ++k) {
      const auto op = build_operator(g, d, OperatorSpec::adj_power(k));
      const auto r = operator_range(op, d);
      const OperatorMatrix scaled(op.spec(), SpMat(op.sparse() * -3.5));
      const auto rs = operator_range(scaled, d);
      for (Eigen::Index u = 0; u < 40; ++u) {
        if (std::isnan(r.node_range(u))) {
          EXPECT_TRUE(std::isnan(rs.node_range(u)));
          continue;
        }
        EXPECT_NEAR(r.node_range(u), rs.node_range(u), 1e-12);
        EXPECT_LE(r.node_range(u), k + 1e-12);
      }
      if (d.diameter()) {
        EXPECT_LE(r.graph_range, *d.diameter());
      }
    }
  }
}

TEST(OperatorRange, TruncationAndComponents) {
  const auto g = build_graph(std::vector<Edge>{{0, 1}, {1, 2}, {3, 4}}, 5);
  const auto full = apsd(g);
  const auto heat = build_operator(g, full, OperatorSpec::lin_heat(1.0));
  // Heat mass leaks nowhere across components; cross-component zeros are skipped.
  EXPECT_NO_THROW(operator_range(heat, full));
  const auto trunc = apsd(g, 1u);
  EXPECT_THROW(operator_range(heat, trunc), DataError);
  const auto a = build_operator(g, full, OperatorSpec::adj_power(1));
  EXPECT_NEAR(operator_range(a, trunc, &g).graph_range, 1.0, 1e-15);
}

TEST(ModelRange, ConvexAggregateAndCsv) {
  const auto g = random_geometric_graph(200, 0.15, 3);
  const auto d = apsd(g);
  std::mt19937_64 rng(5);
  const auto task = random_task(g, 2, 0.6, rng);
  std::vector<LinearExpert> experts;
  for (const auto& s : {OperatorSpec::identity(), OperatorSpec::precise_hop(1), OperatorSpec::precise_hop(3),
                        OperatorSpec::precise_hop(4)}) {
    experts.push_back(solve_expert(task, build_operator(g, d, s), FitSet::Fit));
  }
  experts[0].score = 0.1;
  experts[1].score = 0.5;
  experts[2].score = 0.3;
  experts[3].score = 0.9;
  Mat alpha = Mat::Zero(200, 4);
  alpha.col(1).setConstant(0.5);
  alpha.col(2).setConstant(0.5);
  const auto report = model_range(g, d, experts, alpha);
  EXPECT_NEAR(report.aggregate, 2.0, 1e-12);
  ASSERT_TRUE(report.best);
  EXPECT_EQ(*report.best, 3u);
  EXPECT_NEAR(report.operators[3].graph_range, 4.0, 1e-12);
  EXPECT_TRUE(std::isnan(report.operators[0].graph_range));

  std::mt19937_64 arng(9);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Mat random_alpha(200, 4);
  for (Eigen::Index i = 0; i < random_alpha.size(); ++i) random_alpha.data()[i] = unit(arng);
  for (Eigen::Index u = 0; u < 200; ++u) random_alpha.row(u) /= random_alpha.row(u).sum();
  const auto mixed = model_range(g, d, experts, random_alpha);
  EXPECT_GE(mixed.aggregate, 0.0);
  EXPECT_LE(mixed.aggregate, 4.0);
  const auto single = model_range(g, d, {experts[2]}, Mat::Ones(200, 1));
  EXPECT_NEAR(single.aggregate, 3.0, 1e-12);

  std::ostringstream out;
  write_range_csv(out, report);
  const auto text = out.str();
  EXPECT_EQ(text.rfind("operator_spec,rho_G,mean_alpha,score\n", 0), 0u);
  EXPECT_NE(text.find("\"preciseh"), std::string::npos);
  EXPECT_NE(text.find("\naggregate,2,1,\n"), std::string::npos);
  EXPECT_NE(text.find("\nbest_operator,4,"), std::string::npos);
}

TEST(SampleNodes, AllOrSeededSubset) {
  EXPECT_EQ(range_sample_nodes(5, 500, 1).size(), 5u);
  const auto a = range_sample_nodes(1000, 500, 3);
  const auto b = range_sample_nodes(1000, 500, 3);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.size(), 500u);
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
  EXPECT_NE(a, range_sample_nodes(1000, 500, 4));
}

TEST(FixedWeightRange, MatchesAnalyticRange) {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> gauss;
  for (int trial = 0; trial < 10; ++trial) {
    const auto g = oracle::random_graph(10, 0.3, rng);
    const auto d = apsd(g);
    const auto task = random_task(g, 3, 0.7, rng);
    Mat w(3, 2);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = gauss(rng);
    std::vector<NodeId> nodes(10);
    std::iota(nodes.begin(), nodes.end(), 0u);
    for (const auto& s : {OperatorSpec::adj_power(2), OperatorSpec::lin_heat(1.5), OperatorSpec::rw_laplacian(2)}) {
      const auto op = build_operator(g, d, s);
      const Vec fd = fixed_weight_range(task, op, w, d, nodes);
      const Vec exact = operator_range(op, d).node_range;
      for (Eigen::Index u = 0; u < 10; ++u) {
        if (std::isnan(exact(u))) continue;
        EXPECT_NEAR(fd(u), exact(u), 1e-6) << s.to_string() << " node " << u;
      }
    }
  }
}

// With S = I, one-hot features and every node labeled the solve returns
// Yhat = X X^+ Y = Y, which does not depend on X: the range is undefined.
TEST(BlackboxRange, IdentityWithOneHotFeaturesHasNoSensitivity) {
  const auto g = random_geometric_graph(40, 0.3, 2);
  const auto d = apsd(g);
  std::vector<int> labels(40);
  std::vector<Role> roles(40);
  for (std::size_t u = 0; u < 40; ++u) {
    labels[u] = static_cast<int>(u % 2);
    roles[u] = u % 2 ? Role::Fit : Role::Eval;
  }
  const TaskInstance task(std::make_shared<Graph>(g), Mat::Identity(40, 40), labels, 2, roles);
  std::vector<NodeId> nodes(40);
  std::iota(nodes.begin(), nodes.end(), 0u);
  const double rb = blackbox_range(task, build_operator(g, d, OperatorSpec::identity()), d, nodes);
  EXPECT_TRUE(std::isnan(rb)) << rb;
}

TEST(BlackboxRange, FiniteAndBoundedByDiameter) {
  std::mt19937_64 rng(21);
  const auto g = random_geometric_graph(20, 0.45, 5);
  const auto d = apsd(g);
  const auto task = random_task(g, 2, 0.8, rng);
  std::vector<NodeId> nodes(20);
  std::iota(nodes.begin(), nodes.end(), 0u);
  const double rb = blackbox_range(task, build_operator(g, d, OperatorSpec::adj_power(1)), d, nodes);
  ASSERT_TRUE(d.diameter());
  EXPECT_TRUE(std::isfinite(rb));
  EXPECT_GE(rb, 0.0);
  EXPECT_LE(rb, *d.diameter());
}

TEST(BlackboxRange, RejectsLargeGraphs) {
  const auto g = random_geometric_graph(600, 0.1, 1);
  const auto d = apsd(g, 2u);
  std::mt19937_64 rng(1);
  const auto task = random_task(g, 1, 0.5, rng);
  EXPECT_THROW(blackbox_range(task, build_operator(g, d, OperatorSpec::identity()), d, {}), DataError);
}
