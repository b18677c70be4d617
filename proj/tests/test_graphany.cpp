#include <gtest/gtest.h>

#include <sstream>

#include "goblin/experiment.hpp"
#include "goblin/graphany.hpp"
#include "oracles.hpp"

using namespace goblin;

namespace {

LinearExpert with_logits(Mat l) {
  LinearExpert e;
  e.logits = std::move(l);
  return e;
}

std::vector<NodeId> iota_nodes(std::size_t n) {
  std::vector<NodeId> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = static_cast<NodeId>(i);
  return v;
}

}  // namespace

TEST(GraphAnyFeatures, IdenticalPairIsZero) {
  const auto a = with_logits((Mat(2, 2) << 1, 2, 3, 4).finished());
  const auto b = a;
  const Mat f = graphany_features({&a, &b}, iota_nodes(2));
  ASSERT_EQ(f.cols(), 2);
  EXPECT_EQ(f.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_THROW(graphany_features({&a}, iota_nodes(2)), DataError);
}

TEST(GraphAnyFeatures, ThreeExpertEnumeration) {
  const auto a = with_logits((Mat(1, 2) << 0, 0).finished());
  const auto b = with_logits((Mat(1, 2) << 1, 0).finished());
  const auto c = with_logits((Mat(1, 2) << 0, 3).finished());
  const Mat f = graphany_features({&a, &b, &c}, iota_nodes(1));
  // Ordered pairs (0,1) (0,2) (1,0) (1,2) (2,0) (2,1).
  EXPECT_EQ(f, (Mat(1, 6) << 1, 9, 1, 10, 9, 10).finished());
}

TEST(GraphAnyBases, Specs) {
  const DistanceTable none;
  const auto s5 = fixed_basis_specs(BasisTag::Standard5, none);
  EXPECT_EQ(s5, graphany_basis_specs());
  const auto a4 = fixed_basis_specs(BasisTag::AdjPowers4, none);
  ASSERT_EQ(a4.size(), 5u);
  EXPECT_EQ(a4[4], OperatorSpec::adj_power(4));
  const auto p4 = fixed_basis_specs(BasisTag::PreciseHop4, none);
  ASSERT_EQ(p4.size(), 5u);
  EXPECT_EQ(p4[0], OperatorSpec::identity());
  EXPECT_EQ(p4[1], OperatorSpec::adj_power(1));
  EXPECT_EQ(p4[3], OperatorSpec::precise_hop(3));
  for (auto t : {BasisTag::Standard5, BasisTag::AdjPowers4, BasisTag::PreciseHop4, BasisTag::HopBins,
                 BasisTag::HeatKernel}) {
    EXPECT_EQ(parse_basis_tag(basis_tag_name(t)), t);
  }
  EXPECT_THROW(parse_basis_tag("nope"), DataError);
}

TEST(GraphAnyModel, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> gauss;
  std::vector<LinearExpert> ex;
  for (int i = 0; i < 3; ++i) {
    Mat l(6, 2);
    for (Eigen::Index k = 0; k < l.size(); ++k) l.data()[k] = gauss(rng);
    ex.push_back(with_logits(l));
  }
  GraphAnyConfig cfg;
  cfg.hidden = 8;
  cfg.temperature = 1.5;
  Rng init = make_stream(1, "test");
  GraphAnyModel model(BasisTag::Standard5, 3, cfg, init);
  const Mat feats = graphany_features({&ex[0], &ex[1], &ex[2]}, iota_nodes(6));
  const std::vector<Mat> logits{ex[0].logits, ex[1].logits, ex[2].logits};
  const std::vector<int> targets{0, 1, 1, 0, 0, 1};
  auto grads = model.zero_grads();
  model.loss(feats, logits, targets, &grads);
  auto params = model.parameters();
  for (std::size_t p = 0; p < params.size(); ++p) {
    Mat& w = *params[p];
    for (Eigen::Index k = 0; k < w.size(); ++k) {
      const double keep = w.data()[k];
      w.data()[k] = keep + 1e-4;
      const double up = model.loss(feats, logits, targets);
      w.data()[k] = keep - 1e-4;
      const double down = model.loss(feats, logits, targets);
      w.data()[k] = keep;
      const double fd = (up - down) / 2e-4;
      const double an = grads[p].data()[k];
      EXPECT_LE(std::abs(fd - an), 1e-3 * std::max({std::abs(fd), std::abs(an), 1e-6})) << p << ":" << k;
    }
  }
}

TEST(GraphAnyModel, SingleExpertAndCountMismatch) {
  const auto e = with_logits((Mat(2, 2) << 1, 0, 0, 1).finished());
  GraphAnyConfig cfg;
  Rng init = make_stream(0, "test");
  const GraphAnyModel model(BasisTag::Standard5, 5, cfg, init);
  const auto r = infer_graphany(model, {e});
  EXPECT_EQ(r.logits, e.logits);
  EXPECT_EQ(r.alpha, Mat(Mat::Ones(2, 1)));
  EXPECT_THROW(infer_graphany(model, {e, e}), DataError);
}

class GraphAnyTraining : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { task_ = new KHopSignTask(make_khopsign(KHopSignSpec{1000, 0.1, 1, 0.0, 31})); }
  static void TearDownTestSuite() { delete task_; }
  static KHopSignTask* task_;
};
KHopSignTask* GraphAnyTraining::task_ = nullptr;

TEST_F(GraphAnyTraining, DeterministicCheckpointRoundTrip) {
  GraphAnyConfig cfg;
  cfg.steps = 60;
  std::vector<double> la, lb;
  const auto a = train_graphany(task_->instance(), *task_->distances, BasisTag::Standard5, cfg, &la);
  const auto b = train_graphany(task_->instance(), *task_->distances, BasisTag::Standard5, cfg, &lb);
  EXPECT_EQ(la, lb);
  EXPECT_LT(la.back(), la.front());
  std::stringstream sa, sb;
  a.save(sa);
  b.save(sb);
  EXPECT_EQ(sa.str(), sb.str());
  const auto back = GraphAnyModel::load(sa);
  std::stringstream sc;
  back.save(sc);
  EXPECT_EQ(sc.str(), sb.str());
  EXPECT_EQ(back.tag(), BasisTag::Standard5);
  EXPECT_THROW(infer_graphany(back, task_->instance(), *task_->distances, BasisTag::PreciseHop4), DataError);
}

TEST_F(GraphAnyTraining, OneHopAccuracy) {
  const auto model = train_graphany(task_->instance(), *task_->distances, BasisTag::Standard5, {});
  const auto target = make_khopsign(KHopSignSpec{1000, 0.1, 1, 0.0, 32});
  const auto task = target.instance();
  const auto r = infer_graphany(model, task, *target.distances, BasisTag::Standard5);
  EXPECT_GE(accuracy(predict_classes(r.logits), task.labels(), task.test_nodes()), 0.7);
  for (Eigen::Index u = 0; u < r.alpha.rows(); ++u) EXPECT_NEAR(r.alpha.row(u).sum(), 1.0, 1e-12);
  EXPECT_EQ(r.experts.size(), 5u);
  for (const auto& e : r.experts) EXPECT_EQ(e.fit_set, FitSet::Labeled);
}
