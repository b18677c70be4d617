#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <sstream>

#include "goblin/experiment.hpp"
#include "goblin/moe.hpp"
#include "oracles.hpp"

using namespace goblin;

namespace {

LinearExpert expert_with_logits(Mat logits, double score = 0.0) {
  LinearExpert e;
  e.logits = std::move(logits);
  e.score = score;
  return e;
}

std::vector<LinearExpert> random_experts(std::size_t t, Eigen::Index n, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss;
  std::vector<LinearExpert> out;
  for (std::size_t i = 0; i < t; ++i) {
    Mat l(n, c);
    for (Eigen::Index k = 0; k < l.size(); ++k) l.data()[k] = gauss(rng);
    out.push_back(expert_with_logits(l, gauss(rng)));
    out.back().spec = OperatorSpec::lin_gauss(static_cast<double>(i), 0.5);
  }
  return out;
}

ExpertRefs refs_of(const std::vector<LinearExpert>& experts) {
  ExpertRefs r;
  for (const auto& e : experts) r.push_back(&e);
  return r;
}

std::vector<NodeId> all_nodes(std::size_t n) {
  std::vector<NodeId> v(n);
  std::iota(v.begin(), v.end(), 0u);
  return v;
}

MoeModel small_model(std::uint64_t seed, int hidden = 8, double temperature = 2.0, bool score = false) {
  MoeConfig cfg;
  cfg.hidden = hidden;
  cfg.temperature = temperature;
  cfg.score_feature = score;
  Rng rng = make_stream(seed, "test/init");
  return MoeModel(cfg, rng);
}

}  // namespace

TEST(MoeFeatures, IdenticalExpertsGiveZeros) {
  const Mat l = (Mat(2, 2) << 1, -1, 0.5, 2).finished();
  const std::vector<LinearExpert> ex{expert_with_logits(l), expert_with_logits(l)};
  const auto f = compute_features(refs_of(ex), all_nodes(2));
  EXPECT_EQ(f.values.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_THROW(compute_features(ExpertRefs{&ex[0]}, all_nodes(2)), DataError);
}

TEST(MoeFeatures, HandEnumeration) {
  // One node, 2 classes: logits (0,0), (1,0), (0,3).
  const std::vector<LinearExpert> ex{expert_with_logits(Mat::Zero(1, 2), 0.1),
                                     expert_with_logits((Mat(1, 2) << 1, 0).finished(), 0.2),
                                     expert_with_logits((Mat(1, 2) << 0, 3).finished(), 0.3)};
  // D01 = 1, D02 = 9, D12 = 1 + 9 = 10.
  const auto f = compute_features(refs_of(ex), all_nodes(1), true);
  const double want[3][5] = {{5, 16, 1, 9, 0.1}, {5.5, 20.25, 1, 10, 0.2}, {9.5, 0.25, 9, 10, 0.3}};
  for (std::size_t i = 0; i < 3; ++i)
    for (Eigen::Index c = 0; c < 5; ++c) EXPECT_DOUBLE_EQ(f.row(0, i)(c), want[i][c]) << i << "," << c;
}

TEST(MoeFeatures, ExpertPermutationPermutesRows) {
  std::mt19937_64 rng(1);
  const auto ex = random_experts(5, 7, 3, rng);
  const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  ExpertRefs permuted;
  for (auto i : perm) permuted.push_back(&ex[i]);
  const auto a = compute_features(refs_of(ex), all_nodes(7));
  const auto b = compute_features(permuted, all_nodes(7));
  for (std::size_t u = 0; u < 7; ++u)
    for (std::size_t i = 0; i < 5; ++i) EXPECT_LE((b.row(u, i) - a.row(u, perm[i])).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(MoeWeights, SymmetricRowsGiveUniformWeights) {
  const Mat l = (Mat(3, 2) << 1, 2, 3, 4, 5, 6).finished();
  const std::vector<LinearExpert> ex{expert_with_logits(l), expert_with_logits(l), expert_with_logits(l),
                                     expert_with_logits(l)};
  const auto model = small_model(3);
  const Mat w = model.weights(compute_features(refs_of(ex), all_nodes(3)), std::vector<bool>(4, true));
  EXPECT_LE((w.array() - 0.25).abs().maxCoeff(), 1e-12);
}

TEST(MoeWeights, SingleActiveExpertAndHighTemperature) {
  std::mt19937_64 rng(2);
  const auto ex = random_experts(4, 6, 3, rng);
  const auto f = compute_features(refs_of(ex), all_nodes(6));
  const auto model = small_model(4);
  const Mat one = model.weights(f, {false, false, true, false});
  EXPECT_EQ(one.col(2), Vec(Vec::Ones(6)));
  EXPECT_EQ(one.col(0).cwiseAbs().maxCoeff(), 0.0);
  const auto hot = small_model(4, 8, 1e6);
  const Mat w = hot.weights(f, {true, true, false, true});
  for (Eigen::Index u = 0; u < 6; ++u) {
    EXPECT_NEAR(w(u, 0), 1.0 / 3.0, 1e-4);
    EXPECT_NEAR(w(u, 1), 1.0 / 3.0, 1e-4);
    EXPECT_EQ(w(u, 2), 0.0);
  }
}

TEST(MoeMix, SingleExpertAndEvenSplit) {
  const Mat a = (Mat(2, 2) << 1, 2, 3, 4).finished();
  const Mat b = (Mat(2, 2) << 5, 0, -1, 2).finished();
  EXPECT_EQ(mix({&a, &b}, (Mat(2, 2) << 1, 0, 1, 0).finished()), a);
  EXPECT_EQ(mix({&a, &b}, Mat::Constant(2, 2, 0.5)), Mat((a + b) / 2));
  const auto e = expert_with_logits(a);
  EXPECT_EQ(predict(small_model(1), ExpertRefs{&e}, {true}), a);
}

TEST(MoeModel, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  const auto ex = random_experts(3, 5, 2, rng);
  for (bool score : {false, true}) {
    auto model = small_model(6, 8, 2.0, score);
    MoeBatch batch;
    batch.features = compute_features(refs_of(ex), all_nodes(5), score);
    for (const auto& e : ex) batch.logits.push_back(e.logits);
    batch.targets = {0, 1, 1, 0, 1};
    for (const auto& mask : {std::vector<bool>{true, true, true}, std::vector<bool>{true, false, true}}) {
      batch.mask = mask;
      auto grads = model.zero_grads();
      model.loss_and_grad(batch, grads, nullptr);
      const auto params = model.parameters();
      double worst = 0.0;
      for (std::size_t p = 0; p < params.size(); ++p) {
        Mat& w = *params[p];
        for (Eigen::Index k = 0; k < w.size(); ++k) {
          const double keep = w.data()[k];
          w.data()[k] = keep + 1e-4;
          const double up = model.loss(batch);
          w.data()[k] = keep - 1e-4;
          const double down = model.loss(batch);
          w.data()[k] = keep;
          const double fd = (up - down) / 2e-4;
          const double an = grads[p].data()[k];
          const double scale = std::max({std::abs(fd), std::abs(an), 1e-6});
          worst = std::max(worst, std::abs(fd - an) / scale);
          EXPECT_LE(std::abs(fd - an), 1e-3 * scale) << "param " << p << " entry " << k;
        }
      }
      EXPECT_LE(worst, 1e-3);
    }
  }
}

TEST(MoeModel, PredictionInvariantToExpertOrder) {
  std::mt19937_64 rng(9);
  const auto ex = random_experts(6, 12, 3, rng);
  const auto model = small_model(10, 16);
  const Mat base = predict(model, refs_of(ex), std::vector<bool>(6, true));
  std::vector<std::size_t> perm(6);
  std::iota(perm.begin(), perm.end(), 0u);
  for (int trial = 0; trial < 20; ++trial) {
    std::shuffle(perm.begin(), perm.end(), rng);
    ExpertRefs refs;
    for (auto i : perm) refs.push_back(&ex[i]);
    EXPECT_LE((predict(model, refs, std::vector<bool>(6, true)) - base).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(MoeModel, CheckpointRoundTripIsExact) {
  std::mt19937_64 rng(11);
  const auto ex = random_experts(4, 9, 3, rng);
  auto model = small_model(12, 16, 2.0, true);
  std::vector<bool> logcols{true, true, true, true, false};
  model.set_standardizer(nn::Standardizer::fit(compute_features(refs_of(ex), all_nodes(9), true).values, logcols));
  std::stringstream first;
  model.save(first);
  const auto back = MoeModel::load(first);
  std::stringstream second;
  back.save(second);
  EXPECT_EQ(first.str(), second.str());
  const std::vector<bool> mask(4, true);
  EXPECT_EQ(predict(model, refs_of(ex), mask), predict(back, refs_of(ex), mask));

  std::istringstream bad("goblin-checkpoint 1\nkind graphany\n");
  EXPECT_THROW(MoeModel::load(bad), DataError);
  std::istringstream version("goblin-checkpoint 7\n");
  EXPECT_THROW(MoeModel::load(version), DataError);
}

TEST(WeightSelection, Modes) {
  const auto eval = all_nodes(4);
  std::vector<LinearExpert> ev;
  const Mat base = (Mat(4, 2) << 1, 0, 0, 1, 1, 0, 0, 1).finished();
  for (int i = 0; i < 6; ++i) {
    Mat l = base;
    l(i % 4, 0) += 0.5 + i;
    ev.push_back(expert_with_logits(l, 0.1 * i));
    ev.back().spec = OperatorSpec::lin_gauss(i, 0.5);
  }
  ev.push_back(expert_with_logits(ev[5].logits, 0.05));  // exact duplicate of the top scorer
  ev.back().spec = OperatorSpec::lin_heat(1.0);
  const std::vector<OperatorSpec> basis{ev[5].spec, ev[2].spec, ev[0].spec, ev[3].spec};

  const auto std_sel = apply_weight_selection(WeightSelection::Standard, ev, basis, eval);
  EXPECT_EQ(std_sel.featured, (std::vector<std::size_t>{0, 2, 3, 5}));
  EXPECT_EQ(std_sel.mask, std::vector<bool>(4, true));

  const auto all = apply_weight_selection(WeightSelection::PreFilterAll, ev, basis, eval);
  EXPECT_EQ(all.featured, (std::vector<std::size_t>{0, 1, 2, 3, 4, 5}));
  EXPECT_EQ(all.mask, (std::vector<bool>{true, false, true, true, false, true}));
  EXPECT_FALSE(all.deepset_top_k);

  const auto half = apply_weight_selection(WeightSelection::PreFilterHalf, ev, basis, eval);
  // Top ceil(7/2) = 4 by score are 5, 4, 3, 2; basis member 0 joins.
  EXPECT_EQ(half.featured, (std::vector<std::size_t>{0, 2, 3, 4, 5}));
  EXPECT_EQ(half.mask, (std::vector<bool>{true, true, true, false, true}));

  const auto ds = apply_weight_selection(WeightSelection::MaskByDeepsetAll, ev, basis, eval);
  EXPECT_EQ(ds.featured, all.featured);
  EXPECT_EQ(ds.mask, std::vector<bool>(6, true));
  EXPECT_EQ(ds.deepset_top_k, 4);

  EXPECT_EQ(parse_selection(selection_name(WeightSelection::MaskByDeepsetHalf)), WeightSelection::MaskByDeepsetHalf);
  EXPECT_THROW(parse_selection("top"), DataError);
}

TEST(WeightSelection, TopKByMeanLogitMatchesSort) {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> gauss;
  for (int trial = 0; trial < 50; ++trial) {
    Mat l(5, 7);
    for (Eigen::Index k = 0; k < l.size(); ++k) l.data()[k] = gauss(rng);
    std::vector<std::pair<double, int>> keyed;
    for (int c = 0; c < 7; ++c) keyed.emplace_back(-l.col(c).mean(), c);
    std::sort(keyed.begin(), keyed.end());
    std::vector<bool> want(7, false);
    for (int r = 0; r < 4; ++r) want[static_cast<std::size_t>(keyed[static_cast<std::size_t>(r)].second)] = true;
    EXPECT_EQ(top_k_by_mean_logit(l, 4), want);
  }
  EXPECT_EQ(top_k_by_mean_logit(Mat::Zero(2, 3), 2), (std::vector<bool>{true, true, false}));
}

class MoeTraining : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    train_ = new KHopSignTask(make_khopsign(KHopSignSpec{1000, 0.1, 1, 0.0, 101}));
    pool_ = new std::vector<LinearExpert>(build_training_pool(train_->instance(), *train_->distances, {}, 25));
  }
  static void TearDownTestSuite() {
    delete pool_;
    delete train_;
  }
  static KHopSignTask* train_;
  static std::vector<LinearExpert>* pool_;
};
KHopSignTask* MoeTraining::train_ = nullptr;
std::vector<LinearExpert>* MoeTraining::pool_ = nullptr;

TEST_F(MoeTraining, PoolGrid) {
  ASSERT_EQ(pool_->size(), 50u);
  const auto b = search_bounds(train_->distances->mean_distance(), 1.25, 1.25);
  EXPECT_EQ((*pool_)[0].spec, OperatorSpec::lin_gauss(b.mu_max / 25, 0.5));
  EXPECT_EQ((*pool_)[49].spec, OperatorSpec::lin_heat(b.sqrt_tau_max * b.sqrt_tau_max));
}

TEST_F(MoeTraining, DeterministicAndLossDecreases) {
  MoeConfig cfg;
  cfg.batches = 150;
  cfg.seed = 4;
  std::vector<double> la, lb;
  const auto task = train_->instance();
  const auto a = train_moe(task, *pool_, cfg, &la);
  const auto b = train_moe(task, *pool_, cfg, &lb);
  EXPECT_EQ(la, lb);
  std::stringstream sa, sb;
  a.save(sa);
  b.save(sb);
  EXPECT_EQ(sa.str(), sb.str());
  const auto mean = [](auto first, auto last) { return std::accumulate(first, last, 0.0) / std::distance(first, last); };
  EXPECT_LT(mean(la.end() - 20, la.end()), mean(la.begin(), la.begin() + 20));
  cfg.seed = 5;
  std::stringstream sc;
  train_moe(task, *pool_, cfg).save(sc);
  EXPECT_NE(sa.str(), sc.str());
}

TEST_F(MoeTraining, OneHopTaskIsSolved) {
  MoeConfig cfg;
  cfg.seed = 7;
  const auto model = train_moe(train_->instance(), *pool_, cfg);
  const auto target = make_khopsign(KHopSignSpec{1000, 0.1, 1, 0.0, 202});
  const auto task = target.instance();
  const auto r = goblin_infer(model, task, *target.distances, {});
  const auto pred = predict_classes(r.logits);
  EXPECT_GT(accuracy(pred, task.labels(), task.test_nodes()), 0.9);
  for (Eigen::Index u = 0; u < r.alpha.rows(); ++u) EXPECT_NEAR(r.alpha.row(u).sum(), 1.0, 1e-12);
}
