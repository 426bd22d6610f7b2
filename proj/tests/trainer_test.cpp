#include <gtest/gtest.h>

#include <cmath>

#include "pfa/gradcheck.hpp"
#include "pfa/trainer.hpp"

namespace pfa {
namespace {

EpochRecord rec(std::size_t epoch, double ndcg, double g) {
  EpochRecord r;
  r.epoch = epoch;
  r.val_ndcg = ndcg;
  r.val_gini = g;
  return r;
}

TEST(SelectCheckpoint, LowestGiniAboveFloor) {
  // threshold = 0.9 * 0.1 = 0.09; epoch 2 is just below it
  const std::vector<EpochRecord> log = {rec(0, 0.1, 0.8), rec(1, 0.095, 0.63), rec(2, 0.089, 0.60)};
  EXPECT_EQ(select_checkpoint(log, 0.1, 0.1), 1u);
  EXPECT_EQ(select_checkpoint(log, 0.2, 0.1), 2u);
  EXPECT_EQ(select_checkpoint(log, 0.0, 0.1), 0u);
}

TEST(SelectCheckpoint, TiesGoToEarlierEpoch) {
  const std::vector<EpochRecord> log = {rec(0, 0.2, 0.5), rec(1, 0.2, 0.4), rec(2, 0.2, 0.4)};
  EXPECT_EQ(select_checkpoint(log, 0.1, 0.2), 1u);
}

TEST(SelectCheckpoint, FallsBackToBestNdcg) {
  const std::vector<EpochRecord> log = {rec(0, 0.05, 0.9), rec(1, 0.07, 0.5), rec(2, 0.07, 0.3), rec(3, 0.06, 0.1)};
  EXPECT_EQ(select_checkpoint(log, 0.1, 0.5), 1u);
  EXPECT_THROW(select_checkpoint(std::vector<EpochRecord>{}, 0.1, 0.5), Error);
}

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
  std::vector<double> p = {1.0, -2.0};
  AdamState st(2);
  for (int i = 0; i < 3; ++i) adam_step(p, std::vector<double>{0.0, 0.0}, st, AdamConfig{0.1});
  EXPECT_EQ(p, (std::vector<double>{1.0, -2.0}));
  EXPECT_EQ(st.t, 3u);
}

TEST(Adam, FirstStepIsLearningRateTimesSign) {
  std::vector<double> p = {0.0, 0.0, 0.0};
  AdamState st(3);
  adam_step(p, std::vector<double>{3.0, -0.01, 250.0}, st, AdamConfig{0.05});
  EXPECT_NEAR(p[0], -0.05, 1e-9);
  EXPECT_NEAR(p[1], 0.05, 1e-6);
  EXPECT_NEAR(p[2], -0.05, 1e-9);
}

TEST(Adam, TwoStepHandTrace) {
  // lr 0.1, g = 1 then 0.5, starting at 1.
  std::vector<double> p = {1.0};
  AdamState st(1);
  adam_step(p, std::vector<double>{1.0}, st, AdamConfig{0.1});
  EXPECT_NEAR(p[0], 0.900000001, 1e-12);
  adam_step(p, std::vector<double>{0.5}, st, AdamConfig{0.1});
  EXPECT_NEAR(p[0], 0.8067820382981611, 1e-12);
}

TEST(Adam, ShapeMismatchThrows) {
  std::vector<double> p = {1.0, 2.0};
  AdamState st(2);
  EXPECT_THROW(adam_step(p, std::vector<double>{1.0}, st, AdamConfig{}), Error);
  AdamState bad(3);
  EXPECT_THROW(adam_step(p, std::vector<double>{1.0, 1.0}, bad, AdamConfig{}), Error);
}

TEST(SelectCandidates, PositivesPlusTopScores) {
  const std::vector<double> s = {0.5, 0.9, 0.1, 0.7, 0.3};
  EXPECT_EQ(select_candidates(s, std::vector<std::uint32_t>{2}, 3), (std::vector<std::uint32_t>{1, 3, 2}));
  EXPECT_EQ(select_candidates(s, std::vector<std::uint32_t>{2}, 0), (std::vector<std::uint32_t>{1, 3, 0, 4, 2}));
  EXPECT_EQ(select_candidates(s, std::vector<std::uint32_t>{0, 2, 4}, 2), (std::vector<std::uint32_t>{0, 4}));
  EXPECT_EQ(select_candidates(s, std::vector<std::uint32_t>{}, 9), (std::vector<std::uint32_t>{1, 3, 0, 4, 2}));
}

TEST(MakeSlate, MarksRelevance) {
  const auto sl = make_slate(3, {4, 1, 7}, std::vector<std::uint32_t>{1, 2, 7});
  EXPECT_EQ(sl.user, 3u);
  EXPECT_EQ(sl.relevance, (std::vector<double>{0.0, 1.0, 1.0}));
}

TEST(SlateObjective, GradientMatchesFiniteDifferences) {
  const auto toy = toy_instance();
  const auto base = toy_base_scores(toy);
  const auto target = build_target(TargetMode::uniform_group, 3, toy.part);
  for (auto kind : {FairnessLoss::kl, FairnessLoss::hefa}) {
    TrainConfig cfg = toy.cfg;
    cfg.fairness = kind;
    cfg.weights.acc = 0.7;
    const SlateObjective obj(toy.ds.item_provider, 3, target, toy.part, cfg);
    const auto out = obj.evaluate(toy.slates, base, true);
    std::vector<double> theta, analytic;
    for (std::size_t i = 0; i < base.size(); ++i) {
      theta.insert(theta.end(), base[i].begin(), base[i].end());
      analytic.insert(analytic.end(), out.grad_scores[i].begin(), out.grad_scores[i].end());
    }
    auto f = [&](std::span<const double> x) {
      std::vector<std::vector<double>> rows;
      std::size_t off = 0;
      for (const auto& r : base) {
        rows.emplace_back(x.begin() + static_cast<std::ptrdiff_t>(off),
                          x.begin() + static_cast<std::ptrdiff_t>(off + r.size()));
        off += r.size();
      }
      return obj.evaluate(toy.slates, rows, false).total;
    };
    const auto rep = finite_diff_check(f, theta, analytic);
    EXPECT_TRUE(rep.passed) << to_string(kind) << " " << rep.max_rel_error;
    EXPECT_NEAR(out.total, out.fairness + 0.7 * out.ndcg_loss, 1e-15);
  }
}

TEST(AdapterObjective, ZeroInitReducesToBaseFairness) {
  const auto toy = toy_instance();
  const auto base = toy_base_scores(toy);
  const auto target = build_target(TargetMode::uniform_group, 3, toy.part);
  for (auto kind : {FairnessLoss::kl, FairnessLoss::hefa}) {
    TrainConfig cfg = toy.cfg;
    cfg.fairness = kind;
    cfg.weights.acc = 0.0;
    const AdapterObjective obj(toy.emb, toy.ds.item_provider, 3, target, toy.part, cfg);
    const auto p = init_adapter({toy.emb.dim, cfg.hidden, 2}, 1, 0.0);
    const auto via_adapter = obj.evaluate(p, toy.slates, false).value;

    // Expected exposure of the base scores, computed directly.
    const CauchySmoothing h(cfg.beta);
    std::vector<SoftPermutation<double>> perms;
    std::vector<std::vector<std::uint32_t>> cands;
    for (std::size_t i = 0; i < toy.slates.size(); ++i) {
      perms.push_back(sort_soft(base[i], h, cfg.k));
      cands.push_back(toy.slates[i].candidates);
    }
    const auto e = soft_exposure(perms, cands, toy.ds.item_provider, 3, cfg.k);
    const auto direct = fairness_loss_grad(e, target, toy.part, kind, cfg.weights).value;
    EXPECT_NEAR(via_adapter.total, direct, 1e-12) << to_string(kind);
    EXPECT_NEAR(via_adapter.fairness, direct, 1e-12);
  }
}

// Two providers of 10 items each; every user prefers provider 0's items.
struct SkewedSetup {
  InteractionDataset ds;
  SplitAssignment split;
  GroupPartition part;
  EmbeddingTable emb;
};

SkewedSetup skewed_setup() {
  SkewedSetup s;
  const std::size_t users = 30, items = 20, d = 4;
  s.ds.num_users = users;
  s.ds.num_items = items;
  s.ds.num_providers = 2;
  for (std::uint32_t v = 0; v < items; ++v) s.ds.item_provider.push_back(v < 10 ? 0 : 1);
  Rng rng(4);
  s.split.train.resize(users);
  s.split.val.resize(users);
  s.split.test.resize(users);
  for (std::uint32_t u = 0; u < users; ++u) {
    s.split.train[u] = {u % 10, 10 + u % 10};
    s.split.val[u] = {(u + 3) % 10};
    s.split.test[u] = {10 + (u + 5) % 10};
    for (auto v : {u % 10, 10 + u % 10, (u + 3) % 10, 10 + (u + 5) % 10}) s.ds.interactions.push_back({u, v});
  }
  std::sort(s.ds.interactions.begin(), s.ds.interactions.end());
  const std::vector<std::size_t> counts = {2, 1};
  s.part = partition_from_counts(counts, std::vector<double>{0.5, 0.5});
  s.emb = init_embeddings(users, items, d, 2);
  for (std::uint32_t u = 0; u < users; ++u) {
    auto r = s.emb.user.row(u);
    r[0] = 1.0;
    for (std::size_t i = 1; i < d; ++i) r[i] = uniform(rng, -0.3, 0.3);
  }
  for (std::uint32_t v = 0; v < items; ++v) {
    auto r = s.emb.item.row(v);
    r[0] = v < 10 ? 1.0 : -1.0;
    for (std::size_t i = 1; i < d; ++i) r[i] = uniform(rng, -0.3, 0.3);
  }
  s.emb.frozen = true;
  return s;
}

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.k = 5;
  cfg.candidates = 0;
  cfg.batch_size = 10;
  cfg.hidden = 8;
  cfg.lr = 0.01;
  cfg.weights.acc = 0.0;
  cfg.seed = 3;
  return cfg;
}

TEST(TrainAdapter, ZeroEpochsKeepsInitialization) {
  const auto s = skewed_setup();
  auto cfg = small_config();
  cfg.epochs = 0;
  const auto target = build_target(TargetMode::uniform_provider, 2, s.part);
  const auto res = train_adapter(s.ds, s.split, s.part, s.emb, target, cfg);
  ASSERT_EQ(res.log.size(), 1u);
  EXPECT_EQ(res.best.epoch, 0u);
  EXPECT_TRUE(res.steps.empty());
  EXPECT_EQ(res.best.params.values, init_adapter({4, 8, 2}, 3).values);
}

TEST(TrainAdapter, ReducesGiniWhenOnlyFairnessCounts) {
  const auto s = skewed_setup();
  auto cfg = small_config();
  cfg.epochs = 20;
  const auto target = build_target(TargetMode::uniform_provider, 2, s.part);
  const auto checksum = s.emb.checksum();
  const auto res = train_adapter(s.ds, s.split, s.part, s.emb, target, cfg);
  EXPECT_EQ(s.emb.checksum(), checksum);
  ASSERT_EQ(res.log.size(), 21u);
  EXPECT_EQ(res.steps.size(), 20u * 3u);
  EXPECT_GT(res.base_val_gini, 0.4);
  EXPECT_LT(res.log.back().val_gini, 0.5 * res.base_val_gini);
  EXPECT_LT(res.log.back().fairness_loss, res.log.front().fairness_loss);
}

TEST(TrainAdapter, Deterministic) {
  const auto s = skewed_setup();
  auto cfg = small_config();
  cfg.epochs = 3;
  cfg.weights.acc = 0.5;
  const auto target = build_target(TargetMode::uniform_group, 2, s.part);
  const auto a = train_adapter(s.ds, s.split, s.part, s.emb, target, cfg);
  const auto b = train_adapter(s.ds, s.split, s.part, s.emb, target, cfg);
  EXPECT_EQ(a.snapshots.back().values, b.snapshots.back().values);
  ASSERT_EQ(a.steps.size(), b.steps.size());
  for (std::size_t i = 0; i < a.steps.size(); ++i) EXPECT_EQ(a.steps[i].total_loss, b.steps[i].total_loss);
}

TEST(TrainAdapter, RejectsBadSetup) {
  auto s = skewed_setup();
  auto cfg = small_config();
  cfg.epochs = 1;
  const auto target = build_target(TargetMode::uniform_provider, 2, s.part);
  auto cfg_k = cfg;
  cfg_k.candidates = 3;
  EXPECT_THROW(train_adapter(s.ds, s.split, s.part, s.emb, target, cfg_k), Error);
  auto cfg_lr = cfg;
  cfg_lr.lr = 0.0;
  EXPECT_THROW(train_adapter(s.ds, s.split, s.part, s.emb, target, cfg_lr), Error);
  s.emb.frozen = false;
  EXPECT_THROW(train_adapter(s.ds, s.split, s.part, s.emb, target, cfg), Error);
}

}  // namespace
}  // namespace pfa
