#include <gtest/gtest.h>

#include <cmath>

#include "pfa/exposure.hpp"
#include "pfa/losses.hpp"

namespace pfa {
namespace {

GroupPartition make_partition(const std::vector<std::vector<std::uint32_t>>& members) {
  GroupPartition p;
  p.num_groups = members.size();
  p.members = members;
  std::size_t L = 0;
  for (const auto& g : members) L += g.size();
  p.provider_group.resize(L);
  for (std::size_t c = 0; c < members.size(); ++c)
    for (auto s : members[c]) p.provider_group[s] = static_cast<std::uint32_t>(c);
  return p;
}

// Random partition of L providers into C non-empty groups.
GroupPartition random_partition(Rng& rng, std::size_t L, std::size_t C) {
  std::vector<std::uint32_t> ids(L);
  std::iota(ids.begin(), ids.end(), 0U);
  std::shuffle(ids.begin(), ids.end(), rng);
  std::vector<std::vector<std::uint32_t>> members(C);
  for (std::size_t i = 0; i < L; ++i) members[i < C ? i : uniform_index(rng, C)].push_back(ids[i]);
  return make_partition(members);
}

std::vector<double> random_simplex(Rng& rng, std::size_t n) {
  std::vector<double> x(n);
  double s = 0.0;
  for (auto& v : x) s += (v = uniform(rng, 0.05, 1.0));
  for (auto& v : x) v /= s;
  return x;
}

TEST(PositionBias, Shape) {
  const PositionBias b(20);
  EXPECT_EQ(b[0], 1.0);
  EXPECT_NEAR(b[1], 0.6309297535714575, 1e-15);
  for (std::size_t r = 1; r < 20; ++r) {
    EXPECT_LT(b[r], b[r - 1]);
    EXPECT_GT(b[r], 0.0);
  }
}

TEST(HardExposure, TwoItemList) {
  const std::vector<std::uint32_t> item_provider = {0, 1};
  const auto e = hard_exposure({{0, 1}}, item_provider, 3, 2);
  EXPECT_EQ(e[0], 1.0);
  EXPECT_NEAR(e[1], 0.6309297535714575, 1e-15);
  EXPECT_EQ(e[2], 0.0);
}

TEST(HardExposure, MatchesPerPositionAccumulation) {
  Rng rng(2);
  const std::size_t N = 12, L = 4, K = 3;
  std::vector<std::uint32_t> item_provider(N);
  for (auto& s : item_provider) s = static_cast<std::uint32_t>(uniform_index(rng, L));
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::vector<std::uint32_t>> lists(3);
    for (auto& l : lists) {
      std::vector<std::uint32_t> all(N);
      std::iota(all.begin(), all.end(), 0U);
      std::shuffle(all.begin(), all.end(), rng);
      l.assign(all.begin(), all.begin() + K);
    }
    const auto e = hard_exposure(lists, item_provider, L, K);
    for (std::size_t s = 0; s < L; ++s) {
      double expected = 0.0;
      for (std::size_t u = 0; u < 3; ++u)
        for (std::size_t k = 1; k <= K; ++k)
          if (item_provider[lists[u][k - 1]] == s) expected += 1.0 / std::log2(1.0 + static_cast<double>(k));
      EXPECT_DOUBLE_EQ(e[s], expected);
    }
  }
}

TEST(SoftExposure, HardPermutationEqualsHardExposure) {
  Rng rng(4);
  const std::vector<std::uint32_t> item_provider = {0, 1, 2, 0, 1, 2, 0, 1};
  std::vector<SoftPermutation<double>> perms;
  std::vector<std::vector<std::uint32_t>> cands, lists;
  for (int u = 0; u < 3; ++u) {
    std::vector<std::uint32_t> c = {0, 1, 2, 3, 4, 5, 6, 7};
    std::shuffle(c.begin(), c.end(), rng);
    c.resize(5);
    std::vector<double> s(5);
    for (auto& x : s) x = uniform(rng, -1, 1);
    perms.push_back(hard_permutation(s, 3));
    const auto hs = sort_hard(s);
    lists.push_back({c[hs.order[0]], c[hs.order[1]], c[hs.order[2]]});
    cands.push_back(c);
  }
  EXPECT_EQ(soft_exposure(perms, cands, item_provider, 3, 3), hard_exposure(lists, item_provider, 3, 3));
}

TEST(SoftExposure, UniformProbabilitiesAreSymmetric) {
  const std::size_t n = 4;
  SoftPermutation<double> p;
  p.n = n;
  p.k = n;
  p.probs.assign(n * n, 1.0 / n);
  const std::vector<std::uint32_t> item_provider = {0, 1, 2, 3};
  const auto e = soft_exposure<double>({p}, {{0, 1, 2, 3}}, item_provider, 4, 4);
  for (std::size_t s = 1; s < 4; ++s) EXPECT_NEAR(e[s], e[0], 1e-15);
}

TEST(SoftExposure, SharpNetworkApproachesHardExposure) {
  // Scores two units apart: each comparison misroutes ~1/(2 pi beta) of mass.
  Rng rng(6);
  const std::vector<std::uint32_t> item_provider = {0, 1, 2, 0, 1, 2, 0, 1};
  std::vector<SoftPermutation<double>> perms;
  std::vector<std::vector<std::uint32_t>> cands, lists;
  for (int u = 0; u < 4; ++u) {
    std::vector<std::uint32_t> c = {0, 1, 2, 3, 4, 5, 6, 7};
    std::vector<double> s = {0, 2, 4, 6, 8, 10, 12, 14};
    std::shuffle(s.begin(), s.end(), rng);
    perms.push_back(sort_soft(s, CauchySmoothing(1000.0), 3));
    const auto hs = sort_hard(s);
    lists.push_back({hs.order[0], hs.order[1], hs.order[2]});
    cands.push_back(c);
  }
  const auto soft = soft_exposure(perms, cands, item_provider, 3, 3);
  const auto hard = hard_exposure(lists, item_provider, 3, 3);
  for (std::size_t s = 0; s < 3; ++s) EXPECT_NEAR(soft[s], hard[s], 1e-3 * hard[s]);
}

TEST(SoftExposure, TotalMassIsUsersTimesBiasSum) {
  Rng rng(8);
  const std::size_t N = 30, K = 5;
  std::vector<std::uint32_t> item_provider(N);
  for (auto& s : item_provider) s = static_cast<std::uint32_t>(uniform_index(rng, 6));
  std::vector<SoftPermutation<double>> perms;
  std::vector<std::vector<std::uint32_t>> cands;
  for (int u = 0; u < 7; ++u) {
    std::vector<std::uint32_t> c(N);
    std::iota(c.begin(), c.end(), 0U);
    std::shuffle(c.begin(), c.end(), rng);
    c.resize(12);
    std::vector<double> s(12);
    for (auto& x : s) x = uniform(rng, -1, 1);
    perms.push_back(sort_soft(s, CauchySmoothing(10.0), K));
    cands.push_back(c);
  }
  const auto e = soft_exposure(perms, cands, item_provider, 6, K);
  double total = 0.0;
  for (double x : e) total += x;
  EXPECT_NEAR(total, 7.0 * PositionBias(K).total(), 1e-9);
}

TEST(SoftExposure, GradientMatchesFiniteDifferences) {
  Rng rng(10);
  const std::vector<std::uint32_t> item_provider = {0, 1, 2, 0, 1, 2};
  const std::vector<std::vector<std::uint32_t>> cands = {{0, 1, 2, 3, 4, 5}};
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> s(6);
    for (auto& x : s) x = uniform(rng, -0.3, 0.3);
    const std::size_t target = uniform_index(rng, 3);
    Tape tape;
    const auto vars = tape.variables(s);
    const auto e = soft_exposure<Var>({sort_soft<Var>(vars, CauchySmoothing(10.0), 3)}, cands, item_provider, 3, 3);
    const auto analytic = tape.backward(e[target]).of(vars);
    const auto rep = finite_diff_check(
        [&](std::span<const double> x) {
          return soft_exposure<double>({sort_soft<double>(x, CauchySmoothing(10.0), 3)}, cands, item_provider, 3,
                                       3)[target];
        },
        s, analytic);
    EXPECT_TRUE(rep.passed) << "trial " << trial << " max rel " << rep.max_rel_error;
  }
}

TEST(BuildTarget, UniformProvider) {
  const auto part = make_partition({{0, 1}, {2, 3}});
  const auto t = build_target(TargetMode::uniform_provider, 4, part);
  EXPECT_EQ(t.provider, std::vector<double>(4, 0.25));
  EXPECT_TRUE(t.group.empty());
}

TEST(BuildTarget, UniformGroup) {
  const auto part = make_partition({{0}, {1, 2, 3}});
  const auto t = build_target(TargetMode::uniform_group, 4, part);
  EXPECT_EQ(t.group, (std::vector<double>{0.5, 0.5}));
  EXPECT_DOUBLE_EQ(t.provider[0], 0.5);
  for (int s = 1; s < 4; ++s) EXPECT_DOUBLE_EQ(t.provider[s], 1.0 / 6.0);
}

TEST(BuildTarget, CustomGroupGivesCalibrationTerm) {
  const auto part = make_partition({{0, 1}, {2, 3}});
  const std::vector<double> tg = {0.7, 0.3};
  const auto t = build_target(TargetMode::custom, 4, part, tg);
  EXPECT_EQ(t.group, tg);
  const std::vector<double> e = {4, 1, 3, 2};
  const auto st = hierarchical_stats<double>(e, t, part);
  const auto d = verify_decomposition(st);
  EXPECT_GT(std::abs(d.calibration), 1e-3);
  EXPECT_TRUE(d.passed);
}

TEST(BuildTarget, CustomValidation) {
  const auto part = make_partition({{0, 1}, {2, 3}});
  const std::vector<double> wrong_len = {0.5, 0.25, 0.25};
  const std::vector<double> not_norm = {0.5, 0.6};
  const std::vector<double> ok = {0.5, 0.5};
  const std::vector<double> zero_group = {0.5, 0.5, 0.0, 0.0};
  EXPECT_THROW(build_target(TargetMode::custom, 4, part, wrong_len), Error);
  EXPECT_THROW(build_target(TargetMode::custom, 4, part, not_norm), Error);
  EXPECT_THROW(build_target(TargetMode::custom, 4, part, ok, zero_group), Error);
  EXPECT_THROW(parse_target_mode("uniform"), Error);
  EXPECT_EQ(parse_target_mode("uniform_group"), TargetMode::uniform_group);
}

TEST(HierarchicalStats, HandExample) {
  const auto part = make_partition({{0, 1}, {2, 3}});
  const auto t = build_target(TargetMode::uniform_provider, 4, part);
  const std::vector<double> e = {4, 1, 3, 2};
  const auto st = hierarchical_stats<double>(e, t, part);
  EXPECT_NEAR(st.p_group[0], 0.5, 1e-11);
  EXPECT_NEAR(st.p_group[1], 0.5, 1e-11);
  EXPECT_NEAR(st.p_within[0][0], 0.8, 1e-11);
  EXPECT_NEAR(st.p_within[0][1], 0.2, 1e-11);
  EXPECT_NEAR(st.p_within[1][0], 0.6, 1e-11);
  EXPECT_NEAR(st.p_within[1][1], 0.4, 1e-11);
}

TEST(HierarchicalStats, ExposureProportionalToTarget) {
  const auto part = make_partition({{0, 3}, {1, 2, 4}});
  const auto t = build_target(TargetMode::uniform_group, 5, part);
  std::vector<double> e;
  for (double x : t.provider) e.push_back(37.0 * x);
  const auto st = hierarchical_stats<double>(e, t, part);
  for (std::size_t s = 0; s < 5; ++s) EXPECT_NEAR(st.p[s], st.t[s], 1e-12);
  for (std::size_t c = 0; c < 2; ++c) {
    EXPECT_NEAR(value_of(st.p_group[c]), st.t_agg[c], 1e-12);
    for (std::size_t j = 0; j < st.p_within[c].size(); ++j) EXPECT_NEAR(st.p_within[c][j], st.t_within[c][j], 1e-12);
  }
}

TEST(HierarchicalStats, SingleGroup) {
  const auto part = make_partition({{0, 1, 2}});
  const auto t = build_target(TargetMode::uniform_provider, 3, part);
  const std::vector<double> e = {1, 2, 3};
  const auto st = hierarchical_stats<double>(e, t, part);
  EXPECT_NEAR(st.p_group[0], 1.0, 1e-12);
  for (std::size_t s = 0; s < 3; ++s) EXPECT_NEAR(st.p_within[0][s], st.p[s], 1e-12);
}

TEST(HierarchicalStats, Errors) {
  const auto part = make_partition({{0, 1}, {2, 3}});
  const auto t = build_target(TargetMode::uniform_provider, 4, part);
  const std::vector<double> zero = {0, 0, 0, 0};
  const std::vector<double> group_zero = {1, 2, 0, 0};
  const std::vector<double> negative = {1, -1, 1, 1};
  EXPECT_THROW(hierarchical_stats<double>(zero, t, part), Error);
  EXPECT_THROW(hierarchical_stats<double>(negative, t, part), Error);
  EXPECT_THROW(hierarchical_stats<double>(group_zero, t, part, 0.0), Error);
  EXPECT_NO_THROW(hierarchical_stats<double>(group_zero, t, part));
}

TEST(Decomposition, WorkedExample) {
  const auto part = make_partition({{0, 1}, {2, 3}});
  const auto t = build_target(TargetMode::uniform_provider, 4, part);
  const std::vector<double> e = {0.4, 0.1, 0.3, 0.2};
  const auto d = verify_decomposition(hierarchical_stats<double>(e, t, part));
  EXPECT_NEAR(d.global, 0.10644013528622319, 1e-10);
  EXPECT_NEAR(d.inter, 0.0, 1e-10);
  EXPECT_NEAR(d.intra, 0.10644013528622319, 1e-10);
  EXPECT_EQ(d.calibration, 0.0);
  EXPECT_LT(d.residual, 1e-12);
}

TEST(Decomposition, RandomizedIdentity) {
  Rng rng(12);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t L = 2 + uniform_index(rng, 20);
    const std::size_t C = 1 + uniform_index(rng, std::min<std::size_t>(L, 5));
    const auto part = random_partition(rng, L, C);
    Target t;
    t.provider = random_simplex(rng, L);
    if (trial % 2 == 0) t.group = random_simplex(rng, C);
    const auto e = random_simplex(rng, L);
    const auto d = verify_decomposition(hierarchical_stats<double>(e, t, part));
    EXPECT_LT(d.residual, 1e-10) << "trial " << trial;
    if (t.group.empty()) {
      EXPECT_EQ(d.calibration, 0.0);
    }
  }
}

TEST(Decomposition, ZeroEntriesWithoutSmoothingAreAnError) {
  const auto part = make_partition({{0, 1}, {2, 3}});
  const auto t = build_target(TargetMode::uniform_provider, 4, part);
  const std::vector<double> e = {1, 0, 1, 1};
  EXPECT_THROW(verify_decomposition(hierarchical_stats<double>(e, t, part, 0.0)), Error);
}

}  // namespace
}  // namespace pfa
