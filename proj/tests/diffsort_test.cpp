#include <gtest/gtest.h>

#include <cmath>

#include "pfa/diffsort.hpp"
#include "pfa/exposure.hpp"

namespace pfa {
namespace {

std::vector<double> random_scores(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> s(n);
  for (auto& x : s) x = uniform(rng, lo, hi);
  return s;
}

// Random scores whose pairwise gaps are all at least `gap`.
std::vector<double> spaced_scores(Rng& rng, std::size_t n, double gap) {
  std::vector<double> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = static_cast<double>(i) * gap * 1.5;
  std::shuffle(s.begin(), s.end(), rng);
  return s;
}

TEST(CauchySmoothing, Properties) {
  const CauchySmoothing h(10.0);
  EXPECT_EQ(h(0.0), 0.5);
  double prev = 0.0;
  for (double x = -5.0; x <= 5.0; x += 0.01) {
    EXPECT_NEAR(h(-x), 1.0 - h(x), 1e-15);
    EXPECT_GT(h(x), 0.0);
    EXPECT_LT(h(x), 1.0);
    EXPECT_GE(h(x), prev);
    prev = h(x);
  }
  EXPECT_THROW(CauchySmoothing(0.0), Error);
}

TEST(SoftSwap, EqualInputs) {
  const auto r = soft_swap(5.0, 5.0, CauchySmoothing(10.0));
  EXPECT_EQ(r.alpha, 0.5);
  EXPECT_EQ(r.first, 5.0);
  EXPECT_EQ(r.second, 5.0);
}

TEST(SoftSwap, QuarterTurn) {
  const auto r = soft_swap(0.0, 0.1, CauchySmoothing(10.0));
  EXPECT_NEAR(r.alpha, 0.75, 1e-15);
}

TEST(SoftSwap, UnitGap) {
  const auto r = soft_swap(1.0, 2.0, CauchySmoothing(10.0));
  EXPECT_NEAR(r.alpha, 0.9682744825694465, 1e-12);
  EXPECT_NEAR(r.first, 1.9682744825694465, 1e-12);
  EXPECT_NEAR(r.second, 1.0317255174305535, 1e-12);
}

TEST(SoftSwap, SumPreserved) {
  Rng rng(3);
  const CauchySmoothing h(10.0);
  for (int i = 0; i < 1000; ++i) {
    const double a = uniform(rng, -3, 3), b = uniform(rng, -3, 3);
    const auto r = soft_swap(a, b, h);
    EXPECT_NEAR(r.first + r.second, a + b, 1e-12);
  }
}

TEST(SortSoft, SingleItem) {
  const std::vector<double> s = {0.3};
  const auto p = sort_soft(s, CauchySmoothing{}, 1);
  ASSERT_EQ(p.probs.size(), 1u);
  EXPECT_EQ(p(0, 0), 1.0);
}

TEST(SortSoft, TwoItems) {
  // The larger score (item 1) takes rank 0 with probability alpha.
  const std::vector<double> s = {1.0, 2.0};
  const auto p = sort_soft(s, CauchySmoothing(10.0), 2);
  EXPECT_NEAR(p(1, 0), 0.9682744825694465, 1e-12);
  EXPECT_NEAR(p(0, 0), 1.0 - 0.9682744825694465, 1e-12);
  EXPECT_NEAR(p(0, 1), 0.9682744825694465, 1e-12);
}

TEST(SortSoft, KExceedingNIsAnError) {
  const std::vector<double> s = {1.0, 2.0};
  EXPECT_THROW(sort_soft(s, CauchySmoothing{}, 3), Error);
}

TEST(SortSoft, SharpLimitMatchesHardArgsort) {
  // Near-ties are genuinely ambiguous at any finite beta, so scores keep a
  // minimum gap of 0.01.
  Rng rng(5);
  const CauchySmoothing h(1000.0);
  for (int trial = 0; trial < 100; ++trial) {
    auto s = spaced_scores(rng, 8, 0.01);
    for (auto& x : s) x += uniform(rng, 0.0, 0.005);
    const auto p = sort_soft(s, h, 8);
    const auto hard = sort_hard(s);
    for (std::size_t r = 0; r < 8; ++r) {
      std::size_t best = 0;
      for (std::size_t v = 1; v < 8; ++v)
        if (p(v, r) > p(best, r)) best = v;
      EXPECT_EQ(best, hard.order[r]) << "trial " << trial << " rank " << r;
    }
  }
}

TEST(SortSoft, DoublyStochastic) {
  Rng rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + uniform_index(rng, 64);
    const auto s = random_scores(rng, n, -2.0, 2.0);
    const auto p = sort_soft(s, CauchySmoothing(10.0), n);
    for (std::size_t v = 0; v < n; ++v) {
      double row = 0.0, col = 0.0;
      for (std::size_t r = 0; r < n; ++r) {
        row += p(v, r);
        col += p(r, v);
        EXPECT_GE(p(v, r), 0.0);
        EXPECT_LE(p(v, r), 1.0);
      }
      EXPECT_NEAR(row, 1.0, 1e-9);
      EXPECT_NEAR(col, 1.0, 1e-9);
    }
  }
}

TEST(SortSoft, SortedScoresAreColumnWeightedInputs) {
  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + uniform_index(rng, 20);
    const auto s = random_scores(rng, n);
    const auto p = sort_soft(s, CauchySmoothing(10.0), n);
    double in_sum = 0.0, out_sum = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      double col = 0.0;
      for (std::size_t v = 0; v < n; ++v) col += p(v, r) * s[v];
      EXPECT_NEAR(col, p.sorted[r], 1e-9);
      in_sum += s[r];
      out_sum += p.sorted[r];
    }
    EXPECT_NEAR(in_sum, out_sum, 1e-9);
  }
}

// Each comparison leaves a residual 1 - H(gap) ~ 1 / (pi beta gap) on the
// wrong side, so the distance to the hard permutation shrinks like 1/beta.
TEST(SortSoft, ConvergesToHardPermutation) {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const auto s = spaced_scores(rng, 8, 0.01);
    const auto hard = hard_permutation(s, 8);
    double prev = 1.0;
    for (double beta : {1e3, 1e4, 1e5, 1e6}) {
      const auto p = sort_soft(s, CauchySmoothing(beta), 8);
      double dev = 0.0;
      for (std::size_t i = 0; i < p.probs.size(); ++i) dev = std::max(dev, std::abs(p.probs[i] - hard.probs[i]));
      EXPECT_LT(dev, prev);
      prev = dev;
    }
    EXPECT_LE(prev, 1e-3);
  }
}

TEST(SortSoft, EntryGradientsMatchFiniteDifferences) {
  Rng rng(21);
  const CauchySmoothing h(10.0);
  const std::size_t n = 5;
  for (int trial = 0; trial < 20; ++trial) {
    const auto s = random_scores(rng, n, -0.3, 0.3);
    const std::size_t v = uniform_index(rng, n), r = uniform_index(rng, n);
    Tape tape;
    const auto vars = tape.variables(s);
    const auto p = sort_soft<Var>(vars, h, n);
    const auto analytic = tape.backward(p(v, r)).of(vars);
    const auto rep = finite_diff_check(
        [&](std::span<const double> x) { return sort_soft<double>(x, h, n)(v, r); }, s, analytic);
    EXPECT_TRUE(rep.passed) << "trial " << trial << " max rel " << rep.max_rel_error;
  }
}

TEST(SortingNetwork, ProductsMatchMaterializedMatrix) {
  Rng rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + uniform_index(rng, 30);
    const auto s = random_scores(rng, n);
    const auto p = sort_soft(s, CauchySmoothing(10.0), n);
    SortingNetwork net(CauchySmoothing(10.0));
    net.forward(s);
    const auto w = random_scores(rng, n);
    const auto pw = net.expected_item_weight(w);
    const auto ptw = net.expected_rank_value(w);
    for (std::size_t i = 0; i < n; ++i) {
      double a = 0.0, b = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        a += p(i, j) * w[j];
        b += p(j, i) * w[j];
      }
      EXPECT_NEAR(pw[i], a, 1e-12);
      EXPECT_NEAR(ptw[i], b, 1e-12);
      EXPECT_NEAR(net.sorted()[i], p.sorted[i], 1e-12);
    }
  }
}

TEST(SortingNetwork, TruncatedRankWeightsPadWithZeros) {
  const std::vector<double> s = {0.4, -0.1, 0.9, 0.2};
  SortingNetwork net;
  net.forward(s);
  const std::vector<double> b = {1.0, 0.5};
  const auto w = net.expected_item_weight(b);
  const auto p = sort_soft(s, CauchySmoothing{}, 2);
  for (std::size_t v = 0; v < 4; ++v) EXPECT_NEAR(w[v], p(v, 0) * 1.0 + p(v, 1) * 0.5, 1e-12);
}

TEST(SortingNetwork, BackwardMatchesTape) {
  // L = g_item . (P w) + g_rank . (P^T r); only the scores are variables.
  Rng rng(29);
  const CauchySmoothing h(10.0);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + uniform_index(rng, 10);
    const auto s = random_scores(rng, n, -0.5, 0.5);
    const auto w = random_scores(rng, n, 0.0, 1.0);
    const auto gi = random_scores(rng, n);
    const auto rv = random_scores(rng, n, 0.0, 1.0);
    const auto gr = random_scores(rng, n);

    Tape tape;
    const auto vars = tape.variables(s);
    const auto p = sort_soft<Var>(vars, h, n);
    Var loss = tape.variable(0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        loss += p(i, j) * (gi[i] * w[j]);
        loss += p(j, i) * (gr[i] * rv[j]);
      }
    const auto expected = tape.backward(loss).of(vars);

    SortingNetwork net(h);
    net.forward(s);
    const auto got = net.backward(w, gi, rv, gr);
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(got[i], expected[i], 1e-10 * (1.0 + std::abs(expected[i])));
  }
}

TEST(SortingNetwork, BackwardMatchesFiniteDifferences) {
  Rng rng(31);
  const CauchySmoothing h(10.0);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 16;
    const auto s = random_scores(rng, n, -0.5, 0.5);
    const PositionBias b(8);
    const auto gi = random_scores(rng, n);
    auto f = [&](std::span<const double> x) {
      SortingNetwork net(h);
      net.forward(x);
      const auto e = net.expected_item_weight(b.b);
      double out = 0.0;
      for (std::size_t i = 0; i < n; ++i) out += gi[i] * e[i];
      return out;
    };
    SortingNetwork net(h);
    net.forward(s);
    const auto analytic = net.backward(b.b, gi, {}, {});
    const auto rep = finite_diff_check(f, s, analytic);
    EXPECT_TRUE(rep.passed) << "trial " << trial << " max rel " << rep.max_rel_error;
  }
}

TEST(SortSoft, RaisingAScoreDoesNotLowerExpectedRankWeight) {
  Rng rng(37);
  const PositionBias b(10);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 10;
    auto s = random_scores(rng, n);
    const std::size_t v = uniform_index(rng, n);
    SortingNetwork net(CauchySmoothing(10.0));
    net.forward(s);
    const double before = net.expected_item_weight(b.b)[v];
    s[v] += uniform(rng, 0.01, 0.5);
    net.forward(s);
    const double after = net.expected_item_weight(b.b)[v];
    EXPECT_GE(after, before - 1e-12) << "trial " << trial;
  }
}

TEST(SortHard, Examples) {
  const std::vector<double> s = {3.0, 1.0, 2.0};
  EXPECT_EQ(sort_hard(s).order, (std::vector<std::uint32_t>{0, 2, 1}));
  EXPECT_EQ(sort_hard(s).rank, (std::vector<std::uint32_t>{0, 2, 1}));
  const std::vector<double> flat(5, 1.0);
  EXPECT_EQ(sort_hard(flat).order, (std::vector<std::uint32_t>{0, 1, 2, 3, 4}));
}

TEST(SortHard, MatchesSelectionSort) {
  Rng rng(41);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + uniform_index(rng, 12);
    std::vector<double> s(n);
    // Coarse values so ties are common.
    for (auto& x : s) x = static_cast<double>(uniform_index(rng, 5));
    std::vector<std::uint32_t> expected;
    std::vector<char> used(n, 0);
    for (std::size_t r = 0; r < n; ++r) {
      std::size_t best = n;
      for (std::size_t i = 0; i < n; ++i)
        if (!used[i] && (best == n || s[i] > s[best])) best = i;
      used[best] = 1;
      expected.push_back(static_cast<std::uint32_t>(best));
    }
    EXPECT_EQ(sort_hard(s).order, expected);
  }
}

}  // namespace
}  // namespace pfa
