#pragma once

// Odd-even transposition sorting network with Cauchy-smoothed swaps.
//
// Rank 0 holds the largest score. For a layer with interpolation weight
// alpha on the pair (i, i+1):
//     y'_i     = (1 - alpha) y_i + alpha y_{i+1}
//     y'_{i+1} = alpha y_i + (1 - alpha) y_{i+1}
// with alpha = H(y_{i+1} - y_i). Each layer is a symmetric doubly stochastic
// matrix P_l and the soft permutation is P = P_1 P_2 ... P_n, so entry (v, k)
// is the probability that item v lands on rank k and the smoothed sorted
// scores are P^T y.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <tuple>
#include <type_traits>
#include <vector>

#include "pfa/common.hpp"
#include "pfa/grad_engine.hpp"

namespace pfa {

/// H(x) = atan(beta x) / pi + 1/2.
struct CauchySmoothing {
  double beta = 10.0;

  explicit CauchySmoothing(double b = 10.0) : beta(b) {
    if (!(beta > 0.0)) throw Error("CauchySmoothing: beta must be positive");
  }

  template <class T>
  T operator()(const T& x) const {
    using std::atan;
    return atan(x * beta) / kPi + 0.5;
  }

  double derivative(double x) const { return beta / (kPi * (1.0 + beta * beta * x * x)); }
};

template <class T>
struct SwapResult {
  T first;   // new value at the upper position
  T second;  // new value at the lower position
  T alpha;
};

template <class T>
SwapResult<T> soft_swap(const T& a, const T& b, const CauchySmoothing& h) {
  T alpha = h(b - a);
  T first = (1.0 - alpha) * a + alpha * b;
  T second = alpha * a + (1.0 - alpha) * b;
  return {first, second, alpha};
}

/// n x k block of the soft permutation (row = item, column = rank).
template <class T>
struct SoftPermutation {
  std::size_t n = 0;
  std::size_t k = 0;
  std::vector<T> probs;   // row-major n x k
  std::vector<T> sorted;  // smoothed scores by rank, length n

  const T& operator()(std::size_t item, std::size_t rank) const { return probs[item * k + rank]; }
  T& operator()(std::size_t item, std::size_t rank) { return probs[item * k + rank]; }
};

/// Runs n layers of the smoothed network on `scores` and keeps the first
/// `k` rank columns. Materializes the n x n accumulator: O(n^3).
template <class T>
SoftPermutation<T> sort_soft(std::span<const T> scores, const CauchySmoothing& h, std::size_t k) {
  const std::size_t n = scores.size();
  if (n == 0) throw Error("sort_soft: empty score vector");
  if (k > n) throw Error("sort_soft: k exceeds candidate count");
  std::vector<T> y(scores.begin(), scores.end());
  // acc(v, r), starts as identity
  std::vector<T> acc(n * n);
  if constexpr (std::is_same_v<T, double>) {
    for (std::size_t i = 0; i < n; ++i) acc[i * n + i] = 1.0;
  } else {
    // Reuse the tape of the inputs for constants.
    Tape* tape = scores[0].tape();
    const T zero = tape->variable(0.0);
    const T one = tape->variable(1.0);
    for (std::size_t v = 0; v < n; ++v)
      for (std::size_t r = 0; r < n; ++r) acc[v * n + r] = v == r ? one : zero;
  }
  for (std::size_t layer = 0; layer < n; ++layer) {
    for (std::size_t i = layer % 2; i + 1 < n; i += 2) {
      auto sw = soft_swap(y[i], y[i + 1], h);
      y[i] = sw.first;
      y[i + 1] = sw.second;
      for (std::size_t v = 0; v < n; ++v) {
        T ci = acc[v * n + i];
        T cj = acc[v * n + i + 1];
        acc[v * n + i] = (1.0 - sw.alpha) * ci + sw.alpha * cj;
        acc[v * n + i + 1] = sw.alpha * ci + (1.0 - sw.alpha) * cj;
      }
    }
  }
  SoftPermutation<T> out;
  out.n = n;
  out.k = k;
  out.probs.reserve(n * k);
  for (std::size_t v = 0; v < n; ++v)
    for (std::size_t r = 0; r < k; ++r) out.probs.push_back(acc[v * n + r]);
  out.sorted = std::move(y);
  return out;
}

template <class T>
SoftPermutation<T> sort_soft(const std::vector<T>& scores, const CauchySmoothing& h, std::size_t k) {
  return sort_soft<T>(std::span<const T>(scores), h, k);
}

struct HardSort {
  std::vector<std::uint32_t> order;  // order[r] = index at rank r
  std::vector<std::uint32_t> rank;   // rank[i] = rank of index i
};

/// Stable descending sort; equal scores keep ascending index order.
inline HardSort sort_hard(std::span<const double> scores) {
  HardSort out;
  out.order.resize(scores.size());
  std::iota(out.order.begin(), out.order.end(), 0U);
  std::stable_sort(out.order.begin(), out.order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  out.rank.resize(scores.size());
  for (std::size_t r = 0; r < out.order.size(); ++r) out.rank[out.order[r]] = static_cast<std::uint32_t>(r);
  return out;
}

/// n x k hard permutation block matching a descending sort.
inline SoftPermutation<double> hard_permutation(std::span<const double> scores, std::size_t k) {
  const auto hs = sort_hard(scores);
  SoftPermutation<double> p;
  p.n = scores.size();
  p.k = k;
  p.probs.assign(p.n * k, 0.0);
  for (std::size_t r = 0; r < k; ++r) p(hs.order[r], r) = 1.0;
  p.sorted.resize(p.n);
  for (std::size_t r = 0; r < p.n; ++r) p.sorted[r] = scores[hs.order[r]];
  return p;
}

/// Matrix-free form of the smoothed network used in training. After
/// forward(), the soft permutation P acts on vectors in O(n^2) without being
/// materialized, and backward() returns the gradient with respect to the
/// input scores in O(n^2).
class SortingNetwork {
 public:
  explicit SortingNetwork(CauchySmoothing h = CauchySmoothing{}) : h_(h) {}

  void forward(std::span<const double> scores) {
    n_ = scores.size();
    if (n_ == 0) throw Error("SortingNetwork: empty score vector");
    layer_inputs_.assign(n_ * n_, 0.0);
    alpha_.assign(n_ * n_, 0.0);
    std::vector<double> y(scores.begin(), scores.end());
    for (std::size_t l = 0; l < n_; ++l) {
      std::copy(y.begin(), y.end(), layer_inputs_.begin() + static_cast<std::ptrdiff_t>(l * n_));
      for (std::size_t i = l % 2; i + 1 < n_; i += 2) {
        const double a = y[i], b = y[i + 1];
        const double alpha = h_(b - a);
        alpha_[l * n_ + i] = alpha;
        y[i] = (1.0 - alpha) * a + alpha * b;
        y[i + 1] = alpha * a + (1.0 - alpha) * b;
      }
    }
    sorted_ = std::move(y);
  }

  std::size_t size() const { return n_; }
  const std::vector<double>& sorted() const { return sorted_; }

  /// P w: expected per-item value when rank r carries weight w[r].
  std::vector<double> expected_item_weight(std::span<const double> rank_weight) const {
    std::vector<double> w(rank_weight.begin(), rank_weight.end());
    w.resize(n_, 0.0);
    for (std::size_t l = n_; l-- > 0;) mix(l, w);
    return w;
  }

  /// P^T r: expected per-rank value when item v carries value r[v].
  std::vector<double> expected_rank_value(std::span<const double> item_value) const {
    std::vector<double> r(item_value.begin(), item_value.end());
    for (std::size_t l = 0; l < n_; ++l) mix(l, r);
    return r;
  }

  /// Gradient w.r.t. the input scores of a loss that depends on the network
  /// through P w (upstream grad `g_item`) and P^T r (upstream grad `g_rank`).
  /// Either pair may be empty.
  std::vector<double> backward(std::span<const double> rank_weight, std::span<const double> g_item,
                               std::span<const double> item_value, std::span<const double> g_rank) const {
    std::vector<double> g_alpha(n_ * n_, 0.0);

    if (!g_item.empty()) {
      // Forward states w^(l) for x = P_1 (P_2 (... P_n w)).
      std::vector<double> states(n_ * n_);
      std::vector<double> w(rank_weight.begin(), rank_weight.end());
      w.resize(n_, 0.0);
      for (std::size_t l = n_; l-- > 0;) {
        std::copy(w.begin(), w.end(), states.begin() + static_cast<std::ptrdiff_t>(l * n_));
        mix(l, w);
      }
      std::vector<double> g(g_item.begin(), g_item.end());
      for (std::size_t l = 0; l < n_; ++l) accumulate_layer(l, &states[l * n_], g, g_alpha);
    }

    if (!g_rank.empty()) {
      std::vector<double> states(n_ * n_);
      std::vector<double> r(item_value.begin(), item_value.end());
      for (std::size_t l = 0; l < n_; ++l) {
        std::copy(r.begin(), r.end(), states.begin() + static_cast<std::ptrdiff_t>(l * n_));
        mix(l, r);
      }
      std::vector<double> g(g_rank.begin(), g_rank.end());
      g.resize(n_, 0.0);
      for (std::size_t l = n_; l-- > 0;) accumulate_layer(l, &states[l * n_], g, g_alpha);
    }

    // Back through the score recursion y^(l+1) = P_l(alpha(y^(l))) y^(l).
    std::vector<double> gy(n_, 0.0);
    for (std::size_t l = n_; l-- > 0;) {
      const double* y = &layer_inputs_[l * n_];
      for (std::size_t i = l % 2; i + 1 < n_; i += 2) {
        const double alpha = alpha_[l * n_ + i];
        const double a = y[i], b = y[i + 1];
        const double gi = gy[i], gj = gy[i + 1];
        const double ga = g_alpha[l * n_ + i] + (gi - gj) * (b - a);
        const double dh = ga * h_.derivative(b - a);
        gy[i] = (1.0 - alpha) * gi + alpha * gj - dh;
        gy[i + 1] = alpha * gi + (1.0 - alpha) * gj + dh;
      }
    }
    return gy;
  }

 private:
  void mix(std::size_t l, std::vector<double>& x) const {
    for (std::size_t i = l % 2; i + 1 < n_; i += 2) {
      const double alpha = alpha_[l * n_ + i];
      const double a = x[i], b = x[i + 1];
      x[i] = (1.0 - alpha) * a + alpha * b;
      x[i + 1] = alpha * a + (1.0 - alpha) * b;
    }
  }

  // `in` is the layer input, `g` the gradient of its output; on return g is
  // the gradient of the input and g_alpha has this layer's contribution.
  void accumulate_layer(std::size_t l, const double* in, std::vector<double>& g, std::vector<double>& g_alpha) const {
    for (std::size_t i = l % 2; i + 1 < n_; i += 2) {
      const double alpha = alpha_[l * n_ + i];
      const double a = in[i], b = in[i + 1];
      const double gi = g[i], gj = g[i + 1];
      g_alpha[l * n_ + i] += (gi - gj) * (b - a);
      g[i] = (1.0 - alpha) * gi + alpha * gj;
      g[i + 1] = alpha * gi + (1.0 - alpha) * gj;
    }
  }

  CauchySmoothing h_;
  std::size_t n_ = 0;
  std::vector<double> layer_inputs_;  // n x n, row l = scores entering layer l
  std::vector<double> alpha_;         // n x n, alpha_[l*n+i] for pair (i, i+1)
  std::vector<double> sorted_;
};

}  // namespace pfa
