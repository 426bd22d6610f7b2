#pragma once

// Ranking accuracy and exposure-inequality metrics.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "pfa/common.hpp"
#include "pfa/data_model.hpp"

namespace pfa {

/// Gini index via the sorted form:
///   G = sum_i (2i - n + 1) x_(i) / (n * sum x), x ascending, i 0-based,
/// which equals sum_ij |x_i - x_j| / (2 n^2 mean).
inline double gini(std::span<const double> e) {
  if (e.empty()) throw Error("gini: empty vector");
  std::vector<double> x(e.begin(), e.end());
  std::sort(x.begin(), x.end());
  const auto n = static_cast<double>(x.size());
  double total = 0.0, weighted = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] < 0.0) throw Error("gini: negative entry");
    total += x[i];
    weighted += (2.0 * static_cast<double>(i) - n + 1.0) * x[i];
  }
  if (!(total > 0.0)) throw Error("gini: vector sums to zero");
  return weighted / (n * total);
}

/// Shannon entropy in bits of e / sum(e), with 0 log 0 = 0. Equal entries
/// are summed as one run, which makes uniform inputs give log2 L exactly.
inline double entropy_bits(std::span<const double> e) {
  std::vector<double> x(e.begin(), e.end());
  std::sort(x.begin(), x.end());
  std::vector<std::pair<double, double>> runs;  // (value, count)
  for (double v : x) {
    if (v <= 0.0) continue;
    if (!runs.empty() && runs.back().first == v)
      runs.back().second += 1.0;
    else
      runs.emplace_back(v, 1.0);
  }
  double total = 0.0;
  for (const auto& [v, m] : runs) total += m * v;
  if (!(total > 0.0)) throw Error("entropy_bits: vector sums to zero");
  double h = 0.0;
  for (const auto& [v, m] : runs) h += (m * v / total) * std::log2(total / v);
  return std::max(h, 0.0);
}

/// Population standard deviation over mean.
inline double cv(std::span<const double> e) {
  if (e.empty()) throw Error("cv: empty vector");
  const auto n = static_cast<double>(e.size());
  double mean = 0.0;
  for (double x : e) mean += x;
  mean /= n;
  if (!(mean > 0.0)) throw Error("cv: mean must be positive");
  double var = 0.0;
  for (double x : e) var += (x - mean) * (x - mean);
  return std::sqrt(var / n) / mean;
}

/// Top-k indices of `scores` by descending value, skipping masked entries.
/// Ties keep ascending index order.
inline std::vector<std::uint32_t> top_k_masked(std::span<const double> scores, std::span<const std::uint32_t> masked,
                                               std::size_t k) {
  std::vector<char> skip(scores.size(), 0);
  for (auto v : masked) skip[v] = 1;
  std::vector<std::uint32_t> idx;
  idx.reserve(scores.size());
  for (std::uint32_t v = 0; v < scores.size(); ++v)
    if (!skip[v]) idx.push_back(v);
  if (k > idx.size()) throw Error("top_k_masked: K exceeds the number of unmasked items");
  auto cmp = [&](std::uint32_t a, std::uint32_t b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), cmp);
  idx.resize(k);
  return idx;
}

struct AccuracyMetrics {
  double ndcg = 0.0;
  double hr = 0.0;
  double mrr = 0.0;
  std::size_t users = 0;  // users with a non-empty relevant set
};

/// Per-user accuracy of one ranked list against a sorted relevant set.
inline AccuracyMetrics user_accuracy(std::span<const std::uint32_t> list, std::span<const std::uint32_t> relevant,
                                     std::size_t k) {
  AccuracyMetrics m;
  if (relevant.empty()) return m;
  m.users = 1;
  double dcg = 0.0, idcg = 0.0;
  std::size_t hits = 0;
  const std::size_t len = std::min(k, list.size());
  for (std::size_t r = 0; r < len; ++r) {
    if (std::binary_search(relevant.begin(), relevant.end(), list[r])) {
      dcg += 1.0 / std::log2(2.0 + static_cast<double>(r));
      if (hits == 0) m.mrr = 1.0 / static_cast<double>(r + 1);
      ++hits;
    }
  }
  const std::size_t ideal = std::min(k, relevant.size());
  for (std::size_t r = 0; r < ideal; ++r) idcg += 1.0 / std::log2(2.0 + static_cast<double>(r));
  m.ndcg = dcg / idcg;
  m.hr = static_cast<double>(hits) / static_cast<double>(ideal);
  return m;
}

/// NDCG@K (binary gain), HR@K = |topK ∩ rel| / min(K, |rel|), MRR@K; means
/// over users with a non-empty relevant set.
inline AccuracyMetrics accuracy_metrics(const std::vector<std::vector<std::uint32_t>>& lists,
                                        const std::vector<std::vector<std::uint32_t>>& relevant, std::size_t k) {
  if (lists.size() != relevant.size()) throw Error("accuracy_metrics: list/relevant count mismatch");
  AccuracyMetrics total;
  for (std::size_t u = 0; u < lists.size(); ++u) {
    const auto m = user_accuracy(lists[u], relevant[u], k);
    if (m.users == 0) continue;
    total.ndcg += m.ndcg;
    total.hr += m.hr;
    total.mrr += m.mrr;
    ++total.users;
  }
  if (total.users > 0) {
    const auto n = static_cast<double>(total.users);
    total.ndcg /= n;
    total.hr /= n;
    total.mrr /= n;
  }
  return total;
}

struct GroupReport {
  double share = 0.0;
  double within_gini = 0.0;
};

/// Exposure share and within-group Gini for each provider group. A group
/// with zero exposure reports within_gini = 0.
inline std::vector<GroupReport> subgroup_report(std::span<const double> exposure, const GroupPartition& part) {
  double total = 0.0;
  for (double x : exposure) total += x;
  if (!(total > 0.0)) throw Error("subgroup_report: total exposure is zero");
  std::vector<GroupReport> out(part.num_groups);
  for (std::size_t c = 0; c < part.num_groups; ++c) {
    std::vector<double> ex;
    double group_total = 0.0;
    for (auto s : part.members[c]) {
      ex.push_back(exposure[s]);
      group_total += exposure[s];
    }
    out[c].share = group_total / total;
    out[c].within_gini = group_total > 0.0 ? gini(ex) : 0.0;
  }
  return out;
}

}  // namespace pfa
