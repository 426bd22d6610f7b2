#pragma once

// Synthetic interaction logs with taste clusters and a controllable
// provider skew. Every provider owns items in every cluster, so
// exposure can be rebalanced without leaving a user's taste.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "pfa/common.hpp"
#include "pfa/data_model.hpp"

namespace pfa {

struct SyntheticConfig {
  std::size_t users = 200;
  std::size_t items = 300;
  std::size_t providers = 20;
  std::size_t clusters = 4;
  double skew = 2.5;             // provider catalog share ~ (rank + 1)^-skew
  double popularity_skew = 0.0;  // per-item popularity ~ (provider rank + 1)^-popularity_skew
  std::size_t min_catalog = 3;
  double in_cluster = 0.95;   // probability an interaction stays in the user's cluster
  std::size_t min_per_user = 10;
  std::size_t max_per_user = 20;
  std::size_t min_per_item = 5;
  std::uint64_t seed = 13;

  void validate() const {
    if (users == 0 || items == 0 || providers == 0 || clusters == 0) throw Error("synthetic: sizes must be positive");
    if (providers > items) throw Error("synthetic: more providers than items");
    if (clusters > items) throw Error("synthetic: more clusters than items");
    if (!(skew >= 0.0)) throw Error("synthetic: skew must be non-negative");
    if (!(popularity_skew >= 0.0)) throw Error("synthetic: popularity_skew must be non-negative");
    if (!(in_cluster >= 0.0 && in_cluster <= 1.0)) throw Error("synthetic: in_cluster must be in [0, 1]");
    if (min_per_user == 0 || min_per_user > max_per_user) throw Error("synthetic: invalid per-user interaction range");
    if (max_per_user > items) throw Error("synthetic: max_per_user exceeds the item count");
    if (min_per_item > users) throw Error("synthetic: min_per_item exceeds the user count");
  }
};

namespace detail {

// Weighted sample of one index from `pool` excluding already chosen ones.
inline std::size_t weighted_pick(Rng& rng, const std::vector<std::uint32_t>& pool, const std::vector<double>& weight,
                                 const std::vector<char>& taken) {
  double total = 0.0;
  for (auto v : pool)
    if (!taken[v]) total += weight[v];
  if (!(total > 0.0)) return pool.size();
  double x = uniform(rng, 0.0, total);
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (taken[pool[i]]) continue;
    x -= weight[pool[i]];
    if (x <= 0.0) return i;
  }
  for (std::size_t i = pool.size(); i-- > 0;)
    if (!taken[pool[i]]) return i;
  return pool.size();
}

}  // namespace detail

/// Catalog share of provider s is proportional to (s + 1)^-skew with
/// at least `min_catalog` items each; items are assigned in contiguous runs.
inline std::vector<std::uint32_t> provider_catalog(const SyntheticConfig& cfg) {
  const std::size_t L = cfg.providers, N = cfg.items;
  if (L * cfg.min_catalog > N) throw Error("synthetic: providers * min_catalog exceeds the item count");
  std::vector<double> w(L);
  double total = 0.0;
  for (std::size_t s = 0; s < L; ++s) total += (w[s] = std::pow(static_cast<double>(s + 1), -cfg.skew));
  std::vector<std::size_t> size(L);
  std::size_t assigned = 0;
  for (std::size_t s = 0; s < L; ++s) {
    const auto extra = static_cast<std::size_t>(std::floor(static_cast<double>(N - L * cfg.min_catalog) * w[s] / total));
    size[s] = cfg.min_catalog + extra;
    assigned += size[s];
  }
  size[0] += N - assigned;
  std::vector<std::uint32_t> out;
  out.reserve(N);
  for (std::size_t s = 0; s < L; ++s) out.insert(out.end(), size[s], static_cast<std::uint32_t>(s));
  return out;
}

/// Item v belongs to cluster v % clusters. Items of provider s have
/// popularity (s + 1)^-popularity_skew times a jitter in [0.5, 1.5].
inline RawInteractions generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const std::size_t N = cfg.items, C = cfg.clusters;
  const auto item_provider = provider_catalog(cfg);
  std::vector<std::uint32_t> item_cluster(N);
  std::vector<double> weight(N);
  std::vector<std::vector<std::uint32_t>> cluster_items(C);
  for (std::uint32_t v = 0; v < N; ++v) {
    item_cluster[v] = static_cast<std::uint32_t>(v % C);
    weight[v] = std::pow(static_cast<double>(item_provider[v] + 1), -cfg.popularity_skew) * uniform(rng, 0.5, 1.5);
    cluster_items[item_cluster[v]].push_back(v);
  }
  std::vector<std::uint32_t> all(N);
  for (std::uint32_t v = 0; v < N; ++v) all[v] = v;

  std::vector<std::vector<char>> has(cfg.users, std::vector<char>(N, 0));
  std::vector<std::uint32_t> user_cluster(cfg.users);
  std::vector<std::size_t> degree(N, 0);
  for (std::uint32_t u = 0; u < cfg.users; ++u) {
    user_cluster[u] = static_cast<std::uint32_t>(u % C);
    const std::size_t n = cfg.min_per_user + uniform_index(rng, cfg.max_per_user - cfg.min_per_user + 1);
    for (std::size_t j = 0; j < n; ++j) {
      const bool stay = uniform(rng, 0.0, 1.0) < cfg.in_cluster;
      const auto& pool = stay ? cluster_items[user_cluster[u]] : all;
      std::uint32_t v;
      if (const auto i = detail::weighted_pick(rng, pool, weight, has[u]); i < pool.size()) {
        v = pool[i];
      } else if (const auto j = detail::weighted_pick(rng, all, weight, has[u]); j < all.size()) {
        v = all[j];
      } else {
        break;
      }
      has[u][v] = 1;
      ++degree[v];
    }
  }
  // Top up rare items with users from the item's own cluster.
  for (std::uint32_t v = 0; v < N; ++v) {
    std::size_t guard = 0;
    while (degree[v] < cfg.min_per_item && guard++ < 100 * cfg.users) {
      auto u = static_cast<std::uint32_t>(uniform_index(rng, cfg.users));
      if (user_cluster[u] != item_cluster[v] && guard < 50 * cfg.users) continue;
      if (has[u][v]) continue;
      has[u][v] = 1;
      ++degree[v];
    }
  }

  RawInteractions raw;
  for (std::size_t u = 0; u < cfg.users; ++u) raw.user_tokens.push_back("u" + std::to_string(u));
  for (std::size_t v = 0; v < N; ++v) raw.item_tokens.push_back("i" + std::to_string(v));
  for (std::size_t s = 0; s < cfg.providers; ++s) raw.provider_tokens.push_back("p" + std::to_string(s));
  raw.item_provider = item_provider;
  for (std::uint32_t u = 0; u < cfg.users; ++u)
    for (std::uint32_t v = 0; v < N; ++v)
      if (has[u][v]) raw.interactions.push_back({u, v});
  return raw;
}

}  // namespace pfa
