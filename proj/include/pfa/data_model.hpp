#pragma once

// Interaction logs, k-core filtering, per-user splits and provider groups.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "pfa/common.hpp"

namespace pfa {

struct Interaction {
  std::uint32_t user;
  std::uint32_t item;
  friend bool operator==(const Interaction&, const Interaction&) = default;
  friend auto operator<=>(const Interaction&, const Interaction&) = default;
};

/// Interactions as read from disk: ids are dense in order of first appearance.
struct RawInteractions {
  std::vector<std::string> user_tokens;
  std::vector<std::string> item_tokens;
  std::vector<std::string> provider_tokens;
  std::vector<Interaction> interactions;     // deduplicated, first-seen order
  std::vector<std::uint32_t> item_provider;  // indexed by item id
};

struct InteractionDataset {
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  std::size_t num_providers = 0;
  std::vector<Interaction> interactions;  // sorted by (user, item)
  std::vector<std::uint32_t> item_provider;
  std::vector<std::string> user_tokens;
  std::vector<std::string> item_tokens;
  std::vector<std::string> provider_tokens;

  /// Items of every user, ascending.
  std::vector<std::vector<std::uint32_t>> user_items() const {
    std::vector<std::vector<std::uint32_t>> out(num_users);
    for (const auto& x : interactions) out[x.user].push_back(x.item);
    for (auto& v : out) std::sort(v.begin(), v.end());
    return out;
  }

  std::vector<std::vector<std::uint32_t>> provider_items() const {
    std::vector<std::vector<std::uint32_t>> out(num_providers);
    for (std::uint32_t v = 0; v < num_items; ++v) out[item_provider[v]].push_back(v);
    return out;
  }
};

struct SplitAssignment {
  std::uint64_t seed = 0;
  // Per-user item sets, each sorted ascending.
  std::vector<std::vector<std::uint32_t>> train;
  std::vector<std::vector<std::uint32_t>> val;
  std::vector<std::vector<std::uint32_t>> test;
};

struct GroupPartition {
  std::size_t num_groups = 0;
  std::vector<std::uint32_t> provider_group;           // provider -> group
  std::vector<std::vector<std::uint32_t>> members;     // group -> providers, ascending
  std::vector<double> fractions;
};

namespace detail {

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> cols;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    cols.push_back(line.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return cols;
}

inline std::uint32_t intern(std::unordered_map<std::string, std::uint32_t>& ids, std::vector<std::string>& tokens,
                            const std::string& tok) {
  auto [it, inserted] = ids.try_emplace(tok, static_cast<std::uint32_t>(tokens.size()));
  if (inserted) tokens.push_back(tok);
  return it->second;
}

}  // namespace detail

/// Parses `user \t item \t provider` lines. Extra columns are ignored, blank lines skipped.
inline RawInteractions parse_interactions(std::istream& in) {
  RawInteractions raw;
  std::unordered_map<std::string, std::uint32_t> users, items, providers;
  std::unordered_set<std::uint64_t> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cols = detail::split_tabs(line);
    if (cols.size() < 3) throw ParseError(lineno, "expected 3 tab-separated columns, got " + std::to_string(cols.size()));
    for (int c = 0; c < 3; ++c)
      if (cols[c].empty()) throw ParseError(lineno, "empty column " + std::to_string(c + 1));
    const auto u = detail::intern(users, raw.user_tokens, cols[0]);
    const auto v = detail::intern(items, raw.item_tokens, cols[1]);
    const auto s = detail::intern(providers, raw.provider_tokens, cols[2]);
    if (v == raw.item_provider.size()) {
      raw.item_provider.push_back(s);
    } else if (raw.item_provider[v] != s) {
      throw ParseError(lineno, "item '" + cols[1] + "' assigned to provider '" + cols[2] + "' but earlier to '" +
                                   raw.provider_tokens[raw.item_provider[v]] + "'");
    }
    const std::uint64_t key = (static_cast<std::uint64_t>(u) << 32) | v;
    if (seen.insert(key).second) raw.interactions.push_back({u, v});
  }
  return raw;
}

inline RawInteractions load_interactions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open interaction file: " + path.string());
  return parse_interactions(in);
}

/// Iteratively drops users and items with fewer than k interactions until a
/// fixed point, then re-indexes users, items and providers densely (old
/// relative order kept). Providers left without items are dropped.
inline InteractionDataset kcore_filter(const RawInteractions& raw, std::size_t k = 5) {
  if (k < 1) throw Error("kcore_filter: k must be >= 1");
  const std::size_t m = raw.user_tokens.size();
  const std::size_t n = raw.item_tokens.size();
  std::vector<char> alive(raw.interactions.size(), 1);
  std::vector<std::size_t> udeg(m, 0), ideg(n, 0);
  for (const auto& x : raw.interactions) {
    ++udeg[x.user];
    ++ideg[x.item];
  }
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t i = 0; i < raw.interactions.size(); ++i) {
      if (!alive[i]) continue;
      const auto& x = raw.interactions[i];
      if (udeg[x.user] < k || ideg[x.item] < k) {
        alive[i] = 0;
        --udeg[x.user];
        --ideg[x.item];
        changed = true;
      }
    }
  }

  constexpr auto kNone = static_cast<std::uint32_t>(-1);
  std::vector<std::uint32_t> umap(m, kNone), imap(n, kNone), smap(raw.provider_tokens.size(), kNone);
  InteractionDataset ds;
  for (std::size_t u = 0; u < m; ++u)
    if (udeg[u] > 0) {
      umap[u] = static_cast<std::uint32_t>(ds.user_tokens.size());
      ds.user_tokens.push_back(raw.user_tokens[u]);
    }
  for (std::size_t v = 0; v < n; ++v)
    if (ideg[v] > 0) imap[v] = static_cast<std::uint32_t>(ds.item_tokens.size()), ds.item_tokens.push_back(raw.item_tokens[v]);
  // Providers keep their original relative order.
  std::vector<char> provider_used(raw.provider_tokens.size(), 0);
  for (std::size_t v = 0; v < n; ++v)
    if (ideg[v] > 0) provider_used[raw.item_provider[v]] = 1;
  for (std::size_t s = 0; s < raw.provider_tokens.size(); ++s)
    if (provider_used[s]) {
      smap[s] = static_cast<std::uint32_t>(ds.provider_tokens.size());
      ds.provider_tokens.push_back(raw.provider_tokens[s]);
    }
  ds.item_provider.resize(ds.item_tokens.size());
  for (std::size_t v = 0; v < n; ++v)
    if (imap[v] != kNone) ds.item_provider[imap[v]] = smap[raw.item_provider[v]];
  for (std::size_t i = 0; i < raw.interactions.size(); ++i)
    if (alive[i]) ds.interactions.push_back({umap[raw.interactions[i].user], imap[raw.interactions[i].item]});
  std::sort(ds.interactions.begin(), ds.interactions.end());

  ds.num_users = ds.user_tokens.size();
  ds.num_items = ds.item_tokens.size();
  ds.num_providers = ds.provider_tokens.size();
  if (ds.interactions.empty()) throw Error("kcore_filter: no interactions survive " + std::to_string(k) + "-core filtering");
  return ds;
}

/// Per-user random 70/10/20 split: val = floor(n/10), test = floor(n/5), the
/// remainder goes to train. Deterministic in `seed`.
inline SplitAssignment split_per_user(const InteractionDataset& ds, std::uint64_t seed) {
  SplitAssignment split;
  split.seed = seed;
  split.train.resize(ds.num_users);
  split.val.resize(ds.num_users);
  split.test.resize(ds.num_users);
  Rng rng(seed);
  auto items = ds.user_items();
  for (std::size_t u = 0; u < ds.num_users; ++u) {
    auto& mine = items[u];
    std::shuffle(mine.begin(), mine.end(), rng);
    const std::size_t total = mine.size();
    const std::size_t n_val = total / 10;
    const std::size_t n_test = total / 5;
    const std::size_t n_train = total - n_val - n_test;
    split.train[u].assign(mine.begin(), mine.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.val[u].assign(mine.begin() + static_cast<std::ptrdiff_t>(n_train),
                        mine.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    split.test[u].assign(mine.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), mine.end());
    std::sort(split.train[u].begin(), split.train[u].end());
    std::sort(split.val[u].begin(), split.val[u].end());
    std::sort(split.test[u].begin(), split.test[u].end());
  }
  return split;
}

/// Training interaction count per provider.
inline std::vector<std::size_t> provider_train_counts(const InteractionDataset& ds, const SplitAssignment& split) {
  std::vector<std::size_t> counts(ds.num_providers, 0);
  for (const auto& items : split.train)
    for (auto v : items) ++counts[ds.item_provider[v]];
  return counts;
}

/// Builds groups from providers ranked by count (descending, ties by id).
/// Group c ends at rank round_half_up(L * sum(fractions[0..c])).
inline GroupPartition partition_from_counts(std::span<const std::size_t> counts, std::span<const double> fractions) {
  const std::size_t num_providers = counts.size();
  const std::size_t num_groups = fractions.size();
  if (num_groups == 0) throw Error("partition_providers: no group fractions given");
  if (num_groups > num_providers)
    throw Error("partition_providers: " + std::to_string(num_groups) + " groups but only " +
                std::to_string(num_providers) + " providers");
  double total = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0)) throw Error("partition_providers: negative fraction");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw Error("partition_providers: fractions must sum to 1");

  std::vector<std::uint32_t> order(num_providers);
  std::iota(order.begin(), order.end(), 0U);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return counts[a] > counts[b]; });

  GroupPartition part;
  part.num_groups = num_groups;
  part.fractions.assign(fractions.begin(), fractions.end());
  part.provider_group.assign(num_providers, 0);
  part.members.resize(num_groups);
  double cumulative = 0.0;
  std::size_t begin = 0;
  for (std::size_t c = 0; c < num_groups; ++c) {
    cumulative += fractions[c];
    std::size_t end = c + 1 == num_groups
                          ? num_providers
                          : static_cast<std::size_t>(std::floor(cumulative * static_cast<double>(num_providers) + 0.5 + 1e-9));
    end = std::min(end, num_providers);
    if (end <= begin) throw Error("partition_providers: group " + std::to_string(c) + " would be empty");
    for (std::size_t r = begin; r < end; ++r) {
      part.provider_group[order[r]] = static_cast<std::uint32_t>(c);
      part.members[c].push_back(order[r]);
    }
    std::sort(part.members[c].begin(), part.members[c].end());
    begin = end;
  }
  return part;
}

/// Head/mid/tail style partition of providers by training interaction count.
inline GroupPartition partition_providers(const InteractionDataset& ds, const SplitAssignment& split,
                                          std::span<const double> fractions = std::vector<double>{0.2, 0.6, 0.2}) {
  const auto counts = provider_train_counts(ds, split);
  return partition_from_counts(counts, fractions);
}

/// Single-group partition (every provider in group 0).
inline GroupPartition single_group(std::size_t num_providers) {
  GroupPartition part;
  part.num_groups = 1;
  part.fractions = {1.0};
  part.provider_group.assign(num_providers, 0);
  part.members.resize(1);
  for (std::uint32_t s = 0; s < num_providers; ++s) part.members[0].push_back(s);
  return part;
}

}  // namespace pfa
