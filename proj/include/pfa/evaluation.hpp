#pragma once

// Full-catalog evaluation of a backbone with an optional fairness adapter.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pfa/adapter.hpp"
#include "pfa/backbone.hpp"
#include "pfa/data_model.hpp"
#include "pfa/exposure.hpp"
#include "pfa/metrics.hpp"

namespace pfa {

enum class EvalPhase { validation, test };

/// Base scores of `user` over all items, plus adapter corrections if given.
inline std::vector<double> adjusted_scores(const EmbeddingTable& emb, const AdapterParams* adapter, std::uint32_t user) {
  auto base = score_row(emb, user);
  if (adapter == nullptr) return base;
  std::vector<std::span<const double>> items;
  items.reserve(emb.num_items);
  for (std::size_t v = 0; v < emb.num_items; ++v) items.push_back(emb.item_row(v));
  AdapterNet net;
  const auto delta = net.forward(*adapter, emb.user_row(user), items);
  return adjust_scores(base, delta);
}

/// Items hidden from the ranking: training items for validation, training
/// and validation items for test.
inline std::vector<std::uint32_t> eval_mask(const SplitAssignment& split, std::uint32_t user, EvalPhase phase) {
  std::vector<std::uint32_t> mask = split.train[user];
  if (phase == EvalPhase::test) mask.insert(mask.end(), split.val[user].begin(), split.val[user].end());
  return mask;
}

inline std::vector<std::uint32_t> rank_for_eval(const EmbeddingTable& emb, const AdapterParams* adapter,
                                                const SplitAssignment& split, std::uint32_t user, std::size_t k,
                                                EvalPhase phase = EvalPhase::test) {
  const auto scores = adjusted_scores(emb, adapter, user);
  return top_k_masked(scores, eval_mask(split, user, phase), k);
}

struct EvalReport {
  std::size_t k = 20;
  double ndcg = 0.0;
  double hr = 0.0;
  double mrr = 0.0;
  std::size_t eligible_users = 0;
  double gini = 0.0;
  double entropy_bits = 0.0;
  double cv = 0.0;
  std::vector<double> exposure;
  std::vector<GroupReport> groups;
  std::vector<std::vector<std::uint32_t>> lists;
};

inline void check_report_ranges(const EvalReport& r, std::size_t num_providers) {
  auto in01 = [](double x) { return x >= 0.0 && x <= 1.0 + 1e-12; };
  const double tol = 1e-9;
  if (!in01(r.ndcg) || !in01(r.hr) || !in01(r.mrr)) throw Error("evaluation: accuracy metric out of [0, 1]");
  if (!(r.gini >= -tol && r.gini < 1.0)) throw Error("evaluation: gini out of [0, 1)");
  if (!(r.entropy_bits >= 0.0 && r.entropy_bits <= std::log2(static_cast<double>(num_providers)) + tol))
    throw Error("evaluation: entropy out of range");
  if (!(r.cv >= 0.0)) throw Error("evaluation: negative cv");
}

/// Ranks every user, then reports accuracy against the phase's held-out items
/// and provider exposure statistics of the top-K lists.
inline EvalReport evaluate(const InteractionDataset& ds, const SplitAssignment& split, const GroupPartition& part,
                           const EmbeddingTable& emb, const AdapterParams* adapter, std::size_t k,
                           EvalPhase phase = EvalPhase::test) {
  EvalReport r;
  r.k = k;
  r.lists.resize(ds.num_users);
  for (std::uint32_t u = 0; u < ds.num_users; ++u) r.lists[u] = rank_for_eval(emb, adapter, split, u, k, phase);
  const auto& relevant = phase == EvalPhase::test ? split.test : split.val;
  const auto acc = accuracy_metrics(r.lists, relevant, k);
  r.ndcg = acc.ndcg;
  r.hr = acc.hr;
  r.mrr = acc.mrr;
  r.eligible_users = acc.users;
  r.exposure = hard_exposure(r.lists, ds.item_provider, ds.num_providers, k);
  r.gini = gini(r.exposure);
  r.entropy_bits = entropy_bits(r.exposure);
  r.cv = cv(r.exposure);
  r.groups = subgroup_report(r.exposure, part);
  check_report_ranges(r, ds.num_providers);
  return r;
}

}  // namespace pfa
