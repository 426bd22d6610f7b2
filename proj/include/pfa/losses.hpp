#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pfa/common.hpp"
#include "pfa/exposure.hpp"

namespace pfa {

struct LossWeights {
  double inter = 1.0;
  double intra = 1.0;
  double acc = 1e-4;

  void validate() const {
    if (!(inter >= 0.0 && intra >= 0.0 && acc >= 0.0)) throw Error("loss weights must be non-negative");
    if (!(inter + intra > 0.0)) throw Error("lambda_inter + lambda_intra must be positive");
  }
};

/// Which fairness term drives training: the global KL or the hierarchical one.
enum class FairnessLoss { kl, hefa };

inline FairnessLoss parse_fairness_loss(const std::string& s) {
  if (s == "kl") return FairnessLoss::kl;
  if (s == "hefa") return FairnessLoss::hefa;
  throw Error("unknown fairness loss '" + s + "' (expected kl or hefa)");
}

inline std::string to_string(FairnessLoss f) { return f == FairnessLoss::kl ? "kl" : "hefa"; }

template <class T>
T kl_global(const ExposureState<T>& st) {
  return kl_divergence(st.p, st.t);
}

template <class T>
T hefa_inter(const ExposureState<T>& st) {
  return kl_divergence(st.p_group, st.t_group);
}

template <class T>
T hefa_intra(const ExposureState<T>& st) {
  T acc = st.p_group[0] * kl_divergence(st.p_within[0], st.t_within[0]);
  for (std::size_t c = 1; c < st.p_group.size(); ++c) acc = acc + st.p_group[c] * kl_divergence(st.p_within[c], st.t_within[c]);
  return acc;
}

template <class T>
T hefa_loss(const ExposureState<T>& st, const LossWeights& w) {
  return hefa_inter(st) * w.inter + hefa_intra(st) * w.intra;
}

struct FairnessValue {
  double value = 0.0;
  std::vector<double> grad_e;  // d value / d exposure
};

/// Fairness loss and its closed-form gradient w.r.t. the raw exposure vector.
inline FairnessValue fairness_loss_grad(std::span<const double> e, const Target& target, const GroupPartition& part,
                                        FairnessLoss kind, const LossWeights& w, double eps = kDefaultSmoothing) {
  const auto st = hierarchical_stats<double>(e, target, part, eps);
  const std::size_t L = e.size();
  std::vector<double> g_p(L, 0.0);
  FairnessValue out;
  if (kind == FairnessLoss::kl) {
    out.value = kl_global(st);
    for (std::size_t s = 0; s < L; ++s) g_p[s] = std::log(st.p[s] / st.t[s]) + 1.0;
  } else {
    out.value = hefa_loss(st, w);
    for (std::size_t c = 0; c < part.num_groups; ++c) {
      const double inter = w.inter * (std::log(st.p_group[c] / st.t_group[c]) + 1.0);
      const auto& members = part.members[c];
      for (std::size_t j = 0; j < members.size(); ++j)
        g_p[members[j]] = inter + w.intra * std::log(st.p_within[c][j] / st.t_within[c][j]);
    }
  }
  double total = 0.0;
  for (double x : e) total += x;
  const double norm = 1.0 + static_cast<double>(L) * eps;
  double mean_g = 0.0;
  for (std::size_t s = 0; s < L; ++s) mean_g += g_p[s] * e[s] / total;
  out.grad_e.resize(L);
  for (std::size_t s = 0; s < L; ++s) out.grad_e[s] = (g_p[s] - mean_g) / (total * norm);
  return out;
}

/// Ideal DCG over the K best relevance labels, gain 2^r - 1.
inline double ideal_dcg(std::span<const double> relevance, std::size_t k) {
  std::vector<double> r(relevance.begin(), relevance.end());
  std::sort(r.begin(), r.end(), std::greater<>());
  double idcg = 0.0;
  for (std::size_t i = 0; i < std::min(k, r.size()); ++i)
    idcg += (std::exp2(r[i]) - 1.0) / std::log2(2.0 + static_cast<double>(i));
  return idcg;
}

/// NDCG@K of a ranked list of candidate indices against per-candidate
/// relevance. nullopt when no candidate is relevant.
inline std::optional<double> ndcg_hard(std::span<const std::uint32_t> ranked, std::span<const double> relevance,
                                       std::size_t k) {
  const double idcg = ideal_dcg(relevance, k);
  if (!(idcg > 0.0)) return std::nullopt;
  double dcg = 0.0;
  for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i)
    dcg += (std::exp2(relevance[ranked[i]]) - 1.0) / std::log2(2.0 + static_cast<double>(i));
  return dcg / idcg;
}

/// NDCG with relevance at rank k replaced by its expectation under the soft
/// permutation. nullopt when no candidate is relevant.
template <class T>
std::optional<T> diff_ndcg(const SoftPermutation<T>& perm, std::span<const double> relevance, std::size_t k) {
  using std::exp2;
  if (relevance.size() != perm.n) throw Error("diff_ndcg: relevance length mismatch");
  if (perm.k < k) throw Error("diff_ndcg: permutation has fewer than K columns");
  const double idcg = ideal_dcg(relevance, k);
  if (!(idcg > 0.0)) return std::nullopt;
  std::optional<T> dcg;
  for (std::size_t r = 0; r < k; ++r) {
    std::optional<T> expected;
    for (std::size_t v = 0; v < perm.n; ++v) {
      if (relevance[v] == 0.0 && expected) continue;
      T term = perm(v, r) * relevance[v];
      expected = expected ? T(*expected + term) : term;
    }
    T gain = (exp2(*expected) - 1.0) / std::log2(2.0 + static_cast<double>(r));
    dcg = dcg ? T(*dcg + gain) : gain;
  }
  return *dcg / idcg;
}

/// Mean of (1 - diffNDCG) over eligible users.
inline double diff_ndcg_loss(std::span<const double> per_user) {
  if (per_user.empty()) throw Error("diff_ndcg_loss: no eligible users in batch");
  double s = 0.0;
  for (double v : per_user) s += 1.0 - v;
  return s / static_cast<double>(per_user.size());
}

inline double total_loss(double fairness, double accuracy, const LossWeights& w) { return fairness + w.acc * accuracy; }

}  // namespace pfa
