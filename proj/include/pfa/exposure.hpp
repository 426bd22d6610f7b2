#pragma once

// Provider exposure (hard and expected), fairness targets and the
// group/within-group distributions used by the hierarchical losses.

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pfa/common.hpp"
#include "pfa/data_model.hpp"
#include "pfa/diffsort.hpp"

namespace pfa {

/// b_k = 1 / log2(1 + k) for ranks k = 1..K (stored 0-based).
struct PositionBias {
  std::vector<double> b;

  explicit PositionBias(std::size_t k) : b(k) {
    for (std::size_t r = 0; r < k; ++r) b[r] = 1.0 / std::log2(2.0 + static_cast<double>(r));
  }
  std::size_t size() const { return b.size(); }
  double operator[](std::size_t rank0) const { return b[rank0]; }
  double total() const {
    double s = 0.0;
    for (double x : b) s += x;
    return s;
  }
};

/// e_s summed over users of the position bias of each recommended item.
inline std::vector<double> hard_exposure(const std::vector<std::vector<std::uint32_t>>& lists,
                                         std::span<const std::uint32_t> item_provider, std::size_t num_providers,
                                         std::size_t k) {
  const PositionBias bias(k);
  std::vector<double> e(num_providers, 0.0);
  for (const auto& list : lists) {
    const std::size_t len = std::min(k, list.size());
    for (std::size_t r = 0; r < len; ++r) e[item_provider[list[r]]] += bias[r];
  }
  return e;
}

/// Expected exposure: sum over users, candidates and ranks < K of
/// probs(v, k) b_k, credited to the provider of candidate v.
template <class T>
std::vector<T> soft_exposure(const std::vector<SoftPermutation<T>>& perms,
                             const std::vector<std::vector<std::uint32_t>>& candidates,
                             std::span<const std::uint32_t> item_provider, std::size_t num_providers, std::size_t k) {
  if (perms.size() != candidates.size()) throw Error("soft_exposure: permutation/candidate count mismatch");
  const PositionBias bias(k);
  std::vector<std::optional<T>> acc(num_providers);
  for (std::size_t u = 0; u < perms.size(); ++u) {
    const auto& p = perms[u];
    if (p.k > k) throw Error("soft_exposure: permutation has more columns than K");
    if (p.n != candidates[u].size()) throw Error("soft_exposure: candidate list size mismatch");
    for (std::size_t v = 0; v < p.n; ++v) {
      const auto s = item_provider[candidates[u][v]];
      for (std::size_t r = 0; r < p.k; ++r) {
        T term = p(v, r) * bias[r];
        acc[s] = acc[s] ? T(*acc[s] + term) : term;
      }
    }
  }
  std::vector<T> e;
  e.reserve(num_providers);
  for (auto& a : acc) {
    if (a) {
      e.push_back(*a);
    } else if constexpr (std::is_same_v<T, double>) {
      e.push_back(0.0);
    } else {
      if (perms.empty() || perms[0].probs.empty()) throw Error("soft_exposure: no tape to allocate zeros on");
      e.push_back(perms[0].probs[0] * 0.0);
    }
  }
  return e;
}

enum class TargetMode { uniform_provider, uniform_group, custom };

inline TargetMode parse_target_mode(const std::string& s) {
  if (s == "uniform_provider") return TargetMode::uniform_provider;
  if (s == "uniform_group") return TargetMode::uniform_group;
  if (s == "custom") return TargetMode::custom;
  throw Error("unknown target mode '" + s + "' (expected uniform_provider, uniform_group or custom)");
}

inline std::string to_string(TargetMode m) {
  switch (m) {
    case TargetMode::uniform_provider: return "uniform_provider";
    case TargetMode::uniform_group: return "uniform_group";
    case TargetMode::custom: return "custom";
  }
  return "?";
}

/// Provider-level target t and group-level target t^G. An empty `group`
/// means t^G is the aggregate of t over each group.
struct Target {
  std::vector<double> provider;
  std::vector<double> group;
};

namespace detail {
inline void check_distribution(std::span<const double> x, std::size_t expected_len, const char* what) {
  if (x.size() != expected_len)
    throw Error(std::string(what) + ": expected length " + std::to_string(expected_len) + ", got " +
                std::to_string(x.size()));
  double s = 0.0;
  for (double v : x) {
    if (!(v >= 0.0)) throw Error(std::string(what) + ": entries must be non-negative");
    s += v;
  }
  if (std::abs(s - 1.0) > 1e-9) throw Error(std::string(what) + ": entries must sum to 1");
}
}  // namespace detail

/// uniform_provider: t_s = 1/L, t^G aggregated from t.
/// uniform_group: t^G_c = 1/C, t_s = 1/(C |G_c|).
/// custom: caller supplies t^G and optionally t (defaults to 1/L).
inline Target build_target(TargetMode mode, std::size_t num_providers, const GroupPartition& part,
                           std::span<const double> custom_group = {}, std::span<const double> custom_provider = {}) {
  Target t;
  const auto L = static_cast<double>(num_providers);
  const auto C = static_cast<double>(part.num_groups);
  switch (mode) {
    case TargetMode::uniform_provider:
      t.provider.assign(num_providers, 1.0 / L);
      break;
    case TargetMode::uniform_group:
      t.group.assign(part.num_groups, 1.0 / C);
      t.provider.assign(num_providers, 0.0);
      for (std::size_t c = 0; c < part.num_groups; ++c)
        for (auto s : part.members[c]) t.provider[s] = 1.0 / (C * static_cast<double>(part.members[c].size()));
      break;
    case TargetMode::custom:
      detail::check_distribution(custom_group, part.num_groups, "custom group target");
      t.group.assign(custom_group.begin(), custom_group.end());
      if (custom_provider.empty()) {
        t.provider.assign(num_providers, 1.0 / L);
      } else {
        detail::check_distribution(custom_provider, num_providers, "custom provider target");
        t.provider.assign(custom_provider.begin(), custom_provider.end());
      }
      break;
  }
  for (std::size_t c = 0; c < part.num_groups; ++c) {
    double agg = 0.0;
    for (auto s : part.members[c]) agg += t.provider[s];
    if (!(agg > 0.0)) throw Error("build_target: group " + std::to_string(c) + " has zero aggregated provider target");
  }
  return t;
}

template <class T>
struct ExposureState {
  std::vector<T> e;
  std::vector<T> p;            // smoothed provider distribution
  std::vector<double> t;       // smoothed provider target
  std::vector<T> p_group;      // p^G
  std::vector<double> t_group;  // t^G
  std::vector<double> t_agg;   // aggregated provider target per group
  std::vector<std::vector<T>> p_within;       // p^(c) in member order
  std::vector<std::vector<double>> t_within;  // t^(c) in member order
};

inline constexpr double kDefaultSmoothing = 1e-12;

/// Normalizes exposure and fills every hierarchical quantity. Distributions
/// are smoothed as (x + eps) / sum(x + eps); eps = 0 disables smoothing.
template <class T>
ExposureState<T> hierarchical_stats(std::span<const T> e, const Target& target, const GroupPartition& part,
                                    double eps = kDefaultSmoothing) {
  const std::size_t L = e.size();
  if (target.provider.size() != L) throw Error("hierarchical_stats: target length mismatch");
  if (part.provider_group.size() != L) throw Error("hierarchical_stats: partition does not cover providers");
  ExposureState<T> st;
  st.e.assign(e.begin(), e.end());

  double total_value = 0.0;
  for (const auto& x : e) {
    if (!(value_of(x) >= 0.0)) throw Error("hierarchical_stats: negative exposure");
    total_value += value_of(x);
  }
  if (!(total_value > 0.0)) throw Error("hierarchical_stats: total exposure is zero");

  T total = e[0];
  for (std::size_t s = 1; s < L; ++s) total = total + e[s];
  const double norm = 1.0 + static_cast<double>(L) * eps;
  for (std::size_t s = 0; s < L; ++s) st.p.push_back((e[s] / total + eps) / norm);

  double t_total = 0.0;
  for (double x : target.provider) t_total += x;
  for (double x : target.provider) st.t.push_back((x / t_total + eps) / norm);

  const std::size_t C = part.num_groups;
  st.t_agg.assign(C, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    const auto& members = part.members[c];
    if (members.empty()) throw Error("hierarchical_stats: empty group " + std::to_string(c));
    T pg = st.p[members[0]];
    for (std::size_t j = 1; j < members.size(); ++j) pg = pg + st.p[members[j]];
    double tg = 0.0;
    for (auto s : members) tg += st.t[s];
    if (eps == 0.0 && value_of(pg) == 0.0)
      throw Error("hierarchical_stats: group " + std::to_string(c) + " has zero exposure and smoothing is disabled");
    st.p_group.push_back(pg);
    st.t_agg[c] = tg;
    std::vector<T> pw;
    std::vector<double> tw;
    for (auto s : members) {
      pw.push_back(st.p[s] / pg);
      tw.push_back(st.t[s] / tg);
    }
    st.p_within.push_back(std::move(pw));
    st.t_within.push_back(std::move(tw));
  }
  if (target.group.empty()) {
    st.t_group = st.t_agg;
  } else {
    if (target.group.size() != C) throw Error("hierarchical_stats: group target length mismatch");
    double g_total = 0.0;
    for (double x : target.group) g_total += x;
    const double gnorm = 1.0 + static_cast<double>(C) * eps;
    for (double x : target.group) st.t_group.push_back((x / g_total + eps) / gnorm);
  }
  return st;
}

template <class T>
ExposureState<T> hierarchical_stats(const std::vector<T>& e, const Target& target, const GroupPartition& part,
                                    double eps = kDefaultSmoothing) {
  return hierarchical_stats<T>(std::span<const T>(e), target, part, eps);
}

/// sum_i p_i ln(p_i / q_i), natural log.
template <class T>
T kl_divergence(std::span<const T> p, std::span<const double> q) {
  using std::log;
  if (p.size() != q.size() || p.empty()) throw Error("kl_divergence: size mismatch");
  T acc = p[0] * log(p[0] / q[0]);
  for (std::size_t i = 1; i < p.size(); ++i) acc = acc + p[i] * log(p[i] / q[i]);
  return acc;
}

template <class T>
T kl_divergence(const std::vector<T>& p, const std::vector<double>& q) {
  return kl_divergence<T>(std::span<const T>(p), std::span<const double>(q));
}

struct Decomposition {
  double global = 0.0;
  double inter = 0.0;
  double intra = 0.0;  // sum_c p^G_c KL(p^(c) || t^(c))
  double calibration = 0.0;
  double residual = 0.0;
  bool passed = false;
};

/// Evaluates both sides of
///   KL(p||t) = KL(p^G||t^G) + sum_c p^G_c KL(p^(c)||t^(c)) + sum_c p^G_c log(t^G_c / tbar^G_c).
inline Decomposition verify_decomposition(const ExposureState<double>& st, double tol = 1e-10) {
  auto positive = [](const std::vector<double>& v, const char* what) {
    for (double x : v)
      if (!(x > 0.0)) throw Error(std::string("verify_decomposition: zero probability in ") + what);
  };
  positive(st.p, "p");
  positive(st.t, "t");
  positive(st.t_group, "t^G");
  Decomposition d;
  d.global = kl_divergence(st.p, st.t);
  d.inter = kl_divergence(st.p_group, st.t_group);
  for (std::size_t c = 0; c < st.p_group.size(); ++c) {
    d.intra += st.p_group[c] * kl_divergence(st.p_within[c], st.t_within[c]);
    d.calibration += st.p_group[c] * std::log(st.t_group[c] / st.t_agg[c]);
  }
  d.residual = std::abs(d.global - (d.inter + d.intra + d.calibration));
  d.passed = d.residual <= tol;
  return d;
}

}  // namespace pfa
