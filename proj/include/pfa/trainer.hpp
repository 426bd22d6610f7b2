#pragma once

// Adapter training: frozen backbone scores + adapter corrections are sorted
// by the smoothed network per user; batch-level expected exposure feeds the
// fairness loss and expected relevance feeds diffNDCG.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pfa/adapter.hpp"
#include "pfa/backbone.hpp"
#include "pfa/data_model.hpp"
#include "pfa/diffsort.hpp"
#include "pfa/evaluation.hpp"
#include "pfa/exposure.hpp"
#include "pfa/losses.hpp"
#include "pfa/optim.hpp"

namespace pfa {

struct TrainConfig {
  std::size_t batch_size = 256;
  std::size_t epochs = 50;
  double lr = 1e-3;
  double beta = 10.0;
  std::size_t k = 20;
  std::size_t candidates = 128;  // 0 = full catalog
  LossWeights weights;
  FairnessLoss fairness = FairnessLoss::hefa;
  std::uint64_t seed = 0;
  double ndcg_floor = 0.1;
  std::size_t hidden = 32;
  std::size_t layers = 2;
  double init_scale = 1.0;
  double smoothing = kDefaultSmoothing;

  void validate(std::size_t num_items) const {
    if (!(lr > 0.0)) throw Error("train config: lr must be positive");
    if (!(ndcg_floor >= 0.0 && ndcg_floor < 1.0)) throw Error("train config: ndcg_floor must be in [0, 1)");
    if (batch_size == 0) throw Error("train config: batch_size must be positive");
    if (k == 0) throw Error("train config: K must be positive");
    const std::size_t cand = candidates == 0 ? num_items : std::min(candidates, num_items);
    if (k > cand) throw Error("train config: K exceeds the candidate count");
    weights.validate();
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double fairness_loss = 0.0;
  double ndcg_loss = 0.0;
  double total_loss = 0.0;
  double val_ndcg = 0.0;
  double val_gini = 0.0;
};

struct Checkpoint {
  AdapterParams params;
  std::size_t epoch = 0;
  double val_ndcg = 0.0;
  double val_gini = 0.0;
};

/// Among epochs with val NDCG >= (1 - floor) * base_ndcg pick the lowest
/// Gini; if none qualifies pick the highest NDCG. Ties go to the earlier
/// epoch. Returns an index into `log`.
inline std::size_t select_checkpoint(std::span<const EpochRecord> log, double floor, double base_ndcg) {
  if (log.empty()) throw Error("select_checkpoint: empty log");
  const double threshold = (1.0 - floor) * base_ndcg;
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < log.size(); ++i) {
    if (log[i].val_ndcg < threshold) continue;
    if (!best || log[i].val_gini < log[*best].val_gini) best = i;
  }
  if (best) return *best;
  std::size_t arg = 0;
  for (std::size_t i = 1; i < log.size(); ++i)
    if (log[i].val_ndcg > log[arg].val_ndcg) arg = i;
  return arg;
}

/// Per-user inputs of one objective evaluation.
struct UserSlate {
  std::uint32_t user = 0;
  std::vector<std::uint32_t> candidates;
  std::vector<double> relevance;  // per candidate
};

struct ObjectiveValue {
  double fairness = 0.0;
  double ndcg_loss = 0.0;
  double total = 0.0;
  std::vector<std::vector<double>> grad_scores;  // per user, per candidate
};

/// Fairness + lambda_acc * (1 - diffNDCG) for a batch given adjusted scores
/// per user, and its gradient w.r.t. those scores.
class SlateObjective {
 public:
  SlateObjective(std::span<const std::uint32_t> item_provider, std::size_t num_providers, const Target& target,
                 const GroupPartition& part, const TrainConfig& cfg)
      : item_provider_(item_provider),
        num_providers_(num_providers),
        target_(&target),
        part_(&part),
        cfg_(cfg),
        bias_(cfg.k) {}

  ObjectiveValue evaluate(const std::vector<UserSlate>& slates, const std::vector<std::vector<double>>& scores,
                          bool want_grad) const {
    if (slates.size() != scores.size()) throw Error("objective: slate/score count mismatch");
    const CauchySmoothing h(cfg_.beta);
    SortingNetwork net(h);
    std::vector<double> e(num_providers_, 0.0);
    std::vector<double> idcg(slates.size(), 0.0);
    std::vector<std::vector<double>> expected_rel(slates.size());
    std::vector<double> ndcg_values;

    for (std::size_t i = 0; i < slates.size(); ++i) {
      const auto& sl = slates[i];
      if (scores[i].size() != sl.candidates.size()) throw Error("objective: score row has wrong length");
      net.forward(scores[i]);
      const auto x = net.expected_item_weight(rank_weights(sl.candidates.size()));
      for (std::size_t j = 0; j < x.size(); ++j) e[item_provider_[sl.candidates[j]]] += x[j];
      idcg[i] = ideal_dcg(sl.relevance, cfg_.k);
      if (idcg[i] > 0.0) {
        expected_rel[i] = net.expected_rank_value(sl.relevance);
        ndcg_values.push_back(ndcg_from_expected(expected_rel[i], idcg[i]));
      }
    }

    ObjectiveValue out;
    const auto fair = fairness_loss_grad(e, *target_, *part_, cfg_.fairness, cfg_.weights, cfg_.smoothing);
    out.fairness = fair.value;
    out.ndcg_loss = ndcg_values.empty() ? 0.0 : diff_ndcg_loss(ndcg_values);
    if (ndcg_values.empty() && cfg_.weights.acc > 0.0) throw Error("objective: no user in the batch has a relevant candidate");
    out.total = total_loss(out.fairness, out.ndcg_loss, cfg_.weights);
    if (!std::isfinite(out.total)) throw NumericError("objective: non-finite loss");
    if (!want_grad) return out;

    const double acc_scale = ndcg_values.empty() ? 0.0 : cfg_.weights.acc / static_cast<double>(ndcg_values.size());
    out.grad_scores.resize(slates.size());
    for (std::size_t i = 0; i < slates.size(); ++i) {
      const auto& sl = slates[i];
      const std::size_t n = sl.candidates.size();
      net.forward(scores[i]);
      std::vector<double> g_item(n);
      for (std::size_t j = 0; j < n; ++j) g_item[j] = fair.grad_e[item_provider_[sl.candidates[j]]];
      std::vector<double> g_rank;
      if (idcg[i] > 0.0 && acc_scale > 0.0) {
        g_rank.assign(n, 0.0);
        for (std::size_t r = 0; r < std::min(cfg_.k, n); ++r)
          g_rank[r] = -acc_scale * std::exp2(expected_rel[i][r]) * kLn2 * bias_[r] / idcg[i];
      }
      out.grad_scores[i] = net.backward(rank_weights(n), g_item, sl.relevance, g_rank);
    }
    return out;
  }

 private:
  std::vector<double> rank_weights(std::size_t n) const {
    std::vector<double> w(n, 0.0);
    for (std::size_t r = 0; r < std::min(n, cfg_.k); ++r) w[r] = bias_[r];
    return w;
  }

  double ndcg_from_expected(std::span<const double> expected, double idcg) const {
    double dcg = 0.0;
    for (std::size_t r = 0; r < std::min(cfg_.k, expected.size()); ++r) dcg += (std::exp2(expected[r]) - 1.0) * bias_[r];
    return dcg / idcg;
  }

  std::span<const std::uint32_t> item_provider_;
  std::size_t num_providers_;
  const Target* target_;
  const GroupPartition* part_;
  TrainConfig cfg_;
  PositionBias bias_;
};

/// The same objective as a function of the adapter parameters.
class AdapterObjective {
 public:
  AdapterObjective(const EmbeddingTable& emb, std::span<const std::uint32_t> item_provider, std::size_t num_providers,
                   const Target& target, const GroupPartition& part, const TrainConfig& cfg)
      : emb_(&emb), slate_(item_provider, num_providers, target, part, cfg) {}

  struct Result {
    ObjectiveValue value;
    std::vector<double> grad;  // w.r.t. adapter parameters
  };

  Result evaluate(const AdapterParams& params, const std::vector<UserSlate>& slates, bool want_grad) const {
    std::vector<std::vector<double>> scores(slates.size());
    AdapterNet net;
    for (std::size_t i = 0; i < slates.size(); ++i) scores[i] = slate_scores(net, params, slates[i]);
    Result res;
    res.value = slate_.evaluate(slates, scores, want_grad);
    if (!want_grad) return res;
    res.grad.assign(params.values.size(), 0.0);
    for (std::size_t i = 0; i < slates.size(); ++i) {
      slate_scores(net, params, slates[i]);
      net.backward(params, res.value.grad_scores[i], res.grad);
    }
    return res;
  }

  const SlateObjective& slate_objective() const { return slate_; }

  std::vector<double> slate_scores(AdapterNet& net, const AdapterParams& params, const UserSlate& sl) const {
    std::vector<std::span<const double>> items;
    std::vector<double> base;
    items.reserve(sl.candidates.size());
    base.reserve(sl.candidates.size());
    for (auto v : sl.candidates) {
      items.push_back(emb_->item_row(v));
      base.push_back(emb_->score(sl.user, v));
    }
    const auto delta = net.forward(params, emb_->user_row(sl.user), items);
    return adjust_scores(base, delta);
  }

 private:
  const EmbeddingTable* emb_;
  SlateObjective slate_;
};

/// Candidates for one user: training positives plus the best-scoring other
/// items, at most `cap` in total (0 = the whole catalog), ordered by
/// descending score with ties by item id.
inline std::vector<std::uint32_t> select_candidates(std::span<const double> scores,
                                                    std::span<const std::uint32_t> positives, std::size_t cap) {
  const std::size_t n = scores.size();
  const std::size_t limit = cap == 0 ? n : std::min(cap, n);
  auto by_score = [&](std::uint32_t a, std::uint32_t b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  };
  std::vector<std::uint32_t> pos(positives.begin(), positives.end());
  std::sort(pos.begin(), pos.end(), by_score);
  if (pos.size() > limit) pos.resize(limit);
  std::vector<std::uint32_t> rest;
  rest.reserve(n);
  for (std::uint32_t v = 0; v < n; ++v)
    if (!std::binary_search(positives.begin(), positives.end(), v)) rest.push_back(v);
  const std::size_t fill = std::min(limit - pos.size(), rest.size());
  std::partial_sort(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(fill), rest.end(), by_score);
  pos.insert(pos.end(), rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(fill));
  std::sort(pos.begin(), pos.end(), by_score);
  return pos;
}

inline UserSlate make_slate(std::uint32_t user, std::vector<std::uint32_t> candidates,
                            std::span<const std::uint32_t> positives) {
  UserSlate sl;
  sl.user = user;
  sl.candidates = std::move(candidates);
  sl.relevance.resize(sl.candidates.size());
  for (std::size_t j = 0; j < sl.candidates.size(); ++j)
    sl.relevance[j] = std::binary_search(positives.begin(), positives.end(), sl.candidates[j]) ? 1.0 : 0.0;
  return sl;
}

struct StepRecord {
  std::size_t epoch;
  std::size_t step;
  double fairness_loss;
  double ndcg_loss;
  double total_loss;
};

struct TrainResult {
  Checkpoint best;
  std::vector<EpochRecord> log;
  std::vector<StepRecord> steps;
  std::vector<AdapterParams> snapshots;  // parameters after each epoch, index = epoch
  double base_val_ndcg = 0.0;
  double base_val_gini = 0.0;
};

/// Trains the adapter with Adam on the frozen backbone. Epoch 0 in the log
/// is the initialization (forward-only losses).
inline TrainResult train_adapter(const InteractionDataset& ds, const SplitAssignment& split, const GroupPartition& part,
                                 const EmbeddingTable& emb, const Target& target, const TrainConfig& cfg) {
  if (!emb.frozen) throw Error("train_adapter: backbone embeddings must be frozen");
  if (emb.num_users != ds.num_users || emb.num_items != ds.num_items)
    throw Error("train_adapter: backbone shape does not match the dataset");
  cfg.validate(ds.num_items);

  AdapterShape shape{emb.dim, cfg.hidden, cfg.layers};
  AdapterParams params = init_adapter(shape, cfg.seed, cfg.init_scale);
  AdapterObjective objective(emb, ds.item_provider, ds.num_providers, target, part, cfg);
  AdamState adam(params.values.size());
  const AdamConfig adam_cfg{cfg.lr};
  Rng rng(cfg.seed ^ 0x5bd1e995ULL);

  std::vector<std::uint32_t> users;
  for (std::uint32_t u = 0; u < ds.num_users; ++u)
    if (!split.train[u].empty()) users.push_back(u);
  if (users.empty()) throw Error("train_adapter: no user has training interactions");

  TrainResult res;
  {
    const auto base = evaluate(ds, split, part, emb, nullptr, cfg.k, EvalPhase::validation);
    res.base_val_ndcg = base.ndcg;
    res.base_val_gini = base.gini;
  }

  auto refresh = [&](std::vector<UserSlate>& slates) {
    slates.clear();
    for (auto u : users) {
      const auto scores = adjusted_scores(emb, &params, u);
      slates.push_back(make_slate(u, select_candidates(scores, split.train[u], cfg.candidates), split.train[u]));
    }
  };
  auto validate = [&](EpochRecord& rec) {
    const auto r = evaluate(ds, split, part, emb, &params, cfg.k, EvalPhase::validation);
    rec.val_ndcg = r.ndcg;
    rec.val_gini = r.gini;
  };

  std::vector<UserSlate> slates;
  std::vector<std::size_t> order(users.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch <= cfg.epochs; ++epoch) {
    refresh(slates);
    if (epoch > 0) std::shuffle(order.begin(), order.end(), rng);
    EpochRecord rec;
    rec.epoch = epoch;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<UserSlate> batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) batch.push_back(slates[order[i]]);
      const bool train = epoch > 0;
      auto out = objective.evaluate(params, batch, train);
      if (!std::isfinite(out.value.total))
        throw NumericError("train_adapter: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batches));
      if (train) {
        for (double g : out.grad)
          if (!std::isfinite(g))
            throw NumericError("train_adapter: non-finite gradient at epoch " + std::to_string(epoch) + ", batch " +
                               std::to_string(batches));
        adam_step(params.values, out.grad, adam, adam_cfg);
        res.steps.push_back({epoch, batches, out.value.fairness, out.value.ndcg_loss, out.value.total});
      }
      rec.fairness_loss += out.value.fairness;
      rec.ndcg_loss += out.value.ndcg_loss;
      rec.total_loss += out.value.total;
      ++batches;
    }
    rec.fairness_loss /= static_cast<double>(batches);
    rec.ndcg_loss /= static_cast<double>(batches);
    rec.total_loss /= static_cast<double>(batches);
    validate(rec);
    res.log.push_back(rec);
    res.snapshots.push_back(params);
  }

  const auto best = select_checkpoint(res.log, cfg.ndcg_floor, res.base_val_ndcg);
  res.best = {res.snapshots[best], res.log[best].epoch, res.log[best].val_ndcg, res.log[best].val_gini};
  return res;
}

}  // namespace pfa
