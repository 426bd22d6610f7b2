#pragma once

// Finite-difference checks of every differentiable piece on a small fixed
// instance: 4 users, 8 items, 3 providers, full candidate sets, K = 3.

#include <string>
#include <vector>

#include "pfa/backbone.hpp"
#include "pfa/grad_engine.hpp"
#include "pfa/trainer.hpp"

namespace pfa {

struct ToyInstance {
  InteractionDataset ds;
  SplitAssignment split;
  GroupPartition part;
  EmbeddingTable emb;
  std::vector<UserSlate> slates;  // every user, all items as candidates
  TrainConfig cfg;
};

/// Providers own items {0,1,2}, {3,4}, {5,6,7}; providers 0 and 1 form the
/// head group, provider 2 the tail.
inline ToyInstance toy_instance(std::size_t embed_dim = 4, std::uint64_t seed = 3) {
  ToyInstance t;
  auto& ds = t.ds;
  ds.num_users = 4;
  ds.num_items = 8;
  ds.num_providers = 3;
  ds.item_provider = {0, 0, 0, 1, 1, 2, 2, 2};
  const std::vector<std::vector<std::uint32_t>> train = {{0, 3}, {1, 5, 6}, {2, 4}, {0, 7}};
  for (std::uint32_t u = 0; u < 4; ++u) {
    ds.user_tokens.push_back("u" + std::to_string(u));
    for (auto v : train[u]) ds.interactions.push_back({u, v});
  }
  for (std::uint32_t v = 0; v < 8; ++v) ds.item_tokens.push_back("i" + std::to_string(v));
  for (std::uint32_t s = 0; s < 3; ++s) ds.provider_tokens.push_back("p" + std::to_string(s));
  t.split.train = train;
  t.split.val.assign(4, {});
  t.split.test.assign(4, {});
  const std::vector<std::size_t> counts = {3, 2, 1};
  t.part = partition_from_counts(counts, std::vector<double>{0.6, 0.4});

  t.emb = init_embeddings(4, 8, embed_dim, seed);
  Rng rng(seed);
  for (auto& x : t.emb.user.data) x = uniform(rng, -1.0, 1.0);
  for (auto& x : t.emb.item.data) x = uniform(rng, -1.0, 1.0);
  t.emb.frozen = true;

  std::vector<std::uint32_t> all(8);
  for (std::uint32_t v = 0; v < 8; ++v) all[v] = v;
  for (std::uint32_t u = 0; u < 4; ++u) t.slates.push_back(make_slate(u, all, train[u]));

  t.cfg.k = 3;
  t.cfg.candidates = 0;
  t.cfg.batch_size = 4;
  t.cfg.hidden = 5;
  t.cfg.weights = {1.0, 0.5, 0.5};
  return t;
}

inline std::vector<std::vector<double>> toy_base_scores(const ToyInstance& t) {
  std::vector<std::vector<double>> s;
  for (const auto& sl : t.slates) {
    std::vector<double> row;
    for (auto v : sl.candidates) row.push_back(t.emb.score(sl.user, v));
    s.push_back(row);
  }
  return s;
}

struct GradCheckRow {
  std::string name;
  std::size_t coords = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

namespace detail {

inline std::vector<double> flatten(const std::vector<std::vector<double>>& rows) {
  std::vector<double> out;
  for (const auto& r : rows) out.insert(out.end(), r.begin(), r.end());
  return out;
}

inline std::vector<std::vector<double>> unflatten(std::span<const double> flat,
                                                  const std::vector<std::vector<double>>& like) {
  std::vector<std::vector<double>> out;
  std::size_t off = 0;
  for (const auto& r : like) {
    out.emplace_back(flat.begin() + static_cast<std::ptrdiff_t>(off),
                     flat.begin() + static_cast<std::ptrdiff_t>(off + r.size()));
    off += r.size();
  }
  return out;
}

inline GradCheckRow row(std::string name, const FdReport& rep) {
  return {std::move(name), rep.coords.size(), rep.max_rel_error, rep.passed};
}

}  // namespace detail

/// Runs the whole suite. Fairness losses are checked against provider
/// exposure, diffNDCG and the total objective against raw scores, and the
/// total objective against every adapter parameter for depths 1 to 3.
inline std::vector<GradCheckRow> run_grad_check(FdOptions opt = {}) {
  std::vector<GradCheckRow> rows;
  const ToyInstance toy = toy_instance();
  const auto base = toy_base_scores(toy);
  const Target tgt_group = build_target(TargetMode::uniform_group, 3, toy.part);
  const Target tgt_provider = build_target(TargetMode::uniform_provider, 3, toy.part);
  const std::vector<double> custom_group = {0.3, 0.7};
  const Target tgt_custom = build_target(TargetMode::custom, 3, toy.part, custom_group);

  // Soft exposure of the toy batch under the base scores.
  std::vector<double> e(3, 0.0);
  {
    const CauchySmoothing h(toy.cfg.beta);
    std::vector<SoftPermutation<double>> perms;
    std::vector<std::vector<std::uint32_t>> cands;
    for (std::size_t i = 0; i < toy.slates.size(); ++i) {
      perms.push_back(sort_soft(base[i], h, toy.cfg.k));
      cands.push_back(toy.slates[i].candidates);
    }
    e = soft_exposure(perms, cands, toy.ds.item_provider, 3, toy.cfg.k);
  }
  for (auto kind : {FairnessLoss::kl, FairnessLoss::hefa}) {
    for (const auto* tg : {&tgt_provider, &tgt_group, &tgt_custom}) {
      const auto fv = fairness_loss_grad(e, *tg, toy.part, kind, toy.cfg.weights);
      auto f = [&](std::span<const double> x) { return fairness_loss_grad(x, *tg, toy.part, kind, toy.cfg.weights).value; };
      const std::string mode = tg == &tgt_group ? "uniform_group" : tg == &tgt_custom ? "custom" : "uniform_provider";
      const std::string name = to_string(kind) + " wrt exposure (" + mode + ")";
      rows.push_back(detail::row(name, finite_diff_check(f, e, fv.grad_e, opt)));
    }
  }

  // diffNDCG per user through the tape.
  {
    const CauchySmoothing h(toy.cfg.beta);
    std::vector<double> analytic;
    std::vector<double> theta = detail::flatten(base);
    for (std::size_t i = 0; i < toy.slates.size(); ++i) {
      Tape tape;
      const auto vars = tape.variables(base[i]);
      const auto v = diff_ndcg(sort_soft<Var>(vars, h, toy.cfg.k), toy.slates[i].relevance, toy.cfg.k);
      const auto g = tape.backward(*v).of(vars);
      analytic.insert(analytic.end(), g.begin(), g.end());
    }
    auto f = [&](std::span<const double> x) {
      const auto rows_x = detail::unflatten(x, base);
      double s = 0.0;
      for (std::size_t i = 0; i < rows_x.size(); ++i)
        s += *diff_ndcg(sort_soft<double>(rows_x[i], h, toy.cfg.k), toy.slates[i].relevance, toy.cfg.k);
      return s;
    };
    rows.push_back(detail::row("diffNDCG wrt scores", finite_diff_check(f, theta, analytic, opt)));
  }

  // Total objective against raw scores.
  for (auto kind : {FairnessLoss::kl, FairnessLoss::hefa}) {
    TrainConfig cfg = toy.cfg;
    cfg.fairness = kind;
    const SlateObjective obj(toy.ds.item_provider, 3, tgt_custom, toy.part, cfg);
    const auto out = obj.evaluate(toy.slates, base, true);
    auto f = [&](std::span<const double> x) { return obj.evaluate(toy.slates, detail::unflatten(x, base), false).total; };
    rows.push_back(detail::row("total (" + to_string(kind) + ") wrt scores",
                               finite_diff_check(f, detail::flatten(base), detail::flatten(out.grad_scores), opt)));
  }

  // Total objective against adapter parameters.
  for (std::size_t layers = 1; layers <= 3; ++layers) {
    for (auto kind : {FairnessLoss::kl, FairnessLoss::hefa}) {
      TrainConfig cfg = toy.cfg;
      cfg.fairness = kind;
      cfg.layers = layers;
      const AdapterObjective obj(toy.emb, toy.ds.item_provider, 3, tgt_custom, toy.part, cfg);
      AdapterParams p = init_adapter({toy.emb.dim, cfg.hidden, layers}, 11, 1.0);
      Rng rng(17);
      for (auto& x : p.values) x += uniform(rng, -0.05, 0.05);  // non-zero biases too
      const auto res = obj.evaluate(p, toy.slates, true);
      auto f = [&](std::span<const double> x) {
        AdapterParams q = p;
        q.values.assign(x.begin(), x.end());
        return obj.evaluate(q, toy.slates, false).value.total;
      };
      rows.push_back(detail::row("total (" + to_string(kind) + ") wrt adapter, " + std::to_string(layers) + " layer" +
                                     (layers > 1 ? "s" : ""),
                                 finite_diff_check(f, p.values, res.grad, opt)));
    }
  }

  // BPR against the embeddings of a 2-user / 3-item table.
  {
    EmbeddingTable emb = init_embeddings(2, 3, 3, 5);
    const std::vector<BprTriple> batch = {{0, 0, 1}, {0, 2, 1}, {1, 1, 0}, {1, 1, 2}};
    Matrix gu(2, 3), gi(3, 3);
    bpr_loss_grad(batch, emb, 1.0, gu, gi);
    std::vector<double> theta = emb.user.data, analytic = gu.data;
    theta.insert(theta.end(), emb.item.data.begin(), emb.item.data.end());
    analytic.insert(analytic.end(), gi.data.begin(), gi.data.end());
    auto f = [&](std::span<const double> x) {
      EmbeddingTable t = emb;
      std::copy(x.begin(), x.begin() + 6, t.user.data.begin());
      std::copy(x.begin() + 6, x.end(), t.item.data.begin());
      return bpr_loss(batch, t);
    };
    rows.push_back(detail::row("BPR wrt embeddings", finite_diff_check(f, theta, analytic, opt)));
  }
  return rows;
}

}  // namespace pfa
