#pragma once

// Matrix-factorization backbone pretrained with BPR. After pretraining the
// table is frozen and only read.

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "pfa/common.hpp"
#include "pfa/data_model.hpp"
#include "pfa/metrics.hpp"
#include "pfa/optim.hpp"

namespace pfa {

struct EmbeddingTable {
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  std::size_t dim = 0;
  std::uint64_t seed = 0;
  Matrix user;  // num_users x dim
  Matrix item;  // num_items x dim
  bool frozen = false;

  std::span<const double> user_row(std::size_t u) const { return user.row(u); }
  std::span<const double> item_row(std::size_t v) const { return item.row(v); }

  double score(std::size_t u, std::size_t v) const { return dot(user.row(u), item.row(v)); }

  std::uint64_t checksum() const {
    std::uint64_t h = fnv1a(user.data);
    return fnv1a(item.data, h);
  }
};

/// Seeded U(-0.1, 0.1) initialization.
inline EmbeddingTable init_embeddings(std::size_t num_users, std::size_t num_items, std::size_t dim, std::uint64_t seed) {
  if (dim == 0) throw Error("embedding dimension must be >= 1");
  EmbeddingTable t;
  t.num_users = num_users;
  t.num_items = num_items;
  t.dim = dim;
  t.seed = seed;
  t.user = Matrix(num_users, dim);
  t.item = Matrix(num_items, dim);
  Rng rng(seed);
  for (auto& x : t.user.data) x = uniform(rng, -0.1, 0.1);
  for (auto& x : t.item.data) x = uniform(rng, -0.1, 0.1);
  return t;
}

/// Base score rows: out(i, v) = <e_{users[i]}, e_v>.
inline Matrix score_all(const EmbeddingTable& emb, std::span<const std::uint32_t> users) {
  Matrix out(users.size(), emb.num_items);
  for (std::size_t i = 0; i < users.size(); ++i) {
    if (users[i] >= emb.num_users) throw Error("score_all: user id out of range");
    const auto eu = emb.user_row(users[i]);
    auto row = out.row(i);
    for (std::size_t v = 0; v < emb.num_items; ++v) row[v] = dot(eu, emb.item_row(v));
  }
  return out;
}

inline std::vector<double> score_row(const EmbeddingTable& emb, std::uint32_t user) {
  const std::uint32_t u[1] = {user};
  return std::move(score_all(emb, u).data);
}

struct BprTriple {
  std::uint32_t user;
  std::uint32_t pos;
  std::uint32_t neg;
};

inline double log1p_exp(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
inline double sigmoid(double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

/// -sum ln sigma(y_{u,pos} - y_{u,neg}).
inline double bpr_loss(std::span<const BprTriple> batch, const EmbeddingTable& emb) {
  double loss = 0.0;
  for (const auto& t : batch) loss += log1p_exp(-(emb.score(t.user, t.pos) - emb.score(t.user, t.neg)));
  return loss;
}

/// Adds the gradient of `scale * bpr_loss` to the user/item gradient matrices.
inline void bpr_loss_grad(std::span<const BprTriple> batch, const EmbeddingTable& emb, double scale, Matrix& g_user,
                          Matrix& g_item) {
  const std::size_t d = emb.dim;
  for (const auto& t : batch) {
    const double x = emb.score(t.user, t.pos) - emb.score(t.user, t.neg);
    const double coef = -sigmoid(-x) * scale;
    const auto eu = emb.user_row(t.user), ep = emb.item_row(t.pos), en = emb.item_row(t.neg);
    auto gu = g_user.row(t.user), gp = g_item.row(t.pos), gn = g_item.row(t.neg);
    for (std::size_t i = 0; i < d; ++i) {
      gu[i] += coef * (ep[i] - en[i]);
      gp[i] += coef * eu[i];
      gn[i] -= coef * eu[i];
    }
  }
}

/// Uniform negative item outside the user's training set.
class NegativeSampler {
 public:
  NegativeSampler(std::size_t num_items, const std::vector<std::vector<std::uint32_t>>& train)
      : num_items_(num_items), train_(&train) {}

  std::uint32_t sample(std::uint32_t user, Rng& rng) const {
    const auto& pos = (*train_)[user];
    if (pos.size() >= num_items_) throw Error("negative sampling: user has interacted with every item");
    while (true) {
      const auto v = static_cast<std::uint32_t>(uniform_index(rng, num_items_));
      if (!std::binary_search(pos.begin(), pos.end(), v)) return v;
    }
  }

 private:
  std::size_t num_items_;
  const std::vector<std::vector<std::uint32_t>>* train_;
};

struct PretrainConfig {
  double lr = 1e-2;
  std::size_t epochs = 50;
  std::size_t batch = 256;
  std::size_t dim = 32;
  std::uint64_t seed = 0;
  double l2 = 1e-4;
  std::size_t eval_k = 20;
};

struct PretrainEpoch {
  std::size_t epoch;
  double loss;      // mean BPR loss per triple
  double val_ndcg;  // NDCG@eval_k on validation, training items masked
};

struct PretrainResult {
  EmbeddingTable table;
  std::vector<PretrainEpoch> log;
  std::size_t best_epoch = 0;
};

/// Validation NDCG@k of the raw MF ranking (training items masked).
inline double validation_ndcg(const EmbeddingTable& emb, const SplitAssignment& split, std::size_t k) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::uint32_t u = 0; u < emb.num_users; ++u) {
    if (split.val[u].empty()) continue;
    const auto scores = score_row(emb, u);
    const auto kk = std::min(k, emb.num_items - split.train[u].size());
    const auto list = top_k_masked(scores, split.train[u], kk);
    sum += user_accuracy(list, split.val[u], k).ndcg;
    ++n;
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

/// BPR pretraining with Adam: one fresh uniform negative per training
/// positive per epoch, mini-batches of `batch` triples. Keeps the epoch with
/// the best validation NDCG (epoch 0 = initialization). Returns a frozen table.
inline PretrainResult pretrain(const InteractionDataset& ds, const SplitAssignment& split, const PretrainConfig& cfg) {
  if (ds.interactions.empty()) throw Error("pretrain: empty dataset");
  if (cfg.batch == 0) throw Error("pretrain: batch size must be positive");
  PretrainResult res;
  EmbeddingTable emb = init_embeddings(ds.num_users, ds.num_items, cfg.dim, cfg.seed);
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  NegativeSampler sampler(ds.num_items, split.train);

  std::vector<BprTriple> positives;
  for (std::uint32_t u = 0; u < ds.num_users; ++u)
    for (auto v : split.train[u]) positives.push_back({u, v, 0});

  AdamState su(emb.user.data.size()), si(emb.item.data.size());
  AdamConfig adam{cfg.lr};
  Matrix gu(emb.num_users, emb.dim), gi(emb.num_items, emb.dim);

  EmbeddingTable best = emb;
  double best_ndcg = validation_ndcg(emb, split, cfg.eval_k);
  res.log.push_back({0, std::numeric_limits<double>::quiet_NaN(), best_ndcg});

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(positives.begin(), positives.end(), rng);
    for (auto& t : positives) t.neg = sampler.sample(t.user, rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < positives.size(); start += cfg.batch) {
      const std::size_t end = std::min(positives.size(), start + cfg.batch);
      std::span<const BprTriple> batch(positives.data() + start, end - start);
      std::fill(gu.data.begin(), gu.data.end(), 0.0);
      std::fill(gi.data.begin(), gi.data.end(), 0.0);
      const double loss = bpr_loss(batch, emb);
      if (!std::isfinite(loss))
        throw NumericError("pretrain: BPR loss diverged at epoch " + std::to_string(epoch) + ", batch starting at " +
                           std::to_string(start) + " (try a smaller learning rate)");
      epoch_loss += loss;
      const double scale = 1.0 / static_cast<double>(batch.size());
      bpr_loss_grad(batch, emb, scale, gu, gi);
      for (const auto& t : batch) {
        const auto eu = emb.user_row(t.user), ep = emb.item_row(t.pos), en = emb.item_row(t.neg);
        auto a = gu.row(t.user), b = gi.row(t.pos), c = gi.row(t.neg);
        for (std::size_t i = 0; i < emb.dim; ++i) {
          a[i] += cfg.l2 * scale * eu[i];
          b[i] += cfg.l2 * scale * ep[i];
          c[i] += cfg.l2 * scale * en[i];
        }
      }
      adam_step(emb.user.data, gu.data, su, adam);
      adam_step(emb.item.data, gi.data, si, adam);
    }
    const double ndcg = validation_ndcg(emb, split, cfg.eval_k);
    res.log.push_back({epoch, epoch_loss / static_cast<double>(positives.size()), ndcg});
    if (ndcg > best_ndcg) {
      best_ndcg = ndcg;
      best = emb;
      res.best_epoch = epoch;
    }
  }
  best.frozen = true;
  res.table = std::move(best);
  return res;
}

}  // namespace pfa
