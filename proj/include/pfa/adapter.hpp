#pragma once

// Score-correction MLP over [e_u || e_v]. `layers` counts linear layers:
//   1 -> linear map 2d -> 1
//   2 -> 2d -> h -> 1        (one ReLU hidden layer, the default)
//   3 -> 2d -> h -> h -> 1   (two ReLU hidden layers)
// Parameters live in one flat vector; layer l stores W_l (in x out,
// row-major) followed by b_l (out).

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "pfa/common.hpp"
#include "pfa/grad_engine.hpp"

namespace pfa {

struct AdapterShape {
  std::size_t embed_dim = 32;
  std::size_t hidden = 32;
  std::size_t layers = 2;

  void validate() const {
    if (embed_dim < 1 || hidden < 1) throw Error("adapter: embedding and hidden dimensions must be >= 1");
    if (layers < 1 || layers > 3) throw Error("adapter: layer count must be 1, 2 or 3");
  }
  std::size_t in_dim(std::size_t l) const { return l == 0 ? 2 * embed_dim : hidden; }
  std::size_t out_dim(std::size_t l) const { return l + 1 == layers ? 1 : hidden; }
  std::size_t weight_offset(std::size_t l) const {
    std::size_t off = 0;
    for (std::size_t i = 0; i < l; ++i) off += in_dim(i) * out_dim(i) + out_dim(i);
    return off;
  }
  std::size_t bias_offset(std::size_t l) const { return weight_offset(l) + in_dim(l) * out_dim(l); }
  std::size_t param_count() const { return weight_offset(layers); }

  friend bool operator==(const AdapterShape&, const AdapterShape&) = default;
};

struct AdapterParams {
  AdapterShape shape;
  std::uint64_t seed = 0;
  std::vector<double> values;
};

/// Weights ~ U(-scale/sqrt(fan_in), scale/sqrt(fan_in)); biases zero.
inline AdapterParams init_adapter(const AdapterShape& shape, std::uint64_t seed, double scale = 1.0) {
  shape.validate();
  AdapterParams p;
  p.shape = shape;
  p.seed = seed;
  p.values.assign(shape.param_count(), 0.0);
  Rng rng(seed);
  for (std::size_t l = 0; l < shape.layers; ++l) {
    const double bound = scale / std::sqrt(static_cast<double>(shape.in_dim(l)));
    const std::size_t off = shape.weight_offset(l);
    for (std::size_t i = 0; i < shape.in_dim(l) * shape.out_dim(l); ++i)
      p.values[off + i] = bound == 0.0 ? 0.0 : uniform(rng, -bound, bound);
  }
  return p;
}

/// Correction for one (user, item) input z = [e_u || e_v]. Generic over the
/// parameter scalar so the tape can differentiate it.
template <class T>
T adapter_correction(std::span<const T> params, const AdapterShape& shape, std::span<const double> z) {
  if (z.size() != 2 * shape.embed_dim) throw Error("adapter_correction: input has wrong width");
  if (params.size() != shape.param_count()) throw Error("adapter_correction: parameter count mismatch");
  std::vector<T> act;
  for (std::size_t l = 0; l < shape.layers; ++l) {
    const std::size_t in = shape.in_dim(l), out = shape.out_dim(l);
    const std::size_t w = shape.weight_offset(l), b = shape.bias_offset(l);
    std::vector<T> next;
    next.reserve(out);
    for (std::size_t j = 0; j < out; ++j) {
      T acc = params[b + j];
      for (std::size_t i = 0; i < in; ++i) {
        if (l == 0)
          acc = acc + params[w + i * out + j] * z[i];
        else
          acc = acc + params[w + i * out + j] * act[i];
      }
      if (l + 1 < shape.layers) acc = relu(acc);
      next.push_back(acc);
    }
    act = std::move(next);
  }
  return act[0];
}

/// Batched forward/backward over one user's candidate list.
class AdapterNet {
 public:
  /// Corrections for every candidate. Keeps activations for backward().
  std::vector<double> forward(const AdapterParams& p, std::span<const double> user_emb,
                              const std::vector<std::span<const double>>& item_embs) {
    const auto& sh = p.shape;
    if (user_emb.size() != sh.embed_dim) throw Error("AdapterNet: user embedding has wrong width");
    shape_ = sh;
    count_ = item_embs.size();
    inputs_.assign(count_ * 2 * sh.embed_dim, 0.0);
    acts_.assign(sh.layers, {});
    for (std::size_t c = 0; c < count_; ++c) {
      if (item_embs[c].size() != sh.embed_dim) throw Error("AdapterNet: item embedding has wrong width");
      double* z = &inputs_[c * 2 * sh.embed_dim];
      std::copy(user_emb.begin(), user_emb.end(), z);
      std::copy(item_embs[c].begin(), item_embs[c].end(), z + sh.embed_dim);
    }
    std::span<const double> in_buf(inputs_);
    for (std::size_t l = 0; l < sh.layers; ++l) {
      const std::size_t in = sh.in_dim(l), out = sh.out_dim(l);
      const double* W = &p.values[sh.weight_offset(l)];
      const double* b = &p.values[sh.bias_offset(l)];
      auto& a = acts_[l];
      a.assign(count_ * out, 0.0);
      for (std::size_t c = 0; c < count_; ++c) {
        double* o = &a[c * out];
        for (std::size_t j = 0; j < out; ++j) o[j] = b[j];
        const double* x = &in_buf[c * in];
        for (std::size_t i = 0; i < in; ++i) {
          const double xi = x[i];
          if (xi == 0.0) continue;
          const double* wr = W + i * out;
          for (std::size_t j = 0; j < out; ++j) o[j] += xi * wr[j];
        }
        if (l + 1 < sh.layers)
          for (std::size_t j = 0; j < out; ++j) o[j] = relu(o[j]);
      }
      in_buf = std::span<const double>(a);
    }
    return acts_.back();
  }

  /// Adds d loss / d params to `grad` given d loss / d correction per candidate.
  void backward(const AdapterParams& p, std::span<const double> g_out, std::span<double> grad) const {
    const auto& sh = shape_;
    if (g_out.size() != count_) throw Error("AdapterNet::backward: gradient length mismatch");
    if (grad.size() != sh.param_count()) throw Error("AdapterNet::backward: parameter gradient size mismatch");
    std::vector<double> g(g_out.begin(), g_out.end());  // grad w.r.t. output of layer l
    for (std::size_t l = sh.layers; l-- > 0;) {
      const std::size_t in = sh.in_dim(l), out = sh.out_dim(l);
      const double* W = &p.values[sh.weight_offset(l)];
      double* gW = &grad[sh.weight_offset(l)];
      double* gb = &grad[sh.bias_offset(l)];
      const std::vector<double>& x = l == 0 ? inputs_ : acts_[l - 1];
      const std::vector<double>& y = acts_[l];
      std::vector<double> g_in(l == 0 ? 0 : count_ * in, 0.0);
      std::vector<double> gz(out);
      for (std::size_t c = 0; c < count_; ++c) {
        const double* gc = &g[c * out];
        const double* xc = &x[c * in];
        const double* yc = &y[c * out];
        for (std::size_t j = 0; j < out; ++j) gz[j] = (l + 1 < sh.layers && yc[j] <= 0.0) ? 0.0 : gc[j];
        for (std::size_t j = 0; j < out; ++j) gb[j] += gz[j];
        for (std::size_t i = 0; i < in; ++i) {
          const double xi = xc[i];
          double* gw = gW + i * out;
          const double* wr = W + i * out;
          double acc = 0.0;
          for (std::size_t j = 0; j < out; ++j) {
            gw[j] += xi * gz[j];
            acc += wr[j] * gz[j];
          }
          if (l > 0) g_in[c * in + i] = acc;
        }
      }
      g = std::move(g_in);
    }
  }

 private:
  AdapterShape shape_;
  std::size_t count_ = 0;
  std::vector<double> inputs_;
  std::vector<std::vector<double>> acts_;
};

/// y~ = y^ + delta.
inline std::vector<double> adjust_scores(std::span<const double> base, std::span<const double> delta) {
  if (base.size() != delta.size())
    throw Error("adjust_scores: length mismatch (" + std::to_string(base.size()) + " vs " +
                std::to_string(delta.size()) + ")");
  std::vector<double> out(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) out[i] = base[i] + delta[i];
  return out;
}

}  // namespace pfa
