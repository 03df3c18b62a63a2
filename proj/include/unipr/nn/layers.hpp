// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "unipr/nn/tape.hpp"
#include "unipr/rng.hpp"

namespace unipr::nn {

/// Owns all trainable tensors of a model, in creation order.
/// Creation order and the init RNG stream are both deterministic, so two
/// stores built the same way hold identical values.
class ParamStore {
 public:
  explicit ParamStore(uint64_t seed = 0) : rng_(seed) {}

  Param& create(const std::string& name, std::vector<int> shape, double init_scale) {
    if (by_name_.count(name)) throw std::invalid_argument("ParamStore: duplicate param " + name);
    auto p = std::make_unique<Param>();
    p->name = name;
    p->value = Tensor(std::move(shape));
    if (init_scale != 0.0)
      for (int64_t i = 0, n = p->value.numel(); i < n; ++i)
        p->value[i] = rng_.uniform(-init_scale, init_scale);
    p->index = static_cast<int>(items_.size());
    Param* raw = p.get();
    by_name_[name] = raw;
    items_.push_back(std::move(p));
    return *raw;
  }

  Param& create_gaussian(const std::string& name, std::vector<int> shape, double stddev) {
    Param& p = create(name, std::move(shape), 0.0);
    for (int64_t i = 0, n = p.value.numel(); i < n; ++i) p.value[i] = stddev * rng_.normal();
    return p;
  }

  Param& create_const(const std::string& name, std::vector<int> shape, double v) {
    Param& p = create(name, std::move(shape), 0.0);
    std::fill(p.value.data->begin(), p.value.data->end(), v);
    return p;
  }

  Param* find(const std::string& name) {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : it->second;
  }

  const std::vector<std::unique_ptr<Param>>& items() const { return items_; }

  void zero_grad() {
    for (auto& p : items_)
      if (p->grad.data) std::fill(p->grad.data->begin(), p->grad.data->end(), 0.0);
  }

  int64_t total_size() const {
    int64_t n = 0;
    for (auto& p : items_) n += p->value.numel();
    return n;
  }

  /// FNV-1a over the raw value bytes; order-sensitive.
  uint64_t value_hash() const;

 private:
  std::vector<std::unique_ptr<Param>> items_;
  std::map<std::string, Param*> by_name_;
  Rng rng_;
};

inline double xavier(int fan_in, int fan_out) { return std::sqrt(6.0 / (fan_in + fan_out)); }

struct Linear {
  Param* w = nullptr;
  Param* b = nullptr;

  Linear() = default;
  Linear(ParamStore& ps, const std::string& prefix, int in, int out, bool zero_init = false) {
    w = &ps.create(prefix + ".w", {in, out}, zero_init ? 0.0 : xavier(in, out));
    b = &ps.create(prefix + ".b", {out}, 0.0);
  }

  Ref operator()(Tape& t, Ref x) const {
    auto shape = x->value.shape;
    const int in = shape.back();
    Ref flat = x->value.ndim() == 2 ? x : reshape(x, {static_cast<int>(x->value.numel() / in), in});
    Ref y = add_rowvec(matmul(flat, t.param(*w)), t.param(*b));
    if (x->value.ndim() != 2) {
      shape.back() = w->value.dim(1);
      y = reshape(y, shape);
    }
    return y;
  }
};

struct LayerNorm {
  Param* gamma = nullptr;
  Param* beta = nullptr;

  LayerNorm() = default;
  LayerNorm(ParamStore& ps, const std::string& prefix, int c) {
    gamma = &ps.create_const(prefix + ".gamma", {c}, 1.0);
    beta = &ps.create_const(prefix + ".beta", {c}, 0.0);
  }

  Ref operator()(Tape& t, Ref x) const { return layernorm(x, t.param(*gamma), t.param(*beta)); }
};

/// Multi-head attention core: q [Nq, C] x kv [Nkv, C] -> [Nq, C].
/// Output projection is zero-initialized so residual blocks start as identity.
struct MultiheadAttention {
  Linear wq, wk, wv, wo;
  int heads = 1;
  int c = 0;

  MultiheadAttention() = default;
  MultiheadAttention(ParamStore& ps, const std::string& prefix, int c_, int heads_)
      : wq(ps, prefix + ".wq", c_, c_),
        wk(ps, prefix + ".wk", c_, c_),
        wv(ps, prefix + ".wv", c_, c_),
        wo(ps, prefix + ".wo", c_, c_, /*zero_init=*/true),
        heads(heads_),
        c(c_) {
    if (c_ % heads_ != 0) throw std::invalid_argument("MultiheadAttention: C % heads != 0");
  }

  Ref operator()(Tape& t, Ref q_in, Ref kv_in, const Tensor* score_mask = nullptr) const {
    const int nq = q_in->value.dim(0), nkv = kv_in->value.dim(0), dh = c / heads;
    Ref q = permute3_102(reshape(wq(t, q_in), {nq, heads, dh}));   // [H, Nq, dh]
    Ref k = permute3_102(reshape(wk(t, kv_in), {nkv, heads, dh}));  // [H, Nkv, dh]
    Ref v = permute3_102(reshape(wv(t, kv_in), {nkv, heads, dh}));
    Ref scores = scale(bmm(q, k, false, true), 1.0 / std::sqrt(static_cast<double>(dh)));
    Ref attn;
    if (score_mask) {
      // mask [Nq, Nkv] broadcast over heads
      Tensor full({heads, nq, nkv});
      for (int h = 0; h < heads; ++h)
        std::copy_n(score_mask->ptr(), static_cast<int64_t>(nq) * nkv,
                    full.ptr() + static_cast<int64_t>(h) * nq * nkv);
      attn = softmax_lastdim_masked(scores, full);
    } else {
      attn = softmax_lastdim(scores);
    }
    Ref out = bmm(attn, v);                                        // [H, Nq, dh]
    out = reshape(permute3_102(out), {nq, c});
    return wo(t, out);
  }
};

struct FeedForward {
  Linear fc1, fc2;

  FeedForward() = default;
  FeedForward(ParamStore& ps, const std::string& prefix, int c, int hidden) {
    fc1 = Linear(ps, prefix + ".fc1", c, hidden);
    fc2 = Linear(ps, prefix + ".fc2", hidden, c);
  }

  Ref operator()(Tape& t, Ref x) const { return fc2(t, gelu(fc1(t, x))); }
};

/// Pre-norm residual transformer block; self-attention when kv is null.
struct AttentionBlock {
  LayerNorm ln_q, ln_kv, ln_ffn;
  MultiheadAttention attn;
  FeedForward ffn;
  bool cross = false;

  AttentionBlock() = default;
  AttentionBlock(ParamStore& ps, const std::string& prefix, int c, int heads, int ffn_hidden,
                 bool cross_)
      : ln_q(ps, prefix + ".ln_q", c),
        ln_ffn(ps, prefix + ".ln_ffn", c),
        attn(ps, prefix + ".attn", c, heads),
        ffn(ps, prefix + ".ffn", c, ffn_hidden),
        cross(cross_) {
    if (cross) ln_kv = LayerNorm(ps, prefix + ".ln_kv", c);
  }

  Ref operator()(Tape& t, Ref x, Ref kv = nullptr, const Tensor* score_mask = nullptr) const {
    Ref qn = ln_q(t, x);
    Ref kvn = cross ? ln_kv(t, kv) : qn;
    Ref h = add(x, attn(t, qn, kvn, score_mask));
    return add(h, ffn(t, ln_ffn(t, h)));
  }
};

/// Sinusoidal embedding of coordinates: per value, (raw, sin/cos at n_freq
/// octave frequencies). Input [N, D] -> [N, D * (1 + 2 * n_freq)]; constant.
Tensor sinusoidal_embedding(const Tensor& coords, int n_freq);

inline int sinusoidal_dim(int d, int n_freq) { return d * (1 + 2 * n_freq); }

}  // namespace unipr::nn
