// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "unipr/nn/tensor.hpp"

namespace unipr::nn {

class Tape;

/// Named trainable tensor. Gradients accumulate into `grad` across a batch;
/// the optimizer consumes and zeroes them.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  int index = -1;  // position in the owning store
};

struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily during backward
  bool requires_grad = false;
  Tape* tape = nullptr;
  Param* param = nullptr;
  std::vector<Node*> parents;
  std::function<void(Node&)> backprop;

  void ensure_grad() {
    if (grad.data == nullptr) grad = Tensor::zeros(value.shape);
  }
  void add_grad(const Tensor& g);
};

using Ref = Node*;

/// Records one computation graph; not thread-safe, use one tape per worker.
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  bool grad_enabled() const { return grad_enabled_; }

  Ref leaf(Tensor v, bool requires_grad = false) {
    Ref n = alloc();
    n->value = std::move(v);
    n->requires_grad = requires_grad && grad_enabled_;
    return n;
  }

  Ref constant(Tensor v) { return leaf(std::move(v), false); }

  Ref param(Param& p) {
    Ref n = leaf(p.value, true);
    n->param = &p;
    if (n->requires_grad) param_nodes_.push_back(n);
    return n;
  }

  Ref make(Tensor v, std::vector<Ref> parents, std::function<void(Node&)> fn) {
    Ref n = alloc();
    n->value = std::move(v);
    for (Ref p : parents)
      if (p->requires_grad) n->requires_grad = true;
    n->requires_grad = n->requires_grad && grad_enabled_;
    if (n->requires_grad) {
      n->parents = std::move(parents);
      n->backprop = std::move(fn);
    }
    return n;
  }

  /// Reverse sweep from `root` (scalar), seeding d(root)/d(root) = 1.
  void backward(Ref root);

  /// Adds every param node's grad into its Param::grad, scaled.
  void accumulate_param_grads(double scale = 1.0);

  /// Same, but into an external store-indexed buffer (thread-private batching).
  void accumulate_param_grads_into(std::vector<Tensor>& by_index, double scale = 1.0);

  size_t size() const { return nodes_.size(); }

 private:
  Ref alloc() {
    nodes_.push_back(std::make_unique<Node>());
    nodes_.back()->tape = this;
    return nodes_.back().get();
  }

  std::vector<std::unique_ptr<Node>> nodes_;
  std::vector<Ref> param_nodes_;
  bool grad_enabled_;
};

// ---- ops ------------------------------------------------------------------
// All ops record onto the operands' tape. Shapes are validated eagerly.

Ref add(Ref a, Ref b);                 // same shape
Ref add_rowvec(Ref a, Ref b);          // a[..., C] + b[C]
Ref sub(Ref a, Ref b);
Ref mul(Ref a, Ref b);                 // elementwise, same shape
Ref scale(Ref a, double s);
Ref add_scalar(Ref a, double s);
Ref neg(Ref a);
Ref exp_op(Ref a);
Ref log_op(Ref a);
Ref sigmoid(Ref a);
Ref softplus(Ref a);
Ref relu(Ref a);
Ref gelu(Ref a);
Ref abs_op(Ref a);
Ref square(Ref a);
Ref reciprocal(Ref a);
Ref clamp(Ref a, double lo, double hi);

Ref matmul(Ref a, Ref b);                                  // [n,k]x[k,m]
Ref bmm(Ref a, Ref b, bool trans_a = false, bool trans_b = false);  // [B,..]x[B,..]

Ref reshape(Ref a, std::vector<int> shape);
Ref permute3_102(Ref a);               // [a,b,c] -> [b,a,c]
Ref concat0(const std::vector<Ref>& parts);
Ref slice0(Ref a, int start, int len);
Ref slice_last(Ref a, int start, int len);
Ref concat_last(const std::vector<Ref>& parts);
Ref gather_rows(Ref a, const std::vector<int>& rows);      // 2-D input

Ref softmax_lastdim(Ref a);
Ref softmax_lastdim_masked(Ref a, const Tensor& additive_mask);
Ref layernorm(Ref x, Ref gamma, Ref beta, double eps = 1e-5);

Ref sum_all(Ref a);                    // -> [1]
Ref mean_all(Ref a);                   // -> [1]

/// out[k, :] = sum_j w[k,j] * F[idx[k,j], :], F is [S, C] (flattened spatial).
/// idx/w are fixed sampling tables; gradient flows into F only.
Ref gather_bilinear(Ref F, const std::vector<std::array<int64_t, 4>>& idx,
                    const std::vector<std::array<double, 4>>& w);

/// NHWC conv: x[H,W,Cin], w[KH,KW,Cin,Cout], b[Cout]; zero padding `pad`.
Ref conv2d(Ref x, Ref w, Ref b, int stride, int pad);

}  // namespace unipr::nn
