// SPDX-License-Identifier: Apache-2.0
#include "unipr/nn/tape.hpp"

#include <array>
#include <cmath>
#include <limits>

#include <Eigen/Core>

namespace unipr::nn {

using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using CMatMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

void Node::add_grad(const Tensor& g) {
  ensure_grad();
  if (g.numel() != grad.numel()) throw std::logic_error("add_grad: size mismatch");
  const double* src = g.ptr();
  double* dst = grad.ptr();
  for (int64_t i = 0, n = grad.numel(); i < n; ++i) dst[i] += src[i];
}

void Tape::backward(Ref root) {
  if (root->value.numel() != 1) throw std::invalid_argument("backward: root must be scalar");
  if (!root->requires_grad) throw std::invalid_argument("backward: root does not require grad");
  root->ensure_grad();
  (*root->grad.data)[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& n = **it;
    if (n.requires_grad && n.grad.data != nullptr && n.backprop) n.backprop(n);
  }
}

void Tape::accumulate_param_grads(double s) {
  for (Ref n : param_nodes_) {
    if (n->grad.data == nullptr) continue;
    Param& p = *n->param;
    if (p.grad.data == nullptr) p.grad = Tensor::zeros(p.value.shape);
    const double* src = n->grad.ptr();
    double* dst = p.grad.ptr();
    for (int64_t i = 0, m = p.grad.numel(); i < m; ++i) dst[i] += s * src[i];
  }
}

void Tape::accumulate_param_grads_into(std::vector<Tensor>& by_index, double s) {
  for (Ref n : param_nodes_) {
    if (n->grad.data == nullptr) continue;
    const Param& p = *n->param;
    if (p.index < 0 || p.index >= static_cast<int>(by_index.size()))
      throw std::logic_error("accumulate_param_grads_into: param index out of range");
    Tensor& dst = by_index[p.index];
    if (dst.data == nullptr) dst = Tensor::zeros(p.value.shape);
    const double* src = n->grad.ptr();
    double* d = dst.ptr();
    for (int64_t i = 0, m = dst.numel(); i < m; ++i) d[i] += s * src[i];
  }
}

namespace {

void check_same_shape(Ref a, Ref b, const char* op) {
  if (!a->value.same_shape(b->value))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a->value.shape_str() +
                                " vs " + b->value.shape_str());
}

Ref unary(Ref a, std::function<double(double)> f, std::function<double(double, double)> df) {
  // df(x, y) -> dy/dx, given input x and output y
  Tensor out(a->value.shape);
  const double* x = a->value.ptr();
  double* y = out.ptr();
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) y[i] = f(x[i]);
  Tensor saved = out;
  return a->tape->make(std::move(out), {a}, [a, df, saved](Node& self) {
    a->ensure_grad();
    const double* x = a->value.ptr();
    const double* y = saved.ptr();
    const double* g = self.grad.ptr();
    double* da = a->grad.ptr();
    for (int64_t i = 0, n = self.grad.numel(); i < n; ++i) da[i] += g[i] * df(x[i], y[i]);
  });
}

}  // namespace

Ref add(Ref a, Ref b) {
  check_same_shape(a, b, "add");
  Tensor out(a->value.shape);
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = a->value[i] + b->value[i];
  return a->tape->make(std::move(out), {a, b}, [a, b](Node& self) {
    if (a->requires_grad) a->add_grad(self.grad);
    if (b->requires_grad) b->add_grad(self.grad);
  });
}

Ref add_rowvec(Ref a, Ref b) {
  const int c = a->value.dim(-1);
  if (b->value.ndim() != 1 || b->value.dim(0) != c)
    throw std::invalid_argument("add_rowvec: vector length mismatch");
  Tensor out(a->value.shape);
  const int64_t rows = out.numel() / c;
  for (int64_t r = 0; r < rows; ++r)
    for (int j = 0; j < c; ++j) out[r * c + j] = a->value[r * c + j] + b->value[j];
  return a->tape->make(std::move(out), {a, b}, [a, b, rows, c](Node& self) {
    if (a->requires_grad) a->add_grad(self.grad);
    if (b->requires_grad) {
      b->ensure_grad();
      for (int64_t r = 0; r < rows; ++r)
        for (int j = 0; j < c; ++j) b->grad[j] += self.grad[r * c + j];
    }
  });
}

Ref sub(Ref a, Ref b) {
  check_same_shape(a, b, "sub");
  Tensor out(a->value.shape);
  for (int64_t i = 0, n = out.numel(); i < n; ++i) out[i] = a->value[i] - b->value[i];
  return a->tape->make(std::move(out), {a, b}, [a, b](Node& self) {
    if (a->requires_grad) a->add_grad(self.grad);
    if (b->requires_grad) {
      b->ensure_grad();
      for (int64_t i = 0, n = self.grad.numel(); i < n; ++i) b->grad[i] -= self.grad[i];
    }
  });
}

Ref mul(Ref a, Ref b) {
  check_same_shape(a, b, "mul");
  Tensor out(a->value.shape);
  for (int64_t i = 0, n = out.numel(); i < n; ++i) out[i] = a->value[i] * b->value[i];
  return a->tape->make(std::move(out), {a, b}, [a, b](Node& self) {
    const int64_t n = self.grad.numel();
    if (a->requires_grad) {
      a->ensure_grad();
      for (int64_t i = 0; i < n; ++i) a->grad[i] += self.grad[i] * b->value[i];
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (int64_t i = 0; i < n; ++i) b->grad[i] += self.grad[i] * a->value[i];
    }
  });
}

Ref scale(Ref a, double s) {
  Tensor out(a->value.shape);
  for (int64_t i = 0, n = out.numel(); i < n; ++i) out[i] = a->value[i] * s;
  return a->tape->make(std::move(out), {a}, [a, s](Node& self) {
    a->ensure_grad();
    for (int64_t i = 0, n = self.grad.numel(); i < n; ++i) a->grad[i] += s * self.grad[i];
  });
}

Ref add_scalar(Ref a, double s) {
  Tensor out(a->value.shape);
  for (int64_t i = 0, n = out.numel(); i < n; ++i) out[i] = a->value[i] + s;
  return a->tape->make(std::move(out), {a}, [a](Node& self) {
    if (a->requires_grad) a->add_grad(self.grad);
  });
}

Ref neg(Ref a) { return scale(a, -1.0); }

Ref exp_op(Ref a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Ref log_op(Ref a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Ref sigmoid(Ref a) {
  auto f = [](double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
  };
  return unary(a, f, [](double, double y) { return y * (1.0 - y); });
}

Ref softplus(Ref a) {
  auto f = [](double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
  };
  auto df = [](double x, double) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
  };
  return unary(a, f, df);
}

Ref relu(Ref a) {
  return unary(a, [](double x) { return x > 0 ? x : 0.0; },
               [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Ref gelu(Ref a) {
  constexpr double inv_sqrt2 = 0.7071067811865475;
  constexpr double inv_sqrt2pi = 0.3989422804014327;
  auto f = [=](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); };
  auto df = [=](double x, double) {
    double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
    return cdf + x * inv_sqrt2pi * std::exp(-0.5 * x * x);
  };
  return unary(a, f, df);
}

Ref abs_op(Ref a) {
  return unary(a, [](double x) { return std::abs(x); },
               [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Ref square(Ref a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Ref reciprocal(Ref a) {
  return unary(a, [](double x) { return 1.0 / x; },
               [](double x, double) { return -1.0 / (x * x); });
}

Ref clamp(Ref a, double lo, double hi) {
  auto f = [=](double x) { return x < lo ? lo : (x > hi ? hi : x); };
  auto df = [=](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; };
  return unary(a, f, df);
}

Ref matmul(Ref a, Ref b) {
  if (a->value.ndim() != 2 || b->value.ndim() != 2 || a->value.dim(1) != b->value.dim(0))
    throw std::invalid_argument("matmul: bad shapes " + a->value.shape_str() + " x " +
                                b->value.shape_str());
  const int n = a->value.dim(0), k = a->value.dim(1), m = b->value.dim(1);
  Tensor out({n, m});
  {
    CMatMap A(a->value.ptr(), n, k), B(b->value.ptr(), k, m);
    MatMap O(out.ptr(), n, m);
    O.noalias() = A * B;
  }
  return a->tape->make(std::move(out), {a, b}, [a, b, n, k, m](Node& self) {
    CMatMap G(self.grad.ptr(), n, m);
    if (a->requires_grad) {
      a->ensure_grad();
      CMatMap B(b->value.ptr(), k, m);
      MatMap dA(a->grad.ptr(), n, k);
      dA.noalias() += G * B.transpose();
    }
    if (b->requires_grad) {
      b->ensure_grad();
      CMatMap A(a->value.ptr(), n, k);
      MatMap dB(b->grad.ptr(), k, m);
      dB.noalias() += A.transpose() * G;
    }
  });
}

Ref bmm(Ref a, Ref b, bool trans_a, bool trans_b) {
  if (a->value.ndim() != 3 || b->value.ndim() != 3)
    throw std::invalid_argument("bmm: inputs must be 3-D");
  const int B = a->value.dim(0);
  if (b->value.dim(0) != B) throw std::invalid_argument("bmm: batch mismatch");
  const int ar = a->value.dim(1), ac = a->value.dim(2);
  const int br = b->value.dim(1), bc = b->value.dim(2);
  const int n = trans_a ? ac : ar, ka = trans_a ? ar : ac;
  const int kb = trans_b ? bc : br, m = trans_b ? br : bc;
  if (ka != kb) throw std::invalid_argument("bmm: inner dim mismatch");
  const int k = ka;
  Tensor out({B, n, m});
  for (int i = 0; i < B; ++i) {
    CMatMap A(a->value.ptr() + static_cast<int64_t>(i) * ar * ac, ar, ac);
    CMatMap Bm(b->value.ptr() + static_cast<int64_t>(i) * br * bc, br, bc);
    MatMap O(out.ptr() + static_cast<int64_t>(i) * n * m, n, m);
    if (!trans_a && !trans_b) O.noalias() = A * Bm;
    else if (trans_a && !trans_b) O.noalias() = A.transpose() * Bm;
    else if (!trans_a && trans_b) O.noalias() = A * Bm.transpose();
    else O.noalias() = A.transpose() * Bm.transpose();
  }
  return a->tape->make(std::move(out), {a, b},
                       [a, b, B, ar, ac, br, bc, n, m, k, trans_a, trans_b](Node& self) {
    for (int i = 0; i < B; ++i) {
      CMatMap G(self.grad.ptr() + static_cast<int64_t>(i) * n * m, n, m);
      CMatMap A(a->value.ptr() + static_cast<int64_t>(i) * ar * ac, ar, ac);
      CMatMap Bm(b->value.ptr() + static_cast<int64_t>(i) * br * bc, br, bc);
      if (a->requires_grad) {
        a->ensure_grad();
        MatMap dA(a->grad.ptr() + static_cast<int64_t>(i) * ar * ac, ar, ac);
        // dA_logical = G * B_logical^T, mapped back through trans_a
        if (!trans_b) {
          if (!trans_a) dA.noalias() += G * Bm.transpose();
          else dA.noalias() += Bm * G.transpose();
        } else {
          if (!trans_a) dA.noalias() += G * Bm;
          else dA.noalias() += Bm.transpose() * G.transpose();
        }
      }
      if (b->requires_grad) {
        b->ensure_grad();
        MatMap dB(b->grad.ptr() + static_cast<int64_t>(i) * br * bc, br, bc);
        if (!trans_a) {
          if (!trans_b) dB.noalias() += A.transpose() * G;
          else dB.noalias() += G.transpose() * A;
        } else {
          if (!trans_b) dB.noalias() += A * G;
          else dB.noalias() += G.transpose() * A.transpose();
        }
      }
    }
  });
}

Ref reshape(Ref a, std::vector<int> shape) {
  Tensor out = a->value.view(shape);
  return a->tape->make(std::move(out), {a}, [a](Node& self) {
    a->add_grad(self.grad.view(a->value.shape));
  });
}

Ref permute3_102(Ref a) {
  if (a->value.ndim() != 3) throw std::invalid_argument("permute3_102: input must be 3-D");
  const int d0 = a->value.dim(0), d1 = a->value.dim(1), d2 = a->value.dim(2);
  Tensor out({d1, d0, d2});
  for (int i = 0; i < d0; ++i)
    for (int j = 0; j < d1; ++j)
      std::copy_n(a->value.ptr() + (static_cast<int64_t>(i) * d1 + j) * d2, d2,
                  out.ptr() + (static_cast<int64_t>(j) * d0 + i) * d2);
  return a->tape->make(std::move(out), {a}, [a, d0, d1, d2](Node& self) {
    a->ensure_grad();
    for (int i = 0; i < d0; ++i)
      for (int j = 0; j < d1; ++j) {
        const double* src = self.grad.ptr() + (static_cast<int64_t>(j) * d0 + i) * d2;
        double* dst = a->grad.ptr() + (static_cast<int64_t>(i) * d1 + j) * d2;
        for (int c = 0; c < d2; ++c) dst[c] += src[c];
      }
  });
}

Ref concat0(const std::vector<Ref>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat0: empty");
  auto shape = parts[0]->value.shape;
  int total = 0;
  for (Ref p : parts) {
    auto s = p->value.shape;
    s[0] = shape[0];
    if (s != shape) throw std::invalid_argument("concat0: trailing dims mismatch");
    total += p->value.dim(0);
  }
  shape[0] = total;
  Tensor out(shape);
  int64_t off = 0;
  for (Ref p : parts) {
    std::copy_n(p->value.ptr(), p->value.numel(), out.ptr() + off);
    off += p->value.numel();
  }
  std::vector<Ref> ps(parts);
  return parts[0]->tape->make(std::move(out), ps, [ps](Node& self) {
    int64_t off = 0;
    for (Ref p : ps) {
      const int64_t n = p->value.numel();
      if (p->requires_grad) {
        p->ensure_grad();
        for (int64_t i = 0; i < n; ++i) p->grad[i] += self.grad[off + i];
      }
      off += n;
    }
  });
}

Ref slice0(Ref a, int start, int len) {
  if (start < 0 || len < 1 || start + len > a->value.dim(0))
    throw std::invalid_argument("slice0: out of range");
  auto shape = a->value.shape;
  const int64_t inner = a->value.numel() / shape[0];
  shape[0] = len;
  Tensor out(shape);
  std::copy_n(a->value.ptr() + start * inner, len * inner, out.ptr());
  return a->tape->make(std::move(out), {a}, [a, start, len, inner](Node& self) {
    a->ensure_grad();
    for (int64_t i = 0; i < len * inner; ++i) a->grad[start * inner + i] += self.grad[i];
  });
}

Ref slice_last(Ref a, int start, int len) {
  const int c = a->value.dim(-1);
  if (start < 0 || len < 1 || start + len > c) throw std::invalid_argument("slice_last: out of range");
  auto shape = a->value.shape;
  shape.back() = len;
  Tensor out(shape);
  const int64_t rows = a->value.numel() / c;
  for (int64_t r = 0; r < rows; ++r)
    std::copy_n(a->value.ptr() + r * c + start, len, out.ptr() + r * len);
  return a->tape->make(std::move(out), {a}, [a, start, len, c, rows](Node& self) {
    a->ensure_grad();
    for (int64_t r = 0; r < rows; ++r)
      for (int j = 0; j < len; ++j) a->grad[r * c + start + j] += self.grad[r * len + j];
  });
}

Ref concat_last(const std::vector<Ref>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_last: empty");
  auto shape = parts[0]->value.shape;
  int total = 0;
  for (Ref p : parts) {
    auto s = p->value.shape;
    s.back() = shape.back();
    if (s != shape) throw std::invalid_argument("concat_last: leading dims mismatch");
    total += p->value.dim(-1);
  }
  const int64_t rows = parts[0]->value.numel() / shape.back();
  shape.back() = total;
  Tensor out(shape);
  int off = 0;
  for (Ref p : parts) {
    const int c = p->value.dim(-1);
    for (int64_t r = 0; r < rows; ++r)
      std::copy_n(p->value.ptr() + r * c, c, out.ptr() + r * total + off);
    off += c;
  }
  std::vector<Ref> ps(parts);
  return parts[0]->tape->make(std::move(out), ps, [ps, rows, total](Node& self) {
    int off = 0;
    for (Ref p : ps) {
      const int c = p->value.dim(-1);
      if (p->requires_grad) {
        p->ensure_grad();
        for (int64_t r = 0; r < rows; ++r)
          for (int j = 0; j < c; ++j) p->grad[r * c + j] += self.grad[r * total + off + j];
      }
      off += c;
    }
  });
}

Ref gather_rows(Ref a, const std::vector<int>& rows) {
  if (a->value.ndim() != 2) throw std::invalid_argument("gather_rows: input must be 2-D");
  const int c = a->value.dim(1);
  Tensor out({static_cast<int>(rows.size()), c});
  for (size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= a->value.dim(0)) throw std::out_of_range("gather_rows: index");
    std::copy_n(a->value.ptr() + static_cast<int64_t>(rows[r]) * c, c, out.ptr() + r * c);
  }
  return a->tape->make(std::move(out), {a}, [a, rows, c](Node& self) {
    a->ensure_grad();
    for (size_t r = 0; r < rows.size(); ++r)
      for (int j = 0; j < c; ++j) a->grad[static_cast<int64_t>(rows[r]) * c + j] += self.grad[r * c + j];
  });
}

namespace {

Ref softmax_impl(Ref a, const Tensor* mask) {
  const int c = a->value.dim(-1);
  const int64_t rows = a->value.numel() / c;
  Tensor out(a->value.shape);
  for (int64_t r = 0; r < rows; ++r) {
    const double* x = a->value.ptr() + r * c;
    const double* m = mask ? mask->ptr() + r * c : nullptr;
    double* y = out.ptr() + r * c;
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < c; ++j) mx = std::max(mx, x[j] + (m ? m[j] : 0.0));
    double sum = 0;
    for (int j = 0; j < c; ++j) {
      y[j] = std::exp(x[j] + (m ? m[j] : 0.0) - mx);
      sum += y[j];
    }
    for (int j = 0; j < c; ++j) y[j] /= sum;
  }
  Tensor saved = out;
  return a->tape->make(std::move(out), {a}, [a, saved, rows, c](Node& self) {
    a->ensure_grad();
    for (int64_t r = 0; r < rows; ++r) {
      const double* y = saved.ptr() + r * c;
      const double* g = self.grad.ptr() + r * c;
      double* da = a->grad.ptr() + r * c;
      double dot = 0;
      for (int j = 0; j < c; ++j) dot += y[j] * g[j];
      for (int j = 0; j < c; ++j) da[j] += y[j] * (g[j] - dot);
    }
  });
}

}  // namespace

Ref softmax_lastdim(Ref a) { return softmax_impl(a, nullptr); }

Ref softmax_lastdim_masked(Ref a, const Tensor& additive_mask) {
  if (!a->value.same_shape(additive_mask))
    throw std::invalid_argument("softmax_lastdim_masked: mask shape mismatch");
  return softmax_impl(a, &additive_mask);
}

Ref layernorm(Ref x, Ref gamma, Ref beta, double eps) {
  const int c = x->value.dim(-1);
  if (gamma->value.numel() != c || beta->value.numel() != c)
    throw std::invalid_argument("layernorm: gamma/beta length mismatch");
  const int64_t rows = x->value.numel() / c;
  Tensor out(x->value.shape);
  Tensor xhat(x->value.shape);
  std::vector<double> inv_sigma(rows);
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = x->value.ptr() + r * c;
    double mean = 0;
    for (int j = 0; j < c; ++j) mean += xr[j];
    mean /= c;
    double var = 0;
    for (int j = 0; j < c; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= c;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_sigma[r] = is;
    double* xh = xhat.ptr() + r * c;
    double* y = out.ptr() + r * c;
    for (int j = 0; j < c; ++j) {
      xh[j] = (xr[j] - mean) * is;
      y[j] = xh[j] * gamma->value[j] + beta->value[j];
    }
  }
  return x->tape->make(std::move(out), {x, gamma, beta},
                       [x, gamma, beta, xhat, inv_sigma, rows, c](Node& self) {
    for (int64_t r = 0; r < rows; ++r) {
      const double* g = self.grad.ptr() + r * c;
      const double* xh = xhat.ptr() + r * c;
      if (x->requires_grad) {
        x->ensure_grad();
        double m1 = 0, m2 = 0;
        for (int j = 0; j < c; ++j) {
          const double gg = g[j] * gamma->value[j];
          m1 += gg;
          m2 += gg * xh[j];
        }
        m1 /= c;
        m2 /= c;
        double* dx = x->grad.ptr() + r * c;
        for (int j = 0; j < c; ++j)
          dx[j] += inv_sigma[r] * (g[j] * gamma->value[j] - m1 - xh[j] * m2);
      }
      if (gamma->requires_grad) {
        gamma->ensure_grad();
        for (int j = 0; j < c; ++j) gamma->grad[j] += g[j] * xh[j];
      }
      if (beta->requires_grad) {
        beta->ensure_grad();
        for (int j = 0; j < c; ++j) beta->grad[j] += g[j];
      }
    }
  });
}

Ref sum_all(Ref a) {
  Tensor out({1});
  double s = 0;
  for (int64_t i = 0, n = a->value.numel(); i < n; ++i) s += a->value[i];
  out[0] = s;
  return a->tape->make(std::move(out), {a}, [a](Node& self) {
    a->ensure_grad();
    const double g = self.grad[0];
    for (int64_t i = 0, n = a->value.numel(); i < n; ++i) a->grad[i] += g;
  });
}

Ref mean_all(Ref a) { return scale(sum_all(a), 1.0 / static_cast<double>(a->value.numel())); }

Ref gather_bilinear(Ref F, const std::vector<std::array<int64_t, 4>>& idx,
                    const std::vector<std::array<double, 4>>& w) {
  if (F->value.ndim() != 2) throw std::invalid_argument("gather_bilinear: F must be 2-D [S, C]");
  if (idx.size() != w.size()) throw std::invalid_argument("gather_bilinear: table size mismatch");
  const int c = F->value.dim(1);
  const int64_t S = F->value.dim(0);
  const int K = static_cast<int>(idx.size());
  Tensor out({K, c});
  for (int k = 0; k < K; ++k) {
    double* y = out.ptr() + static_cast<int64_t>(k) * c;
    for (int j = 0; j < 4; ++j) {
      const int64_t s = idx[k][j];
      if (s < 0 || s >= S) throw std::out_of_range("gather_bilinear: index");
      const double* f = F->value.ptr() + s * c;
      const double wj = w[k][j];
      for (int q = 0; q < c; ++q) y[q] += wj * f[q];
    }
  }
  return F->tape->make(std::move(out), {F}, [F, idx, w, c, K](Node& self) {
    F->ensure_grad();
    for (int k = 0; k < K; ++k) {
      const double* g = self.grad.ptr() + static_cast<int64_t>(k) * c;
      for (int j = 0; j < 4; ++j) {
        double* df = F->grad.ptr() + idx[k][j] * c;
        const double wj = w[k][j];
        for (int q = 0; q < c; ++q) df[q] += wj * g[q];
      }
    }
  });
}

Ref conv2d(Ref x, Ref w, Ref b, int stride, int pad) {
  if (x->value.ndim() != 3 || w->value.ndim() != 4)
    throw std::invalid_argument("conv2d: x must be [H,W,Cin], w must be [KH,KW,Cin,Cout]");
  const int H = x->value.dim(0), W = x->value.dim(1), Cin = x->value.dim(2);
  const int KH = w->value.dim(0), KW = w->value.dim(1), Cout = w->value.dim(3);
  if (w->value.dim(2) != Cin) throw std::invalid_argument("conv2d: channel mismatch");
  if (b->value.numel() != Cout) throw std::invalid_argument("conv2d: bias length mismatch");
  const int Ho = (H + 2 * pad - KH) / stride + 1;
  const int Wo = (W + 2 * pad - KW) / stride + 1;
  const int patch = KH * KW * Cin;

  Tensor col({Ho * Wo, patch});
  for (int oy = 0; oy < Ho; ++oy)
    for (int ox = 0; ox < Wo; ++ox) {
      double* row = col.ptr() + (static_cast<int64_t>(oy) * Wo + ox) * patch;
      for (int kh = 0; kh < KH; ++kh) {
        const int iy = oy * stride - pad + kh;
        for (int kw = 0; kw < KW; ++kw) {
          const int ix = ox * stride - pad + kw;
          double* dst = row + (kh * KW + kw) * Cin;
          if (iy >= 0 && iy < H && ix >= 0 && ix < W)
            std::copy_n(x->value.ptr() + (static_cast<int64_t>(iy) * W + ix) * Cin, Cin, dst);
        }
      }
    }

  Tensor out({Ho, Wo, Cout});
  {
    CMatMap C(col.ptr(), Ho * Wo, patch), Wm(w->value.ptr(), patch, Cout);
    MatMap O(out.ptr(), Ho * Wo, Cout);
    O.noalias() = C * Wm;
    for (int64_t r = 0; r < Ho * Wo; ++r)
      for (int j = 0; j < Cout; ++j) out[r * Cout + j] += b->value[j];
  }

  return x->tape->make(std::move(out), {x, w, b},
                       [x, w, b, col, H, W, Cin, KH, KW, Cout, Ho, Wo, stride, pad, patch](Node& self) {
    CMatMap G(self.grad.ptr(), Ho * Wo, Cout);
    if (w->requires_grad) {
      w->ensure_grad();
      CMatMap C(col.ptr(), Ho * Wo, patch);
      MatMap dW(w->grad.ptr(), patch, Cout);
      dW.noalias() += C.transpose() * G;
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (int64_t r = 0; r < Ho * Wo; ++r)
        for (int j = 0; j < Cout; ++j) b->grad[j] += self.grad[r * Cout + j];
    }
    if (x->requires_grad) {
      x->ensure_grad();
      Tensor dcol({Ho * Wo, patch});
      CMatMap Wm(w->value.ptr(), patch, Cout);
      MatMap dC(dcol.ptr(), Ho * Wo, patch);
      dC.noalias() = G * Wm.transpose();
      for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox) {
          const double* row = dcol.ptr() + (static_cast<int64_t>(oy) * Wo + ox) * patch;
          for (int kh = 0; kh < KH; ++kh) {
            const int iy = oy * stride - pad + kh;
            if (iy < 0 || iy >= H) continue;
            for (int kw = 0; kw < KW; ++kw) {
              const int ix = ox * stride - pad + kw;
              if (ix < 0 || ix >= W) continue;
              const double* src = row + (kh * KW + kw) * Cin;
              double* dst = x->grad.ptr() + (static_cast<int64_t>(iy) * W + ix) * Cin;
              for (int q = 0; q < Cin; ++q) dst[q] += src[q];
            }
          }
        }
    }
  });
}

}  // namespace unipr::nn
