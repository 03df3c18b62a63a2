// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <vector>

#include "unipr/nn/layers.hpp"

namespace unipr::nn {

struct AdamWConfig {
  double lr = 2e-4;           // initial learning rate
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;     // global gradient-norm clip; <= 0 disables
  int warmup_steps = 0;
  int total_steps = 1;        // cosine horizon
  double lr_min = 0.0;
};

/// AdamW with decoupled weight decay and cosine annealing.
class AdamW {
 public:
  AdamW(ParamStore& params, AdamWConfig cfg) : params_(&params), cfg_(cfg) {
    for (auto& p : params.items()) {
      m_.push_back(Tensor::zeros(p->value.shape));
      v_.push_back(Tensor::zeros(p->value.shape));
    }
  }

  double lr_at(int step) const {
    if (cfg_.warmup_steps > 0 && step < cfg_.warmup_steps)
      return cfg_.lr * (step + 1) / static_cast<double>(cfg_.warmup_steps);
    const int t = step - cfg_.warmup_steps;
    const int horizon = std::max(1, cfg_.total_steps - cfg_.warmup_steps);
    const double frac = std::min(1.0, t / static_cast<double>(horizon));
    return cfg_.lr_min + 0.5 * (cfg_.lr - cfg_.lr_min) * (1.0 + std::cos(M_PI * frac));
  }

  /// Returns the pre-clip global gradient norm.
  double step() {
    double sq = 0;
    for (auto& p : params_->items()) {
      if (!p->grad.data) continue;
      for (int64_t i = 0, n = p->grad.numel(); i < n; ++i) sq += p->grad[i] * p->grad[i];
    }
    const double norm = std::sqrt(sq);
    const double clip = (cfg_.clip_norm > 0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;
    const double lr = lr_at(step_count_);
    ++step_count_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, step_count_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, step_count_);
    for (size_t k = 0; k < params_->items().size(); ++k) {
      Param& p = *params_->items()[k];
      if (!p.grad.data) continue;
      for (int64_t i = 0, n = p.value.numel(); i < n; ++i) {
        const double g = p.grad[i] * clip;
        m_[k][i] = cfg_.beta1 * m_[k][i] + (1.0 - cfg_.beta1) * g;
        v_[k][i] = cfg_.beta2 * v_[k][i] + (1.0 - cfg_.beta2) * g * g;
        const double mhat = m_[k][i] / bc1;
        const double vhat = v_[k][i] / bc2;
        p.value[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * p.value[i]);
      }
    }
    params_->zero_grad();
    return norm;
  }

  int step_count() const { return step_count_; }
  void set_step_count(int s) { step_count_ = s; }

  std::vector<Tensor>& moment1() { return m_; }
  std::vector<Tensor>& moment2() { return v_; }

 private:
  ParamStore* params_;
  AdamWConfig cfg_;
  std::vector<Tensor> m_, v_;
  int step_count_ = 0;
};

}  // namespace unipr::nn
