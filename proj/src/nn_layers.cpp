// SPDX-License-Identifier: Apache-2.0
#include "unipr/nn/layers.hpp"

namespace unipr::nn {

uint64_t ParamStore::value_hash() const {
  uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* data, size_t len) {
    const unsigned char* b = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& p : items_) {
    mix(p->name.data(), p->name.size());
    mix(p->value.ptr(), p->value.numel() * sizeof(double));
  }
  return h;
}

Tensor sinusoidal_embedding(const Tensor& coords, int n_freq) {
  const int d = coords.dim(-1);
  const int64_t n = coords.numel() / d;
  const int out_d = sinusoidal_dim(d, n_freq);
  Tensor out({static_cast<int>(n), out_d});
  for (int64_t r = 0; r < n; ++r) {
    const double* x = coords.ptr() + r * d;
    double* y = out.ptr() + r * out_d;
    int k = 0;
    for (int j = 0; j < d; ++j) y[k++] = x[j];
    for (int f = 0; f < n_freq; ++f) {
      const double freq = std::pow(2.0, f) * M_PI;
      for (int j = 0; j < d; ++j) {
        y[k++] = std::sin(freq * x[j]);
        y[k++] = std::cos(freq * x[j]);
      }
    }
  }
  return out;
}

}  // namespace unipr::nn
