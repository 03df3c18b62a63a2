// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace unipr::nn {

/// Dense row-major double tensor with shared storage.
struct Tensor {
  std::vector<int> shape;
  std::shared_ptr<std::vector<double>> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data = std::make_shared<std::vector<double>>(numel(), 0.0);
  }
  Tensor(std::vector<int> s, std::shared_ptr<std::vector<double>> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<int64_t>(data->size()) != numel())
      throw std::invalid_argument("Tensor: data size does not match shape");
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int> s, double v) {
    Tensor t(std::move(s));
    std::fill(t.data->begin(), t.data->end(), v);
    return t;
  }
  static Tensor scalar(double v) { return full({1}, v); }
  static Tensor from(const std::vector<double>& v, std::vector<int> s) {
    Tensor t(std::move(s));
    if (v.size() != t.data->size()) throw std::invalid_argument("Tensor::from: size mismatch");
    *t.data = v;
    return t;
  }

  int64_t numel() const {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
  }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[i < 0 ? shape.size() + i : i]; }

  double* ptr() { return data->data(); }
  const double* ptr() const { return data->data(); }
  double& operator[](int64_t i) { return (*data)[i]; }
  double operator[](int64_t i) const { return (*data)[i]; }

  /// Deep copy.
  Tensor clone() const {
    Tensor t;
    t.shape = shape;
    t.data = std::make_shared<std::vector<double>>(*data);
    return t;
  }

  /// Same storage, new shape.
  Tensor view(std::vector<int> s) const {
    Tensor t(std::move(s), data);
    return t;
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  std::string shape_str() const {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
    return s + "]";
  }
};

}  // namespace unipr::nn
