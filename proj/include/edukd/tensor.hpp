#pragma once

#include <Eigen/Core>
#include <cmath>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "edukd/common.hpp"
#include "edukd/rng.hpp"

namespace edukd {

// Dense row-major tensor. Activations use NCHW, logits (N, num_classes),
// conv weights (out, in, kh, kw).
template <typename S>
struct TensorT {
  std::vector<int> shape;
  std::vector<S> data;

  TensorT() = default;
  explicit TensorT(std::vector<int> dims) : shape(std::move(dims)) {
    data.assign(numel_of(shape), S(0));
  }
  TensorT(std::initializer_list<int> dims) : TensorT(std::vector<int>(dims)) {}

  static std::size_t numel_of(const std::vector<int>& dims) {
    std::size_t n = 1;
    for (int d : dims) {
      if (d <= 0) fail_run("tensor dimension must be positive, got ", d);
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

  std::size_t numel() const { return data.size(); }
  int dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }
  int ndim() const { return static_cast<int>(shape.size()); }

  S& at(std::size_t i) { return data[i]; }
  S at(std::size_t i) const { return data[i]; }

  void fill(S v) { std::fill(data.begin(), data.end(), v); }

  void fill_normal(RngStream& rng, S mean, S stddev) {
    std::normal_distribution<float> d(static_cast<float>(mean),
                                      static_cast<float>(stddev));
    for (auto& x : data) x = static_cast<S>(d(rng.engine()));
  }

  bool same_shape(const TensorT& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (S v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <typename U>
  TensorT<U> cast() const {
    TensorT<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i)
      out.data[i] = static_cast<U>(data[i]);
    return out;
  }

  std::string shape_str() const {
    std::string s;
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape[i]);
    }
    return s;
  }
};

using Tensor = TensorT<float>;

template <typename S>
using EigenMatrix =
    Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename S>
Eigen::Map<EigenMatrix<S>> as_matrix(TensorT<S>& t, int rows, int cols) {
  if (static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols) !=
      t.numel())
    fail_run("matrix view ", rows, "x", cols, " does not cover tensor ",
             t.shape_str());
  return Eigen::Map<EigenMatrix<S>>(t.data.data(), rows, cols);
}

template <typename S>
Eigen::Map<const EigenMatrix<S>> as_matrix(const TensorT<S>& t, int rows,
                                           int cols) {
  if (static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols) !=
      t.numel())
    fail_run("matrix view ", rows, "x", cols, " does not cover tensor ",
             t.shape_str());
  return Eigen::Map<const EigenMatrix<S>>(t.data.data(), rows, cols);
}

template <typename S>
S max_abs_diff(const TensorT<S>& a, const TensorT<S>& b) {
  if (!a.same_shape(b)) fail_run("max_abs_diff: shape mismatch");
  S m = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    S d = std::abs(a.data[i] - b.data[i]);
    if (d > m) m = d;
  }
  return m;
}

}  // namespace edukd
