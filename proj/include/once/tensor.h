#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "once/common.h"

namespace once {

// Dense row-major tensor. Training code instantiates S = float; gradient
// checking instantiates S = double for finite-difference headroom.
template <class S>
struct TensorT {
  std::vector<int> shape;
  std::vector<S> data;

  TensorT() = default;
  explicit TensorT(std::vector<int> shape_in) : shape(std::move(shape_in)) {
    data.assign(count(), S(0));
  }

  size_t count() const {
    size_t n = 1;
    for (int d : shape) {
      if (d <= 0) fail("Tensor: non-positive dim in shape ", shape_str());
      n *= static_cast<size_t>(d);
    }
    return shape.empty() ? 0 : n;
  }

  int rows() const { return shape.empty() ? 0 : shape[0]; }
  int cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  S* row(int i) { return data.data() + static_cast<size_t>(i) * cols(); }
  const S* row(int i) const { return data.data() + static_cast<size_t>(i) * cols(); }

  S& at(int i, int j) { return data[static_cast<size_t>(i) * cols() + j]; }
  S at(int i, int j) const { return data[static_cast<size_t>(i) * cols() + j]; }

  void fill(S v) { std::fill(data.begin(), data.end(), v); }
  void zero() { fill(S(0)); }

  std::string shape_str() const {
    std::string s = "(";
    for (size_t i = 0; i < shape.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(shape[i]);
    }
    return s + ")";
  }

  static TensorT zeros(int r, int c) { return TensorT({r, c}); }
  static TensorT zeros(int n) { return TensorT({n}); }

  static TensorT gaussian(std::vector<int> shape, Rng& rng, double stddev) {
    TensorT t(std::move(shape));
    for (auto& v : t.data) v = static_cast<S>(rng.gaussian() * stddev);
    return t;
  }

  // Glorot-uniform for a (fan_in x fan_out) matrix.
  static TensorT glorot(int fan_in, int fan_out, Rng& rng) {
    TensorT t({fan_in, fan_out});
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (auto& v : t.data) v = static_cast<S>(rng.uniform(-limit, limit));
    return t;
  }
};

template <class S>
bool same_shape(const TensorT<S>& a, const TensorT<S>& b) {
  return a.shape == b.shape;
}

template <class S>
void check_2d(const TensorT<S>& t, const char* op, const char* name) {
  if (t.shape.size() != 2) {
    fail(op, ": ", name, " must be 2-d, got shape ", t.shape_str());
  }
}

// C (m x n) = A (m x k) * B (k x n). Accumulation order is fixed (p outer,
// column inner), so results are bit-reproducible.
template <class S>
void matmul(const TensorT<S>& a, const TensorT<S>& b, TensorT<S>& c) {
  check_2d(a, "matmul", "A");
  check_2d(b, "matmul", "B");
  if (a.shape[1] != b.shape[0]) {
    fail("matmul: inner dims differ, A ", a.shape_str(), " vs B ", b.shape_str());
  }
  const int m = a.shape[0], k = a.shape[1], n = b.shape[1];
  c.shape = {m, n};
  c.data.assign(static_cast<size_t>(m) * n, S(0));
  for (int i = 0; i < m; ++i) {
    const S* arow = a.row(i);
    S* crow = c.row(i);
    for (int p = 0; p < k; ++p) {
      const S av = arow[p];
      if (av == S(0)) continue;
      const S* brow = b.row(p);
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C (m x n) = A (m x k) * B^T, with B stored (n x k).
template <class S>
void matmul_nt(const TensorT<S>& a, const TensorT<S>& b, TensorT<S>& c) {
  check_2d(a, "matmul_nt", "A");
  check_2d(b, "matmul_nt", "B");
  if (a.shape[1] != b.shape[1]) {
    fail("matmul_nt: inner dims differ, A ", a.shape_str(), " vs B^T of ", b.shape_str());
  }
  const int m = a.shape[0], k = a.shape[1], n = b.shape[0];
  c.shape = {m, n};
  c.data.assign(static_cast<size_t>(m) * n, S(0));
  for (int i = 0; i < m; ++i) {
    const S* arow = a.row(i);
    S* crow = c.row(i);
    for (int j = 0; j < n; ++j) {
      const S* brow = b.row(j);
      S acc = S(0);
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] = acc;
    }
  }
}

// C (k x n) += A^T * B, with A stored (m x k), B (m x n). Used for weight
// gradients; accumulates into c, which must already have shape (k x n).
template <class S>
void matmul_tn_acc(const TensorT<S>& a, const TensorT<S>& b, TensorT<S>& c) {
  check_2d(a, "matmul_tn_acc", "A");
  check_2d(b, "matmul_tn_acc", "B");
  if (a.shape[0] != b.shape[0]) {
    fail("matmul_tn_acc: row counts differ, A ", a.shape_str(), " vs B ", b.shape_str());
  }
  const int m = a.shape[0], k = a.shape[1], n = b.shape[1];
  if (c.shape != std::vector<int>{k, n}) {
    fail("matmul_tn_acc: C has shape ", c.shape_str(), ", expected (", k, "x", n, ")");
  }
  for (int i = 0; i < m; ++i) {
    const S* arow = a.row(i);
    const S* brow = b.row(i);
    for (int p = 0; p < k; ++p) {
      const S av = arow[p];
      if (av == S(0)) continue;
      S* crow = c.row(p);
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <class S>
S dot(const S* a, const S* b, int n) {
  S acc = S(0);
  for (int i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

template <class S>
void axpy(S alpha, const S* x, S* y, int n) {
  for (int i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace once
