#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "tract/common.hpp"

namespace tract {

// Dense row-major matrix of doubles. The one carrier type for weights,
// activations, gradients and gram matrices.
struct Mat {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c) {
    if (r < 0 || c < 0) throw ContractError("Mat: negative dimension");
    data.assign(static_cast<size_t>(r) * static_cast<size_t>(c), 0.0);
  }
  Mat(int r, int c, std::vector<double> d) : rows(r), cols(c), data(std::move(d)) {
    if (r < 0 || c < 0 ||
        data.size() != static_cast<size_t>(r) * static_cast<size_t>(c)) {
      throw ContractError("Mat: data length does not match dimensions");
    }
  }

  static Mat identity(int n) {
    Mat m(n, n);
    for (int i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  double& operator()(int i, int j) {
    return data[static_cast<size_t>(i) * cols + j];
  }
  double operator()(int i, int j) const {
    return data[static_cast<size_t>(i) * cols + j];
  }
  const double* row(int i) const { return &data[static_cast<size_t>(i) * cols]; }
  double* row(int i) { return &data[static_cast<size_t>(i) * cols]; }

  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
  size_t size() const { return data.size(); }

  bool all_finite() const {
    for (double v : data) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }
};

inline std::string shape_str(const Mat& m) {
  return std::to_string(m.rows) + "x" + std::to_string(m.cols);
}

// c = a * b, inner loop ordered i-k-j: each output row is accumulated in a
// fixed k-ascending order, so the result is bit-reproducible for any thread
// count.
inline Mat matmul(const Mat& a, const Mat& b) {
  if (a.cols != b.rows) {
    throw ContractError("matmul: dimension mismatch " + shape_str(a) + " * " +
                        shape_str(b));
  }
  Mat c(a.rows, b.cols);
  const int k_dim = a.cols;
  const int n = b.cols;
  parallel_for(a.rows, 2LL * k_dim * n, [&](int i0, int i1) {
    for (int i = i0; i < i1; ++i) {
      double* crow = c.row(i);
      const double* arow = a.row(i);
      int k = 0;
      for (; k + 4 <= k_dim; k += 4) {
        const double a0 = arow[k], a1 = arow[k + 1];
        const double a2 = arow[k + 2], a3 = arow[k + 3];
        const double* b0 = b.row(k);
        const double* b1 = b.row(k + 1);
        const double* b2 = b.row(k + 2);
        const double* b3 = b.row(k + 3);
        for (int j = 0; j < n; ++j) {
          crow[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
        }
      }
      for (; k < k_dim; ++k) {
        const double av = arow[k];
        const double* brow = b.row(k);
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  });
  return c;
}

namespace detail {
// Dot product with eight independent partial sums; the fixed summation
// order is part of the build's determinism contract.
inline double dot8(const double* a, const double* b, int n) {
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0, s4 = 0, s5 = 0, s6 = 0, s7 = 0;
  int k = 0;
  for (; k + 8 <= n; k += 8) {
    s0 += a[k] * b[k];
    s1 += a[k + 1] * b[k + 1];
    s2 += a[k + 2] * b[k + 2];
    s3 += a[k + 3] * b[k + 3];
    s4 += a[k + 4] * b[k + 4];
    s5 += a[k + 5] * b[k + 5];
    s6 += a[k + 6] * b[k + 6];
    s7 += a[k + 7] * b[k + 7];
  }
  double tail = 0.0;
  for (; k < n; ++k) tail += a[k] * b[k];
  return ((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7)) + tail;
}
}  // namespace detail

// c = a * b^T. Row-times-row dot products; the workhorse behind gradient
// outer products and gram matrices.
inline Mat matmul_bt(const Mat& a, const Mat& b) {
  if (a.cols != b.cols) {
    throw ContractError("matmul_bt: inner dimension mismatch " + shape_str(a) +
                        " * " + shape_str(b) + "^T");
  }
  Mat c(a.rows, b.rows);
  const int k_dim = a.cols;
  parallel_for(a.rows, 2LL * k_dim * b.rows, [&](int i0, int i1) {
    for (int i = i0; i < i1; ++i) {
      const double* arow = a.row(i);
      double* crow = c.row(i);
      for (int j = 0; j < b.rows; ++j) {
        crow[j] = detail::dot8(arow, b.row(j), k_dim);
      }
    }
  });
  return c;
}

inline Mat transpose(const Mat& a) {
  Mat t(a.cols, a.rows);
  for (int i = 0; i < a.rows; ++i) {
    for (int j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
  }
  return t;
}

inline double frob_norm(const Mat& a) {
  double s = 0.0;
  for (double v : a.data) s += v * v;
  return std::sqrt(s);
}

// alpha * a + b
inline Mat axpy(double alpha, const Mat& a, const Mat& b) {
  if (!a.same_shape(b)) {
    throw ContractError("axpy: shape mismatch " + shape_str(a) + " vs " +
                        shape_str(b));
  }
  Mat c = b;
  for (size_t i = 0; i < c.data.size(); ++i) c.data[i] += alpha * a.data[i];
  return c;
}

inline Mat add_scaled_identity(const Mat& a, double s) {
  if (a.rows != a.cols) {
    throw ContractError("add_scaled_identity: matrix not square, " + shape_str(a));
  }
  Mat c = a;
  for (int i = 0; i < c.rows; ++i) c(i, i) += s;
  return c;
}

inline Mat scale(const Mat& a, double s) {
  Mat c = a;
  for (double& v : c.data) v *= s;
  return c;
}

inline Mat sub(const Mat& a, const Mat& b) { return axpy(-1.0, b, a); }

inline double max_abs_diff(const Mat& a, const Mat& b) {
  if (!a.same_shape(b)) {
    throw ContractError("max_abs_diff: shape mismatch " + shape_str(a) + " vs " +
                        shape_str(b));
  }
  double m = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    m = std::max(m, std::abs(a.data[i] - b.data[i]));
  }
  return m;
}

// || a - b ||_F / max(1, || b ||_F)
inline double rel_frob_diff(const Mat& a, const Mat& b) {
  return frob_norm(sub(a, b)) / std::max(1.0, frob_norm(b));
}

}  // namespace tract
