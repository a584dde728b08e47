#pragma once

#include <cmath>
#include <string>

#include "tract/mat.hpp"

namespace tract {

// Lower-triangular Cholesky factor of an SPD matrix: L * L^T == A.
struct CholFactor {
  int n = 0;
  Mat L;
};

namespace detail {
inline void require_symmetric(const Mat& a, double rel_tol) {
  double max_abs = 0.0;
  for (double v : a.data) max_abs = std::max(max_abs, std::abs(v));
  const double tol = rel_tol * (1.0 + max_abs);
  for (int i = 0; i < a.rows; ++i) {
    for (int j = i + 1; j < a.cols; ++j) {
      if (std::abs(a(i, j) - a(j, i)) > tol) {
        throw ContractError("cholesky: input not symmetric at (" +
                            std::to_string(i) + "," + std::to_string(j) + ")");
      }
    }
  }
}
}  // namespace detail

// Left-looking factorization. A non-positive (or NaN) pivot throws
// NotPositiveDefinite; for gram matrices built with lambda > 0 that signals
// corrupted inputs upstream rather than a legitimate indefinite matrix.
inline CholFactor cholesky(const Mat& a) {
  if (a.rows != a.cols) {
    throw ContractError("cholesky: matrix not square, " + shape_str(a));
  }
  detail::require_symmetric(a, 1e-9);
  const int n = a.rows;
  CholFactor f;
  f.n = n;
  f.L = Mat(n, n);
  Mat& L = f.L;
  for (int j = 0; j < n; ++j) {
    double d = a(j, j);
    const double* lj = L.row(j);
    for (int k = 0; k < j; ++k) d -= lj[k] * lj[k];
    if (!(d > 0.0)) {
      throw NotPositiveDefinite("cholesky: non-positive pivot " +
                                std::to_string(d) + " at index " +
                                std::to_string(j));
    }
    const double ljj = std::sqrt(d);
    L(j, j) = ljj;
    for (int i = j + 1; i < n; ++i) {
      const double* li = L.row(i);
      double s = a(i, j);
      for (int k = 0; k < j; ++k) s -= li[k] * lj[k];
      L(i, j) = s / ljj;
    }
  }
  return f;
}

// Solves (L L^T) y = b for all right-hand-side columns at once via
// forward + backward substitution. Never forms an inverse. Independent
// column blocks may run on separate threads; per-element arithmetic order
// is fixed either way.
inline Mat chol_solve(const CholFactor& f, const Mat& b) {
  if (f.n != b.rows) {
    throw ContractError("chol_solve: factor dim " + std::to_string(f.n) +
                        " vs rhs rows " + std::to_string(b.rows));
  }
  const int n = f.n;
  const Mat& L = f.L;
  Mat y = b;
  parallel_for(b.cols, 2LL * n * n, [&](int j0, int j1) {
    // L y = b
    for (int i = 0; i < n; ++i) {
      double* yi = y.row(i);
      const double* li = L.row(i);
      for (int k = 0; k < i; ++k) {
        const double lik = li[k];
        const double* yk = y.row(k);
        for (int j = j0; j < j1; ++j) yi[j] -= lik * yk[j];
      }
      const double inv = 1.0 / li[i];
      for (int j = j0; j < j1; ++j) yi[j] *= inv;
    }
    // L^T x = y
    for (int i = n - 1; i >= 0; --i) {
      double* yi = y.row(i);
      for (int k = i + 1; k < n; ++k) {
        const double lki = L(k, i);
        const double* yk = y.row(k);
        for (int j = j0; j < j1; ++j) yi[j] -= lki * yk[j];
      }
      const double inv = 1.0 / L(i, i);
      for (int j = j0; j < j1; ++j) yi[j] *= inv;
    }
  });
  return y;
}

}  // namespace tract
