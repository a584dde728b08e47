#pragma once

// Brute-force reference implementations used to check the fast paths. Every
// routine here does its own arithmetic with plain loops and element access
// only — agreement with the library is evidence, not circularity.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "tract/mat.hpp"
#include "tract/rng.hpp"
#include "tract/unfold.hpp"

namespace tract::oracle {

namespace detail {

inline Mat mm(const Mat& a, const Mat& b) {
  Mat c(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i) {
    for (int j = 0; j < b.cols; ++j) {
      double acc = 0.0;
      for (int k = 0; k < a.cols; ++k) acc += a(i, k) * b(k, j);
      c(i, j) = acc;
    }
  }
  return c;
}

inline Mat mm_bt(const Mat& a, const Mat& b) {
  Mat c(a.rows, b.rows);
  for (int i = 0; i < a.rows; ++i) {
    for (int j = 0; j < b.rows; ++j) {
      double acc = 0.0;
      for (int k = 0; k < a.cols; ++k) acc += a(i, k) * b(j, k);
      c(i, j) = acc;
    }
  }
  return c;
}

inline double sumsq(const Mat& a) {
  double s = 0.0;
  for (double v : a.data) s += v * v;
  return s;
}

}  // namespace detail

// Largest eigenvalue of a symmetric matrix by power iteration.
inline double power_iter_sym(const Mat& a, int iters = 20) {
  const int n = a.rows;
  std::vector<double> v(n);
  Rng rng(12345);
  for (double& e : v) e = rng.uniform(0.5, 1.0);
  double eig = 0.0;
  for (int it = 0; it < iters; ++it) {
    std::vector<double> w(n, 0.0);
    for (int i = 0; i < n; ++i) {
      double acc = 0.0;
      for (int j = 0; j < n; ++j) acc += a(i, j) * v[j];
      w[i] = acc;
    }
    double norm = 0.0;
    for (double e : w) norm += e * e;
    norm = std::sqrt(norm);
    if (norm == 0.0) return 0.0;
    for (int i = 0; i < n; ++i) v[i] = w[i] / norm;
    eig = norm;
  }
  return eig;
}

// Minimizes F(D) = || -eta*B*grad_z - D x ||_F^2 + lambda*B*||D||_F^2 by
// plain gradient descent from D = 0, with
//   dF/dD = 2 (eta*B*grad_z + D x) x^T + 2 lambda B D.
// The step size 0.9 / lambda_max(x x^T + lambda B I) keeps the objective
// strictly non-increasing; an increase aborts with OracleError.
inline Mat minimize_ridge_objective(const Mat& grad_z, const Mat& x, double eta,
                                    double lambda, int max_steps) {
  if (grad_z.cols != x.cols) {
    throw ContractError("minimize_ridge_objective: column mismatch");
  }
  const int m = grad_z.rows;
  const int n = x.rows;
  const double batch = static_cast<double>(x.cols);

  // Hessian scale: x x^T + lambda B I.
  Mat h = detail::mm_bt(x, x);
  for (int i = 0; i < n; ++i) h(i, i) += lambda * batch;
  const double lip = power_iter_sym(h, 20);
  const double step = 0.9 / lip;

  const Mat target = [&] {
    Mat t = grad_z;
    for (double& v : t.data) v *= -eta * batch;
    return t;
  }();

  auto objective = [&](const Mat& d) {
    const Mat dx = detail::mm(d, x);
    double s = 0.0;
    for (size_t i = 0; i < dx.data.size(); ++i) {
      const double r = target.data[i] - dx.data[i];
      s += r * r;
    }
    return s + lambda * batch * detail::sumsq(d);
  };

  Mat d(m, n);
  double prev = objective(d);
  const double grad_floor = 1e-14 * (1.0 + prev);
  for (int it = 0; it < max_steps; ++it) {
    // residual = eta*B*grad_z + D x = D x - target
    Mat resid = detail::mm(d, x);
    for (size_t i = 0; i < resid.data.size(); ++i) resid.data[i] -= target.data[i];
    Mat g = detail::mm_bt(resid, x);
    double gnorm2 = 0.0;
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) {
        g(i, j) = 2.0 * g(i, j) + 2.0 * lambda * batch * d(i, j);
        gnorm2 += g(i, j) * g(i, j);
      }
    }
    if (gnorm2 < grad_floor * grad_floor) break;
    for (size_t i = 0; i < d.data.size(); ++i) d.data[i] -= step * g.data[i];
    const double cur = objective(d);
    if (cur > prev * (1.0 + 1e-12)) {
      throw OracleError("minimize_ridge_objective: objective increased at step " +
                        std::to_string(it));
    }
    prev = cur;
  }
  return d;
}

// Gaussian elimination with partial pivoting, solving A y = b for all
// right-hand-side columns. Deliberately unrelated to the Cholesky path.
inline Mat gauss_solve(Mat a, Mat b) {
  if (a.rows != a.cols) throw ContractError("gauss_solve: matrix not square");
  if (a.rows != b.rows) throw ContractError("gauss_solve: rhs rows mismatch");
  const int n = a.rows;
  const int m = b.cols;
  for (int col = 0; col < n; ++col) {
    int pivot = col;
    for (int r = col + 1; r < n; ++r) {
      if (std::abs(a(r, col)) > std::abs(a(pivot, col))) pivot = r;
    }
    if (a(pivot, col) == 0.0) {
      throw OracleError("gauss_solve: singular at column " + std::to_string(col));
    }
    if (pivot != col) {
      for (int j = 0; j < n; ++j) std::swap(a(col, j), a(pivot, j));
      for (int j = 0; j < m; ++j) std::swap(b(col, j), b(pivot, j));
    }
    const double inv = 1.0 / a(col, col);
    for (int r = col + 1; r < n; ++r) {
      const double f = a(r, col) * inv;
      if (f == 0.0) continue;
      for (int j = col; j < n; ++j) a(r, j) -= f * a(col, j);
      for (int j = 0; j < m; ++j) b(r, j) -= f * b(col, j);
    }
  }
  Mat y(n, m);
  for (int r = n - 1; r >= 0; --r) {
    for (int j = 0; j < m; ++j) {
      double acc = b(r, j);
      for (int k = r + 1; k < n; ++k) acc -= a(r, k) * y(k, j);
      y(r, j) = acc / a(r, r);
    }
  }
  return y;
}

// Central finite differences, error O(eps^2).
inline std::vector<double> finite_diff(
    const std::function<double(const std::vector<double>&)>& f,
    std::vector<double> theta, double eps = 1e-5) {
  std::vector<double> g(theta.size());
  for (size_t i = 0; i < theta.size(); ++i) {
    const double orig = theta[i];
    theta[i] = orig + eps;
    const double fp = f(theta);
    theta[i] = orig - eps;
    const double fm = f(theta);
    theta[i] = orig;
    g[i] = (fp - fm) / (2.0 * eps);
  }
  return g;
}

// Direct convolution, seven nested loops. Output (out_c x b*oh*ow), columns
// batch-major then output row then output column; weights are
// (out_c x c*kh*kw) with rows flattened channel-major.
inline Mat naive_conv(const Mat& w, const ImageBatch& img, const ConvGeom& g) {
  const int oh = (img.h + 2 * g.ph - g.kh) / g.sh + 1;
  const int ow = (img.w + 2 * g.pw - g.kw) / g.sw + 1;
  if ((img.h + 2 * g.ph - g.kh) % g.sh != 0 ||
      (img.w + 2 * g.pw - g.kw) % g.sw != 0 || oh < 1 || ow < 1) {
    throw GeometryError("naive_conv: invalid geometry");
  }
  if (w.cols != img.c * g.kh * g.kw) {
    throw ContractError("naive_conv: weight cols " + std::to_string(w.cols) +
                        " != c*kh*kw");
  }
  Mat out(w.rows, img.b * oh * ow);
  for (int oc = 0; oc < w.rows; ++oc) {
    for (int bi = 0; bi < img.b; ++bi) {
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          double acc = 0.0;
          for (int ci = 0; ci < img.c; ++ci) {
            for (int ky = 0; ky < g.kh; ++ky) {
              for (int kx = 0; kx < g.kw; ++kx) {
                const int y = oy * g.sh - g.ph + ky;
                const int x = ox * g.sw - g.pw + kx;
                if (y < 0 || y >= img.h || x < 0 || x >= img.w) continue;
                acc += w(oc, (ci * g.kh + ky) * g.kw + kx) * img.at(bi, ci, y, x);
              }
            }
          }
          out(oc, (bi * oh + oy) * ow + ox) = acc;
        }
      }
    }
  }
  return out;
}

// Weight gradient of the direct convolution for an upstream gradient laid
// out like naive_conv's output.
inline Mat naive_conv_wgrad(const Mat& grad_out, const ImageBatch& img,
                            const ConvGeom& g) {
  const int oh = (img.h + 2 * g.ph - g.kh) / g.sh + 1;
  const int ow = (img.w + 2 * g.pw - g.kw) / g.sw + 1;
  if (grad_out.cols != img.b * oh * ow) {
    throw ContractError("naive_conv_wgrad: grad cols mismatch");
  }
  Mat gw(grad_out.rows, img.c * g.kh * g.kw);
  for (int oc = 0; oc < grad_out.rows; ++oc) {
    for (int ci = 0; ci < img.c; ++ci) {
      for (int ky = 0; ky < g.kh; ++ky) {
        for (int kx = 0; kx < g.kw; ++kx) {
          double acc = 0.0;
          for (int bi = 0; bi < img.b; ++bi) {
            for (int oy = 0; oy < oh; ++oy) {
              for (int ox = 0; ox < ow; ++ox) {
                const int y = oy * g.sh - g.ph + ky;
                const int x = ox * g.sw - g.pw + kx;
                if (y < 0 || y >= img.h || x < 0 || x >= img.w) continue;
                acc += grad_out(oc, (bi * oh + oy) * ow + ox) * img.at(bi, ci, y, x);
              }
            }
          }
          gw(oc, (ci * g.kh + ky) * g.kw + kx) = acc;
        }
      }
    }
  }
  return gw;
}

}  // namespace tract::oracle
