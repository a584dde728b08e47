#pragma once

#include <string>

#include "tract/cholesky.hpp"
#include "tract/mat.hpp"

namespace tract {

struct TrActConfig {
  double lambda = 0.1;
  bool enabled = false;
};

// G = x x^T / B + lambda I, SPD for lambda > 0, factored once per batch.
// B is the column count of the (already unfolded) input.
struct GramMatrix {
  int n = 0;
  double lambda = 0.0;
  int batch = 0;
  Mat G;
  CholFactor factor;
};

// First-layer weight gradient of a linear map z = W x under a mean-reduced
// loss: grad_z already carries the 1/batch factor, so this is plain
// grad_z * x^T.
inline Mat standard_grad(const Mat& grad_z, const Mat& x) {
  if (grad_z.cols != x.cols) {
    throw ContractError("standard_grad: column mismatch " + shape_str(grad_z) +
                        " vs " + shape_str(x));
  }
  return matmul_bt(grad_z, x);
}

inline GramMatrix gram(const Mat& x, double lambda) {
  if (!(lambda > 0.0)) {
    throw ContractError("gram: lambda must be > 0, got " + std::to_string(lambda));
  }
  const int n = x.rows;
  const int batch = x.cols;
  GramMatrix gm;
  gm.n = n;
  gm.lambda = lambda;
  gm.batch = batch;
  gm.G = Mat(n, n);
  const double inv_b = 1.0 / static_cast<double>(batch);
  // Upper triangle of x x^T / B, mirrored afterwards.
  parallel_for(n, 1LL * n * batch, [&](int i0, int i1) {
    for (int i = i0; i < i1; ++i) {
      const double* xi = x.row(i);
      for (int j = i; j < n; ++j) {
        gm.G(i, j) = detail::dot8(xi, x.row(j), batch) * inv_b;
      }
    }
  });
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) gm.G(j, i) = gm.G(i, j);
    gm.G(i, i) += lambda;
  }
  gm.factor = cholesky(gm.G);
  return gm;
}

// Preconditioned replacement for the first-layer weight gradient:
//   R = grad_z * x^T * (x x^T / B + lambda I)^{-1},
// realized as a factored solve against the transposed standard gradient,
// so R * G == standard_grad holds to solver precision.
inline Mat tract_grad(const Mat& grad_z, const Mat& x, const GramMatrix& gm) {
  if (gm.n != x.rows || gm.batch != x.cols) {
    throw ContractError("tract_grad: gram built for " + std::to_string(gm.n) +
                        "x" + std::to_string(gm.batch) + ", input is " +
                        shape_str(x));
  }
  const Mat s = standard_grad(grad_z, x);
  return transpose(chol_solve(gm.factor, transpose(s)));
}

inline Mat tract_grad(const Mat& grad_z, const Mat& x, double lambda) {
  return tract_grad(grad_z, x, gram(x, lambda));
}

// Same result through the small-side system: for n > B the push-through
// identity (x x^T / B + lambda I)^{-1} x = B x (x^T x + lambda B I)^{-1}
// and the symmetry of both gram forms give
//   R = B * (K^{-1} grad_z^T)^T * x^T,   K = x^T x + lambda B I,
// which costs O(B^2 (n + m) + B^3) instead of O(n^3) and reuses the
// standard gradient's product shape. Used on the training fast path;
// verification paths keep the n x n form above.
inline Mat tract_grad_fast(const Mat& grad_z, const Mat& x, double lambda) {
  const int n = x.rows;
  const int batch = x.cols;
  if (n <= batch) return tract_grad(grad_z, x, lambda);
  if (!(lambda > 0.0)) {
    throw ContractError("tract_grad_fast: lambda must be > 0");
  }
  if (grad_z.cols != batch) {
    throw ContractError("tract_grad_fast: column mismatch " +
                        shape_str(grad_z) + " vs " + shape_str(x));
  }
  // K = x^T x + lambda B I  (B x B), via dot products over the transposed
  // input so the inner loops stay contiguous.
  const Mat xt = transpose(x);
  Mat k(batch, batch);
  parallel_for(batch, 1LL * batch * n, [&](int p0, int p1) {
    for (int p = p0; p < p1; ++p) {
      const double* xp = xt.row(p);
      double* kp = k.row(p);
      for (int q = p; q < batch; ++q) {
        kp[q] = detail::dot8(xp, xt.row(q), n);
      }
    }
  });
  for (int p = 0; p < batch; ++p) {
    for (int q = p + 1; q < batch; ++q) k(q, p) = k(p, q);
    k(p, p) += lambda * batch;
  }
  const CholFactor kf = cholesky(k);
  Mat z = transpose(chol_solve(kf, transpose(grad_z)));  // grad_z K^{-1}
  for (double& v : z.data) v *= batch;
  return matmul_bt(z, x);
}

// x~ = G^{-1} x. Feeding x~ into standard_grad yields exactly tract_grad;
// forward passes keep using the raw x.
inline Mat precondition_inputs(const Mat& x, const GramMatrix& gm) {
  if (gm.n != x.rows) {
    throw ContractError("precondition_inputs: gram dim " + std::to_string(gm.n) +
                        " vs input rows " + std::to_string(x.rows));
  }
  return chol_solve(gm.factor, x);
}

inline Mat precondition_inputs(const Mat& x, double lambda) {
  return precondition_inputs(x, gram(x, lambda));
}

// Induced update on the pre-activations for learning rate eta:
//   dz = dW* x with dW* = -eta * tract_grad.
// Diagnostic for comparing against the pure embedding step -eta*B*grad_z.
inline Mat tract_update_z(const Mat& grad_z, const Mat& x, double lambda,
                          double eta) {
  const Mat dw = scale(tract_grad(grad_z, x, lambda), -eta);
  return matmul(dw, x);
}

struct FixedPointFlags {
  bool standard_zero = false;
  bool tract_zero = false;
  double standard_norm = 0.0;
  double tract_norm = 0.0;
};

// Both update rules vanish on exactly the same set of points; the flags let
// callers observe that equivalence numerically.
inline FixedPointFlags check_fixed_point(const Mat& grad_z, const Mat& x,
                                         double lambda, double tol) {
  if (!(tol > 0.0)) throw ContractError("check_fixed_point: tol must be > 0");
  FixedPointFlags out;
  out.standard_norm = frob_norm(standard_grad(grad_z, x));
  out.tract_norm = frob_norm(tract_grad(grad_z, x, lambda));
  out.standard_zero = out.standard_norm < tol;
  out.tract_zero = out.tract_norm < tol;
  return out;
}

}  // namespace tract
