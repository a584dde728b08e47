#pragma once

// Self-contained numerical checks behind `verify` and the acceptance suite.
// Each check returns its worst residual; the injectable gradient routine
// exists so tests can prove the suite catches a corrupted implementation.

#include <chrono>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "tract/nn.hpp"
#include "tract/oracle.hpp"
#include "tract/rng.hpp"
#include "tract/tract.hpp"

namespace tract {

struct CheckResult {
  std::string id;
  bool pass = false;
  bool warn = false;
  double stat = 0.0;  // worst residual / ratio the check asserts on
  std::string detail;
  double seconds = 0.0;
};

struct TractRoutines {
  std::function<Mat(const Mat&, const Mat&, double)> grad =
      [](const Mat& gz, const Mat& x, double lambda) {
        return tract_grad(gz, x, lambda);
      };
};

struct VerifyOptions {
  bool full = false;
  uint64_t seed = 99;
};

// Largest singular value by power iteration on A^T A.
inline double spectral_norm(const Mat& a, int iters = 300) {
  const int n = a.cols;
  if (n == 0 || a.rows == 0) return 0.0;
  std::vector<double> v(n, 1.0 / std::sqrt(static_cast<double>(n)));
  double sigma = 0.0;
  for (int it = 0; it < iters; ++it) {
    std::vector<double> u(a.rows, 0.0);
    for (int i = 0; i < a.rows; ++i) {
      const double* row = a.row(i);
      double acc = 0.0;
      for (int j = 0; j < n; ++j) acc += row[j] * v[j];
      u[i] = acc;
    }
    std::vector<double> w(n, 0.0);
    for (int i = 0; i < a.rows; ++i) {
      const double* row = a.row(i);
      for (int j = 0; j < n; ++j) w[j] += row[j] * u[i];
    }
    double norm = 0.0;
    for (double e : w) norm += e * e;
    norm = std::sqrt(norm);
    if (norm == 0.0) return 0.0;
    double unorm = 0.0;
    for (double e : u) unorm += e * e;
    sigma = std::sqrt(unorm);
    for (int j = 0; j < n; ++j) v[j] = w[j] / norm;
  }
  return sigma;
}

namespace verify_detail {

inline Mat random_mat(Rng& rng, int rows, int cols, double scale = 1.0) {
  Mat m(rows, cols);
  for (double& v : m.data) v = scale * rng.normal();
  return m;
}

// Orthonormal columns via Gram-Schmidt; requires rows >= cols.
inline Mat orthonormal_columns(Rng& rng, int rows, int cols) {
  Mat q = random_mat(rng, rows, cols);
  for (int j = 0; j < cols; ++j) {
    for (int prev = 0; prev < j; ++prev) {
      double dot = 0.0;
      for (int i = 0; i < rows; ++i) dot += q(i, j) * q(i, prev);
      for (int i = 0; i < rows; ++i) q(i, j) -= dot * q(i, prev);
    }
    double norm = 0.0;
    for (int i = 0; i < rows; ++i) norm += q(i, j) * q(i, j);
    norm = std::sqrt(norm);
    for (int i = 0; i < rows; ++i) q(i, j) /= norm;
  }
  return q;
}

// grad_z whose rows are orthogonal to the rows of x (needs B > n), so the
// standard gradient vanishes while grad_z itself does not.
inline Mat null_space_grad(Rng& rng, const Mat& x, int m) {
  const int b = x.cols;
  const int n = x.rows;
  // Orthonormal basis of x's row space, one basis vector per column.
  Mat basis(b, n);
  int rank = 0;
  std::vector<double> v(b);
  for (int row = 0; row < n; ++row) {
    for (int k = 0; k < b; ++k) v[k] = x(row, k);
    for (int j = 0; j < rank; ++j) {
      double dot = 0.0;
      for (int k = 0; k < b; ++k) dot += v[k] * basis(k, j);
      for (int k = 0; k < b; ++k) v[k] -= dot * basis(k, j);
    }
    double norm = 0.0;
    for (int k = 0; k < b; ++k) norm += v[k] * v[k];
    norm = std::sqrt(norm);
    if (norm > 1e-12) {
      for (int k = 0; k < b; ++k) basis(k, rank) = v[k] / norm;
      ++rank;
    }
  }
  Mat gz = random_mat(rng, m, b);
  for (int r = 0; r < m; ++r) {
    for (int rep = 0; rep < 2; ++rep) {  // twice for numerical cleanliness
      for (int j = 0; j < rank; ++j) {
        double dot = 0.0;
        for (int k = 0; k < b; ++k) dot += gz(r, k) * basis(k, j);
        for (int k = 0; k < b; ++k) gz(r, k) -= dot * basis(k, j);
      }
    }
    double norm = 0.0;
    for (int k = 0; k < b; ++k) norm += gz(r, k) * gz(r, k);
    norm = std::sqrt(norm);
    if (norm > 0) {
      for (int k = 0; k < b; ++k) gz(r, k) /= norm;
    }
  }
  return gz;
}

inline double cosine(const Mat& a, const Mat& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    dot += a.data[i] * b.data[i];
    na += a.data[i] * a.data[i];
    nb += b.data[i] * b.data[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

template <class Fn>
inline CheckResult timed(const std::string& id, Fn&& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  CheckResult r = fn();
  r.id = id;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace verify_detail

// The preconditioned gradient agrees with independent gradient descent on
// the ridge objective it minimizes in closed form.
inline CheckResult check_ridge_minimizer(const VerifyOptions& opt,
                                         const TractRoutines& rt) {
  return verify_detail::timed("ridge-minimizer-oracle", [&] {
    Rng rng(opt.seed + 1);
    const int trials = opt.full ? 100 : 15;
    const double lambdas[3] = {0.05, 0.1, 0.2};
    CheckResult r;
    r.stat = 0.0;
    for (int t = 0; t < trials; ++t) {
      const int m = rng.uniform_int(1, 8);
      const int n = rng.uniform_int(1, 8);
      const int b = rng.uniform_int(1, 8);
      const double lambda = lambdas[t % 3];
      const double eta = rng.uniform(0.05, 0.5);
      Mat gz = verify_detail::random_mat(rng, m, b);
      Mat x = verify_detail::random_mat(rng, n, b);
      Mat iterative = oracle::minimize_ridge_objective(gz, x, eta, lambda, 300000);
      Mat closed = scale(rt.grad(gz, x, lambda), -eta);
      const double rel =
          frob_norm(sub(iterative, closed)) / std::max(1e-30, frob_norm(closed));
      r.stat = std::max(r.stat, rel);
    }
    r.pass = r.stat < 1e-6;
    r.detail = "max rel err vs descent oracle over " + std::to_string(trials) +
               " instances";
    return r;
  });
}

// The analytic gradient of the ridge objective vanishes at the closed-form
// minimizer, and random perturbations only increase the objective.
inline CheckResult check_stationarity(const VerifyOptions& opt,
                                      const TractRoutines& rt) {
  return verify_detail::timed("minimizer-stationarity", [&] {
    Rng rng(opt.seed + 2);
    const int trials = opt.full ? 100 : 20;
    CheckResult r;
    bool perturb_ok = true;
    for (int t = 0; t < trials; ++t) {
      const int m = rng.uniform_int(1, 8);
      const int n = rng.uniform_int(1, 8);
      const int b = rng.uniform_int(1, 8);
      const double lambda = (t % 2) ? 0.1 : 0.05;
      const double eta = 0.25;
      Mat gz = verify_detail::random_mat(rng, m, b);
      Mat x = verify_detail::random_mat(rng, n, b);
      const double batch = b;
      Mat dw = scale(rt.grad(gz, x, lambda), -eta);
      // dF = 2 (eta*B*gz + dW x) x^T + 2 lambda B dW
      Mat resid = axpy(eta * batch, gz, matmul(dw, x));
      Mat grad_f = axpy(2.0 * lambda * batch, dw, scale(matmul_bt(resid, x), 2.0));
      const double scale_ref = 1.0 + frob_norm(standard_grad(gz, x));
      r.stat = std::max(r.stat, frob_norm(grad_f) / scale_ref);

      if (t < 10) {
        auto objective = [&](const Mat& d) {
          Mat rr = axpy(eta * batch, gz, matmul(d, x));
          const double fit = frob_norm(rr);
          const double reg = frob_norm(d);
          return fit * fit + lambda * batch * reg * reg;
        };
        const double f_star = objective(dw);
        for (int p = 0; p < (opt.full ? 100 : 20); ++p) {
          Mat delta = verify_detail::random_mat(rng, m, n);
          const double norm = frob_norm(delta);
          const double target = rng.uniform(1e-6, 1e-2);
          Mat shifted = axpy(target / norm, delta, dw);
          if (objective(shifted) < f_star - 1e-12) perturb_ok = false;
        }
      }
    }
    r.pass = r.stat < 1e-8 && perturb_ok;
    r.detail = perturb_ok ? "gradient norm at minimizer, relative"
                          : "a perturbation decreased the objective";
    return r;
  });
}

// R G == standard gradient, i.e. the solve satisfied its normal equations.
inline CheckResult check_normal_equations(const VerifyOptions& opt,
                                          const TractRoutines& rt) {
  return verify_detail::timed("normal-equation-residual", [&] {
    Rng rng(opt.seed + 3);
    const int trials = opt.full ? 1000 : 100;
    const int max_n = opt.full ? 64 : 32;
    const int max_b = opt.full ? 128 : 64;
    CheckResult r;
    for (int t = 0; t < trials; ++t) {
      const int m = rng.uniform_int(1, 32);
      const int n = rng.uniform_int(1, max_n);
      const int b = rng.uniform_int(1, max_b);
      const double lambda = 0.05 + 0.15 * rng.uniform();
      Mat gz = verify_detail::random_mat(rng, m, b);
      Mat x = verify_detail::random_mat(rng, n, b);
      GramMatrix gm = gram(x, lambda);
      Mat rmat = rt.grad(gz, x, lambda);
      Mat lhs = matmul(rmat, gm.G);
      Mat s = standard_grad(gz, x);
      const double rel = frob_norm(sub(lhs, s)) / std::max(1.0, frob_norm(s));
      r.stat = std::max(r.stat, rel);
    }
    r.pass = r.stat < 1e-9;
    r.detail = std::to_string(trials) + " random instances";
    return r;
  });
}

// Zero standard gradient iff zero preconditioned gradient.
inline CheckResult check_zero_gradient_equivalence(const VerifyOptions& opt,
                                                   const TractRoutines& rt) {
  return verify_detail::timed("zero-gradient-equivalence", [&] {
    Rng rng(opt.seed + 4);
    CheckResult r;
    double worst_constructed = 0.0;
    const int constructed = opt.full ? 50 : 10;
    for (int t = 0; t < constructed; ++t) {
      const int n = rng.uniform_int(1, 6);
      const int b = n + rng.uniform_int(2, 8);
      const int m = rng.uniform_int(1, 6);
      Mat x = verify_detail::random_mat(rng, n, b);
      Mat gz = verify_detail::null_space_grad(rng, x, m);
      Mat g = rt.grad(gz, x, 0.1);
      worst_constructed = std::max(worst_constructed, frob_norm(g));
      if (frob_norm(gz) < 0.5) {  // construction must leave a nonzero gradient
        r.detail = "constructed grad_z degenerated to zero";
        r.pass = false;
        return r;
      }
    }
    // literal zero
    {
      Mat x = verify_detail::random_mat(rng, 4, 6);
      Mat zero(3, 6);
      worst_constructed = std::max(worst_constructed, frob_norm(rt.grad(zero, x, 0.1)));
    }

    bool mixed = false;
    double min_nonzero = 1e300;
    const int random_trials = opt.full ? 1000 : 100;
    for (int t = 0; t < random_trials; ++t) {
      const int m = rng.uniform_int(1, 8);
      const int n = rng.uniform_int(1, 8);
      const int b = rng.uniform_int(1, 8);
      Mat gz = verify_detail::random_mat(rng, m, b);
      Mat x = verify_detail::random_mat(rng, n, b);
      FixedPointFlags flags = check_fixed_point(gz, x, 0.1, 1e-12);
      if (flags.standard_zero != flags.tract_zero) mixed = true;
      min_nonzero = std::min(min_nonzero,
                             std::min(flags.standard_norm, flags.tract_norm));
    }
    r.stat = worst_constructed;
    r.pass = worst_constructed < 1e-12 && !mixed && min_nonzero > 1e-12;
    r.detail = mixed ? "mixed zero/nonzero outcome observed"
                     : "max |preconditioned grad| on constructed zero cases";
    return r;
  });
}

// The custom-backward route and the input-preconditioning route give the
// same first-layer gradient while the forward pass is untouched bit for bit.
inline CheckResult check_method_equivalence(const VerifyOptions& opt,
                                            const TractRoutines& rt) {
  return verify_detail::timed("method-equivalence", [&] {
    Rng rng(opt.seed + 5);
    CheckResult r;
    bool forward_identical = true;
    const double lambda = 0.1;
    struct Case {
      ModelSpec spec;
      int b;
    };
    std::vector<Case> cases;
    cases.push_back({make_mlp(1, 6, 6, 4, 10), 5});
    cases.push_back({make_cnn(2, 8, 8, 4, 6), 3});
    cases.push_back({make_patch_mlp(1, 8, 8, 4, 4, 12), 4});
    for (auto& [spec, b] : cases) {
      ParamStore params = init_params(spec, 123);
      ImageBatch batch(b, spec.in_c, spec.in_h, spec.in_w);
      for (double& v : batch.data) v = rng.normal();
      std::vector<int> labels(b);
      for (int& l : labels) l = rng.uniform_int(0, 3);

      ForwardPass fp1 = forward(spec, params, batch);
      LossGrad lg = loss_and_grad(fp1.logits, labels,
                                  spec.layers.back().label_smoothing);

      TrActConfig on;
      on.enabled = true;
      on.lambda = lambda;
      BackwardResult bw_tract = backward(spec, params, fp1.cache, lg.grad_logits, on);

      // input-preconditioning route: standard gradient against G^{-1} x
      Mat x_pre = precondition_inputs(fp1.cache.x_unf, lambda);
      Mat via_precond = standard_grad(bw_tract.grad_z, x_pre);
      // custom-backward route, canonical n x n form
      Mat via_custom = rt.grad(bw_tract.grad_z, fp1.cache.x_unf, lambda);

      const double denom = std::max(1e-30, frob_norm(via_custom));
      r.stat = std::max(r.stat, frob_norm(sub(via_precond, via_custom)) / denom);
      r.stat = std::max(r.stat,
                        frob_norm(sub(bw_tract.grads[0].w, via_custom)) / denom);

      // forward values must not depend on the backward configuration
      ForwardPass fp2 = forward(spec, params, batch);
      if (fp1.logits.data != fp2.logits.data) forward_identical = false;
      TrActConfig off;
      BackwardResult bw_std = backward(spec, params, fp2.cache, lg.grad_logits, off);
      for (size_t li = 1; li < spec.layers.size(); ++li) {
        if (bw_std.grads[li].w.data != bw_tract.grads[li].w.data ||
            bw_std.grads[li].b.data != bw_tract.grads[li].b.data) {
          forward_identical = false;  // deeper layers must be bit-identical
        }
      }
      if (bw_std.grads[0].b.data != bw_tract.grads[0].b.data) {
        forward_identical = false;  // bias is never preconditioned
      }
    }
    (void)opt;
    r.pass = r.stat < 1e-9 && forward_identical;
    r.detail = forward_identical
                   ? "max rel gap between gradient routes (dense/conv/patch)"
                   : "forward or non-first-layer gradients diverged";
    return r;
  });
}

// Unfolded matmul convolution against the direct seven-loop oracle.
inline CheckResult check_unfold_conv(const VerifyOptions& opt) {
  return verify_detail::timed("unfold-vs-direct-conv", [&] {
    Rng rng(opt.seed + 6);
    CheckResult r;
    const int geoms = opt.full ? 20 : 8;
    int done = 0;
    while (done < geoms) {
      ConvGeom g;
      g.kh = rng.uniform_int(1, 5);
      g.kw = rng.uniform_int(1, 5);
      g.sh = rng.uniform_int(1, 3);
      g.sw = rng.uniform_int(1, 3);
      g.ph = rng.uniform_int(0, 2);
      g.pw = rng.uniform_int(0, 2);
      const int h = rng.uniform_int(g.kh, 12);
      const int w = rng.uniform_int(g.kw, 12);
      if ((h + 2 * g.ph - g.kh) % g.sh != 0) continue;
      if ((w + 2 * g.pw - g.kw) % g.sw != 0) continue;
      const int b = rng.uniform_int(1, 3);
      const int c = rng.uniform_int(1, 3);
      const int oc = rng.uniform_int(1, 4);
      ImageBatch img(b, c, h, w);
      for (double& v : img.data) v = rng.normal();
      Mat wmat = verify_detail::random_mat(rng, oc, c * g.kh * g.kw);

      PatchMatrix pm = im2col(img, g);
      Mat fwd_fast = matmul(wmat, pm.data);
      Mat fwd_slow = oracle::naive_conv(wmat, img, g);
      r.stat = std::max(r.stat, max_abs_diff(fwd_fast, fwd_slow));

      Mat gout = verify_detail::random_mat(rng, oc, pm.B);
      Mat wg_fast = standard_grad(gout, pm.data);
      Mat wg_slow = oracle::naive_conv_wgrad(gout, img, g);
      r.stat = std::max(r.stat, max_abs_diff(wg_fast, wg_slow));
      ++done;
    }
    r.pass = r.stat < 1e-10;
    r.detail = std::to_string(geoms) + " random geometries, forward + weight grad";
    return r;
  });
}

// Large lambda recovers the scaled standard gradient; orthonormal columns
// give the exact closed-form pre-activation update.
inline CheckResult check_asymptotics(const VerifyOptions& opt,
                                     const TractRoutines& rt) {
  return verify_detail::timed("asymptotics", [&] {
    Rng rng(opt.seed + 7);
    CheckResult r;
    for (int t = 0; t < (opt.full ? 20 : 5); ++t) {
      const int m = rng.uniform_int(1, 8);
      const int n = rng.uniform_int(1, 12);
      const int b = rng.uniform_int(1, 12);
      Mat gz = verify_detail::random_mat(rng, m, b);
      Mat x = verify_detail::random_mat(rng, n, b);
      Mat s = standard_grad(gz, x);
      Mat lam_scaled = scale(rt.grad(gz, x, 1e8), 1e8);
      const double rel = frob_norm(sub(lam_scaled, s)) / std::max(1e-30, frob_norm(s));
      r.stat = std::max(r.stat, rel);
    }
    bool ortho_ok = true;
    double worst_ortho = 0.0;
    for (int t = 0; t < (opt.full ? 20 : 5); ++t) {
      const int b = rng.uniform_int(2, 6);
      const int n = b + rng.uniform_int(0, 6);
      const int m = rng.uniform_int(1, 6);
      const double lambda = 0.05 + 0.3 * rng.uniform();
      const double eta = rng.uniform(0.05, 0.5);
      Mat q = verify_detail::orthonormal_columns(rng, n, b);
      Mat x = scale(q, std::sqrt(static_cast<double>(b)));  // x^T x = B I
      Mat gz = verify_detail::random_mat(rng, m, b);
      Mat dz = tract_update_z(gz, x, lambda, eta);
      Mat want = scale(gz, -eta * b / (1.0 + lambda));
      const double rel = frob_norm(sub(dz, want)) / std::max(1e-30, frob_norm(want));
      worst_ortho = std::max(worst_ortho, rel);
      if (rel > 1e-9) ortho_ok = false;
    }
    r.pass = r.stat < 1e-4 && ortho_ok;
    r.detail = "large-lambda rel err " + std::to_string(r.stat) +
               ", orthonormal-update rel err " + std::to_string(worst_ortho);
    return r;
  });
}

// Standard gradient scales linearly with the input; the preconditioned one
// stays below the operator-norm ceiling |grad_z|_2 * sqrt(B/lambda) / 2.
inline CheckResult check_input_scale(const VerifyOptions& opt,
                                     const TractRoutines& rt) {
  return verify_detail::timed("input-scale-robustness", [&] {
    Rng rng(opt.seed + 8);
    CheckResult r;
    bool bounded = true;
    double worst_linearity = 0.0;
    const double lambda = 0.1;
    for (int t = 0; t < (opt.full ? 10 : 3); ++t) {
      const int m = rng.uniform_int(2, 8);
      const int n = rng.uniform_int(2, 16);
      const int b = rng.uniform_int(2, 16);
      Mat gz = verify_detail::random_mat(rng, m, b);
      Mat x = verify_detail::random_mat(rng, n, b);
      const double base_norm = frob_norm(standard_grad(gz, x));
      const double gz_spec = spectral_norm(gz);
      const double ceiling =
          gz_spec * std::sqrt(static_cast<double>(b) / lambda) / 2.0 + 1e-9;
      for (double c : {1.0, 10.0, 100.0, 1000.0}) {
        Mat xs = scale(x, c);
        const double ratio = frob_norm(standard_grad(gz, xs)) / (c * base_norm);
        worst_linearity = std::max(worst_linearity, std::abs(ratio - 1.0));
        const double tg_spec = spectral_norm(rt.grad(gz, xs, lambda));
        if (tg_spec > ceiling) bounded = false;
        r.stat = std::max(r.stat, tg_spec / ceiling);
      }
    }
    r.pass = bounded && worst_linearity < 1e-6;
    r.detail = "max preconditioned spectral norm / ceiling; linearity gap " +
               std::to_string(worst_linearity);
    return r;
  });
}

// (x x^T / B + a I)^{-1} x == x (x^T x / B + a I)^{-1}, and the cheap-side
// routine agrees with the canonical solve.
inline CheckResult check_pushthrough(const VerifyOptions& opt) {
  return verify_detail::timed("pushthrough-identity", [&] {
    Rng rng(opt.seed + 9);
    CheckResult r;
    for (int t = 0; t < (opt.full ? 50 : 10); ++t) {
      const int n = rng.uniform_int(2, 24);
      int b = rng.uniform_int(2, 24);
      if (b == n) ++b;
      const int m = rng.uniform_int(1, 6);
      const double lambda = 0.05 + 0.2 * rng.uniform();
      Mat x = verify_detail::random_mat(rng, n, b);
      Mat gz = verify_detail::random_mat(rng, m, b);

      Mat left = precondition_inputs(x, lambda);  // n x n solve
      // right: x (x^T x / B + lambda I)^{-1}
      Mat small = matmul_bt(transpose(x), transpose(x));
      small = add_scaled_identity(scale(small, 1.0 / b), lambda);
      Mat right = transpose(chol_solve(cholesky(small), transpose(x)));
      r.stat = std::max(r.stat, rel_frob_diff(left, right));

      Mat fast = tract_grad_fast(gz, x, lambda);
      Mat exact = tract_grad(gz, x, lambda);
      r.stat = std::max(r.stat, rel_frob_diff(fast, exact));
    }
    r.pass = r.stat < 1e-9;
    r.detail = "max rel gap across transposed-system routes";
    return r;
  });
}

// Monte-Carlo version of the alignment claim: the preconditioned update
// moves the pre-activations closer to the plain gradient direction than the
// standard update does, in at least 95% of random trials.
inline CheckResult check_cosine_alignment(const VerifyOptions& opt) {
  return verify_detail::timed("update-alignment", [&] {
    Rng rng(opt.seed + 10);
    CheckResult r;
    const int trials = opt.full ? 1000 : 200;
    int wins = 0;
    for (int t = 0; t < trials; ++t) {
      const int m = rng.uniform_int(2, 6);
      const int n = rng.uniform_int(4, 16);
      const int b = rng.uniform_int(2, n);
      Mat x = verify_detail::random_mat(rng, n, b);
      // uneven per-row scale and per-column contrast, like raw pixels
      for (int i = 0; i < n; ++i) {
        const double s = std::exp(0.8 * rng.normal());
        for (int j = 0; j < b; ++j) x(i, j) *= s;
      }
      for (int j = 0; j < b; ++j) {
        const double c = rng.uniform(0.25, 1.75);
        for (int i = 0; i < n; ++i) x(i, j) *= c;
      }
      Mat gz = verify_detail::random_mat(rng, m, b);
      Mat target = scale(gz, -1.0);
      Mat dz_tract = tract_update_z(gz, x, 0.1, 1.0);
      Mat dz_std = scale(matmul(standard_grad(gz, x), x), -1.0);
      const double cos_t = verify_detail::cosine(dz_tract, target);
      const double cos_s = verify_detail::cosine(dz_std, target);
      if (cos_t >= cos_s - 1e-12) ++wins;
    }
    r.stat = static_cast<double>(wins) / trials;
    r.pass = r.stat >= 0.95;
    r.detail = std::to_string(wins) + "/" + std::to_string(trials) +
               " trials favored the preconditioned update";
    return r;
  });
}

// The closed form matches an independently assembled and independently
// solved normal-equation system (uncancelled batch factors).
inline CheckResult check_oracle_normal_equations(const VerifyOptions& opt,
                                                 const TractRoutines& rt) {
  return verify_detail::timed("oracle-normal-equations", [&] {
    Rng rng(opt.seed + 11);
    CheckResult r;
    for (int t = 0; t < (opt.full ? 100 : 20); ++t) {
      const int m = rng.uniform_int(1, 8);
      const int n = rng.uniform_int(1, 8);
      const int b = rng.uniform_int(1, 8);
      const double lambda = 0.1;
      const double eta = 0.3;
      Mat gz = verify_detail::random_mat(rng, m, b);
      Mat x = verify_detail::random_mat(rng, n, b);
      // Solve dW (x x^T + lambda*B*I) = -eta*B*gz*x^T with the elimination
      // oracle (transposed: symmetric system).
      Mat sys = oracle::detail::mm_bt(x, x);
      for (int i = 0; i < n; ++i) sys(i, i) += lambda * b;
      Mat rhs = oracle::detail::mm_bt(gz, x);
      for (double& v : rhs.data) v *= -eta * b;
      Mat dw_oracle = transpose(oracle::gauss_solve(sys, transpose(rhs)));
      Mat dw_closed = scale(rt.grad(gz, x, lambda), -eta);
      r.stat = std::max(r.stat, frob_norm(sub(dw_oracle, dw_closed)) /
                                    std::max(1e-30, frob_norm(dw_closed)));
    }
    r.pass = r.stat < 1e-8;
    r.detail = "closed form vs eliminated normal equations";
    return r;
  });
}

inline std::vector<CheckResult> run_verification(const VerifyOptions& opt,
                                                 const TractRoutines& rt = {}) {
  std::vector<CheckResult> out;
  out.push_back(check_ridge_minimizer(opt, rt));
  out.push_back(check_stationarity(opt, rt));
  out.push_back(check_normal_equations(opt, rt));
  out.push_back(check_zero_gradient_equivalence(opt, rt));
  out.push_back(check_method_equivalence(opt, rt));
  out.push_back(check_unfold_conv(opt));
  out.push_back(check_asymptotics(opt, rt));
  out.push_back(check_input_scale(opt, rt));
  out.push_back(check_pushthrough(opt));
  out.push_back(check_oracle_normal_equations(opt, rt));
  if (opt.full) out.push_back(check_cosine_alignment(opt));
  return out;
}

}  // namespace tract
