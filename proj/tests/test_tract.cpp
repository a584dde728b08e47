#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "tract/oracle.hpp"
#include "tract/tract.hpp"
#include "tract/verify.hpp"

using namespace tract;
using testutil::random_mat;

namespace {

// n x B with orthonormal rows scaled so x x^T = B I_n (requires B >= n).
Mat scaled_orthonormal_rows(Rng& rng, int n, int b) {
  Mat q = verify_detail::orthonormal_columns(rng, b, n);  // b x n
  return scale(transpose(q), std::sqrt(static_cast<double>(b)));
}

}  // namespace

TEST_CASE("standard_grad basics") {
  Mat zero(3, 4);
  Mat x(5, 4);
  REQUIRE(frob_norm(standard_grad(zero, x)) == 0.0);

  Mat gz(1, 1, {2.0});
  Mat xs(1, 1, {3.0});
  REQUIRE(standard_grad(gz, xs)(0, 0) == 6.0);

  REQUIRE_THROWS_AS(standard_grad(Mat(2, 3), Mat(4, 5)), ContractError);
}

TEST_CASE("standard_grad matches finite differences through z = W x") {
  Rng rng(40);
  const int m = 4, n = 6, b = 8;
  Mat x = random_mat(rng, n, b);
  Mat c = random_mat(rng, m, b);  // fixed cotangent
  Mat w = random_mat(rng, m, n);

  // loss(W) = sum(C .* (W x)) / b  =>  grad_z = C / b
  auto loss = [&](const std::vector<double>& theta) {
    Mat wt(m, n, theta);
    Mat z = oracle::detail::mm(wt, x);
    double acc = 0.0;
    for (size_t i = 0; i < z.data.size(); ++i) acc += c.data[i] * z.data[i];
    return acc / b;
  };
  std::vector<double> fd = oracle::finite_diff(loss, w.data, 1e-5);
  Mat analytic = standard_grad(scale(c, 1.0 / b), x);
  Mat fd_mat(m, n, fd);
  REQUIRE(rel_frob_diff(analytic, fd_mat) < 1e-6);
}

TEST_CASE("gram construction") {
  Mat zero(3, 2);
  GramMatrix g0 = gram(zero, 0.1);
  REQUIRE(max_abs_diff(g0.G, scale(Mat::identity(3), 0.1)) < 1e-15);
  REQUIRE(g0.batch == 2);

  Rng rng(41);
  Mat x = scaled_orthonormal_rows(rng, 3, 6);  // x x^T = 6 I
  GramMatrix g1 = gram(x, 0.1);
  REQUIRE(max_abs_diff(g1.G, scale(Mat::identity(3), 1.1)) < 1e-12);

  Mat xr = random_mat(rng, 5, 9);
  GramMatrix g2 = gram(xr, 0.2);
  REQUIRE(max_abs_diff(g2.G, transpose(g2.G)) < 1e-12);
  Mat direct = scale(matmul_bt(xr, xr), 1.0 / 9.0);
  direct = add_scaled_identity(direct, 0.2);
  REQUIRE(rel_frob_diff(g2.G, direct) < 1e-12);

  REQUIRE_THROWS_AS(gram(xr, 0.0), ContractError);
  REQUIRE_THROWS_AS(gram(xr, -1.0), ContractError);

  Mat bad = xr;
  bad(0, 0) = std::nan("");
  REQUIRE_THROWS_AS(gram(bad, 0.1), NotPositiveDefinite);
}

TEST_CASE("tract_grad forced and asymptotic cases") {
  Rng rng(42);
  Mat zero(2, 6);
  Mat x = random_mat(rng, 4, 6);
  REQUIRE(frob_norm(tract_grad(zero, x, 0.1)) == 0.0);

  // x x^T = B I: preconditioned gradient is the standard one divided by 1.1
  Mat xo = scaled_orthonormal_rows(rng, 3, 8);
  Mat gz = random_mat(rng, 2, 8);
  Mat want = scale(standard_grad(gz, xo), 1.0 / 1.1);
  REQUIRE(rel_frob_diff(tract_grad(gz, xo, 0.1), want) < 1e-10);

  // lambda -> infinity recovers the standard gradient / lambda
  Mat xr = random_mat(rng, 5, 7);
  Mat gzr = random_mat(rng, 3, 7);
  Mat s = standard_grad(gzr, xr);
  Mat lam = scale(tract_grad(gzr, xr, 1e8), 1e8);
  REQUIRE(rel_frob_diff(lam, s) < 1e-4);
}

TEST_CASE("normal-equation residual on random instances") {
  Rng rng(43);
  for (int t = 0; t < 50; ++t) {
    const int m = rng.uniform_int(1, 32);
    const int n = rng.uniform_int(1, 32);
    const int b = rng.uniform_int(1, 32);
    Mat gz = random_mat(rng, m, b);
    Mat x = random_mat(rng, n, b);
    GramMatrix gm = gram(x, 0.1);
    Mat r = tract_grad(gz, x, gm);
    Mat s = standard_grad(gz, x);
    const double resid = frob_norm(sub(matmul(r, gm.G), s)) /
                         std::max(1.0, frob_norm(s));
    REQUIRE(resid < 1e-9);
  }
}

TEST_CASE("precondition_inputs equivalences") {
  Rng rng(44);
  Mat xo = scaled_orthonormal_rows(rng, 4, 9);
  Mat pre = precondition_inputs(xo, 0.1);
  REQUIRE(rel_frob_diff(pre, scale(xo, 1.0 / 1.1)) < 1e-10);

  // lambda * x~ -> x as lambda -> infinity
  Mat xr = random_mat(rng, 6, 5);
  Mat tilde = precondition_inputs(xr, 1e8);
  REQUIRE(rel_frob_diff(scale(tilde, 1e8), xr) < 1e-4);

  // feeding x~ through the standard gradient is the preconditioned gradient
  Mat gz = random_mat(rng, 3, 5);
  Mat via_pre = standard_grad(gz, precondition_inputs(xr, 0.1));
  Mat direct = tract_grad(gz, xr, 0.1);
  REQUIRE(rel_frob_diff(via_pre, direct) < 1e-9);
}

TEST_CASE("fast route equals the canonical solve on both branches") {
  Rng rng(45);
  for (int t = 0; t < 30; ++t) {
    const int n = rng.uniform_int(1, 20);
    const int b = rng.uniform_int(1, 20);
    const int m = rng.uniform_int(1, 6);
    const double lambda = 0.05 + rng.uniform() * 0.3;
    Mat gz = random_mat(rng, m, b);
    Mat x = random_mat(rng, n, b);
    Mat fast = tract_grad_fast(gz, x, lambda);
    Mat exact = tract_grad(gz, x, lambda);
    REQUIRE(rel_frob_diff(fast, exact) < 1e-10);
  }
}

TEST_CASE("pushthrough identity") {
  Rng rng(46);
  for (int t = 0; t < 10; ++t) {
    int n = rng.uniform_int(2, 16);
    int b = rng.uniform_int(2, 16);
    if (n == b) ++b;
    const double lambda = 0.1;
    Mat x = random_mat(rng, n, b);
    Mat left = precondition_inputs(x, lambda);
    Mat small = add_scaled_identity(scale(matmul(transpose(x), x), 1.0 / b), lambda);
    Mat right = transpose(chol_solve(cholesky(small), transpose(x)));
    REQUIRE(rel_frob_diff(left, right) < 1e-9);
  }
}

TEST_CASE("tract_update_z cases") {
  Rng rng(47);
  Mat x = random_mat(rng, 5, 4);
  REQUIRE(frob_norm(tract_update_z(Mat(3, 4), x, 0.1, 0.5)) == 0.0);

  // orthonormal columns: dz = -eta*B/(1+lambda) * grad_z
  const int n = 9, b = 4, m = 3;
  Mat q = verify_detail::orthonormal_columns(rng, n, b);
  Mat xo = scale(q, std::sqrt(static_cast<double>(b)));
  Mat gz = random_mat(rng, m, b);
  const double eta = 0.3, lambda = 0.1;
  Mat dz = tract_update_z(gz, xo, lambda, eta);
  Mat want = scale(gz, -eta * b / (1.0 + lambda));
  REQUIRE(rel_frob_diff(dz, want) < 1e-9);
}

TEST_CASE("fixed point flags") {
  Rng rng(48);
  Mat x = random_mat(rng, 4, 10);

  FixedPointFlags zero = check_fixed_point(Mat(3, 10), x, 0.1, 1e-12);
  REQUIRE(zero.standard_zero);
  REQUIRE(zero.tract_zero);

  Mat gz = random_mat(rng, 3, 10);
  FixedPointFlags nz = check_fixed_point(gz, x, 0.1, 1e-12);
  REQUIRE_FALSE(nz.standard_zero);
  REQUIRE_FALSE(nz.tract_zero);

  // grad_z orthogonal to x's rows: nonzero grad_z, zero gradient both ways
  Mat gnull = verify_detail::null_space_grad(rng, x, 3);
  REQUIRE(frob_norm(gnull) > 0.5);
  FixedPointFlags fp = check_fixed_point(gnull, x, 1e-10, 1e-12);
  REQUIRE(fp.standard_zero);
  REQUIRE(fp.tract_zero);
  REQUIRE(frob_norm(tract_grad(gnull, x, 0.1)) < 1e-12);

  REQUIRE_THROWS_AS(check_fixed_point(gz, x, 0.1, 0.0), ContractError);
}

TEST_CASE("fixed point flags agree outside the guard band") {
  Rng rng(49);
  for (int t = 0; t < 200; ++t) {
    const int m = rng.uniform_int(1, 6);
    const int n = rng.uniform_int(1, 6);
    const int b = rng.uniform_int(1, 6);
    Mat gz = random_mat(rng, m, b);
    Mat x = random_mat(rng, n, b);
    const double tol = 1e-9;
    FixedPointFlags f = check_fixed_point(gz, x, 0.1, tol);
    const bool outside_band =
        (f.standard_norm < tol / 10 || f.standard_norm > tol * 10) &&
        (f.tract_norm < tol / 10 || f.tract_norm > tol * 10);
    if (outside_band) {
      REQUIRE(f.standard_zero == f.tract_zero);
    }
  }
}

TEST_CASE("input scaling: standard grows linearly, preconditioned stays bounded") {
  Rng rng(50);
  const int m = 4, n = 9, b = 7;
  const double lambda = 0.1;
  Mat gz = random_mat(rng, m, b);
  Mat x = random_mat(rng, n, b);
  const double base = frob_norm(standard_grad(gz, x));
  const double ceiling =
      spectral_norm(gz) * std::sqrt(static_cast<double>(b) / lambda) / 2.0 + 1e-9;
  for (double c : {1.0, 10.0, 100.0, 1000.0}) {
    Mat xs = scale(x, c);
    REQUIRE(frob_norm(standard_grad(gz, xs)) / (c * base) ==
            Catch::Approx(1.0).epsilon(1e-6));
    REQUIRE(spectral_norm(tract_grad(gz, xs, lambda)) <= ceiling);
  }
}
