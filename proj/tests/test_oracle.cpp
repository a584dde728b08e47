#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"
#include "tract/oracle.hpp"
#include "tract/tract.hpp"
#include "tract/unfold.hpp"

using namespace tract;
using testutil::random_image_batch;
using testutil::random_mat;

TEST_CASE("ridge objective descent: zero gradient gives zero minimizer") {
  Rng rng(20);
  Mat gz(3, 4);
  Mat x = random_mat(rng, 5, 4);
  Mat d = oracle::minimize_ridge_objective(gz, x, 0.1, 0.1, 1000);
  REQUIRE(frob_norm(d) < 1e-12);
}

TEST_CASE("ridge objective descent: scalar closed form") {
  // m = n = B = 1: minimizer is -eta*g*x / (x^2 + lambda).
  Mat gz(1, 1, {1.0});
  Mat x(1, 1, {2.0});
  Mat d = oracle::minimize_ridge_objective(gz, x, 0.1, 0.1, 200000);
  REQUIRE(d(0, 0) == Catch::Approx(-0.2 / 4.1).epsilon(1e-9));
  REQUIRE(d(0, 0) == Catch::Approx(-0.04878).margin(5e-6));
}

TEST_CASE("ridge objective descent matches the factored solution") {
  Rng rng(21);
  for (int trial = 0; trial < 5; ++trial) {
    const int m = rng.uniform_int(1, 8);
    const int n = rng.uniform_int(1, 8);
    const int b = rng.uniform_int(1, 8);
    Mat gz = random_mat(rng, m, b);
    Mat x = random_mat(rng, n, b);
    const double eta = 0.3;
    const double lambda = 0.1;
    Mat iterative = oracle::minimize_ridge_objective(gz, x, eta, lambda, 200000);
    Mat closed = scale(tract_grad(gz, x, lambda), -eta);
    REQUIRE(frob_norm(sub(iterative, closed)) /
                std::max(1.0, frob_norm(closed)) < 1e-6);
  }
}

TEST_CASE("gauss_solve basics") {
  Rng rng(22);
  Mat b = random_mat(rng, 4, 2);
  REQUIRE(max_abs_diff(oracle::gauss_solve(Mat::identity(4), b), b) < 1e-15);

  // Hilbert 4x4 against the exact inverse's first column.
  Mat h(4, 4);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) h(i, j) = 1.0 / (i + j + 1);
  }
  Mat e1(4, 1, {1, 0, 0, 0});
  Mat y = oracle::gauss_solve(h, e1);
  const double want[4] = {16, -120, 240, -140};
  for (int i = 0; i < 4; ++i) {
    REQUIRE(std::abs(y(i, 0) - want[i]) / std::abs(want[i]) < 1e-8);
  }

  Mat singular(2, 2, {1, 2, 2, 4});
  REQUIRE_THROWS_AS(oracle::gauss_solve(singular, Mat(2, 1)), OracleError);
}

TEST_CASE("finite differences are exact on quadratics") {
  auto f = [](const std::vector<double>& t) {
    return 3.0 * t[0] * t[0] + 2.0 * t[0] * t[1] - t[1] * t[1];
  };
  std::vector<double> theta = {1.5, -0.75};
  auto g = oracle::finite_diff(f, theta, 1e-5);
  REQUIRE(g[0] == Catch::Approx(6.0 * 1.5 + 2.0 * -0.75).margin(1e-9));
  REQUIRE(g[1] == Catch::Approx(2.0 * 1.5 - 2.0 * -0.75).margin(1e-9));
}

TEST_CASE("finite difference error shrinks like eps^2") {
  auto f = [](const std::vector<double>& t) { return std::exp(t[0]); };
  std::vector<double> theta = {0.8};
  const double exact = std::exp(0.8);
  const double err1 = std::abs(oracle::finite_diff(f, theta, 1e-3)[0] - exact);
  const double err2 = std::abs(oracle::finite_diff(f, theta, 2e-3)[0] - exact);
  REQUIRE(err2 / err1 == Catch::Approx(4.0).epsilon(0.15));
}

TEST_CASE("naive_conv with 1x1 kernel is a per-pixel linear map") {
  Rng rng(23);
  ImageBatch img = random_image_batch(rng, 2, 3, 4, 4);
  Mat w = random_mat(rng, 5, 3);
  ConvGeom g;  // 1x1, stride 1, no padding
  Mat out = oracle::naive_conv(w, img, g);
  REQUIRE(out.rows == 5);
  REQUIRE(out.cols == 2 * 4 * 4);
  // spot-check one output position
  const int bi = 1, y = 2, x = 3, oc = 4;
  double want = 0.0;
  for (int ci = 0; ci < 3; ++ci) want += w(oc, ci) * img.at(bi, ci, y, x);
  REQUIRE(out(oc, (bi * 4 + y) * 4 + x) == Catch::Approx(want));
}

TEST_CASE("power iteration finds the top eigenvalue") {
  Mat d(3, 3);
  d(0, 0) = 0.5;
  d(1, 1) = 4.0;
  d(2, 2) = 2.5;
  REQUIRE(oracle::power_iter_sym(d, 60) == Catch::Approx(4.0).epsilon(1e-6));
}
