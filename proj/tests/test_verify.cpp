#include <catch2/catch_amalgamated.hpp>

#include "tract/verify.hpp"

using namespace tract;

TEST_CASE("quick verification suite passes") {
  VerifyOptions opt;
  opt.full = false;
  std::vector<CheckResult> results = run_verification(opt);
  REQUIRE_FALSE(results.empty());
  for (const CheckResult& r : results) {
    INFO(r.id << ": " << r.detail << " (stat " << r.stat << ")");
    CHECK(r.pass);
  }
}

TEST_CASE("a sign-flipped gradient routine is caught") {
  VerifyOptions opt;
  opt.full = false;
  TractRoutines broken;
  broken.grad = [](const Mat& gz, const Mat& x, double lambda) {
    return scale(tract_grad(gz, x, lambda), -1.0);
  };
  std::vector<CheckResult> results = run_verification(opt, broken);
  bool any_failed = false;
  for (const CheckResult& r : results) any_failed |= !r.pass;
  REQUIRE(any_failed);
}

TEST_CASE("spectral norm estimator against a known matrix") {
  Mat a(2, 2, {3, 0, 0, 0.5});
  REQUIRE(spectral_norm(a) == Catch::Approx(3.0).epsilon(1e-9));
  // singular values of [[0,2],[0,0]] are {2, 0}
  Mat b(2, 2, {0, 2, 0, 0});
  REQUIRE(spectral_norm(b) == Catch::Approx(2.0).epsilon(1e-9));
}
