#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "helpers.hpp"
#include "tract/nn.hpp"
#include "tract/oracle.hpp"
#include "tract/tract.hpp"

using namespace tract;
using testutil::random_image_batch;

namespace {

// Scalar loss as a function of one layer's flattened weights, for finite
// differences.
double net_loss(const ModelSpec& spec, ParamStore params, const ImageBatch& batch,
                const std::vector<int>& labels) {
  ForwardPass fp = forward(spec, params, batch);
  return loss_and_grad(fp.logits, labels, spec.layers.back().label_smoothing).loss;
}

void check_gradients_fd(const ModelSpec& spec, const ImageBatch& batch,
                        const std::vector<int>& labels, double tol) {
  ParamStore params = init_params(spec, 7);
  ForwardPass fp = forward(spec, params, batch);
  LossGrad lg = loss_and_grad(fp.logits, labels, spec.layers.back().label_smoothing);
  TrActConfig off;
  BackwardResult bw = backward(spec, params, fp.cache, lg.grad_logits, off);

  for (size_t li = 0; li < spec.layers.size(); ++li) {
    if (!spec.layers[li].has_params()) continue;
    for (int part = 0; part < 2; ++part) {
      const Mat& p = part == 0 ? params.layers[li].w : params.layers[li].b;
      const Mat& g = part == 0 ? bw.grads[li].w : bw.grads[li].b;
      auto f = [&](const std::vector<double>& theta) {
        ParamStore tweaked = params;
        (part == 0 ? tweaked.layers[li].w.data : tweaked.layers[li].b.data) = theta;
        return net_loss(spec, tweaked, batch, labels);
      };
      std::vector<double> fd = oracle::finite_diff(f, p.data, 1e-5);
      Mat fd_mat(p.rows, p.cols, fd);
      INFO("layer " << li << (part == 0 ? " weights" : " bias"));
      REQUIRE(frob_norm(sub(fd_mat, g)) / std::max(1.0, frob_norm(g)) < tol);
    }
  }
}

}  // namespace

TEST_CASE("identity first layer reproduces the flattened input") {
  ModelSpec spec;
  spec.in_c = 1;
  spec.in_h = 2;
  spec.in_w = 2;
  spec.layers = {LayerSpec::first_dense(4, 4), LayerSpec::softmax_ce(4, 0.0)};
  ParamStore params = init_params(spec, 1);
  params.layers[0].w = Mat::identity(4);
  params.layers[0].b = Mat(4, 1);

  Rng rng(60);
  ImageBatch batch = random_image_batch(rng, 3, 1, 2, 2);
  ForwardPass fp = forward(spec, params, batch);
  Mat flat = flatten_dense(batch).data;
  REQUIRE(max_abs_diff(fp.logits, flat) == 0.0);
  REQUIRE(max_abs_diff(fp.cache.z, flat) == 0.0);
}

TEST_CASE("hand-sized two layer network forward") {
  ModelSpec spec;
  spec.in_c = 1;
  spec.in_h = 1;
  spec.in_w = 2;
  spec.layers = {LayerSpec::first_dense(2, 2), LayerSpec::relu(),
                 LayerSpec::dense(2, 2), LayerSpec::softmax_ce(2, 0.0)};
  ParamStore params = init_params(spec, 1);
  params.layers[0].w = Mat(2, 2, {1, -1, 2, 0});
  params.layers[0].b = Mat(2, 1, {0.5, 0});
  params.layers[2].w = Mat(2, 2, {1, 1, 0, -1});
  params.layers[2].b = Mat(2, 1, {0, 0.25});

  ImageBatch batch(1, 1, 1, 2);
  batch.data = {3.0, 1.0};
  ForwardPass fp = forward(spec, params, batch);
  // z = [3-1+0.5, 6+0] = [2.5, 6]; relu keeps both; logits = [2.5+6, -6+0.25]
  REQUIRE(fp.logits(0, 0) == Catch::Approx(8.5));
  REQUIRE(fp.logits(1, 0) == Catch::Approx(-5.75));
}

TEST_CASE("loss_and_grad reference values") {
  Mat uniform(5, 3);  // all-equal logits
  std::vector<int> labels = {0, 4, 2};
  LossGrad lg = loss_and_grad(uniform, labels, 0.0);
  REQUIRE(lg.loss == Catch::Approx(std::log(5.0)).epsilon(1e-12));

  Mat margin(3, 2);
  margin(0, 0) = 80.0;
  margin(1, 1) = 80.0;
  LossGrad big = loss_and_grad(margin, {0, 1}, 0.0);
  REQUIRE(big.loss < 1e-12);

  REQUIRE_THROWS_AS(loss_and_grad(uniform, {0, 1, 9}, 0.0), ContractError);
  REQUIRE_THROWS_AS(loss_and_grad(uniform, labels, 1.0), ContractError);
}

TEST_CASE("loss gradient matches finite differences") {
  Rng rng(61);
  const int k = 6, b = 4;
  Mat logits = testutil::random_mat(rng, k, b, 2.0);
  std::vector<int> labels(b);
  for (int& l : labels) l = rng.uniform_int(0, k - 1);
  for (double smoothing : {0.0, 0.1}) {
    LossGrad lg = loss_and_grad(logits, labels, smoothing);
    auto f = [&](const std::vector<double>& theta) {
      Mat lt(k, b, theta);
      return loss_and_grad(lt, labels, smoothing).loss;
    };
    std::vector<double> fd = oracle::finite_diff(f, logits.data, 1e-5);
    Mat fd_mat(k, b, fd);
    REQUIRE(frob_norm(sub(fd_mat, lg.grad_logits)) < 1e-6);
  }
}

TEST_CASE("backward matches finite differences on an mlp") {
  Rng rng(62);
  ModelSpec spec = make_mlp(1, 3, 3, 3, 8);
  ImageBatch batch = random_image_batch(rng, 4, 1, 3, 3);
  std::vector<int> labels = {0, 2, 1, 2};
  check_gradients_fd(spec, batch, labels, 1e-6);
}

TEST_CASE("backward matches finite differences on a conv net") {
  Rng rng(63);
  ModelSpec spec = make_cnn(2, 5, 5, 3, 4);
  ImageBatch batch = random_image_batch(rng, 3, 2, 5, 5);
  std::vector<int> labels = {1, 0, 2};
  check_gradients_fd(spec, batch, labels, 1e-6);
}

TEST_CASE("backward matches finite differences on a patch embed net") {
  Rng rng(64);
  ModelSpec spec = make_patch_mlp(1, 6, 6, 3, 3, 10);
  ImageBatch batch = random_image_batch(rng, 3, 1, 6, 6);
  std::vector<int> labels = {2, 2, 0};
  check_gradients_fd(spec, batch, labels, 1e-6);
}

TEST_CASE("preconditioning only changes the first-layer weight gradient") {
  Rng rng(65);
  ModelSpec spec = make_mlp(1, 4, 4, 3, 10);
  ParamStore params = init_params(spec, 3);
  ImageBatch batch = random_image_batch(rng, 5, 1, 4, 4);
  std::vector<int> labels = {0, 1, 2, 1, 0};

  ForwardPass fp = forward(spec, params, batch);
  LossGrad lg = loss_and_grad(fp.logits, labels, 0.0);
  TrActConfig off;
  TrActConfig on;
  on.enabled = true;
  on.lambda = 0.1;
  BackwardResult bw_off = backward(spec, params, fp.cache, lg.grad_logits, off);
  BackwardResult bw_on = backward(spec, params, fp.cache, lg.grad_logits, on);

  REQUIRE(bw_off.first_layer_grad_kind == GradKind::Standard);
  REQUIRE(bw_on.first_layer_grad_kind == GradKind::Tract);
  // bias and deeper layers bit-identical
  REQUIRE(bw_off.grads[0].b.data == bw_on.grads[0].b.data);
  for (size_t li = 1; li < spec.layers.size(); ++li) {
    REQUIRE(bw_off.grads[li].w.data == bw_on.grads[li].w.data);
    REQUIRE(bw_off.grads[li].b.data == bw_on.grads[li].b.data);
  }
  // weight gradient equals the module-level routine on the cached tensors
  Mat recomputed = tract_grad(bw_on.grad_z, bw_on.x_unf, 0.1);
  REQUIRE(rel_frob_diff(bw_on.grads[0].w, recomputed) < 1e-9);
  // forward untouched by the backward configuration
  ForwardPass fp2 = forward(spec, params, batch);
  REQUIRE(fp.logits.data == fp2.logits.data);
}

TEST_CASE("init_params is seeded and Kaiming-scaled") {
  ModelSpec spec = make_mlp(1, 28, 28, 10);
  ParamStore a = init_params(spec, 42);
  ParamStore b = init_params(spec, 42);
  ParamStore c = init_params(spec, 43);
  REQUIRE(a.layers[0].w.data == b.layers[0].w.data);
  REQUIRE(a.layers[0].w.data != c.layers[0].w.data);
  REQUIRE(frob_norm(a.layers[0].b) == 0.0);

  // sample std over ~2e5 draws should sit near sqrt(2 / fan_in)
  const Mat& w = a.layers[0].w;
  double sum = 0.0, sumsq = 0.0;
  for (double v : w.data) {
    sum += v;
    sumsq += v * v;
  }
  const double mean = sum / w.data.size();
  const double sd = std::sqrt(sumsq / w.data.size() - mean * mean);
  const double want = std::sqrt(2.0 / 784.0);
  REQUIRE(sd == Catch::Approx(want).epsilon(0.2));
}

TEST_CASE("model validation rejects malformed stacks") {
  ModelSpec no_first;
  no_first.in_c = no_first.in_h = no_first.in_w = 1;
  no_first.layers = {LayerSpec::dense(1, 2), LayerSpec::softmax_ce(2, 0.0)};
  REQUIRE_THROWS_AS(validate_model(no_first), ContractError);

  ModelSpec two_first;
  two_first.in_c = two_first.in_h = two_first.in_w = 1;
  two_first.layers = {LayerSpec::first_dense(1, 2), LayerSpec::first_dense(2, 2),
                      LayerSpec::softmax_ce(2, 0.0)};
  REQUIRE_THROWS_AS(validate_model(two_first), ContractError);

  ModelSpec spec = make_mlp(1, 4, 4, 3);
  ParamStore params = init_params(spec, 1);
  ImageBatch wrong(2, 3, 4, 4);
  REQUIRE_THROWS_AS(forward(spec, params, wrong), ContractError);
}
