#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "tract/data.hpp"
#include "tract/nn.hpp"
#include "tract/optim.hpp"

using namespace tract;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  fs::path dir = fs::temp_directory_path() / "tract_data_tests";
  fs::create_directories(dir);
  return dir;
}

void write_bytes(const fs::path& p, const std::vector<uint8_t>& bytes) {
  std::ofstream f(p, std::ios::binary);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
}

void put_be32(std::vector<uint8_t>& v, uint32_t x) {
  v.push_back(static_cast<uint8_t>(x >> 24));
  v.push_back(static_cast<uint8_t>(x >> 16));
  v.push_back(static_cast<uint8_t>(x >> 8));
  v.push_back(static_cast<uint8_t>(x));
}

}  // namespace

TEST_CASE("idx round trip on a hand-built fixture") {
  const fs::path dir = temp_dir();
  // 2 images of 2x2 with known pixels
  std::vector<uint8_t> img;
  put_be32(img, 0x00000803);
  put_be32(img, 2);
  put_be32(img, 2);
  put_be32(img, 2);
  const uint8_t pixels[8] = {0, 64, 128, 255, 1, 2, 3, 4};
  img.insert(img.end(), pixels, pixels + 8);
  std::vector<uint8_t> lbl;
  put_be32(lbl, 0x00000801);
  put_be32(lbl, 2);
  lbl.push_back(7);
  lbl.push_back(3);
  write_bytes(dir / "imgs", img);
  write_bytes(dir / "lbls", lbl);

  RawDataset ds = load_idx((dir / "imgs").string(), (dir / "lbls").string());
  REQUIRE(ds.count == 2);
  REQUIRE(ds.c == 1);
  REQUIRE(ds.h == 2);
  REQUIRE(ds.w == 2);
  for (int i = 0; i < 8; ++i) REQUIRE(ds.images[i] == pixels[i]);
  REQUIRE(ds.labels[0] == 7);
  REQUIRE(ds.labels[1] == 3);
}

TEST_CASE("idx loader rejects malformed files") {
  const fs::path dir = temp_dir();
  std::vector<uint8_t> bad_magic;
  put_be32(bad_magic, 0x00000777);
  put_be32(bad_magic, 0);
  put_be32(bad_magic, 2);
  put_be32(bad_magic, 2);
  write_bytes(dir / "bad_magic", bad_magic);

  std::vector<uint8_t> lbl;
  put_be32(lbl, 0x00000801);
  put_be32(lbl, 0);
  write_bytes(dir / "lbl0", lbl);

  REQUIRE_THROWS_AS(load_idx((dir / "bad_magic").string(), (dir / "lbl0").string()),
                    FormatError);

  // truncated payload: header promises 2 images, provide 3 bytes
  std::vector<uint8_t> trunc;
  put_be32(trunc, 0x00000803);
  put_be32(trunc, 2);
  put_be32(trunc, 2);
  put_be32(trunc, 2);
  trunc.push_back(1);
  trunc.push_back(2);
  trunc.push_back(3);
  write_bytes(dir / "trunc", trunc);
  try {
    load_idx((dir / "trunc").string(), (dir / "lbl0").string());
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    // must name expected vs actual byte counts
    REQUIRE(std::string(e.what()).find("expected 8") != std::string::npos);
    REQUIRE(std::string(e.what()).find("found 3") != std::string::npos);
  }

  REQUIRE_THROWS_AS(load_idx((dir / "does_not_exist").string(),
                             (dir / "lbl0").string()),
                    FormatError);
}

TEST_CASE("cifar10 loader on a synthetic two-record file") {
  const fs::path dir = temp_dir();
  std::vector<uint8_t> buf;
  for (int rec = 0; rec < 2; ++rec) {
    buf.push_back(static_cast<uint8_t>(rec + 1));  // labels 1, 2
    for (int i = 0; i < 3072; ++i) {
      buf.push_back(static_cast<uint8_t>((rec * 31 + i) % 256));
    }
  }
  write_bytes(dir / "two.bin", buf);
  RawDataset ds = load_cifar10_bin((dir / "two.bin").string());
  REQUIRE(ds.count == 2);
  REQUIRE(ds.labels[0] == 1);
  REQUIRE(ds.labels[1] == 2);
  REQUIRE(ds.images[0] == 0);
  REQUIRE(ds.images[3072 + 5] == static_cast<uint8_t>((31 + 5) % 256));

  write_bytes(dir / "empty.bin", {});
  RawDataset empty = load_cifar10_bin((dir / "empty.bin").string());
  REQUIRE(empty.count == 0);

  std::vector<uint8_t> short_file(3072, 0);
  write_bytes(dir / "short.bin", short_file);
  REQUIRE_THROWS_AS(load_cifar10_bin((dir / "short.bin").string()), FormatError);
}

TEST_CASE("standardization modes") {
  RawDataset ds = synth_blobs(3, 40, 2, 4, 4, 9);

  Standardization st = fit_standardization(ds, StandardizeMode::PerChannelStandard);
  std::vector<int> all = sequential_indices(ds.count);
  ImageBatch batch = make_batch(ds, st, all, 0, ds.count, nullptr);
  // recompute per-channel stats of the standardized output
  const size_t plane = 16;
  for (int ci = 0; ci < 2; ++ci) {
    double sum = 0.0, sumsq = 0.0;
    for (int ex = 0; ex < ds.count; ++ex) {
      for (size_t p = 0; p < plane; ++p) {
        const double v = batch.data[((static_cast<size_t>(ex) * 2) + ci) * plane + p];
        sum += v;
        sumsq += v * v;
      }
    }
    const double n = ds.count * plane;
    const double mean = sum / n;
    const double sd = std::sqrt(sumsq / n - mean * mean);
    REQUIRE(std::abs(mean) < 1e-6);
    REQUIRE(std::abs(sd - 1.0) < 1e-6);
  }

  Standardization r255 = fit_standardization(ds, StandardizeMode::Range0255);
  ImageBatch raw = make_batch(ds, r255, all, 0, 2, nullptr);
  for (size_t i = 0; i < raw.data.size(); ++i) {
    REQUIRE(raw.data[i] == static_cast<double>(ds.images[i]));
  }

  RawDataset flat = ds;
  for (auto& b : flat.images) b = 0;  // constant zero image
  Standardization r01 = fit_standardization(flat, StandardizeMode::Range01);
  ImageBatch zeros = make_batch(flat, r01, all, 0, 2, nullptr);
  for (double v : zeros.data) REQUIRE(v == 0.0);

  REQUIRE_THROWS_AS(fit_standardization(flat, StandardizeMode::PerChannelStandard),
                    FormatError);
}

TEST_CASE("shuffled batches are seeded and cover the dataset") {
  std::vector<int> a = shuffled_indices(100, 5, 2);
  std::vector<int> b = shuffled_indices(100, 5, 2);
  std::vector<int> c = shuffled_indices(100, 5, 3);
  REQUIRE(a == b);
  REQUIRE(a != c);

  std::map<int, int> counts;
  for (int v : a) ++counts[v];
  REQUIRE(counts.size() == 100);
  for (auto& [k, n] : counts) REQUIRE(n == 1);
}

TEST_CASE("synth blobs determinism and separability") {
  RawDataset a = synth_blobs(4, 10, 1, 5, 5, 31);
  RawDataset b = synth_blobs(4, 10, 1, 5, 5, 31);
  REQUIRE(a.images == b.images);
  REQUIRE(a.labels == b.labels);

  RawDataset empty = synth_blobs(4, 0, 1, 5, 5, 31);
  REQUIRE(empty.count == 0);

  // separation well above the noise: a one-layer softmax classifier
  // separates the blobs perfectly
  RawDataset train = synth_blobs(3, 60, 1, 6, 6, 17, 8.0);
  Standardization st = fit_standardization(train, StandardizeMode::PerChannelStandard);
  ModelSpec spec;
  spec.in_c = 1;
  spec.in_h = 6;
  spec.in_w = 6;
  spec.layers = {LayerSpec::first_dense(36, 3), LayerSpec::softmax_ce(3, 0.0)};
  ParamStore params = init_params(spec, 2);
  OptimizerRouting routing;
  routing.rest.momentum = 0.9;
  RoutedOptimizer opt = RoutedOptimizer::make(routing, spec.layers.size());

  std::vector<int> labels;
  for (int epoch = 1; epoch <= 20; ++epoch) {
    std::vector<int> order = shuffled_indices(train.count, 1, epoch);
    for (int from = 0; from < train.count; from += 32) {
      const int count = std::min(32, train.count - from);
      ImageBatch batch = make_batch(train, st, order, from, count, &labels);
      ForwardPass fp = forward(spec, params, batch);
      LossGrad lg = loss_and_grad(fp.logits, labels, 0.0);
      BackwardResult bw = backward(spec, params, fp.cache, lg.grad_logits, {});
      opt.step(params, bw.grads, 0.1);
    }
  }
  std::vector<int> all = sequential_indices(train.count);
  ImageBatch full = make_batch(train, st, all, 0, train.count, &labels);
  ForwardPass fp = forward(spec, params, full);
  int correct = 0;
  for (int j = 0; j < fp.logits.cols; ++j) {
    int best = 0;
    for (int i = 1; i < 3; ++i) {
      if (fp.logits(i, j) > fp.logits(best, j)) best = i;
    }
    if (best == labels[j]) ++correct;
  }
  REQUIRE(correct == train.count);
}

TEST_CASE("per-class split keeps layouts and counts") {
  RawDataset all = synth_blobs(3, 10, 1, 2, 2, 5);
  auto [head, tail] = split_per_class(all, 3, 10, 8);
  REQUIRE(head.count == 24);
  REQUIRE(tail.count == 6);
  // head keeps the first 8 of class 0 verbatim
  for (size_t i = 0; i < 8 * head.example_size(); ++i) {
    REQUIRE(head.images[i] == all.images[i]);
  }
  int class_counts[3] = {0, 0, 0};
  for (uint8_t l : tail.labels) ++class_counts[l];
  for (int k = 0; k < 3; ++k) REQUIRE(class_counts[k] == 2);
}
