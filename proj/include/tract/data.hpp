#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "tract/rng.hpp"
#include "tract/unfold.hpp"

namespace tract {

// Raw byte-valued dataset as loaded from disk (or synthesized): pixel bytes
// in batch-channel-row-column order plus one label byte per example.
struct RawDataset {
  int count = 0;
  int c = 0, h = 0, w = 0;
  int classes = 0;
  std::vector<uint8_t> images;
  std::vector<uint8_t> labels;
  std::string name;

  size_t example_size() const {
    return static_cast<size_t>(c) * h * w;
  }
};

namespace detail {
inline uint32_t read_be32(const uint8_t* p) {
  return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
         (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

inline std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open file: " + path);
  f.seekg(0, std::ios::end);
  const auto len = f.tellg();
  f.seekg(0, std::ios::beg);
  std::vector<uint8_t> buf(static_cast<size_t>(len));
  f.read(reinterpret_cast<char*>(buf.data()), len);
  if (!f) throw FormatError("read failed: " + path);
  return buf;
}
}  // namespace detail

// IDX pair (big-endian magic + dims + raw bytes). Images magic 0x00000803,
// labels magic 0x00000801.
inline RawDataset load_idx(const std::string& images_path,
                           const std::string& labels_path) {
  const std::vector<uint8_t> img = detail::read_file(images_path);
  if (img.size() < 16) {
    throw FormatError(images_path + ": truncated header, need 16 bytes, have " +
                      std::to_string(img.size()));
  }
  const uint32_t magic = detail::read_be32(img.data());
  if (magic != 0x00000803u) {
    throw FormatError(images_path + ": bad magic at byte 0 (expected 0x00000803)");
  }
  const uint32_t count = detail::read_be32(img.data() + 4);
  const uint32_t rows = detail::read_be32(img.data() + 8);
  const uint32_t cols = detail::read_be32(img.data() + 12);
  const size_t want = 16 + static_cast<size_t>(count) * rows * cols;
  if (img.size() != want) {
    throw FormatError(images_path + ": payload at byte 16: expected " +
                      std::to_string(want - 16) + " bytes, found " +
                      std::to_string(img.size() - 16));
  }

  const std::vector<uint8_t> lbl = detail::read_file(labels_path);
  if (lbl.size() < 8) {
    throw FormatError(labels_path + ": truncated header, need 8 bytes, have " +
                      std::to_string(lbl.size()));
  }
  if (detail::read_be32(lbl.data()) != 0x00000801u) {
    throw FormatError(labels_path + ": bad magic at byte 0 (expected 0x00000801)");
  }
  const uint32_t lcount = detail::read_be32(lbl.data() + 4);
  if (lbl.size() != 8 + static_cast<size_t>(lcount)) {
    throw FormatError(labels_path + ": payload at byte 8: expected " +
                      std::to_string(lcount) + " bytes, found " +
                      std::to_string(lbl.size() - 8));
  }
  if (lcount != count) {
    throw FormatError("idx pair: " + std::to_string(count) + " images vs " +
                      std::to_string(lcount) + " labels");
  }

  RawDataset ds;
  ds.count = static_cast<int>(count);
  ds.c = 1;
  ds.h = static_cast<int>(rows);
  ds.w = static_cast<int>(cols);
  ds.images.assign(img.begin() + 16, img.end());
  ds.labels.assign(lbl.begin() + 8, lbl.end());
  ds.classes = ds.labels.empty()
                   ? 0
                   : 1 + *std::max_element(ds.labels.begin(), ds.labels.end());
  ds.name = "idx";
  return ds;
}

// CIFAR-10 binary: records of 3073 bytes (label + 3x32x32 channel-major).
inline RawDataset load_cifar10_bin(const std::string& path) {
  const std::vector<uint8_t> buf = detail::read_file(path);
  constexpr size_t kRecord = 3073;
  if (buf.size() % kRecord != 0) {
    throw FormatError(path + ": length " + std::to_string(buf.size()) +
                      " not a multiple of " + std::to_string(kRecord));
  }
  RawDataset ds;
  ds.count = static_cast<int>(buf.size() / kRecord);
  ds.c = 3;
  ds.h = 32;
  ds.w = 32;
  ds.classes = 10;
  ds.name = "cifar10";
  ds.labels.reserve(ds.count);
  ds.images.reserve(buf.size() - ds.count);
  for (int i = 0; i < ds.count; ++i) {
    const uint8_t* rec = buf.data() + static_cast<size_t>(i) * kRecord;
    if (rec[0] > 9) {
      throw FormatError(path + ": record " + std::to_string(i) + " label " +
                        std::to_string(rec[0]) + " out of range");
    }
    ds.labels.push_back(rec[0]);
    ds.images.insert(ds.images.end(), rec + 1, rec + kRecord);
  }
  return ds;
}

enum class StandardizeMode { PerChannelStandard, Range01, Range0255 };

inline const char* to_string(StandardizeMode m) {
  switch (m) {
    case StandardizeMode::PerChannelStandard: return "standard";
    case StandardizeMode::Range01: return "range01";
    case StandardizeMode::Range0255: return "range0255";
  }
  return "?";
}

// Per-channel statistics are computed over the training split in [0,1]
// pixel space; the other modes need no stats.
struct Standardization {
  StandardizeMode mode = StandardizeMode::PerChannelStandard;
  std::vector<double> mean;
  std::vector<double> stdev;
};

inline Standardization fit_standardization(const RawDataset& train,
                                           StandardizeMode mode) {
  Standardization st;
  st.mode = mode;
  if (mode != StandardizeMode::PerChannelStandard) return st;
  st.mean.assign(train.c, 0.0);
  st.stdev.assign(train.c, 0.0);
  const size_t plane = static_cast<size_t>(train.h) * train.w;
  const size_t per_channel_count = static_cast<size_t>(train.count) * plane;
  if (per_channel_count == 0) throw FormatError("standardize: empty training split");
  for (int ci = 0; ci < train.c; ++ci) {
    double sum = 0.0, sumsq = 0.0;
    for (int ex = 0; ex < train.count; ++ex) {
      const uint8_t* base =
          train.images.data() + (static_cast<size_t>(ex) * train.c + ci) * plane;
      for (size_t p = 0; p < plane; ++p) {
        const double v = base[p] / 255.0;
        sum += v;
        sumsq += v * v;
      }
    }
    const double mean = sum / per_channel_count;
    const double var = std::max(0.0, sumsq / per_channel_count - mean * mean);
    const double sd = std::sqrt(var);
    if (!(sd > 0.0)) {
      throw FormatError("standardize: channel " + std::to_string(ci) +
                        " has zero standard deviation");
    }
    st.mean[ci] = mean;
    st.stdev[ci] = sd;
  }
  return st;
}

// Materializes the selected examples as an ImageBatch under the given mode.
inline ImageBatch make_batch(const RawDataset& ds, const Standardization& st,
                             const std::vector<int>& indices, int from, int count,
                             std::vector<int>* labels_out) {
  ImageBatch batch(count, ds.c, ds.h, ds.w);
  if (labels_out) labels_out->resize(count);
  const size_t plane = static_cast<size_t>(ds.h) * ds.w;
  for (int i = 0; i < count; ++i) {
    const int ex = indices[from + i];
    if (labels_out) (*labels_out)[i] = ds.labels[ex];
    for (int ci = 0; ci < ds.c; ++ci) {
      const uint8_t* src =
          ds.images.data() + (static_cast<size_t>(ex) * ds.c + ci) * plane;
      double* dst = &batch.data[((static_cast<size_t>(i) * ds.c) + ci) * plane];
      switch (st.mode) {
        case StandardizeMode::PerChannelStandard: {
          const double mean = st.mean[ci];
          const double inv_sd = 1.0 / st.stdev[ci];
          for (size_t p = 0; p < plane; ++p) {
            dst[p] = (src[p] / 255.0 - mean) * inv_sd;
          }
          break;
        }
        case StandardizeMode::Range01:
          for (size_t p = 0; p < plane; ++p) dst[p] = src[p] / 255.0;
          break;
        case StandardizeMode::Range0255:
          for (size_t p = 0; p < plane; ++p) dst[p] = src[p];
          break;
      }
    }
  }
  return batch;
}

// Epoch ordering: a Fisher-Yates shuffle keyed by (seed, epoch). The last
// partial batch is kept.
inline std::vector<int> shuffled_indices(int count, uint64_t seed, int epoch) {
  std::vector<int> idx(count);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng = Rng::keyed(seed, 0x10000u + static_cast<uint64_t>(epoch));
  rng.shuffle(idx);
  return idx;
}

inline std::vector<int> sequential_indices(int count) {
  std::vector<int> idx(count);
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

// Synthetic class blobs with image-like nuisance structure: Gaussian class
// centers, a strong per-example brightness component, per-example contrast
// jitter, and per-pixel dynamic range spread, quantized to bytes. Larger
// `separation` makes the classes linearly separable. Brightness and
// contrast dominate the raw variance without carrying class information,
// and a global channel standardization removes neither — the regime where
// first-layer updates proportional to pixel values hurt the most.
inline RawDataset synth_blobs(int classes, int per_class, int c, int h, int w,
                              uint64_t seed, double separation = 1.0) {
  if (classes < 1 || per_class < 0 || c < 1 || h < 1 || w < 1) {
    throw ContractError("synth_blobs: bad dimensions");
  }
  if (!(separation > 0.0)) throw ContractError("synth_blobs: separation must be > 0");
  RawDataset ds;
  ds.c = c;
  ds.h = h;
  ds.w = w;
  ds.classes = classes;
  ds.count = classes * per_class;
  ds.name = "synth";
  const size_t dim = ds.example_size();
  ds.images.reserve(static_cast<size_t>(ds.count) * dim);
  ds.labels.reserve(ds.count);

  Rng center_rng = Rng::keyed(seed, 1);
  std::vector<std::vector<double>> centers(classes, std::vector<double>(dim));
  for (auto& ctr : centers) {
    for (double& v : ctr) v = separation * center_rng.normal();
  }
  // Per-pixel gains, shared by all examples: brightness response and
  // dynamic range of the informative part.
  std::vector<double> bright_gain(dim);
  for (double& g : bright_gain) g = center_rng.uniform(0.5, 1.5);
  std::vector<double> pixel_scale(dim);
  for (double& s : pixel_scale) {
    s = std::clamp(std::exp(0.5 * center_rng.normal()), 0.25, 3.0);
  }

  constexpr double kAmplitude = 10.0;
  constexpr double kBrightness = 3.0;
  constexpr double kNoise = 1.0;
  Rng rng = Rng::keyed(seed, 2);
  for (int k = 0; k < classes; ++k) {
    for (int ex = 0; ex < per_class; ++ex) {
      const double brightness = kBrightness * rng.normal();
      const double contrast = rng.uniform(0.25, 1.75);
      for (size_t p = 0; p < dim; ++p) {
        const double unit = centers[k][p] + kNoise * rng.normal();
        const double v = 128.0 + kAmplitude * (brightness * bright_gain[p] +
                                               contrast * pixel_scale[p] * unit);
        const double q = std::nearbyint(std::clamp(v, 0.0, 255.0));
        ds.images.push_back(static_cast<uint8_t>(q));
      }
      ds.labels.push_back(static_cast<uint8_t>(k));
    }
  }
  return ds;
}

// First `head` examples of every class go to the first split. Assumes the
// class-major layout synth_blobs produces.
inline std::pair<RawDataset, RawDataset> split_per_class(const RawDataset& ds,
                                                         int classes,
                                                         int per_class,
                                                         int head) {
  if (head < 0 || head > per_class || classes * per_class != ds.count) {
    throw ContractError("split_per_class: bad split sizes");
  }
  RawDataset a = ds, b = ds;
  a.images.clear();
  a.labels.clear();
  b.images.clear();
  b.labels.clear();
  const size_t dim = ds.example_size();
  for (int k = 0; k < classes; ++k) {
    for (int ex = 0; ex < per_class; ++ex) {
      const int src = k * per_class + ex;
      RawDataset& dst = ex < head ? a : b;
      const uint8_t* base = ds.images.data() + static_cast<size_t>(src) * dim;
      dst.images.insert(dst.images.end(), base, base + dim);
      dst.labels.push_back(ds.labels[src]);
    }
  }
  a.count = classes * head;
  b.count = classes * (per_class - head);
  return {a, b};
}

inline RawDataset concat_datasets(RawDataset a, const RawDataset& b) {
  if (a.count == 0) return b;
  if (b.count == 0) return a;
  if (a.c != b.c || a.h != b.h || a.w != b.w) {
    throw ContractError("concat_datasets: dimension mismatch");
  }
  a.images.insert(a.images.end(), b.images.begin(), b.images.end());
  a.labels.insert(a.labels.end(), b.labels.begin(), b.labels.end());
  a.count += b.count;
  a.classes = std::max(a.classes, b.classes);
  return a;
}

// First `count` examples, in stored order.
inline RawDataset take_prefix(const RawDataset& ds, int count) {
  if (count < 0 || count > ds.count) throw ContractError("take_prefix: bad count");
  RawDataset out = ds;
  out.count = count;
  out.images.assign(ds.images.begin(),
                    ds.images.begin() + static_cast<size_t>(count) * ds.example_size());
  out.labels.assign(ds.labels.begin(), ds.labels.begin() + count);
  return out;
}

}  // namespace tract
