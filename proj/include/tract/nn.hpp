#pragma once

// Minimal feed-forward stack with explicit forward/backward. Layer 0 is
// always the embedding layer (dense, convolutional, or patch projection);
// everything behind it is trained conventionally, and the first-layer
// weight gradient is the single place the preconditioner hooks in.

#include <cmath>
#include <string>
#include <vector>

#include "tract/mat.hpp"
#include "tract/rng.hpp"
#include "tract/tract.hpp"
#include "tract/unfold.hpp"

namespace tract {

enum class LayerKind {
  FirstDense,
  FirstConv,
  FirstPatchEmbed,
  Dense,
  ReLU,
  GlobalAvgPool,
  SoftmaxCrossEntropy,
};

struct LayerSpec {
  LayerKind kind = LayerKind::Dense;
  int in = 0;
  int out = 0;          // dense width / conv out-channels / patch embed dim
  ConvGeom geom;        // FirstConv
  int patch = 0;        // FirstPatchEmbed
  int classes = 0;      // SoftmaxCrossEntropy
  double label_smoothing = 0.0;

  static LayerSpec first_dense(int in, int out) {
    LayerSpec l;
    l.kind = LayerKind::FirstDense;
    l.in = in;
    l.out = out;
    return l;
  }
  static LayerSpec first_conv(const ConvGeom& g, int out_channels) {
    LayerSpec l;
    l.kind = LayerKind::FirstConv;
    l.geom = g;
    l.out = out_channels;
    return l;
  }
  static LayerSpec first_patch_embed(int patch, int dim) {
    LayerSpec l;
    l.kind = LayerKind::FirstPatchEmbed;
    l.patch = patch;
    l.out = dim;
    return l;
  }
  static LayerSpec dense(int in, int out) {
    LayerSpec l;
    l.kind = LayerKind::Dense;
    l.in = in;
    l.out = out;
    return l;
  }
  static LayerSpec relu() {
    LayerSpec l;
    l.kind = LayerKind::ReLU;
    return l;
  }
  static LayerSpec global_avg_pool() {
    LayerSpec l;
    l.kind = LayerKind::GlobalAvgPool;
    return l;
  }
  static LayerSpec softmax_ce(int classes, double smoothing) {
    if (smoothing < 0.0 || smoothing >= 1.0) {
      throw ContractError("softmax_ce: label smoothing must be in [0, 1)");
    }
    LayerSpec l;
    l.kind = LayerKind::SoftmaxCrossEntropy;
    l.classes = classes;
    l.label_smoothing = smoothing;
    return l;
  }

  bool is_first() const {
    return kind == LayerKind::FirstDense || kind == LayerKind::FirstConv ||
           kind == LayerKind::FirstPatchEmbed;
  }
  bool has_params() const { return is_first() || kind == LayerKind::Dense; }
};

struct ModelSpec {
  int in_c = 0, in_h = 0, in_w = 0;
  std::vector<LayerSpec> layers;
};

inline void validate_model(const ModelSpec& spec) {
  if (spec.layers.empty()) throw ContractError("model: no layers");
  if (!spec.layers.front().is_first()) {
    throw ContractError("model: layer 0 must be an embedding layer");
  }
  for (size_t i = 1; i < spec.layers.size(); ++i) {
    if (spec.layers[i].is_first()) {
      throw ContractError("model: embedding layer allowed only at index 0");
    }
  }
  if (spec.layers.back().kind != LayerKind::SoftmaxCrossEntropy) {
    throw ContractError("model: last layer must define the loss head");
  }
  if (spec.in_c < 1 || spec.in_h < 1 || spec.in_w < 1) {
    throw ContractError("model: input dims must be >= 1");
  }
}

// Rows of the first-layer weight input (c*kh*kw, c*p^2, or c*h*w).
inline int first_layer_fan_in(const ModelSpec& spec) {
  const LayerSpec& l = spec.layers.front();
  switch (l.kind) {
    case LayerKind::FirstDense:
      return l.in;
    case LayerKind::FirstConv:
      return spec.in_c * l.geom.kh * l.geom.kw;
    case LayerKind::FirstPatchEmbed:
      return spec.in_c * l.patch * l.patch;
    default:
      throw ContractError("first_layer_fan_in: not an embedding layer");
  }
}

struct Param {
  Mat w;
  Mat b;  // (out x 1); empty for parameterless layers
};

struct ParamStore {
  std::vector<Param> layers;
  uint64_t seed = 0;
};

// Kaiming-uniform weights (bound sqrt(6 / fan_in)), zero biases.
inline ParamStore init_params(const ModelSpec& spec, uint64_t seed) {
  validate_model(spec);
  ParamStore store;
  store.seed = seed;
  store.layers.resize(spec.layers.size());
  for (size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    if (!l.has_params()) continue;
    const int fan_in = l.is_first() ? first_layer_fan_in(spec) : l.in;
    const int fan_out = l.out;
    const double bound = std::sqrt(6.0 / fan_in);
    Rng rng = Rng::keyed(seed, i);
    Mat w(fan_out, fan_in);
    for (double& v : w.data) v = rng.uniform(-bound, bound);
    store.layers[i].w = std::move(w);
    store.layers[i].b = Mat(fan_out, 1);
  }
  return store;
}

struct ForwardCache {
  Mat x_unf;                // first-layer unfolded input (n x B)
  Mat z;                    // first-layer pre-activations (m x B)
  std::vector<Mat> inputs;  // input seen by each layer (inputs[0] unused)
  int batch_images = 0;
  int positions = 1;  // spatial positions per image after layer 0
};

struct ForwardPass {
  Mat logits;
  ForwardCache cache;
};

namespace detail {
inline void add_bias(Mat& m, const Mat& b) {
  for (int i = 0; i < m.rows; ++i) {
    const double bi = b(i, 0);
    double* row = m.row(i);
    for (int j = 0; j < m.cols; ++j) row[j] += bi;
  }
}

inline Mat row_sums(const Mat& m) {
  Mat s(m.rows, 1);
  for (int i = 0; i < m.rows; ++i) {
    const double* row = m.row(i);
    double acc = 0.0;
    for (int j = 0; j < m.cols; ++j) acc += row[j];
    s(i, 0) = acc;
  }
  return s;
}
}  // namespace detail

// Forward pass caching everything backward needs. The cache (and the
// logits) are independent of whether the preconditioner is enabled; only
// backward differs.
inline ForwardPass forward(const ModelSpec& spec, const ParamStore& params,
                           const ImageBatch& batch) {
  validate_model(spec);
  if (batch.c != spec.in_c || batch.h != spec.in_h || batch.w != spec.in_w) {
    throw ContractError("forward: batch dims do not match model input");
  }
  ForwardPass fp;
  ForwardCache& cache = fp.cache;
  cache.inputs.resize(spec.layers.size());
  cache.batch_images = batch.b;

  const LayerSpec& first = spec.layers.front();
  PatchMatrix pm;
  switch (first.kind) {
    case LayerKind::FirstDense: {
      pm = flatten_dense(batch);
      if (pm.n != first.in) {
        throw ContractError("forward: dense input " + std::to_string(pm.n) +
                            " != declared " + std::to_string(first.in));
      }
      cache.positions = 1;
      break;
    }
    case LayerKind::FirstConv: {
      pm = im2col(batch, first.geom);
      cache.positions = pm.out_h * pm.out_w;
      break;
    }
    case LayerKind::FirstPatchEmbed: {
      pm = patchify(batch, first.patch);
      cache.positions = pm.out_h * pm.out_w;
      break;
    }
    default:
      throw ContractError("forward: bad first layer");
  }
  cache.x_unf = std::move(pm.data);

  Mat cur = matmul(params.layers[0].w, cache.x_unf);
  detail::add_bias(cur, params.layers[0].b);
  cache.z = cur;

  int positions = cache.positions;
  for (size_t i = 1; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    switch (l.kind) {
      case LayerKind::Dense: {
        if (cur.rows != l.in) {
          throw ContractError("forward: dense layer " + std::to_string(i) +
                              " expects " + std::to_string(l.in) + " rows, got " +
                              std::to_string(cur.rows));
        }
        cache.inputs[i] = cur;
        cur = matmul(params.layers[i].w, cur);
        detail::add_bias(cur, params.layers[i].b);
        break;
      }
      case LayerKind::ReLU: {
        cache.inputs[i] = cur;
        for (double& v : cur.data) v = v > 0.0 ? v : 0.0;
        break;
      }
      case LayerKind::GlobalAvgPool: {
        if (cur.cols != batch.b * positions) {
          throw ContractError("forward: pool expects b*positions columns");
        }
        cache.inputs[i] = cur;
        Mat pooled(cur.rows, batch.b);
        const double inv = 1.0 / positions;
        for (int r = 0; r < cur.rows; ++r) {
          for (int img = 0; img < batch.b; ++img) {
            double acc = 0.0;
            for (int p = 0; p < positions; ++p) {
              acc += cur(r, img * positions + p);
            }
            pooled(r, img) = acc * inv;
          }
        }
        cur = std::move(pooled);
        positions = 1;
        break;
      }
      case LayerKind::SoftmaxCrossEntropy: {
        if (i != spec.layers.size() - 1) {
          throw ContractError("forward: loss head must be last");
        }
        if (cur.rows != l.classes) {
          throw ContractError("forward: logits rows " + std::to_string(cur.rows) +
                              " != classes " + std::to_string(l.classes));
        }
        break;
      }
      default:
        throw ContractError("forward: embedding layer after index 0");
    }
  }
  fp.logits = std::move(cur);
  return fp;
}

struct LossGrad {
  double loss = 0.0;
  Mat grad_logits;
};

// Mean softmax cross-entropy with label smoothing; the gradient carries the
// 1/batch factor of the mean reduction.
inline LossGrad loss_and_grad(const Mat& logits, const std::vector<int>& labels,
                              double smoothing) {
  const int k = logits.rows;
  const int b = logits.cols;
  if (static_cast<int>(labels.size()) != b) {
    throw ContractError("loss_and_grad: label count != batch columns");
  }
  if (smoothing < 0.0 || smoothing >= 1.0) {
    throw ContractError("loss_and_grad: smoothing must be in [0, 1)");
  }
  LossGrad out;
  out.grad_logits = Mat(k, b);
  const double off = smoothing / k;
  const double on = 1.0 - smoothing + off;
  double total = 0.0;
  for (int j = 0; j < b; ++j) {
    const int label = labels[j];
    if (label < 0 || label >= k) {
      throw ContractError("loss_and_grad: label " + std::to_string(label) +
                          " out of range for " + std::to_string(k) + " classes");
    }
    double mx = logits(0, j);
    for (int i = 1; i < k; ++i) mx = std::max(mx, logits(i, j));
    double sum = 0.0;
    for (int i = 0; i < k; ++i) sum += std::exp(logits(i, j) - mx);
    const double lse = mx + std::log(sum);
    double ce = 0.0;
    for (int i = 0; i < k; ++i) {
      const double t = (i == label) ? on : off;
      const double p = std::exp(logits(i, j) - lse);
      ce -= t * (logits(i, j) - lse);
      out.grad_logits(i, j) = (p - t) / b;
    }
    total += ce;
  }
  out.loss = total / b;
  return out;
}

enum class GradKind { Standard, Tract };

struct BackwardResult {
  std::vector<Param> grads;
  GradKind first_layer_grad_kind = GradKind::Standard;
  Mat grad_z;   // gradient at the first-layer pre-activations (m x B)
  Mat x_unf;    // the unfolded input the first layer saw
};

// Reverse pass. With the preconditioner enabled only the layer-0 weight
// gradient changes: it becomes grad_z * x^T * (x x^T/B + lambda I)^{-1}.
// Bias gradients and all deeper layers are untouched. No gradient w.r.t.
// the network input is produced (layer 0 has nothing upstream).
inline BackwardResult backward(const ModelSpec& spec, const ParamStore& params,
                               const ForwardCache& cache, const Mat& grad_logits,
                               const TrActConfig& tract_cfg) {
  validate_model(spec);
  BackwardResult res;
  res.grads.resize(spec.layers.size());

  Mat g = grad_logits;
  int positions = 1;  // positions after pooling; walk restores pre-pool
  for (size_t idx = spec.layers.size(); idx-- > 1;) {
    const LayerSpec& l = spec.layers[idx];
    switch (l.kind) {
      case LayerKind::SoftmaxCrossEntropy:
        break;  // grad_logits already is d(loss)/d(logits)
      case LayerKind::Dense: {
        const Mat& input = cache.inputs[idx];
        res.grads[idx].w = matmul_bt(g, input);
        res.grads[idx].b = detail::row_sums(g);
        g = matmul(transpose(params.layers[idx].w), g);
        break;
      }
      case LayerKind::ReLU: {
        const Mat& pre = cache.inputs[idx];
        if (!pre.same_shape(g)) {
          throw ContractError("backward: relu cache shape mismatch");
        }
        for (size_t i = 0; i < g.data.size(); ++i) {
          if (pre.data[i] <= 0.0) g.data[i] = 0.0;
        }
        break;
      }
      case LayerKind::GlobalAvgPool: {
        positions = cache.positions;
        const double inv = 1.0 / positions;
        Mat spread(g.rows, cache.batch_images * positions);
        for (int r = 0; r < g.rows; ++r) {
          for (int img = 0; img < cache.batch_images; ++img) {
            const double v = g(r, img) * inv;
            for (int p = 0; p < positions; ++p) {
              spread(r, img * positions + p) = v;
            }
          }
        }
        g = std::move(spread);
        break;
      }
      default:
        throw ContractError("backward: unexpected layer");
    }
  }

  if (g.cols != cache.x_unf.cols) {
    throw ContractError("backward: first-layer gradient columns " +
                        std::to_string(g.cols) + " != unfolded batch " +
                        std::to_string(cache.x_unf.cols));
  }
  if (tract_cfg.enabled) {
    res.grads[0].w = tract_grad_fast(g, cache.x_unf, tract_cfg.lambda);
    res.first_layer_grad_kind = GradKind::Tract;
  } else {
    res.grads[0].w = standard_grad(g, cache.x_unf);
    res.first_layer_grad_kind = GradKind::Standard;
  }
  res.grads[0].b = detail::row_sums(g);
  res.grad_z = std::move(g);
  res.x_unf = cache.x_unf;
  return res;
}

// ---- model presets ------------------------------------------------------

inline ModelSpec make_mlp(int c, int h, int w, int classes, int hidden = 256,
                          double smoothing = 0.0) {
  ModelSpec m;
  m.in_c = c;
  m.in_h = h;
  m.in_w = w;
  m.layers = {
      LayerSpec::first_dense(c * h * w, hidden),
      LayerSpec::relu(),
      LayerSpec::dense(hidden, classes),
      LayerSpec::softmax_ce(classes, smoothing),
  };
  return m;
}

inline ModelSpec make_cnn(int c, int h, int w, int classes, int channels = 32,
                          double smoothing = 0.0) {
  ModelSpec m;
  m.in_c = c;
  m.in_h = h;
  m.in_w = w;
  ConvGeom g;
  g.kh = g.kw = 3;
  g.sh = g.sw = 1;
  g.ph = g.pw = 1;
  m.layers = {
      LayerSpec::first_conv(g, channels),
      LayerSpec::relu(),
      LayerSpec::global_avg_pool(),
      LayerSpec::dense(channels, classes),
      LayerSpec::softmax_ce(classes, smoothing),
  };
  return m;
}

inline ModelSpec make_patch_mlp(int c, int h, int w, int classes, int patch = 4,
                                int dim = 128, double smoothing = 0.1) {
  ModelSpec m;
  m.in_c = c;
  m.in_h = h;
  m.in_w = w;
  m.layers = {
      LayerSpec::first_patch_embed(patch, dim),
      LayerSpec::relu(),
      LayerSpec::global_avg_pool(),
      LayerSpec::dense(dim, classes),
      LayerSpec::softmax_ce(classes, smoothing),
  };
  return m;
}

}  // namespace tract
