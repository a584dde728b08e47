#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "tract/mat.hpp"
#include "tract/nn.hpp"

namespace tract {

// ---- per-tensor update rules --------------------------------------------

// v <- momentum*v + g + wd*w;  w <- w - lr*v   (coupled weight decay)
inline void sgd_step(Mat& w, const Mat& g, Mat& velocity, double lr,
                     double momentum, double weight_decay) {
  if (!w.same_shape(g)) throw ContractError("sgd_step: grad shape mismatch");
  if (velocity.rows == 0) velocity = Mat(w.rows, w.cols);
  if (!velocity.same_shape(w)) throw ContractError("sgd_step: state shape mismatch");
  for (size_t i = 0; i < w.data.size(); ++i) {
    const double eff = g.data[i] + weight_decay * w.data[i];
    velocity.data[i] = momentum * velocity.data[i] + eff;
    w.data[i] -= lr * velocity.data[i];
  }
}

// Standard Adam with bias correction; weight decay is coupled (added to the
// gradient before the moment updates).
inline void adam_step(Mat& w, const Mat& g, Mat& m1, Mat& m2, long t, double lr,
                      double beta1, double beta2, double eps,
                      double weight_decay) {
  if (!w.same_shape(g)) throw ContractError("adam_step: grad shape mismatch");
  if (m1.rows == 0) m1 = Mat(w.rows, w.cols);
  if (m2.rows == 0) m2 = Mat(w.rows, w.cols);
  if (!m1.same_shape(w) || !m2.same_shape(w)) {
    throw ContractError("adam_step: state shape mismatch");
  }
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (size_t i = 0; i < w.data.size(); ++i) {
    const double eff = g.data[i] + weight_decay * w.data[i];
    m1.data[i] = beta1 * m1.data[i] + (1.0 - beta1) * eff;
    m2.data[i] = beta2 * m2.data[i] + (1.0 - beta2) * eff * eff;
    const double mhat = m1.data[i] / c1;
    const double vhat = m2.data[i] / c2;
    w.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

// ---- learning rate schedules --------------------------------------------

struct LrSchedule {
  enum class Kind { Constant, Cosine, StepDecay } kind = Kind::Constant;
  long total_steps = 0;
  std::vector<long> milestones;
  double factor = 0.1;

  static LrSchedule constant() { return {}; }
  static LrSchedule cosine(long total) {
    if (total < 1) throw ContractError("cosine schedule: total steps must be >= 1");
    LrSchedule s;
    s.kind = Kind::Cosine;
    s.total_steps = total;
    return s;
  }
  static LrSchedule step_decay(std::vector<long> milestones, double factor) {
    for (size_t i = 1; i < milestones.size(); ++i) {
      if (milestones[i] <= milestones[i - 1]) {
        throw ContractError("step_decay: milestones must be strictly increasing");
      }
    }
    LrSchedule s;
    s.kind = Kind::StepDecay;
    s.milestones = std::move(milestones);
    s.factor = factor;
    return s;
  }
};

inline double lr_at(const LrSchedule& s, long step, double base_lr) {
  switch (s.kind) {
    case LrSchedule::Kind::Constant:
      return base_lr;
    case LrSchedule::Kind::Cosine: {
      if (step < 0 || step > s.total_steps) {
        throw ContractError("lr_at: step outside schedule range");
      }
      const double frac = static_cast<double>(step) / s.total_steps;
      return base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * frac));
    }
    case LrSchedule::Kind::StepDecay: {
      double lr = base_lr;
      for (long m : s.milestones) {
        if (step >= m) lr *= s.factor;
      }
      return lr;
    }
  }
  return base_lr;
}

// ---- optimizer instances with per-layer ownership ------------------------

enum class OptKind { Sgd, Adam };

struct OptHyper {
  OptKind kind = OptKind::Sgd;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Owns the state buffers for a subset of layers; the trainer keeps one
// instance (or two, when the first layer is routed to a different rule).
class Optimizer {
 public:
  Optimizer() = default;
  Optimizer(const OptHyper& hp, size_t layer_count, std::vector<int> layer_ids)
      : hp_(hp), owned_(std::move(layer_ids)) {
    m1_.resize(layer_count);
    m2_.resize(layer_count);
  }

  void step(ParamStore& params, const std::vector<Param>& grads, double lr_now) {
    ++t_;
    for (int li : owned_) {
      Param& p = params.layers[li];
      const Param& g = grads[li];
      if (p.w.rows == 0) continue;
      if (hp_.kind == OptKind::Sgd) {
        sgd_step(p.w, g.w, m1_[li].w, lr_now, hp_.momentum, hp_.weight_decay);
        sgd_step(p.b, g.b, m1_[li].b, lr_now, hp_.momentum, hp_.weight_decay);
      } else {
        adam_step(p.w, g.w, m1_[li].w, m2_[li].w, t_, lr_now, hp_.beta1,
                  hp_.beta2, hp_.eps, hp_.weight_decay);
        adam_step(p.b, g.b, m1_[li].b, m2_[li].b, t_, lr_now, hp_.beta1,
                  hp_.beta2, hp_.eps, hp_.weight_decay);
      }
    }
  }

  const OptHyper& hyper() const { return hp_; }

 private:
  OptHyper hp_;
  std::vector<int> owned_;
  std::vector<Param> m1_;
  std::vector<Param> m2_;
  long t_ = 0;
};

// First layer may train under a different rule than the rest.
struct OptimizerRouting {
  OptHyper rest;
  bool split_first = false;
  OptHyper first;
};

struct RoutedOptimizer {
  Optimizer main;
  Optimizer first;
  bool split = false;

  static RoutedOptimizer make(const OptimizerRouting& r, size_t layer_count) {
    RoutedOptimizer out;
    out.split = r.split_first;
    std::vector<int> rest_ids;
    for (size_t i = r.split_first ? 1 : 0; i < layer_count; ++i) {
      rest_ids.push_back(static_cast<int>(i));
    }
    out.main = Optimizer(r.rest, layer_count, rest_ids);
    if (r.split_first) {
      out.first = Optimizer(r.first, layer_count, {0});
    }
    return out;
  }

  void step(ParamStore& params, const std::vector<Param>& grads, double lr_now) {
    main.step(params, grads, lr_now);
    if (split) first.step(params, grads, lr_now);
  }
};

}  // namespace tract
