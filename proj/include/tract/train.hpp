#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "tract/data.hpp"
#include "tract/nn.hpp"
#include "tract/optim.hpp"
#include "tract/serialize.hpp"

namespace tract {

enum class DatasetKind { Mnist, Cifar10, Synth };
enum class ModelPreset { Mlp, Cnn, PatchMlp };
enum class ScheduleKind { Constant, Cosine, StepDecay };

inline const char* to_string(DatasetKind d) {
  switch (d) {
    case DatasetKind::Mnist: return "mnist";
    case DatasetKind::Cifar10: return "cifar10";
    case DatasetKind::Synth: return "synth";
  }
  return "?";
}
inline const char* to_string(ModelPreset m) {
  switch (m) {
    case ModelPreset::Mlp: return "mlp";
    case ModelPreset::Cnn: return "cnn";
    case ModelPreset::PatchMlp: return "patch-mlp";
  }
  return "?";
}
inline const char* to_string(ScheduleKind s) {
  switch (s) {
    case ScheduleKind::Constant: return "constant";
    case ScheduleKind::Cosine: return "cosine";
    case ScheduleKind::StepDecay: return "step";
  }
  return "?";
}
inline const char* to_string(OptKind o) {
  return o == OptKind::Sgd ? "sgd" : "adam";
}

struct RunConfig {
  DatasetKind dataset = DatasetKind::Synth;
  std::string data_dir = "data";
  ModelPreset model = ModelPreset::Mlp;
  int epochs = 10;
  int batch_size = 128;
  OptKind optimizer = OptKind::Sgd;
  bool route_first_layer = false;
  OptKind first_layer_optimizer = OptKind::Sgd;
  double base_lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0;
  ScheduleKind schedule = ScheduleKind::Constant;
  double lambda = 0.1;
  bool tract = false;
  StandardizeMode standardize = StandardizeMode::PerChannelStandard;
  double label_smoothing = -1.0;  // < 0: preset default
  uint64_t seed = 1;
  std::string out_dir;
  bool deterministic_timing = false;
  int limit_train = 0;  // 0 = full training split

  // synthetic dataset shape; the data itself is keyed by synth_data_seed so
  // different training seeds see the same dataset
  int synth_classes = 10;
  int synth_per_class = 1000;
  int synth_test_per_class = 200;
  int synth_c = 1, synth_h = 28, synth_w = 28;
  double synth_separation = 0.3;
  uint64_t synth_data_seed = 777;

  void validate() const {
    if (epochs < 1 || batch_size < 1) throw ContractError("config: epochs and batch size must be >= 1");
    if (!(base_lr > 0.0)) throw ContractError("config: lr must be > 0");
    if (!(lambda > 0.0)) throw ContractError("config: lambda must be > 0");
    if (momentum < 0.0 || momentum >= 1.0) throw ContractError("config: momentum must be in [0, 1)");
    if (weight_decay < 0.0) throw ContractError("config: weight decay must be >= 0");
  }
};

struct MetricsRow {
  std::string run_id;
  uint64_t seed = 0;
  int epoch = 0;
  std::string split;
  double loss = 0.0;
  double top1 = 0.0;
  double wall_seconds = 0.0;
  double lambda = 0.0;
  bool tract = false;
  double lr_now = 0.0;
};

struct TrainResult {
  std::string run_id;
  std::vector<MetricsRow> rows;
  ModelSpec model;
  ParamStore params;
  bool aborted = false;
};

inline std::string make_run_id(const RunConfig& cfg) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%s-%s-%s-lr%g-%s-s%llu",
                to_string(cfg.dataset), to_string(cfg.model),
                to_string(cfg.optimizer), cfg.base_lr,
                cfg.tract ? "tract" : "base",
                static_cast<unsigned long long>(cfg.seed));
  return buf;
}

struct DatasetPair {
  RawDataset train;
  RawDataset test;
};

inline DatasetPair load_dataset(const RunConfig& cfg) {
  DatasetPair pair;
  switch (cfg.dataset) {
    case DatasetKind::Mnist: {
      pair.train = load_idx(cfg.data_dir + "/train-images-idx3-ubyte",
                            cfg.data_dir + "/train-labels-idx1-ubyte");
      pair.test = load_idx(cfg.data_dir + "/t10k-images-idx3-ubyte",
                           cfg.data_dir + "/t10k-labels-idx1-ubyte");
      pair.train.classes = pair.test.classes = 10;
      break;
    }
    case DatasetKind::Cifar10: {
      RawDataset train;
      for (int i = 1; i <= 5; ++i) {
        train = concat_datasets(
            std::move(train),
            load_cifar10_bin(cfg.data_dir + "/data_batch_" + std::to_string(i) + ".bin"));
      }
      pair.train = std::move(train);
      pair.test = load_cifar10_bin(cfg.data_dir + "/test_batch.bin");
      break;
    }
    case DatasetKind::Synth: {
      RawDataset all = synth_blobs(
          cfg.synth_classes, cfg.synth_per_class + cfg.synth_test_per_class,
          cfg.synth_c, cfg.synth_h, cfg.synth_w, cfg.synth_data_seed,
          cfg.synth_separation);
      auto [train, test] = split_per_class(
          all, cfg.synth_classes, cfg.synth_per_class + cfg.synth_test_per_class,
          cfg.synth_per_class);
      pair.train = std::move(train);
      pair.test = std::move(test);
      break;
    }
  }
  if (cfg.limit_train > 0 && cfg.limit_train < pair.train.count) {
    pair.train = take_prefix(pair.train, cfg.limit_train);
  }
  return pair;
}

inline ModelSpec build_model(const RunConfig& cfg, const RawDataset& train) {
  const int classes = train.classes;
  const double smoothing_default = cfg.model == ModelPreset::PatchMlp ? 0.1 : 0.0;
  const double smoothing =
      cfg.label_smoothing >= 0.0 ? cfg.label_smoothing : smoothing_default;
  switch (cfg.model) {
    case ModelPreset::Mlp:
      return make_mlp(train.c, train.h, train.w, classes, 256, smoothing);
    case ModelPreset::Cnn:
      return make_cnn(train.c, train.h, train.w, classes, 32, smoothing);
    case ModelPreset::PatchMlp:
      return make_patch_mlp(train.c, train.h, train.w, classes, 4, 128, smoothing);
  }
  throw ContractError("build_model: bad preset");
}

namespace detail {
inline int count_top1(const Mat& logits, const std::vector<int>& labels) {
  int correct = 0;
  for (int j = 0; j < logits.cols; ++j) {
    int best = 0;
    double best_v = logits(0, j);
    for (int i = 1; i < logits.rows; ++i) {
      if (logits(i, j) > best_v) {
        best_v = logits(i, j);
        best = i;
      }
    }
    if (best == labels[j]) ++correct;
  }
  return correct;
}

struct EvalResult {
  double loss = 0.0;
  double top1 = 0.0;
};

inline EvalResult evaluate(const ModelSpec& spec, const ParamStore& params,
                           const RawDataset& ds, const Standardization& st,
                           double smoothing, int batch_size) {
  std::vector<int> order = sequential_indices(ds.count);
  double loss_sum = 0.0;
  long correct = 0;
  std::vector<int> labels;
  for (int from = 0; from < ds.count; from += batch_size) {
    const int count = std::min(batch_size, ds.count - from);
    ImageBatch batch = make_batch(ds, st, order, from, count, &labels);
    ForwardPass fp = forward(spec, params, batch);
    LossGrad lg = loss_and_grad(fp.logits, labels, smoothing);
    loss_sum += lg.loss * count;
    correct += count_top1(fp.logits, labels);
  }
  EvalResult out;
  out.loss = ds.count ? loss_sum / ds.count : 0.0;
  out.top1 = ds.count ? static_cast<double>(correct) / ds.count : 0.0;
  return out;
}
}  // namespace detail

// One full training run. Emits per-epoch train/test rows; epoch 0 is the
// pre-training evaluation (identical whether the preconditioner is enabled,
// since it never touches the forward pass).
inline TrainResult run_training(const RunConfig& cfg) {
  cfg.validate();
  TrainResult result;
  result.run_id = make_run_id(cfg);

  DatasetPair data = load_dataset(cfg);
  if (data.train.count < 1) throw FormatError("training split is empty");
  Standardization st = fit_standardization(data.train, cfg.standardize);

  result.model = build_model(cfg, data.train);
  result.params = init_params(result.model, cfg.seed);
  const double smoothing = result.model.layers.back().label_smoothing;

  const int steps_per_epoch = (data.train.count + cfg.batch_size - 1) / cfg.batch_size;
  const long total_steps = static_cast<long>(steps_per_epoch) * cfg.epochs;
  LrSchedule sched;
  switch (cfg.schedule) {
    case ScheduleKind::Constant:
      sched = LrSchedule::constant();
      break;
    case ScheduleKind::Cosine:
      sched = LrSchedule::cosine(total_steps);
      break;
    case ScheduleKind::StepDecay:
      sched = LrSchedule::step_decay({total_steps / 3, 2 * total_steps / 3}, 0.1);
      break;
  }

  OptimizerRouting routing;
  routing.rest.kind = cfg.optimizer;
  routing.rest.momentum = cfg.momentum;
  routing.rest.weight_decay = cfg.weight_decay;
  if (cfg.route_first_layer) {
    routing.split_first = true;
    routing.first = routing.rest;
    routing.first.kind = cfg.first_layer_optimizer;
  }
  RoutedOptimizer opt = RoutedOptimizer::make(routing, result.model.layers.size());

  TrActConfig tr;
  tr.enabled = cfg.tract;
  tr.lambda = cfg.lambda;

  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    if (cfg.deterministic_timing) return 0.0;
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };
  auto push_row = [&](int epoch, const char* split, double loss, double top1,
                      double lr_now) {
    MetricsRow row;
    row.run_id = result.run_id;
    row.seed = cfg.seed;
    row.epoch = epoch;
    row.split = split;
    row.loss = loss;
    row.top1 = top1;
    row.wall_seconds = elapsed();
    row.lambda = cfg.lambda;
    row.tract = cfg.tract;
    row.lr_now = lr_now;
    result.rows.push_back(std::move(row));
  };

  // Pre-training evaluation.
  {
    detail::EvalResult tr_eval = detail::evaluate(result.model, result.params,
                                                  data.train, st, smoothing,
                                                  cfg.batch_size);
    push_row(0, "train", tr_eval.loss, tr_eval.top1, lr_at(sched, 0, cfg.base_lr));
    detail::EvalResult te_eval = detail::evaluate(result.model, result.params,
                                                  data.test, st, smoothing,
                                                  cfg.batch_size);
    push_row(0, "test", te_eval.loss, te_eval.top1, lr_at(sched, 0, cfg.base_lr));
  }

  long step = 0;
  std::vector<int> labels;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<int> order = shuffled_indices(data.train.count, cfg.seed, epoch);
    double loss_sum = 0.0;
    long correct = 0;
    double lr_now = cfg.base_lr;
    for (int from = 0; from < data.train.count; from += cfg.batch_size) {
      const int count = std::min(cfg.batch_size, data.train.count - from);
      ImageBatch batch = make_batch(data.train, st, order, from, count, &labels);
      ForwardPass fp = forward(result.model, result.params, batch);
      LossGrad lg = loss_and_grad(fp.logits, labels, smoothing);
      if (!std::isfinite(lg.loss)) {
        push_row(epoch, "train", lg.loss, 0.0, lr_now);
        result.aborted = true;
        return result;
      }
      loss_sum += lg.loss * count;
      correct += detail::count_top1(fp.logits, labels);
      BackwardResult bw = backward(result.model, result.params, fp.cache,
                                   lg.grad_logits, tr);
      lr_now = lr_at(sched, step, cfg.base_lr);
      opt.step(result.params, bw.grads, lr_now);
      ++step;
    }
    push_row(epoch, "train", loss_sum / data.train.count,
             static_cast<double>(correct) / data.train.count, lr_now);
    detail::EvalResult te_eval = detail::evaluate(result.model, result.params,
                                                  data.test, st, smoothing,
                                                  cfg.batch_size);
    push_row(epoch, "test", te_eval.loss, te_eval.top1, lr_now);
  }
  return result;
}

inline void write_metrics_csv(const std::vector<MetricsRow>& rows,
                              const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot write metrics file: " + path);
  f << "run_id,seed,epoch,split,loss,top1,wall_seconds,lambda,tract,lr_now\n";
  char buf[256];
  for (const MetricsRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%llu,%d,%s,%.10g,%.6g,%.3f,%.10g,%d,%.10g\n",
                  r.run_id.c_str(), static_cast<unsigned long long>(r.seed),
                  r.epoch, r.split.c_str(), r.loss, r.top1, r.wall_seconds,
                  r.lambda, r.tract ? 1 : 0, r.lr_now);
    f << buf;
  }
}

struct BenchResult {
  double ms_per_step_off = 0.0;
  double ms_per_step_on = 0.0;
  double overhead_pct = 0.0;
};

// Times full optimization steps (forward + loss + backward + update) with
// the preconditioner off and on, identical batches and seeds. The two
// configurations are measured in alternating blocks and each side reports
// its best block, which keeps machine-load drift from biasing the ratio.
inline BenchResult bench_overhead(const RunConfig& cfg, int steps) {
  DatasetPair data = load_dataset(cfg);
  Standardization st = fit_standardization(data.train, cfg.standardize);
  ModelSpec spec = build_model(cfg, data.train);
  const double smoothing = spec.layers.back().label_smoothing;

  auto run_steps = [&](bool tract_on, int n_steps) {
    ParamStore params = init_params(spec, cfg.seed);
    OptimizerRouting routing;
    routing.rest.kind = cfg.optimizer;
    routing.rest.momentum = cfg.momentum;
    routing.rest.weight_decay = cfg.weight_decay;
    RoutedOptimizer opt = RoutedOptimizer::make(routing, spec.layers.size());
    TrActConfig tr;
    tr.enabled = tract_on;
    tr.lambda = cfg.lambda;
    std::vector<int> order = shuffled_indices(data.train.count, cfg.seed, 1);
    std::vector<int> labels;
    const auto t0 = std::chrono::steady_clock::now();
    int from = 0;
    for (int s = 0; s < n_steps; ++s) {
      if (from + cfg.batch_size > data.train.count) from = 0;
      ImageBatch batch = make_batch(data.train, st, order, from, cfg.batch_size, &labels);
      from += cfg.batch_size;
      ForwardPass fp = forward(spec, params, batch);
      LossGrad lg = loss_and_grad(fp.logits, labels, smoothing);
      BackwardResult bw = backward(spec, params, fp.cache, lg.grad_logits, tr);
      opt.step(params, bw.grads, cfg.base_lr);
    }
    const auto dt = std::chrono::steady_clock::now() - t0;
    return std::chrono::duration<double, std::milli>(dt).count() / n_steps;
  };

  constexpr int kBlocks = 5;
  const int block_steps = std::max(3, steps / kBlocks);
  run_steps(false, block_steps);  // warm up
  run_steps(true, block_steps);
  BenchResult out;
  out.ms_per_step_off = 1e300;
  out.ms_per_step_on = 1e300;
  for (int b = 0; b < kBlocks; ++b) {
    out.ms_per_step_off = std::min(out.ms_per_step_off, run_steps(false, block_steps));
    out.ms_per_step_on = std::min(out.ms_per_step_on, run_steps(true, block_steps));
  }
  out.overhead_pct =
      (out.ms_per_step_on - out.ms_per_step_off) / out.ms_per_step_off * 100.0;
  return out;
}

// Convenience used by the CLI: run, then drop metrics.csv and params.trct
// into the output directory.
inline TrainResult run_and_write(const RunConfig& cfg) {
  TrainResult res = run_training(cfg);
  if (!cfg.out_dir.empty()) {
    write_metrics_csv(res.rows, cfg.out_dir + "/metrics.csv");
    save_params(res.params, cfg.out_dir + "/params.trct");
  }
  return res;
}

}  // namespace tract
