// Command-line front end: train / verify / inspect / bench.
//
// Exit codes: 0 success, 1 check failure or aborted run, 2 configuration
// error, 3 data error.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tract/train.hpp"
#include "tract/verify.hpp"

namespace {

using namespace tract;

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitConfigError = 2;
constexpr int kExitDataError = 3;

DatasetKind parse_dataset(const std::string& s) {
  if (s == "mnist") return DatasetKind::Mnist;
  if (s == "cifar10") return DatasetKind::Cifar10;
  if (s == "synth") return DatasetKind::Synth;
  throw ContractError("unknown dataset: " + s);
}
ModelPreset parse_model(const std::string& s) {
  if (s == "mlp") return ModelPreset::Mlp;
  if (s == "cnn") return ModelPreset::Cnn;
  if (s == "patch-mlp") return ModelPreset::PatchMlp;
  throw ContractError("unknown model preset: " + s);
}
OptKind parse_opt(const std::string& s) {
  if (s == "sgd") return OptKind::Sgd;
  if (s == "adam") return OptKind::Adam;
  throw ContractError("unknown optimizer: " + s);
}
ScheduleKind parse_schedule(const std::string& s) {
  if (s == "constant") return ScheduleKind::Constant;
  if (s == "cosine") return ScheduleKind::Cosine;
  if (s == "step") return ScheduleKind::StepDecay;
  throw ContractError("unknown schedule: " + s);
}
StandardizeMode parse_standardize(const std::string& s) {
  if (s == "standard") return StandardizeMode::PerChannelStandard;
  if (s == "range01") return StandardizeMode::Range01;
  if (s == "range0255") return StandardizeMode::Range0255;
  throw ContractError("unknown standardization mode: " + s);
}
bool parse_on_off(const std::string& s) {
  if (s == "on" || s == "true" || s == "1") return true;
  if (s == "off" || s == "false" || s == "0") return false;
  throw ContractError("expected on/off, got: " + s);
}

// String-typed view of a RunConfig, shared by the flag parser and the
// key=value config file. Flags win over file entries.
struct ConfigText {
  std::string dataset = "synth";
  std::string data_dir = "data";
  std::string model = "mlp";
  int epochs = 10;
  int batch_size = 128;
  std::string optimizer = "sgd";
  std::string first_layer_optimizer;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::string schedule = "constant";
  double lambda = 0.1;
  std::string tract = "off";
  std::string standardize = "standard";
  double label_smoothing = -1.0;
  uint64_t seed = 1;
  std::string out;
  bool deterministic_timing = false;
  int limit_train = 0;
  int synth_classes = 10;
  int synth_per_class = 1000;
  int synth_test_per_class = 200;
  int synth_c = 1, synth_h = 28, synth_w = 28;
  double synth_separation = 0.3;
  uint64_t synth_data_seed = 777;

  RunConfig to_run_config() const {
    RunConfig cfg;
    cfg.dataset = parse_dataset(dataset);
    cfg.data_dir = data_dir;
    cfg.model = parse_model(model);
    cfg.epochs = epochs;
    cfg.batch_size = batch_size;
    cfg.optimizer = parse_opt(optimizer);
    if (!first_layer_optimizer.empty()) {
      cfg.route_first_layer = true;
      cfg.first_layer_optimizer = parse_opt(first_layer_optimizer);
    }
    cfg.base_lr = lr;
    cfg.momentum = momentum;
    cfg.weight_decay = weight_decay;
    cfg.schedule = parse_schedule(schedule);
    cfg.lambda = lambda;
    cfg.tract = parse_on_off(tract);
    cfg.standardize = parse_standardize(standardize);
    cfg.label_smoothing = label_smoothing;
    cfg.seed = seed;
    cfg.out_dir = out;
    cfg.deterministic_timing = deterministic_timing;
    cfg.limit_train = limit_train;
    cfg.synth_classes = synth_classes;
    cfg.synth_per_class = synth_per_class;
    cfg.synth_test_per_class = synth_test_per_class;
    cfg.synth_c = synth_c;
    cfg.synth_h = synth_h;
    cfg.synth_w = synth_w;
    cfg.synth_separation = synth_separation;
    cfg.synth_data_seed = synth_data_seed;
    cfg.validate();
    return cfg;
  }
};

void apply_kv(ConfigText& c, const std::string& key, const std::string& value) {
  if (key == "dataset") c.dataset = value;
  else if (key == "data-dir") c.data_dir = value;
  else if (key == "model") c.model = value;
  else if (key == "epochs") c.epochs = std::stoi(value);
  else if (key == "batch-size") c.batch_size = std::stoi(value);
  else if (key == "optimizer") c.optimizer = value;
  else if (key == "first-layer-optimizer") c.first_layer_optimizer = value;
  else if (key == "lr") c.lr = std::stod(value);
  else if (key == "momentum") c.momentum = std::stod(value);
  else if (key == "weight-decay") c.weight_decay = std::stod(value);
  else if (key == "schedule") c.schedule = value;
  else if (key == "lambda") c.lambda = std::stod(value);
  else if (key == "tract") c.tract = value;
  else if (key == "standardize") c.standardize = value;
  else if (key == "label-smoothing") c.label_smoothing = std::stod(value);
  else if (key == "seed") c.seed = std::stoull(value);
  else if (key == "out") c.out = value;
  else if (key == "deterministic-timing") c.deterministic_timing = parse_on_off(value);
  else if (key == "limit-train") c.limit_train = std::stoi(value);
  else if (key == "synth-classes") c.synth_classes = std::stoi(value);
  else if (key == "synth-per-class") c.synth_per_class = std::stoi(value);
  else if (key == "synth-test-per-class") c.synth_test_per_class = std::stoi(value);
  else if (key == "synth-c") c.synth_c = std::stoi(value);
  else if (key == "synth-h") c.synth_h = std::stoi(value);
  else if (key == "synth-w") c.synth_w = std::stoi(value);
  else if (key == "synth-separation") c.synth_separation = std::stod(value);
  else if (key == "synth-data-seed") c.synth_data_seed = std::stoull(value);
  else throw ContractError("unknown config key: " + key);
}

void load_config_file(ConfigText& c, const std::string& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("cannot open config file: " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t\r");
    line = line.substr(first, last - first + 1);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ContractError(path + ":" + std::to_string(lineno) +
                          ": expected key=value");
    }
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t");
      const auto b = s.find_last_not_of(" \t");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    apply_kv(c, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

void add_config_flags(CLI::App* cmd, ConfigText& c) {
  cmd->add_option("--dataset", c.dataset, "mnist | cifar10 | synth");
  cmd->add_option("--data-dir", c.data_dir, "directory with dataset files");
  cmd->add_option("--model", c.model, "mlp | cnn | patch-mlp");
  cmd->add_option("--epochs", c.epochs);
  cmd->add_option("--batch-size", c.batch_size);
  cmd->add_option("--optimizer", c.optimizer, "sgd | adam");
  cmd->add_option("--first-layer-optimizer", c.first_layer_optimizer,
                  "route layer 0 to a different optimizer");
  cmd->add_option("--lr", c.lr, "base learning rate");
  cmd->add_option("--momentum", c.momentum);
  cmd->add_option("--weight-decay", c.weight_decay);
  cmd->add_option("--schedule", c.schedule, "constant | cosine | step");
  cmd->add_option("--lambda", c.lambda, "preconditioner ridge strength");
  cmd->add_option("--tract", c.tract, "on | off");
  cmd->add_option("--standardize", c.standardize,
                  "standard | range01 | range0255");
  cmd->add_option("--label-smoothing", c.label_smoothing);
  cmd->add_option("--seed", c.seed);
  cmd->add_option("--out", c.out, "output directory for metrics/params");
  cmd->add_flag("--deterministic-timing", c.deterministic_timing,
                "write 0 into the wall_seconds column (reproducible output)");
  cmd->add_option("--limit-train", c.limit_train, "cap the training split");
  cmd->add_option("--synth-classes", c.synth_classes);
  cmd->add_option("--synth-per-class", c.synth_per_class);
  cmd->add_option("--synth-test-per-class", c.synth_test_per_class);
  cmd->add_option("--synth-c", c.synth_c);
  cmd->add_option("--synth-h", c.synth_h);
  cmd->add_option("--synth-w", c.synth_w);
  cmd->add_option("--synth-separation", c.synth_separation);
  cmd->add_option("--synth-data-seed", c.synth_data_seed);
}

int cmd_train(const ConfigText& text) {
  RunConfig cfg = text.to_run_config();
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
  }
  TrainResult res = run_and_write(cfg);
  for (const MetricsRow& r : res.rows) {
    std::printf("%-32s epoch %3d %-5s loss %.6f top1 %.4f lr %.5g\n",
                r.run_id.c_str(), r.epoch, r.split.c_str(), r.loss, r.top1,
                r.lr_now);
  }
  if (res.aborted) {
    std::fprintf(stderr, "run aborted: non-finite loss\n");
    return kExitCheckFailed;
  }
  return kExitOk;
}

int cmd_verify(const std::string& level, uint64_t seed) {
  VerifyOptions opt;
  if (level == "quick") {
    opt.full = false;
  } else if (level == "full") {
    opt.full = true;
  } else {
    throw ContractError("verify level must be quick or full");
  }
  opt.seed = seed;
  std::vector<CheckResult> results = run_verification(opt);
  bool all_pass = true;
  for (const CheckResult& r : results) {
    all_pass &= r.pass;
    std::printf("%-28s %s  max-residual %.3e  (%.2fs)  %s\n", r.id.c_str(),
                r.pass ? "PASS" : "FAIL", r.stat, r.seconds, r.detail.c_str());
  }
  std::printf("%zu checks, %s\n", results.size(),
              all_pass ? "all passed" : "FAILURES present");
  return all_pass ? kExitOk : kExitCheckFailed;
}

// One batch under the microscope: gradient and update norms, alignment of
// the induced pre-activation update, gram conditioning, and the cost of the
// extra solve relative to a plain gradient.
int cmd_inspect(const ConfigText& text, int batch_index) {
  RunConfig cfg = text.to_run_config();
  DatasetPair data = load_dataset(cfg);
  Standardization st = fit_standardization(data.train, cfg.standardize);
  ModelSpec spec = build_model(cfg, data.train);
  ParamStore params = init_params(spec, cfg.seed);

  const int steps = (data.train.count + cfg.batch_size - 1) / cfg.batch_size;
  if (batch_index < 0 || batch_index >= steps) {
    throw ContractError("batch index out of range, have " + std::to_string(steps) +
                        " batches");
  }
  std::vector<int> order = shuffled_indices(data.train.count, cfg.seed, 1);
  std::vector<int> labels;
  const int from = batch_index * cfg.batch_size;
  const int count = std::min(cfg.batch_size, data.train.count - from);
  ImageBatch batch = make_batch(data.train, st, order, from, count, &labels);

  ForwardPass fp = forward(spec, params, batch);
  LossGrad lg = loss_and_grad(fp.logits, labels, spec.layers.back().label_smoothing);
  BackwardResult bw = backward(spec, params, fp.cache, lg.grad_logits, {});
  const Mat& gz = bw.grad_z;
  const Mat& x = bw.x_unf;

  const double eta = cfg.base_lr;
  Mat dz_std = scale(matmul(standard_grad(gz, x), x), -eta);
  Mat dz_tract = tract_update_z(gz, x, cfg.lambda, eta);
  Mat neg_gz = scale(gz, -1.0);

  auto cosine = [](const Mat& a, const Mat& b) {
    double dot = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.data.size(); ++i) {
      dot += a.data[i] * b.data[i];
      na += a.data[i] * a.data[i];
      nb += b.data[i] * b.data[i];
    }
    return (na == 0 || nb == 0) ? 0.0 : dot / std::sqrt(na * nb);
  };

  GramMatrix gm = gram(x, cfg.lambda);
  const double sig_max = spectral_norm(gm.G);
  // smallest eigenvalue by inverse power iteration through the factor
  Mat v(gm.n, 1);
  for (int i = 0; i < gm.n; ++i) v(i, 0) = 1.0 / std::sqrt(double(gm.n));
  double inv_eig = 0.0;
  for (int it = 0; it < 100; ++it) {
    v = chol_solve(gm.factor, v);
    inv_eig = frob_norm(v);
    v = scale(v, 1.0 / inv_eig);
  }
  const double sig_min = 1.0 / inv_eig;

  using clock = std::chrono::steady_clock;
  auto time_ms = [](auto&& fn, int reps) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
      const auto t0 = clock::now();
      fn();
      best = std::min(best,
                      std::chrono::duration<double, std::milli>(clock::now() - t0).count());
    }
    return best;
  };
  const double t_matmul = time_ms([&] { standard_grad(gz, x); }, 5);
  const double t_solve = time_ms(
      [&] {
        GramMatrix g2 = gram(x, cfg.lambda);
        tract_grad(gz, x, g2);
      },
      5);

  std::printf("batch %d (%d examples, unfolded %dx%d)\n", batch_index, count,
              x.rows, x.cols);
  std::printf("  |grad_z|_F            %.6e\n", frob_norm(gz));
  std::printf("  |dz_standard|_F       %.6e\n", frob_norm(dz_std));
  std::printf("  |dz_tract|_F          %.6e\n", frob_norm(dz_tract));
  std::printf("  cos(dz_tract, -grad_z)    %.6f\n", cosine(dz_tract, neg_gz));
  std::printf("  cos(dz_standard, -grad_z) %.6f\n", cosine(dz_std, neg_gz));
  std::printf("  gram condition estimate   %.6e (sigma %.3e / %.3e)\n",
              sig_max / sig_min, sig_max, sig_min);
  std::printf("  plain gradient        %.3f ms\n", t_matmul);
  std::printf("  gram+factor+solve     %.3f ms (%.2fx)\n", t_solve,
              t_solve / std::max(1e-9, t_matmul));
  return kExitOk;
}

// Times full optimization steps with the preconditioner off and on.
int cmd_bench(const ConfigText& text, int steps) {
  RunConfig cfg = text.to_run_config();
  BenchResult r = bench_overhead(cfg, steps);
  std::printf("model %s, batch %d, %d timed steps\n", to_string(cfg.model),
              cfg.batch_size, steps);
  std::printf("  per-step baseline         %.4g ms\n", r.ms_per_step_off);
  std::printf("  per-step preconditioned   %.4g ms\n", r.ms_per_step_on);
  std::printf("  overhead                  %.3g%%\n", r.overhead_pct);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"first-layer gradient preconditioning training kit"};
  app.require_subcommand(1);

  ConfigText train_cfg, inspect_cfg, bench_cfg;
  std::string train_config_file, inspect_config_file, bench_config_file;
  std::string verify_level = "quick";
  uint64_t verify_seed = 99;
  int batch_index = 0;
  int bench_steps = 30;

  CLI::App* train = app.add_subcommand("train", "train a model, write metrics");
  train->add_option("--config", train_config_file, "key=value config file");
  add_config_flags(train, train_cfg);

  CLI::App* verify = app.add_subcommand("verify", "run the numerical check suite");
  verify->add_option("--level", verify_level, "quick | full");
  verify->add_option("--seed", verify_seed);

  CLI::App* inspect = app.add_subcommand("inspect", "diagnostics for one batch");
  inspect->add_option("--config", inspect_config_file, "key=value config file");
  inspect->add_option("--batch-index", batch_index);
  add_config_flags(inspect, inspect_cfg);

  CLI::App* bench = app.add_subcommand("bench", "per-step overhead measurement");
  bench->add_option("--config", bench_config_file, "key=value config file");
  bench->add_option("--steps", bench_steps);
  add_config_flags(bench, bench_cfg);

  // Config files seed the defaults; explicit flags then overwrite. Scan for
  // --config before the real parse so the file is applied first.
  try {
    for (int i = 1; i + 1 < argc; ++i) {
      if (std::string(argv[i]) == "--config") {
        const std::string path = argv[i + 1];
        if (argc > 1 && std::string(argv[1]) == "train") {
          load_config_file(train_cfg, path);
        } else if (argc > 1 && std::string(argv[1]) == "inspect") {
          load_config_file(inspect_cfg, path);
        } else if (argc > 1 && std::string(argv[1]) == "bench") {
          load_config_file(bench_cfg, path);
        }
      }
    }
    CLI11_PARSE(app, argc, argv);
  } catch (const FormatError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitDataError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfigError;
  }

  try {
    if (train->parsed()) return cmd_train(train_cfg);
    if (verify->parsed()) return cmd_verify(verify_level, verify_seed);
    if (inspect->parsed()) return cmd_inspect(inspect_cfg, batch_index);
    if (bench->parsed()) return cmd_bench(bench_cfg, bench_steps);
  } catch (const FormatError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitDataError;
  } catch (const NotPositiveDefinite& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kExitCheckFailed;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfigError;
  }
  return kExitConfigError;
}
