// netwarp: dataset generation, training, evaluation, gradient checks and warp timing.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "netwarp/bench.hpp"
#include "netwarp/error.hpp"
#include "netwarp/experiment.hpp"
#include "netwarp/gradcheck.hpp"
#include "netwarp/warp.hpp"

namespace fs = std::filesystem;
using namespace netwarp;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kNumeric = 2;

struct GenArgs {
  std::string spec;
  std::string out;
  long long seed = -1;
};

struct TrainArgs {
  std::string config;
  std::string out;
  std::string loss_csv;
  std::string mode;
  std::string init;
  long long seed = -1;
  int steps = -1;
  bool quiet = false;
};

struct EvalArgs {
  std::string config;
  std::vector<std::string> checkpoints;
  std::string csv;
  int band_px = 0;
};

struct GradcheckArgs {
  int seeds = 20;
  std::uint64_t master_seed = 0;
  bool corrupt = false;
};

struct BenchArgs {
  std::vector<std::size_t> shape{1, 1024, 128, 128};
  int iters = 50;
  int warmup = 3;
  std::string out;
};

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

int cmd_gen(const GenArgs& a) {
  DatasetSpec spec = parse_dataset_spec(read_text_file(a.spec));
  if (a.seed >= 0) spec.seed = static_cast<std::uint64_t>(a.seed);
  const Dataset ds = build_dataset(spec);
  save_dataset(a.out, ds);
  std::printf("wrote %zu train + %zu test sequences to %s\n", ds.train.size(), ds.test.size(),
              a.out.c_str());
  return kOk;
}

int cmd_train(const TrainArgs& a) {
  ExperimentConfig cfg = parse_experiment_config(read_text_file(a.config));
  if (a.seed >= 0) cfg.seed = static_cast<std::uint64_t>(a.seed);
  if (a.steps >= 0) cfg.steps = a.steps;
  if (!a.mode.empty()) cfg.mode = parse_mode(a.mode);
  if (!a.init.empty()) cfg.init_checkpoint = a.init;
  if (!fs::exists(cfg.dataset / "index.txt")) {
    throw ConfigError("dataset not found: " + cfg.dataset.string());
  }

  const SegNet<float> net(cfg.segnet);
  ParamSet<float> params = initial_params(net, cfg, cfg.mode);
  if (!cfg.init_checkpoint.empty()) {
    // Entries absent from the checkpoint (e.g. fresh NetWarp weights) keep their init.
    const ParamSet<float> init = load_checkpoint(cfg.init_checkpoint);
    for (const auto& name : init.names()) {
      if (!params.contains(name)) throw ConfigError("checkpoint entry not in model: " + name);
      require_same_shape(params.get(name).shape(), init.get(name).shape(), name.c_str());
      params.get(name).mutable_value() = init.get(name).value();
    }
  }
  const Dataset data = load_dataset(cfg.dataset);

  const fs::path out = a.out;
  const fs::path loss_path = a.loss_csv.empty() ? fs::path(out.string() + ".loss.csv") : fs::path(a.loss_csv);
  ensure_parent(out);
  ensure_parent(loss_path);
  std::ofstream loss(loss_path);
  if (!loss) throw ConfigError("cannot write " + loss_path.string());
  loss << "step,loss\n";
  const int every = std::max(1, cfg.steps / 20);
  TrainResult r = train(cfg, data, cfg.mode, std::move(params), [&](int step, double l) {
    loss << step << ',' << l << '\n';
    if (!a.quiet && (step % every == 0 || step + 1 == cfg.steps)) {
      std::printf("step %5d  loss %.5f\n", step, l);
      std::fflush(stdout);
    }
  });
  save_checkpoint(out, r.params);
  std::printf("mode %s, %d steps; checkpoint %s, loss log %s\n", to_string(cfg.mode).c_str(),
              cfg.steps, out.c_str(), loss_path.c_str());
  return kOk;
}

int cmd_eval(const EvalArgs& a) {
  ExperimentConfig cfg = parse_experiment_config(read_text_file(a.config));
  if (a.band_px > 0) cfg.band_px = a.band_px;
  if (!fs::exists(cfg.dataset / "index.txt")) {
    throw ConfigError("dataset not found: " + cfg.dataset.string());
  }
  const Dataset data = load_dataset(cfg.dataset);
  std::vector<MetricsReport> rows;
  for (const auto& path : a.checkpoints) {
    const ParamSet<float> params = load_checkpoint(path);
    const SegNet<float> net(infer_segnet_config(params));
    const Mode mode = infer_mode(params);
    const std::string tag = " [" + fs::path(path).filename().string() + "]";
    rows.push_back(evaluate((mode == Mode::baseline ? "baseline" : "frame-by-frame") + tag, data,
                            net, params, Mode::baseline, cfg));
    if (mode != Mode::baseline) {
      rows.push_back(evaluate(to_string(mode) + tag, data, net, params, mode, cfg));
    }
  }
  write_report_text(std::cout, rows);
  if (!a.csv.empty()) {
    ensure_parent(a.csv);
    std::ofstream out(a.csv);
    if (!out) throw ConfigError("cannot write " + a.csv);
    write_report_csv(out, rows);
  }
  return kOk;
}

int cmd_gradcheck(const GradcheckArgs& a) {
  GradcheckOptions opt;
  opt.seeds = a.seeds;
  opt.master_seed = a.master_seed;
  if (a.corrupt) fault_injection::set_warp_flow_grad_scale(1.5);
  const auto results = run_gradcheck(opt);
  fault_injection::set_warp_flow_grad_scale(1.0);
  write_gradcheck_report(std::cout, results);
  const bool ok = all_passed(results);
  std::printf("%s\n", ok ? "all gradient checks passed" : "gradient check FAILED");
  return ok ? kOk : kNumeric;
}

int cmd_bench(const BenchArgs& a) {
  if (a.shape.size() != 4) throw ConfigError("--shape expects N,C,H,W");
  BenchOptions opt;
  opt.shape = Shape{a.shape[0], a.shape[1], a.shape[2], a.shape[3]};
  opt.iters = a.iters;
  opt.warmup = a.warmup;
  const BenchResult r = run_warp_bench(opt);
  std::printf("warp %s, %d iters, %d thread(s)\n", r.shape.str().c_str(), r.iters, r.threads);
  std::printf("  forward           median %.3f ms  p95 %.3f ms\n", r.forward_median_ms,
              r.forward_p95_ms);
  std::printf("  forward+backward  median %.3f ms  p95 %.3f ms\n", r.forward_backward_median_ms,
              r.forward_backward_p95_ms);
  std::printf("  (reference: about 2.5 ms forward for 1x1024x128x128 on a GPU; context only)\n");
  if (!a.out.empty()) {
    ensure_parent(a.out);
    std::ofstream out(a.out);
    if (!out) throw ConfigError("cannot write " + a.out);
    write_bench_csv(out, {r});
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"NetWarp video segmentation toolkit"};
  app.require_subcommand(1);
  int threads = 0;
  app.fallthrough();
  app.add_option("--threads", threads, "Worker threads (default: all)")->check(CLI::PositiveNumber);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a synthetic video dataset");
  g->add_option("--spec", gen.spec, "Dataset spec (JSON)")->required()->check(CLI::ExistingFile);
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--seed", gen.seed, "Override the spec seed");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model");
  t->add_option("--config", tr.config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  t->add_option("--out", tr.out, "Checkpoint path")->required();
  t->add_option("--loss-csv", tr.loss_csv, "Per-step loss log (default: <out>.loss.csv)");
  t->add_option("--mode", tr.mode, "baseline | netwarp | netwarp-noflowcnn");
  t->add_option("--init", tr.init, "Initialise from a checkpoint");
  t->add_option("--seed", tr.seed, "Override the config seed");
  t->add_option("--steps", tr.steps, "Override the step count");
  t->add_flag("--quiet", tr.quiet, "No progress output");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate checkpoints on the test split");
  e->add_option("--config", ev.config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  e->add_option("--checkpoint", ev.checkpoints, "Checkpoint(s)")->required()->check(CLI::ExistingFile);
  e->add_option("--band-px", ev.band_px, "Trimap band width in pixels");
  e->add_option("--csv", ev.csv, "Write the table as CSV");

  GradcheckArgs gc;
  auto* c = app.add_subcommand("gradcheck", "Finite-difference gradient checks in 64-bit");
  c->add_option("--seeds", gc.seeds, "Number of seeds")->check(CLI::PositiveNumber);
  c->add_option("--master-seed", gc.master_seed, "Seed of the seed sequence");
  c->add_flag("--corrupt-warp-backward", gc.corrupt, "Self-test: break the warp flow gradient");

  BenchArgs bn;
  auto* b = app.add_subcommand("bench", "Time the warp layer");
  b->add_option("--shape", bn.shape, "N,C,H,W")->delimiter(',')->expected(4);
  b->add_option("--iters", bn.iters, "Timed iterations")->check(CLI::PositiveNumber);
  b->add_option("--warmup", bn.warmup, "Untimed iterations");
  b->add_option("--out", bn.out, "CSV output path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? kOk : kUsage;
  }
  if (threads > 0) set_num_threads(threads);

  try {
    if (*g) return cmd_gen(gen);
    if (*t) return cmd_train(tr);
    if (*e) return cmd_eval(ev);
    if (*c) return cmd_gradcheck(gc);
    if (*b) return cmd_bench(bn);
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return kUsage;
  }
  return kUsage;
}
