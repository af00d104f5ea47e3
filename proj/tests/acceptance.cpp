// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers as
// arguments to run a subset, e.g. `netwarp_acceptance 2 3 7`.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "netwarp/bench.hpp"
#include "netwarp/experiment.hpp"
#include "netwarp/gradcheck.hpp"
#include "netwarp/metrics.hpp"
#include "netwarp/netwarp.hpp"
#include "netwarp/synth.hpp"
#include "support.hpp"

using namespace netwarp;
using testutil::label_map;
using testutil::naive_warp;
using testutil::random_tensor;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// 1. Finite-difference gradient suite.
Outcome gradient_suite() {
  const auto t0 = Clock::now();
  GradcheckOptions opt;
  opt.seeds = 20;
  const auto results = run_gradcheck(opt);
  const double secs = seconds_since(t0);
  write_gradcheck_report(std::cout, results);
  double worst_op = 0, worst_e2e = 0;
  for (const auto& r : results) {
    double& worst = r.name == "end_to_end" ? worst_e2e : worst_op;
    worst = std::max(worst, r.worst_rel_err);
  }
  const bool ok = all_passed(results) && worst_op < 1e-4 && worst_e2e < 1e-3 && secs < 120;
  return {ok, fmt("20 seeds, worst op rel err %.2e (< 1e-4), end-to-end %.2e (< 1e-3), %.1f s (< 120 s)",
                  worst_op, worst_e2e, secs)};
}

// 2. Warp against the per-pixel oracle, bit for bit.
Outcome warp_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(20240601);
  int mismatches = 0, integer_cases = 0, clamped_cases = 0;
  for (int k = 0; k < 100; ++k) {
    const Shape s{1, 1 + rng() % 4, 1 + rng() % 8, 1 + rng() % 8};
    const auto z = random_tensor<float>(s, rng);
    // Wide flows so that many samples land outside the grid.
    auto flow = random_tensor<float>({1, 2, s.h, s.w}, rng, -6.0, 6.0);
    if (k % 4 == 0) {
      for (auto& v : flow.data()) v = std::round(v);
      ++integer_cases;
    }
    bool clamped = false;
    for (std::size_t y = 0; y < s.h; ++y) {
      for (std::size_t x = 0; x < s.w; ++x) {
        const double xp = x + flow.at(0, 0, y, x), yp = y + flow.at(0, 1, y, x);
        clamped |= xp < 0 || yp < 0 || xp > s.w - 1.0 || yp > s.h - 1.0;
      }
    }
    clamped_cases += clamped;
    mismatches += !(warp(z, FlowField<float>(flow), WarpConfig{}) == naive_warp(z, flow, 1e-4f));
    const auto zd = z.cast<double>();
    const auto fd = flow.cast<double>();
    mismatches += !(warp(zd, FlowField<double>(fd), WarpConfig{}) == naive_warp(zd, fd, 1e-4));
  }
  const double secs = seconds_since(t0);
  const bool ok = mismatches == 0 && integer_cases > 0 && clamped_cases > 0 && secs < 10;
  return {ok, fmt("100 cases x {float, double}: %d mismatches; %d integer-flow, %d out-of-grid cases; %.2f s",
                  mismatches, integer_cases, clamped_cases, secs)};
}

// 3. The freshly assembled video network is the single-image network.
Outcome identity_at_init() {
  const auto t0 = Clock::now();
  const SegNet<float> net(SegNetConfig{});
  ParamSet<float> params;
  Rng init(7);
  net.init_params(params, init);
  NetWarpSpec spec;
  spec.insertion_layers = {"conv1", "conv2", "conv3", "head"};
  add_netwarp_params(params, net, spec, init);
  std::mt19937_64 rng(8);
  int equal = 0;
  for (int k = 0; k < 10; ++k) {
    const std::size_t h = 16 + rng() % 33, w = 16 + rng() % 33;
    const auto fp = random_tensor<float>({1, 3, h, w}, rng, 0, 1);
    const auto ft = random_tensor<float>({1, 3, h, w}, rng, 0, 1);
    const FlowField<float> flow(random_tensor<float>({1, 2, h, w}, rng, -4, 4));
    const auto a = two_frame_forward<float>(nullptr, net, params, fp, ft, flow, spec).value();
    equal += a == net.forward(nullptr, params, constant(ft)).value();
  }
  const double secs = seconds_since(t0);
  return {equal == 10 && secs < 10, fmt("%d/10 inputs bit-equal, %.2f s", equal, secs)};
}

// 4. Ground-truth flow carries labels onto the next frame.
Outcome flow_label_consistency() {
  const auto t0 = Clock::now();
  std::size_t checked = 0, bad = 0;
  RandomSceneParams p;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto seq = generate(random_scene(p, seed));
    for (std::size_t t = 1; t < seq.size(); ++t) {
      const auto warped = warp(one_hot(seq.labels[t - 1], seq.num_classes), *seq.gt_flow[t], WarpConfig{});
      for (std::size_t y = 0; y < seq.labels[t].height; ++y) {
        for (std::size_t x = 0; x < seq.labels[t].width; ++x) {
          if (seq.occlusion[t].at(y, x)) continue;
          int best = 0;
          for (int c = 1; c < seq.num_classes; ++c) {
            if (warped.at(0, c, y, x) > warped.at(0, best, y, x)) best = c;
          }
          bad += best != seq.labels[t].at(y, x);
          ++checked;
        }
      }
    }
  }
  const double secs = seconds_since(t0);
  return {bad == 0 && checked > 0 && secs < 30,
          fmt("5 sequences, %zu non-occluded pixels, %zu disagreements, %.2f s", checked, bad, secs)};
}

// 5 and 6 share the training runs.
struct ExperimentState {
  bool ran = false;
  std::vector<MetricsReport> baseline, netwarp;
  ParamSet<float> seed1_pretrained;
  Dataset seed1_data;
  double secs = 0;
};

ExperimentConfig experiment_config(std::uint64_t seed) {
  ExperimentConfig cfg;
  cfg.seed = seed;
  cfg.netwarp.insertion_layers = {"conv3", "head"};
  cfg.cache_mode = CacheMode::window;
  cfg.flow = FlowMethod::block_match;
  cfg.netwarp_lr = 1e-2;
  cfg.band_px = 2;
  return cfg;
}

DatasetSpec experiment_data(std::uint64_t seed) {
  DatasetSpec ds;
  ds.scene.height = ds.scene.width = 64;
  ds.scene.length = 30;
  ds.scene.num_classes = 3;
  ds.scene.thin_bar = true;
  ds.scene.noise_std = 0.15;
  ds.num_train = 6;
  ds.num_test = 3;
  ds.seed = seed;
  ds.estimate_flow = true;
  return ds;
}

constexpr int kPretrainSteps = 1000;
constexpr int kFineTuneSteps = 1000;

void run_experiments(ExperimentState& st) {
  if (st.ran) return;
  const auto t0 = Clock::now();
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    Dataset data = build_dataset(experiment_data(seed));
    ExperimentConfig cfg = experiment_config(seed);
    const SegNet<float> net(cfg.segnet);
    // Shared single-image pretraining, then both arms get the same extra budget.
    cfg.steps = kPretrainSteps;
    const auto pre = train(cfg, data, Mode::baseline, initial_params(net, cfg, Mode::baseline));
    cfg.steps = kFineTuneSteps;
    const auto base = train(cfg, data, Mode::baseline, pre.params.clone());
    auto nw_init = initial_params(net, cfg, Mode::netwarp);
    nw_init.assign_from(pre.params);
    const auto nw = train(cfg, data, Mode::netwarp, std::move(nw_init));
    st.baseline.push_back(evaluate("baseline", data, net, base.params, Mode::baseline, cfg));
    st.netwarp.push_back(evaluate("netwarp", data, net, nw.params, Mode::netwarp, cfg));
    std::printf("  seed %llu: baseline mIoU %.4f tIoU %.4f | NetWarp mIoU %.4f tIoU %.4f (%.0f s)\n",
                static_cast<unsigned long long>(seed), st.baseline.back().iou.mean,
                st.baseline.back().tiou.mean, st.netwarp.back().iou.mean, st.netwarp.back().tiou.mean,
                seconds_since(t0));
    std::fflush(stdout);
    if (seed == 1) {
      st.seed1_pretrained = pre.params.clone();
      st.seed1_data = std::move(data);
    }
  }
  st.secs = seconds_since(t0);
  st.ran = true;
}

Outcome directional_result(ExperimentState& st) {
  run_experiments(st);
  double b_iou = 0, n_iou = 0, b_tiou = 0, n_tiou = 0;
  for (std::size_t i = 0; i < st.baseline.size(); ++i) {
    b_iou += st.baseline[i].iou.mean / 3;
    n_iou += st.netwarp[i].iou.mean / 3;
    b_tiou += st.baseline[i].tiou.mean / 3;
    n_tiou += st.netwarp[i].tiou.mean / 3;
  }
  const double gain = n_tiou - b_tiou;
  const bool ok = n_iou >= b_iou && gain >= 0.01 && st.secs < 20 * 60;
  return {ok, fmt("mean mIoU %.4f -> %.4f, mean tIoU %.4f -> %.4f (%+.2f points, need >= +1), %.0f s",
                  b_iou, n_iou, b_tiou, n_tiou, 100 * gain, st.secs)};
}

Outcome ablation_rows(ExperimentState& st) {
  run_experiments(st);
  const auto t0 = Clock::now();
  ExperimentConfig cfg = experiment_config(1);
  cfg.steps = kFineTuneSteps;
  const SegNet<float> net(cfg.segnet);
  auto init = initial_params(net, cfg, Mode::netwarp_noflowcnn);
  init.assign_from(st.seed1_pretrained);
  const auto raw = train(cfg, st.seed1_data, Mode::netwarp_noflowcnn, std::move(init));
  auto without = evaluate("NetWarp without FlowCNN", st.seed1_data, net, raw.params, Mode::netwarp_noflowcnn, cfg);
  auto with = st.netwarp.front();
  with.name = "NetWarp with FlowCNN";
  auto base = st.baseline.front();
  base.name = "baseline";
  const std::vector<MetricsReport> rows{base, without, with};
  std::ostringstream table;
  write_report_text(table, rows);
  std::printf("%s", table.str().c_str());
  std::ostringstream csv;
  write_report_csv(csv, rows);
  const std::string text = table.str() + csv.str();
  const bool both = text.find("NetWarp without FlowCNN") != std::string::npos &&
                    text.find("NetWarp with FlowCNN") != std::string::npos;
  const bool finite = std::isfinite(without.iou.mean) && std::isfinite(with.iou.mean);
  return {both && finite,
          fmt("both rows present; with - without FlowCNN: mIoU %+.2f, tIoU %+.2f points (reported only), %.0f s",
              100 * (with.iou.mean - without.iou.mean), 100 * (with.tiou.mean - without.tiou.mean),
              seconds_since(t0))};
}

// 7. Metric oracles.
Outcome metric_oracles() {
  const auto t0 = Clock::now();
  int failures = 0;
  auto expect = [&](bool c) { failures += !c; };
  auto conf = [](const LabelMap& p, const LabelMap& g, int k) {
    ConfusionMatrix c(k);
    c.add(p, g);
    return c;
  };

  const auto gt = label_map(2, 2, {0, 0, 1, 1});
  const auto pred = label_map(2, 2, {0, 1, 1, 1});
  const auto s = iou(conf(pred, gt, 2));
  expect(s.per_class[0] == 1.0 / 2.0 && s.per_class[1] == 2.0 / 3.0);
  expect(std::abs(s.mean - 7.0 / 12.0) < 1e-15);
  expect(iou(conf(label_map(1, 3, {0, 2, 1}), label_map(1, 3, {0, 1, 1}), 3)).per_class[2] == 0.0);

  LabelMap regions(8, 8);
  for (std::size_t y = 0; y < 8; ++y) {
    for (std::size_t x = 0; x < 8; ++x) regions.at(y, x) = x < 4 ? 0 : 1;
  }
  auto inside = regions, outside = regions;
  inside.at(0, 3) = 1;
  outside.at(0, 0) = 1;
  const auto ti = trimap_iou(inside, regions, 2, 2);
  expect(ti.per_class[0] == 23.0 / 24.0 && ti.per_class[1] == 24.0 / 25.0);
  expect(trimap_iou(outside, regions, 2, 2).mean == 1.0);
  expect(!trimap_iou(LabelMap(4, 4), LabelMap(4, 4), 2, 2).defined);

  const auto igt = label_map(1, 8, {1, 1, 1, 1, 1, 1, 0, 0});
  const auto inst = label_map(1, 8, {1, 1, 1, 1, 2, 2, 0, 0});
  const auto ipred = label_map(1, 8, {1, 1, 1, 1, 0, 0, 0, 0});
  const auto avg = class_average_instance_sizes({igt}, {inst}, 2);
  expect(avg[1] == 3.0);
  expect(iiou(ipred, igt, inst, 2, {1}, avg).per_class[1] == 0.5);
  expect(iou(conf(ipred, igt, 2)).per_class[1] == 4.0 / 6.0);

  std::mt19937_64 rng(9);
  ConfusionMatrix stream(3);
  LabelMap all_gt(40, 9), all_pred(40, 9);
  for (std::size_t f = 0; f < 5; ++f) {
    LabelMap g(8, 9), p(8, 9);
    for (auto& v : g.labels) v = static_cast<int>(rng() % 3);
    for (auto& v : p.labels) v = static_cast<int>(rng() % 3);
    expect(trimap_iou(p, g, 3, 1000).per_class == iou(conf(p, g, 3)).per_class);
    stream.add(p, g);
    std::copy(g.labels.begin(), g.labels.end(), all_gt.labels.begin() + f * 72);
    std::copy(p.labels.begin(), p.labels.end(), all_pred.labels.begin() + f * 72);
  }
  expect(iou(stream).per_class == iou(conf(all_pred, all_gt, 3)).per_class);
  const double secs = seconds_since(t0);
  return {failures == 0 && secs < 5, fmt("%d oracle mismatches, %.3f s", failures, secs)};
}

// 8. Warp timing report.
Outcome bench_report() {
  BenchOptions opt;
  opt.shape = Shape{1, 1024, 128, 128};
  opt.iters = 50;
  const auto r = run_warp_bench(opt);
  std::ostringstream csv;
  write_bench_csv(csv, {r});
  std::printf("%s", csv.str().c_str());
  std::printf("  (reference: about 2.5 ms forward for 1x1024x128x128 on a GPU; context only)\n");
  std::istringstream in(csv.str());
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  const bool columns = header.find("forward_median_ms") != std::string::npos &&
                       header.find("forward_p95_ms") != std::string::npos &&
                       header.find("forward_backward_median_ms") != std::string::npos;
  int fields = 0;
  for (std::size_t p = 0; p != std::string::npos; p = row.find(',', p + 1)) ++fields;
  const bool sane = r.forward_median_ms > 0 && r.forward_median_ms <= r.forward_p95_ms &&
                    r.forward_backward_median_ms > 0 && std::isfinite(r.forward_backward_p95_ms);
  return {columns && fields == 10 && sane,
          fmt("forward median %.1f ms p95 %.1f ms, forward+backward median %.1f ms, %d thread(s)",
              r.forward_median_ms, r.forward_p95_ms, r.forward_backward_median_ms, r.threads)};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  ExperimentState st;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient suite", gradient_suite},
      {"warp oracle", warp_oracle},
      {"identity at initialisation", identity_at_init},
      {"flow/label consistency", flow_label_consistency},
      {"desk-scale directional result", [&] { return directional_result(st); }},
      {"ablation rows", [&] { return ablation_rows(st); }},
      {"metric oracles", metric_oracles},
      {"benchmark report", bench_report},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(n)) continue;
    std::printf("criterion %d (%s): running\n", n, criteria[i].first.c_str());
    std::fflush(stdout);
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("criterion %d: %s  %s: %s\n", n, o.pass ? "PASS" : "FAIL", criteria[i].first.c_str(),
                o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
