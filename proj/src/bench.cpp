#include "netwarp/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ostream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "netwarp/error.hpp"
#include "netwarp/params.hpp"
#include "netwarp/warp.hpp"

namespace netwarp {

int num_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_num_threads(int n) {
#ifdef _OPENMP
  if (n >= 1) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

namespace {

// Nearest-rank percentile of an unsorted sample.
double percentile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const std::size_t rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(v.size())));
  return v[std::clamp<std::size_t>(rank, 1, v.size()) - 1];
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

template <typename F>
std::vector<double> time_runs(int warmup, int iters, F&& fn) {
  for (int i = 0; i < warmup; ++i) fn();
  std::vector<double> ms;
  for (int i = 0; i < iters; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return ms;
}

}  // namespace

BenchResult run_warp_bench(const BenchOptions& options) {
  const Shape& s = options.shape;
  if (s.size() == 0) throw ValidationError("bench: empty shape " + s.str());
  if (options.iters < 1 || options.warmup < 0) throw ValidationError("bench: iters must be >= 1");
  Rng rng(options.seed);
  const Tensor<float> features = gaussian<float>(s, 1.0, rng);
  const FlowField<float> flow(gaussian<float>(Shape{s.n, 2, s.h, s.w}, options.flow_std, rng));
  const Tensor<float> upstream = gaussian<float>(s, 1.0, rng);
  const WarpConfig cfg;

  BenchResult r;
  r.shape = s;
  r.iters = options.iters;
  r.threads = num_threads();
  volatile float sink = 0;
  const auto fwd = time_runs(options.warmup, options.iters, [&] {
    sink = sink + warp(features, flow, cfg)[0];
  });
  const auto both = time_runs(options.warmup, options.iters, [&] {
    const Tensor<float> out = warp(features, flow, cfg);
    const WarpGrads<float> g = warp_backward(upstream, features, flow, cfg);
    sink = sink + out[0] + g.flow.tensor()[0];
  });
  r.forward_median_ms = median(fwd);
  r.forward_p95_ms = percentile(fwd, 0.95);
  r.forward_backward_median_ms = median(both);
  r.forward_backward_p95_ms = percentile(both, 0.95);
  return r;
}

void write_bench_csv(std::ostream& out, const std::vector<BenchResult>& results) {
  out << "n,c,h,w,iters,threads,forward_median_ms,forward_p95_ms,"
         "forward_backward_median_ms,forward_backward_p95_ms\n";
  for (const auto& r : results) {
    out << r.shape.n << ',' << r.shape.c << ',' << r.shape.h << ',' << r.shape.w << ',' << r.iters
        << ',' << r.threads << ',' << r.forward_median_ms << ',' << r.forward_p95_ms << ','
        << r.forward_backward_median_ms << ',' << r.forward_backward_p95_ms << '\n';
  }
}

}  // namespace netwarp
