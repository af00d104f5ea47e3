#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "netwarp/tensor.hpp"

namespace netwarp {

/// Worker threads used by parallel kernels (1 without OpenMP).
int num_threads();
/// Sets the worker thread count; values below 1 are ignored.
void set_num_threads(int n);

struct BenchOptions {
  Shape shape{1, 1024, 128, 128};
  int iters = 50;
  int warmup = 3;
  std::uint64_t seed = 1;
  /// Standard deviation of the random flow, in pixels.
  double flow_std = 2.0;
};

struct BenchResult {
  Shape shape;
  int iters = 0;
  int threads = 1;
  double forward_median_ms = 0, forward_p95_ms = 0;
  double forward_backward_median_ms = 0, forward_backward_p95_ms = 0;
};

/// Wall time of the float warp forward pass and of forward plus backward.
BenchResult run_warp_bench(const BenchOptions& options);

void write_bench_csv(std::ostream& out, const std::vector<BenchResult>& results);

}  // namespace netwarp
