#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace netwarp {

struct GradcheckOptions {
  int seeds = 20;
  std::uint64_t master_seed = 0;
  /// Central-difference step.
  double step = 1e-5;
  double tolerance = 1e-4;
  double end_to_end_tolerance = 1e-3;
  /// Relative errors use max(|analytic|, |numeric|, floor) as denominator.
  double floor = 1e-6;
  /// Coordinates checked per input tensor and seed (all when the tensor is smaller).
  int samples_per_tensor = 24;
};

struct GradcheckResult {
  std::string name;
  double worst_rel_err = 0.0;
  double tolerance = 0.0;
  int checked = 0;
  /// Coordinates skipped because the one-sided slopes disagree (a kink lies
  /// within one step, e.g. ReLU at zero or a warp cell boundary).
  int skipped = 0;
  bool passed = true;
};

/// 64-bit finite-difference checks of every differentiable op, the warp, the
/// flow network and the full two-frame graph over `seeds` derived seeds.
std::vector<GradcheckResult> run_gradcheck(const GradcheckOptions& options = {});

bool all_passed(const std::vector<GradcheckResult>& results);
void write_gradcheck_report(std::ostream& out, const std::vector<GradcheckResult>& results);

}  // namespace netwarp
