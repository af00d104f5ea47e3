#pragma once

#include <filesystem>

#include "netwarp/tensor.hpp"
#include "netwarp/warp.hpp"

namespace netwarp {

struct BlockMatchParams {
  int patch = 8;
  int search_radius = 8;
  bool subpixel = true;
};

/// Reverse flow from frame_t to frame_prev by exhaustive SSD block matching over
/// grayscale (channel mean), with parabolic subpixel refinement. Patch pixels
/// outside the image replicate the border. SSD ties go to the smallest
/// displacement by (|u| + |v|, u, v).
FlowField<float> block_match_flow(const Tensor<float>& frame_t, const Tensor<float>& frame_prev,
                                  const BlockMatchParams& params = {});

/// Middlebury .flo: f32 202021.25, i32 width, i32 height, then (u, v) pairs row-major.
void write_flo(const std::filesystem::path& path, const FlowField<float>& flow);
FlowField<float> read_flo(const std::filesystem::path& path);

}  // namespace netwarp
