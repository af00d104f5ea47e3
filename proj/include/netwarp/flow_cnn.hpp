#pragma once

#include <cstddef>

#include "netwarp/autodiff.hpp"
#include "netwarp/params.hpp"
#include "netwarp/warp.hpp"

namespace netwarp {

/// Handles to the four 3x3 convolutions of the flow transformation network.
/// All entries alias tensors owned by a ParamSet under the "flowcnn." prefix.
template <typename T>
struct FlowCnnParams {
  Var<T> conv1_w, conv1_b;  // 16 x 11
  Var<T> conv2_w, conv2_b;  // 32 x 16
  Var<T> conv3_w, conv3_b;  // 2 x 32
  Var<T> conv4_w, conv4_b;  // 2 x 4 (conv3 output + raw flow)

  static constexpr std::size_t kInputChannels = 11;
  // (16*11*9 + 16) + (32*16*9 + 32) + (2*32*9 + 2) + (2*4*9 + 2)
  static constexpr std::size_t kParameterCount = 6892;

  /// Looks up the "flowcnn.*" entries; throws ConfigError when any is missing.
  static FlowCnnParams from(const ParamSet<T>& params);
};

/// Registers the flow network parameters: weights ~ N(0, stddev^2), biases zero.
template <typename T>
void add_flowcnn_params(ParamSet<T>& params, Rng& rng, double stddev = 0.01);

/// Concatenates [flow(2), frame_t(3), frame_prev(3), frame_t - frame_prev(3)].
/// Frames are expected in [0, 1].
template <typename T>
Tensor<T> build_flowcnn_input(const FlowField<T>& flow, const Tensor<T>& frame_t,
                              const Tensor<T>& frame_prev);

/// conv1-relu-conv2-relu-conv3, concat with the raw flow, conv4. Padding 1, stride 1.
template <typename T>
Var<T> flowcnn_forward(Tape<T>* tape, const Var<T>& input11, const Var<T>& flow,
                       const FlowCnnParams<T>& params);

}  // namespace netwarp
