#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "netwarp/flow_cnn.hpp"
#include "netwarp/segnet.hpp"
#include "netwarp/warp.hpp"

namespace netwarp {

/// Per-channel blend weights of one insertion point, shape (1, C, 1, 1) each.
template <typename T>
struct CombineWeights {
  Var<T> w1;
  Var<T> w2;

  /// w1 = 1, w2 = 0: the combined output equals the present-frame input.
  static CombineWeights identity(std::size_t channels);
  /// Reads "netwarp.<layer>.w1" / ".w2".
  static CombineWeights from(const ParamSet<T>& params, const std::string& layer);
};

struct NetWarpSpec {
  std::vector<std::string> insertion_layers;
  WarpConfig warp;
  bool use_flowcnn = true;
};

/// How inference feeds the previous frame's representation into the combination.
enum class CacheMode {
  recurrent,  // previous frame's combined (post-NetWarp) activations
  window,     // previous frame's plain single-image activations, as in two-frame training
};

std::string to_string(CacheMode mode);
CacheMode parse_cache_mode(const std::string& s);

/// Checks layer names against the network (ConfigError otherwise).
template <typename T>
void validate_spec(const SegNet<T>& net, const NetWarpSpec& spec);

/// Adds w1/w2 for every insertion layer and, when enabled, the flow network.
template <typename T>
void add_netwarp_params(ParamSet<T>& params, const SegNet<T>& net, const NetWarpSpec& spec,
                        Rng& rng);

/// w1 * z_t + w2 * warp(z_prev, flow); `flow` is already at the resolution of z.
template <typename T>
Var<T> netwarp_apply(Tape<T>* tape, const Var<T>& z_t, const Var<T>& z_prev, const Var<T>& flow,
                     const CombineWeights<T>& weights, const WarpConfig& cfg);

/// The transformed flow at input resolution: the flow network output, or the raw
/// flow when the spec disables it.
template <typename T>
Var<T> transform_flow(Tape<T>* tape, const ParamSet<T>& params, const NetWarpSpec& spec,
                      const Tensor<T>& frame_prev, const Tensor<T>& frame_t,
                      const FlowField<T>& flow);

/// Two-frame training graph: frame_prev runs the plain network up to the deepest
/// insertion layer with the same weights; frame_t runs the full network with
/// NetWarp applied at every insertion layer. Returns logits for frame_t.
template <typename T>
Var<T> two_frame_forward(Tape<T>* tape, const SegNet<T>& net, const ParamSet<T>& params,
                         const Tensor<T>& frame_prev, const Tensor<T>& frame_t,
                         const FlowField<T>& flow, const NetWarpSpec& spec);

/// Per-pixel argmax over channels of batch entry 0.
template <typename T>
LabelMap argmax_labels(const Tensor<T>& logits);

/// Online (causal) video segmentation with cached previous-frame activations.
template <typename T>
class VideoSegmenter {
 public:
  VideoSegmenter(const SegNet<T>& net, const ParamSet<T>& params, NetWarpSpec spec,
                 CacheMode mode = CacheMode::recurrent);

  /// Segments the next frame. `flow` is the reverse flow to the previous frame and
  /// is ignored for the first frame.
  LabelMap step(const Tensor<T>& frame, const std::optional<FlowField<T>>& flow);

  /// Logits of the last processed frame.
  const Tensor<T>& last_logits() const { return logits_; }
  /// Cached activations keyed by insertion layer name.
  const std::map<std::string, Tensor<T>>& cache() const { return cache_; }
  std::size_t frames_seen() const { return frames_; }
  void reset();

 private:
  const SegNet<T>& net_;
  const ParamSet<T>& params_;
  NetWarpSpec spec_;
  CacheMode mode_;
  std::vector<std::size_t> layers_;  // sorted insertion layer indices
  std::map<std::size_t, CombineWeights<T>> weights_;
  std::map<std::string, Tensor<T>> cache_;
  Tensor<T> prev_frame_;
  Tensor<T> logits_;
  std::size_t frames_ = 0;
};

/// Runs VideoSegmenter over a sequence. flows[i] maps frames[i] to frames[i-1];
/// flows[0] is ignored and may be empty.
template <typename T>
std::vector<LabelMap> video_inference(const SegNet<T>& net, const std::vector<Tensor<T>>& frames,
                                      const std::vector<std::optional<FlowField<T>>>& flows,
                                      const NetWarpSpec& spec, const ParamSet<T>& params,
                                      CacheMode mode = CacheMode::recurrent);

}  // namespace netwarp
