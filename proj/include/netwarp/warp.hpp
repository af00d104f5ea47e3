#pragma once

#include <cstddef>

#include "netwarp/autodiff.hpp"
#include "netwarp/tensor.hpp"

namespace netwarp {

/// Per-pixel reverse flow, shape (N, 2, H, W). Channel 0 holds the horizontal
/// displacement u, channel 1 the vertical displacement v, both in pixels:
/// position (x, y) in frame t corresponds to (x + u, y + v) in frame t-1.
template <typename T>
class FlowField {
 public:
  FlowField() = default;
  explicit FlowField(Tensor<T> t) : tensor_(std::move(t)) {
    if (tensor_.shape().c != 2) {
      throw DimensionError("flow field needs exactly 2 channels, got " + tensor_.shape().str());
    }
  }
  static FlowField zeros(std::size_t n, std::size_t h, std::size_t w) {
    return FlowField(Tensor<T>(Shape{n, 2, h, w}));
  }
  static FlowField uniform(std::size_t n, std::size_t h, std::size_t w, T u, T v) {
    FlowField f = zeros(n, h, w);
    for (std::size_t b = 0; b < n; ++b) {
      std::fill(f.tensor_.plane(b, 0), f.tensor_.plane(b, 0) + h * w, u);
      std::fill(f.tensor_.plane(b, 1), f.tensor_.plane(b, 1) + h * w, v);
    }
    return f;
  }

  const Tensor<T>& tensor() const { return tensor_; }
  Tensor<T>& tensor() { return tensor_; }
  const Shape& shape() const { return tensor_.shape(); }
  std::size_t batch() const { return tensor_.shape().n; }
  std::size_t height() const { return tensor_.shape().h; }
  std::size_t width() const { return tensor_.shape().w; }

  T u(std::size_t n, std::size_t y, std::size_t x) const { return tensor_.at(n, 0, y, x); }
  T v(std::size_t n, std::size_t y, std::size_t x) const { return tensor_.at(n, 1, y, x); }
  T& u(std::size_t n, std::size_t y, std::size_t x) { return tensor_.at(n, 0, y, x); }
  T& v(std::size_t n, std::size_t y, std::size_t x) { return tensor_.at(n, 1, y, x); }

  template <typename U>
  FlowField<U> cast() const {
    return FlowField<U>(tensor_.template cast<U>());
  }

  bool operator==(const FlowField&) const = default;

 private:
  Tensor<T> tensor_;
};

struct WarpConfig {
  /// Added to both displacement components so samples never sit exactly on grid lines.
  double epsilon = 1e-4;
  /// Resolution ratio between the flow and the warped representation.
  int flow_stride = 1;

  void validate() const;
};

/// Bilinear sample of `features` at (x + u + eps, y + v + eps) for every pixel.
/// Sample points outside the grid are projected onto the nearest border first.
template <typename T>
Tensor<T> warp(const Tensor<T>& features, const FlowField<T>& flow, const WarpConfig& cfg);

template <typename T>
struct WarpGrads {
  Tensor<T> features;
  FlowField<T> flow;
};

/// Gradients of <upstream, warp(features, flow)> with respect to features and flow.
/// Clamped coordinates contribute no flow gradient.
template <typename T>
WarpGrads<T> warp_backward(const Tensor<T>& upstream, const Tensor<T>& features,
                           const FlowField<T>& flow, const WarpConfig& cfg);

/// out(x, y) = flow(stride*x, stride*y) / stride; output is ceil(H/stride) x ceil(W/stride).
template <typename T>
FlowField<T> subsample_flow(const FlowField<T>& flow, int stride);

// Tape-recording variants; `flow` must have 2 channels.
template <typename T>
Var<T> warp(Tape<T>* tape, const Var<T>& features, const Var<T>& flow, const WarpConfig& cfg);

template <typename T>
Var<T> subsample_flow(Tape<T>* tape, const Var<T>& flow, int stride);

namespace fault_injection {
/// Scales every flow gradient produced by warp_backward. 1.0 disables the fault.
/// Used to verify that the gradient checker detects a broken backward rule.
void set_warp_flow_grad_scale(double scale);
double warp_flow_grad_scale();
}  // namespace fault_injection

}  // namespace netwarp
