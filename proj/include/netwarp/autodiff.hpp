#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "netwarp/tensor.hpp"

namespace netwarp {

template <typename T>
struct VarNode {
  Tensor<T> value;
  Tensor<T> grad;  // allocated lazily on first accumulation
  bool requires_grad = false;
};

/// Handle to a value that may participate in reverse-mode differentiation.
/// Copies share the underlying node.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false)
      : node_(std::make_shared<VarNode<T>>(VarNode<T>{std::move(value), {}, requires_grad})) {}

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->value.shape(); }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  bool requires_grad() const { return node_->requires_grad; }

  bool has_grad() const { return !node_->grad.empty(); }
  const Tensor<T>& grad() const { return node_->grad; }
  // Handles are shallow: gradient buffers are writable through const handles.
  Tensor<T>& grad_buffer() const {
    if (node_->grad.empty()) node_->grad = Tensor<T>(node_->value.shape());
    return node_->grad;
  }
  void zero_grad() const { node_->grad = Tensor<T>(); }

  bool same_node(const Var& other) const { return node_ == other.node_; }

 private:
  std::shared_ptr<VarNode<T>> node_;
};

/// Ordered record of backward rules. Single writer.
template <typename T>
class Tape {
 public:
  void record(std::string name, std::function<void()> backward) {
    entries_.push_back({std::move(name), std::move(backward)});
  }

  /// Seeds d(loss)/d(loss) = 1 and runs the recorded rules newest-first.
  void backward(Var<T> loss) {
    if (loss.shape().size() != 1) {
      throw DimensionError("backward expects a scalar loss, got " + loss.shape().str());
    }
    loss.grad_buffer()[0] += T(1);
    visited_.clear();
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      visited_.push_back(it->name);
      it->backward();
    }
  }

  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

  /// Op names in the order the last backward() visited them.
  const std::vector<std::string>& last_backward_order() const { return visited_; }

  /// When set, every recorded op output is checked for NaN/Inf.
  void set_check_finite(bool on) { check_finite_ = on; }
  void check(const Tensor<T>& out, const std::string& op) const {
    if (check_finite_ && !out.all_finite()) {
      throw ValidationError(op + ": non-finite value in output");
    }
  }

 private:
  struct Entry {
    std::string name;
    std::function<void()> backward;
  };
  std::vector<Entry> entries_;
  std::vector<std::string> visited_;
  bool check_finite_ = false;
};

/// Constant input (no gradient).
template <typename T>
Var<T> constant(Tensor<T> value) {
  return Var<T>(std::move(value), false);
}

/// Trainable leaf.
template <typename T>
Var<T> parameter(Tensor<T> value) {
  return Var<T>(std::move(value), true);
}

// Differentiable ops. Passing a null tape evaluates without recording.

/// weights (out, in, k, k); bias (1, out, 1, 1) or undefined.
template <typename T>
Var<T> conv2d(Tape<T>* tape, const Var<T>& input, const Var<T>& weights, const Var<T>& bias,
              int padding, int stride);

template <typename T>
Var<T> relu(Tape<T>* tape, const Var<T>& input);

template <typename T>
Var<T> concat_channels(Tape<T>* tape, std::span<const Var<T>> parts);

/// w has shape (1, C, 1, 1).
template <typename T>
Var<T> scale_per_channel(Tape<T>* tape, const Var<T>& input, const Var<T>& w);

template <typename T>
Var<T> add(Tape<T>* tape, const Var<T>& a, const Var<T>& b);

/// 2x2 max pooling, stride 2, ceil mode (odd edges use partial windows).
template <typename T>
Var<T> max_pool2(Tape<T>* tape, const Var<T>& input);

/// Half-pixel-centre bilinear resize; output dims must not be smaller than input dims.
template <typename T>
Var<T> upsample_bilinear(Tape<T>* tape, const Var<T>& input, std::size_t out_h, std::size_t out_w);

/// Mean pixelwise cross-entropy over pixels whose label differs from ignore_label.
/// labels.size() must equal the batch size.
template <typename T>
Var<T> softmax_xent_loss(Tape<T>* tape, const Var<T>& logits, std::span<const LabelMap> labels,
                         int ignore_label = 255);

}  // namespace netwarp
