#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "netwarp/autodiff.hpp"
#include "netwarp/params.hpp"

namespace netwarp {

/// Conv blocks (3x3 conv + ReLU) with 2x2 max pooling after every block but the
/// last, then a 1x1 head producing class logits, bilinearly upsampled to the input size.
struct SegNetConfig {
  std::size_t in_channels = 3;
  std::vector<std::size_t> channels{16, 32, 64};
  std::size_t num_classes = 3;

  void validate() const;
};

/// Called with (layer index, activation); the return value replaces the activation.
template <typename T>
using LayerHook = std::function<Var<T>(std::size_t, const Var<T>&)>;

template <typename T>
class SegNet {
 public:
  explicit SegNet(SegNetConfig cfg);

  const SegNetConfig& config() const { return cfg_; }

  /// "conv1", ..., "convB", "head".
  const std::vector<std::string>& layer_names() const { return names_; }
  std::size_t num_layers() const { return names_.size(); }
  /// Throws ConfigError for unknown names.
  std::size_t layer_index(const std::string& name) const;
  bool has_layer(const std::string& name) const;
  /// Input pixels per activation pixel at the layer output.
  int layer_stride(std::size_t layer) const;
  std::size_t layer_channels(std::size_t layer) const;

  /// Registers "segnet.*" weights (He-normal) and zero biases.
  void init_params(ParamSet<T>& params, Rng& rng) const;

  /// Activation of `layer` for `input`.
  Var<T> forward_to(Tape<T>* tape, const ParamSet<T>& params, const Var<T>& input,
                    const std::string& layer) const;

  /// Full forward to logits at input resolution; `hook` may rewrite each layer output.
  Var<T> forward(Tape<T>* tape, const ParamSet<T>& params, const Var<T>& input,
                 const LayerHook<T>& hook = {}) const;

  /// Runs layers first..last inclusive, starting from `x` (the output of layer first-1,
  /// or the image when first == 0). Does not upsample.
  Var<T> run_layers(Tape<T>* tape, const ParamSet<T>& params, Var<T> x, std::size_t first,
                    std::size_t last, const LayerHook<T>& hook = {}) const;

  /// Resumes from the output of `layer` and produces logits at out_h x out_w.
  Var<T> forward_from(Tape<T>* tape, const ParamSet<T>& params, const Var<T>& activation,
                      std::size_t layer, std::size_t out_h, std::size_t out_w,
                      const LayerHook<T>& hook = {}) const;

 private:
  Var<T> layer(Tape<T>* tape, const ParamSet<T>& params, std::size_t i, const Var<T>& x) const;

  SegNetConfig cfg_;
  std::vector<std::string> names_;
};

}  // namespace netwarp
