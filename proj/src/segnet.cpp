#include "netwarp/segnet.hpp"

#include <cmath>

namespace netwarp {

void SegNetConfig::validate() const {
  if (num_classes < 2) throw ConfigError("segnet: num_classes must be >= 2");
  if (channels.empty()) throw ConfigError("segnet: at least one conv block required");
  if (in_channels == 0) throw ConfigError("segnet: in_channels must be positive");
  for (std::size_t c : channels) {
    if (c == 0) throw ConfigError("segnet: block channel counts must be positive");
  }
}

template <typename T>
SegNet<T>::SegNet(SegNetConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  for (std::size_t i = 0; i < cfg_.channels.size(); ++i) {
    names_.push_back("conv" + std::to_string(i + 1));
  }
  names_.push_back("head");
}

template <typename T>
std::size_t SegNet<T>::layer_index(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return i;
  }
  throw ConfigError("unknown layer '" + name + "'");
}

template <typename T>
bool SegNet<T>::has_layer(const std::string& name) const {
  for (const auto& n : names_) {
    if (n == name) return true;
  }
  return false;
}

template <typename T>
int SegNet<T>::layer_stride(std::size_t layer) const {
  const std::size_t blocks = cfg_.channels.size();
  // Block i (0-based) sees input pooled i times; the head sits after the last block.
  const std::size_t pools = std::min(layer, blocks - 1);
  return 1 << pools;
}

template <typename T>
std::size_t SegNet<T>::layer_channels(std::size_t layer) const {
  return layer < cfg_.channels.size() ? cfg_.channels[layer] : cfg_.num_classes;
}

template <typename T>
void SegNet<T>::init_params(ParamSet<T>& params, Rng& rng) const {
  std::size_t in = cfg_.in_channels;
  for (std::size_t i = 0; i < cfg_.channels.size(); ++i) {
    const std::size_t out = cfg_.channels[i];
    const double std = std::sqrt(2.0 / static_cast<double>(in * 9));
    params.add("segnet." + names_[i] + ".w", gaussian<T>(Shape{out, in, 3, 3}, std, rng));
    params.add("segnet." + names_[i] + ".b", Tensor<T>(Shape{1, out, 1, 1}));
    in = out;
  }
  const double std = std::sqrt(1.0 / static_cast<double>(in));
  params.add("segnet.head.w", gaussian<T>(Shape{cfg_.num_classes, in, 1, 1}, std, rng));
  params.add("segnet.head.b", Tensor<T>(Shape{1, cfg_.num_classes, 1, 1}));
}

template <typename T>
Var<T> SegNet<T>::layer(Tape<T>* tape, const ParamSet<T>& params, std::size_t i,
                        const Var<T>& x) const {
  const std::string prefix = "segnet." + names_[i];
  const Var<T>& w = params.get(prefix + ".w");
  const Var<T>& b = params.get(prefix + ".b");
  if (i == names_.size() - 1) return conv2d(tape, x, w, b, 0, 1);
  Var<T> in = x;
  if (i > 0) in = max_pool2(tape, x);
  return relu(tape, conv2d(tape, in, w, b, 1, 1));
}

template <typename T>
Var<T> SegNet<T>::run_layers(Tape<T>* tape, const ParamSet<T>& params, Var<T> x,
                             std::size_t first, std::size_t last,
                             const LayerHook<T>& hook) const {
  for (std::size_t i = first; i <= last && i < names_.size(); ++i) {
    x = layer(tape, params, i, x);
    if (hook) x = hook(i, x);
  }
  return x;
}

template <typename T>
Var<T> SegNet<T>::forward_to(Tape<T>* tape, const ParamSet<T>& params, const Var<T>& input,
                             const std::string& name) const {
  return run_layers(tape, params, input, 0, layer_index(name));
}

template <typename T>
Var<T> SegNet<T>::forward(Tape<T>* tape, const ParamSet<T>& params, const Var<T>& input,
                          const LayerHook<T>& hook) const {
  if (input.shape().c != cfg_.in_channels) {
    throw DimensionError("segnet: input " + input.shape().str() + " expects " +
                         std::to_string(cfg_.in_channels) + " channels");
  }
  Var<T> logits = run_layers(tape, params, input, 0, names_.size() - 1, hook);
  return upsample_bilinear(tape, logits, input.shape().h, input.shape().w);
}

template <typename T>
Var<T> SegNet<T>::forward_from(Tape<T>* tape, const ParamSet<T>& params,
                               const Var<T>& activation, std::size_t layer, std::size_t out_h,
                               std::size_t out_w, const LayerHook<T>& hook) const {
  Var<T> logits = run_layers(tape, params, activation, layer + 1, names_.size() - 1, hook);
  return upsample_bilinear(tape, logits, out_h, out_w);
}

template class SegNet<float>;
template class SegNet<double>;

}  // namespace netwarp
