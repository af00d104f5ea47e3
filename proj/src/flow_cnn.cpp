#include "netwarp/flow_cnn.hpp"

#include <array>

namespace netwarp {

namespace {

struct ConvSpec {
  const char* name;
  std::size_t out, in;
};

constexpr std::array<ConvSpec, 4> kLayers{{
    {"flowcnn.conv1", 16, 11},
    {"flowcnn.conv2", 32, 16},
    {"flowcnn.conv3", 2, 32},
    {"flowcnn.conv4", 2, 4},
}};

}  // namespace

template <typename T>
FlowCnnParams<T> FlowCnnParams<T>::from(const ParamSet<T>& params) {
  auto w = [&](int i) { return params.get(std::string(kLayers[i].name) + ".w"); };
  auto b = [&](int i) { return params.get(std::string(kLayers[i].name) + ".b"); };
  return FlowCnnParams{w(0), b(0), w(1), b(1), w(2), b(2), w(3), b(3)};
}

template <typename T>
void add_flowcnn_params(ParamSet<T>& params, Rng& rng, double stddev) {
  const std::size_t before = params.parameter_count("flowcnn.");
  for (const auto& layer : kLayers) {
    params.add(std::string(layer.name) + ".w", gaussian<T>(Shape{layer.out, layer.in, 3, 3}, stddev, rng));
    params.add(std::string(layer.name) + ".b", Tensor<T>(Shape{1, layer.out, 1, 1}));
  }
  const std::size_t added = params.parameter_count("flowcnn.") - before;
  if (added != FlowCnnParams<T>::kParameterCount) {
    throw ConfigError("flow network has " + std::to_string(added) + " parameters, expected " +
                      std::to_string(FlowCnnParams<T>::kParameterCount));
  }
}

template <typename T>
Tensor<T> build_flowcnn_input(const FlowField<T>& flow, const Tensor<T>& frame_t,
                              const Tensor<T>& frame_prev) {
  const Shape& fs = flow.shape();
  for (const Tensor<T>* frame : {&frame_t, &frame_prev}) {
    const Shape& s = frame->shape();
    if (s.c != 3 || s.n != fs.n || s.h != fs.h || s.w != fs.w) {
      throw DimensionError("build_flowcnn_input: frame " + s.str() + " incompatible with flow " +
                           fs.str());
    }
  }
  Tensor<T> out(Shape{fs.n, 11, fs.h, fs.w});
  const std::size_t hw = fs.h * fs.w;
  for (std::size_t n = 0; n < fs.n; ++n) {
    for (std::size_t c = 0; c < 2; ++c) {
      std::copy(flow.tensor().plane(n, c), flow.tensor().plane(n, c) + hw, out.plane(n, c));
    }
    for (std::size_t c = 0; c < 3; ++c) {
      const T* a = frame_t.plane(n, c);
      const T* b = frame_prev.plane(n, c);
      std::copy(a, a + hw, out.plane(n, 2 + c));
      std::copy(b, b + hw, out.plane(n, 5 + c));
      T* d = out.plane(n, 8 + c);
      for (std::size_t i = 0; i < hw; ++i) d[i] = a[i] - b[i];
    }
  }
  return out;
}

template <typename T>
Var<T> flowcnn_forward(Tape<T>* tape, const Var<T>& input11, const Var<T>& flow,
                       const FlowCnnParams<T>& p) {
  if (input11.shape().c != FlowCnnParams<T>::kInputChannels) {
    throw DimensionError("flowcnn_forward: expected 11 input channels, got " +
                         input11.shape().str());
  }
  if (flow.shape().c != 2) throw DimensionError("flowcnn_forward: flow " + flow.shape().str());
  Var<T> h = relu(tape, conv2d(tape, input11, p.conv1_w, p.conv1_b, 1, 1));
  h = relu(tape, conv2d(tape, h, p.conv2_w, p.conv2_b, 1, 1));
  h = conv2d(tape, h, p.conv3_w, p.conv3_b, 1, 1);
  const std::array<Var<T>, 2> skip{h, flow};
  h = concat_channels<T>(tape, skip);
  return conv2d(tape, h, p.conv4_w, p.conv4_b, 1, 1);
}

#define NETWARP_INSTANTIATE_FLOWCNN(T)                                                        \
  template struct FlowCnnParams<T>;                                                          \
  template void add_flowcnn_params(ParamSet<T>&, Rng&, double);                               \
  template Tensor<T> build_flowcnn_input(const FlowField<T>&, const Tensor<T>&, const Tensor<T>&); \
  template Var<T> flowcnn_forward(Tape<T>*, const Var<T>&, const Var<T>&, const FlowCnnParams<T>&);

NETWARP_INSTANTIATE_FLOWCNN(float)
NETWARP_INSTANTIATE_FLOWCNN(double)

}  // namespace netwarp
