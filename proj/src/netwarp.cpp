#include "netwarp/netwarp.hpp"

#include <algorithm>
#include <set>

namespace netwarp {

std::string to_string(CacheMode mode) {
  return mode == CacheMode::recurrent ? "recurrent" : "window";
}

CacheMode parse_cache_mode(const std::string& s) {
  if (s == "recurrent") return CacheMode::recurrent;
  if (s == "window") return CacheMode::window;
  throw ConfigError("unknown cache mode '" + s + "' (expected recurrent|window)");
}

template <typename T>
CombineWeights<T> CombineWeights<T>::identity(std::size_t channels) {
  return {parameter(Tensor<T>(Shape{1, channels, 1, 1}, T(1))),
          parameter(Tensor<T>(Shape{1, channels, 1, 1}, T(0)))};
}

template <typename T>
CombineWeights<T> CombineWeights<T>::from(const ParamSet<T>& params, const std::string& layer) {
  return {params.get("netwarp." + layer + ".w1"), params.get("netwarp." + layer + ".w2")};
}

template <typename T>
void validate_spec(const SegNet<T>& net, const NetWarpSpec& spec) {
  spec.warp.validate();
  std::set<std::string> seen;
  for (const auto& name : spec.insertion_layers) {
    if (!net.has_layer(name)) throw ConfigError("unknown insertion layer '" + name + "'");
    if (!seen.insert(name).second) throw ConfigError("duplicate insertion layer '" + name + "'");
  }
}

template <typename T>
void add_netwarp_params(ParamSet<T>& params, const SegNet<T>& net, const NetWarpSpec& spec,
                        Rng& rng) {
  validate_spec(net, spec);
  for (const auto& name : spec.insertion_layers) {
    const std::size_t c = net.layer_channels(net.layer_index(name));
    auto w = CombineWeights<T>::identity(c);
    params.add("netwarp." + name + ".w1", w.w1.value());
    params.add("netwarp." + name + ".w2", w.w2.value());
  }
  if (spec.use_flowcnn && !spec.insertion_layers.empty()) add_flowcnn_params(params, rng);
}

template <typename T>
Var<T> netwarp_apply(Tape<T>* tape, const Var<T>& z_t, const Var<T>& z_prev, const Var<T>& flow,
                     const CombineWeights<T>& weights, const WarpConfig& cfg) {
  require_same_shape(z_t.shape(), z_prev.shape(), "netwarp_apply");
  const Shape& s = z_t.shape();
  const Shape& f = flow.shape();
  if (f.c != 2 || f.n != s.n || f.h != s.h || f.w != s.w) {
    throw DimensionError("netwarp_apply: flow " + f.str() + " not at representation resolution " +
                         s.str());
  }
  Var<T> warped = warp(tape, z_prev, flow, cfg);
  return add(tape, scale_per_channel(tape, z_t, weights.w1),
             scale_per_channel(tape, warped, weights.w2));
}

template <typename T>
Var<T> transform_flow(Tape<T>* tape, const ParamSet<T>& params, const NetWarpSpec& spec,
                      const Tensor<T>& frame_prev, const Tensor<T>& frame_t,
                      const FlowField<T>& flow) {
  Var<T> raw = constant(flow.tensor());
  if (!spec.use_flowcnn) return raw;
  Var<T> input = constant(build_flowcnn_input(flow, frame_t, frame_prev));
  return flowcnn_forward(tape, input, raw, FlowCnnParams<T>::from(params));
}

namespace {

template <typename T>
std::vector<std::size_t> sorted_layers(const SegNet<T>& net, const NetWarpSpec& spec) {
  std::vector<std::size_t> idx;
  for (const auto& name : spec.insertion_layers) idx.push_back(net.layer_index(name));
  std::sort(idx.begin(), idx.end());
  return idx;
}

template <typename T>
void check_pair(const Tensor<T>& frame_prev, const Tensor<T>& frame_t, const FlowField<T>& flow) {
  require_same_shape(frame_prev.shape(), frame_t.shape(), "two_frame_forward frames");
  const Shape& s = frame_t.shape();
  if (flow.batch() != s.n || flow.height() != s.h || flow.width() != s.w) {
    throw DimensionError("flow " + flow.shape().str() + " does not match frames " + s.str());
  }
}

}  // namespace

template <typename T>
Var<T> two_frame_forward(Tape<T>* tape, const SegNet<T>& net, const ParamSet<T>& params,
                         const Tensor<T>& frame_prev, const Tensor<T>& frame_t,
                         const FlowField<T>& flow, const NetWarpSpec& spec) {
  validate_spec(net, spec);
  check_pair(frame_prev, frame_t, flow);
  const auto layers = sorted_layers(net, spec);
  if (layers.empty()) return net.forward(tape, params, constant(frame_t));

  std::map<std::size_t, Var<T>> prev_acts;
  net.run_layers(tape, params, constant(frame_prev), 0, layers.back(),
                 [&](std::size_t i, const Var<T>& a) {
                   if (std::binary_search(layers.begin(), layers.end(), i)) prev_acts[i] = a;
                   return a;
                 });

  const Var<T> lambda = transform_flow(tape, params, spec, frame_prev, frame_t, flow);
  std::map<int, Var<T>> flow_at_stride;
  auto flow_for = [&](int stride) -> const Var<T>& {
    auto it = flow_at_stride.find(stride);
    if (it == flow_at_stride.end()) {
      it = flow_at_stride.emplace(stride, subsample_flow(tape, lambda, stride)).first;
    }
    return it->second;
  };

  return net.forward(tape, params, constant(frame_t), [&](std::size_t i, const Var<T>& a) {
    if (!prev_acts.contains(i)) return a;
    const std::string& name = net.layer_names()[i];
    return netwarp_apply(tape, a, prev_acts.at(i), flow_for(net.layer_stride(i)),
                         CombineWeights<T>::from(params, name), spec.warp);
  });
}

template <typename T>
LabelMap argmax_labels(const Tensor<T>& logits) {
  const Shape& s = logits.shape();
  LabelMap out(s.h, s.w);
  const std::size_t hw = s.h * s.w;
  for (std::size_t i = 0; i < hw; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < s.c; ++c) {
      if (logits.plane(0, c)[i] > logits.plane(0, best)[i]) best = c;
    }
    out.labels[i] = static_cast<int>(best);
  }
  return out;
}

template <typename T>
VideoSegmenter<T>::VideoSegmenter(const SegNet<T>& net, const ParamSet<T>& params,
                                  NetWarpSpec spec, CacheMode mode)
    : net_(net), params_(params), spec_(std::move(spec)), mode_(mode) {
  validate_spec(net_, spec_);
  layers_ = sorted_layers(net_, spec_);
  for (std::size_t i : layers_) {
    weights_.emplace(i, CombineWeights<T>::from(params_, net_.layer_names()[i]));
  }
}

template <typename T>
void VideoSegmenter<T>::reset() {
  cache_.clear();
  prev_frame_ = Tensor<T>();
  logits_ = Tensor<T>();
  frames_ = 0;
}

template <typename T>
LabelMap VideoSegmenter<T>::step(const Tensor<T>& frame, const std::optional<FlowField<T>>& flow) {
  std::map<std::string, Tensor<T>> next_cache;
  auto remember = [&](std::size_t i, const Var<T>& a) {
    next_cache[net_.layer_names()[i]] = a.value();
  };
  const bool first = frames_ == 0 || layers_.empty();
  Var<T> logits;
  if (first) {
    logits = net_.forward(nullptr, params_, constant(frame), [&](std::size_t i, const Var<T>& a) {
      if (std::binary_search(layers_.begin(), layers_.end(), i)) remember(i, a);
      return a;
    });
  } else {
    if (!flow) throw ValidationError("video inference: missing flow for frame " + std::to_string(frames_));
    check_pair(prev_frame_, frame, *flow);
    const Var<T> lambda = transform_flow<T>(nullptr, params_, spec_, prev_frame_, frame, *flow);
    logits = net_.forward(nullptr, params_, constant(frame), [&](std::size_t i, const Var<T>& a) {
      if (!std::binary_search(layers_.begin(), layers_.end(), i)) return a;
      const std::string& name = net_.layer_names()[i];
      const Var<T> sub = subsample_flow<T>(nullptr, lambda, net_.layer_stride(i));
      Var<T> combined = netwarp_apply<T>(nullptr, a, constant(cache_.at(name)), sub,
                                         weights_.at(i), spec_.warp);
      if (mode_ == CacheMode::recurrent) remember(i, combined);
      return combined;
    });
    if (mode_ == CacheMode::window) {
      net_.run_layers(nullptr, params_, constant(frame), 0, layers_.back(),
                      [&](std::size_t i, const Var<T>& a) {
                        if (std::binary_search(layers_.begin(), layers_.end(), i)) remember(i, a);
                        return a;
                      });
    }
  }
  cache_ = std::move(next_cache);
  prev_frame_ = frame;
  logits_ = logits.value();
  ++frames_;
  return argmax_labels(logits_);
}

template <typename T>
std::vector<LabelMap> video_inference(const SegNet<T>& net, const std::vector<Tensor<T>>& frames,
                                      const std::vector<std::optional<FlowField<T>>>& flows,
                                      const NetWarpSpec& spec, const ParamSet<T>& params,
                                      CacheMode mode) {
  if (flows.size() != frames.size()) {
    throw ValidationError("video inference: " + std::to_string(frames.size()) + " frames but " +
                          std::to_string(flows.size()) + " flows");
  }
  VideoSegmenter<T> seg(net, params, spec, mode);
  std::vector<LabelMap> out;
  out.reserve(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) out.push_back(seg.step(frames[i], flows[i]));
  return out;
}

#define NETWARP_INSTANTIATE_ASSEMBLY(T)                                                           \
  template struct CombineWeights<T>;                                                             \
  template void validate_spec(const SegNet<T>&, const NetWarpSpec&);                             \
  template void add_netwarp_params(ParamSet<T>&, const SegNet<T>&, const NetWarpSpec&, Rng&);    \
  template Var<T> netwarp_apply(Tape<T>*, const Var<T>&, const Var<T>&, const Var<T>&,           \
                                const CombineWeights<T>&, const WarpConfig&);                    \
  template Var<T> transform_flow(Tape<T>*, const ParamSet<T>&, const NetWarpSpec&,               \
                                 const Tensor<T>&, const Tensor<T>&, const FlowField<T>&);       \
  template Var<T> two_frame_forward(Tape<T>*, const SegNet<T>&, const ParamSet<T>&,              \
                                    const Tensor<T>&, const Tensor<T>&, const FlowField<T>&,     \
                                    const NetWarpSpec&);                                         \
  template LabelMap argmax_labels(const Tensor<T>&);                                             \
  template class VideoSegmenter<T>;                                                              \
  template std::vector<LabelMap> video_inference(                                                \
      const SegNet<T>&, const std::vector<Tensor<T>>&,                                           \
      const std::vector<std::optional<FlowField<T>>>&, const NetWarpSpec&, const ParamSet<T>&,   \
      CacheMode);

NETWARP_INSTANTIATE_ASSEMBLY(float)
NETWARP_INSTANTIATE_ASSEMBLY(double)

}  // namespace netwarp
