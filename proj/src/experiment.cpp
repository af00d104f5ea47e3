#include "netwarp/experiment.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "netwarp/error.hpp"
#include "netwarp/tensor_io.hpp"

namespace netwarp {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::baseline: return "baseline";
    case Mode::netwarp: return "netwarp";
    case Mode::netwarp_noflowcnn: return "netwarp-noflowcnn";
  }
  return "?";
}

Mode parse_mode(const std::string& s) {
  if (s == "baseline") return Mode::baseline;
  if (s == "netwarp") return Mode::netwarp;
  if (s == "netwarp-noflowcnn") return Mode::netwarp_noflowcnn;
  throw ConfigError("unknown mode '" + s + "' (baseline|netwarp|netwarp-noflowcnn)");
}

std::string to_string(FlowMethod method) {
  return method == FlowMethod::ground_truth ? "ground_truth" : "block_match";
}

FlowMethod parse_flow_method(const std::string& s) {
  if (s == "ground_truth") return FlowMethod::ground_truth;
  if (s == "block_match") return FlowMethod::block_match;
  throw ConfigError("unknown flow method '" + s + "' (ground_truth|block_match)");
}

NetWarpSpec ExperimentConfig::spec_for(Mode m) const {
  NetWarpSpec spec = netwarp;
  if (m == Mode::baseline) spec.insertion_layers.clear();
  spec.use_flowcnn = m == Mode::netwarp;
  return spec;
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace {

// Walks a JSON object, rejecting keys that no handler claimed.
class Fields {
 public:
  Fields(const json& obj, std::string where) : obj_(obj), where_(std::move(where)) {
    if (!obj_.is_object()) throw ConfigError(where_ + ": expected a JSON object");
  }

  template <typename V>
  void get(const char* key, V& out) {
    seen_.insert(key);
    auto it = obj_.find(key);
    if (it == obj_.end()) return;
    try {
      out = it->template get<V>();
    } catch (const json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }

  const json* object(const char* key) {
    seen_.insert(key);
    auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!seen_.contains(it.key())) {
        throw ConfigError(where_ + ": unknown key '" + it.key() + "'");
      }
    }
  }

 private:
  const json& obj_;
  std::string where_;
  std::set<std::string> seen_;
};

json parse_json(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("invalid JSON: ") + e.what());
  }
}

void parse_block_match(const json& j, BlockMatchParams& bm) {
  Fields f(j, "block_match");
  f.get("patch", bm.patch);
  f.get("search_radius", bm.search_radius);
  f.get("subpixel", bm.subpixel);
  f.finish();
}

}  // namespace

DatasetSpec parse_dataset_spec(const std::string& json_text) {
  const json j = parse_json(json_text);
  DatasetSpec spec;
  RandomSceneParams& s = spec.scene;
  Fields f(j, "dataset");
  f.get("height", s.height);
  f.get("width", s.width);
  f.get("length", s.length);
  f.get("num_classes", s.num_classes);
  f.get("num_blobs", s.num_blobs);
  f.get("thin_bar", s.thin_bar);
  f.get("max_speed", s.max_speed);
  f.get("noise_std", s.noise_std);
  f.get("texture_amplitude", s.texture_amplitude);
  f.get("max_retries", s.max_retries);
  f.get("num_train", spec.num_train);
  f.get("num_test", spec.num_test);
  f.get("seed", spec.seed);
  f.get("labels_every", spec.labels_every);
  f.get("estimate_flow", spec.estimate_flow);
  if (const json* bm = f.object("block_match")) parse_block_match(*bm, spec.block_match);
  f.finish();
  if (spec.num_train < 1 || spec.num_test < 0) throw ConfigError("dataset: bad split sizes");
  if (spec.labels_every < 1) throw ConfigError("dataset.labels_every must be >= 1");
  return spec;
}

ExperimentConfig parse_experiment_config(const std::string& json_text) {
  const json j = parse_json(json_text);
  ExperimentConfig cfg;
  Fields f(j, "config");
  std::string dataset, init, mode, flow;
  f.get("dataset", dataset);
  f.get("init_checkpoint", init);
  f.get("mode", mode);
  f.get("flow", flow);
  f.get("steps", cfg.steps);
  f.get("freeze_base", cfg.freeze_base);
  f.get("seed", cfg.seed);
  cfg.dataset = dataset;
  cfg.init_checkpoint = init;
  if (!mode.empty()) cfg.mode = parse_mode(mode);
  if (!flow.empty()) cfg.flow = parse_flow_method(flow);

  if (const json* sj = f.object("segnet")) {
    Fields sf(*sj, "segnet");
    sf.get("channels", cfg.segnet.channels);
    sf.get("num_classes", cfg.segnet.num_classes);
    sf.finish();
  }
  if (const json* nj = f.object("netwarp")) {
    Fields nf(*nj, "netwarp");
    std::string cache;
    nf.get("insertion_layers", cfg.netwarp.insertion_layers);
    nf.get("epsilon", cfg.netwarp.warp.epsilon);
    nf.get("cache_mode", cache);
    nf.finish();
    if (!cache.empty()) cfg.cache_mode = parse_cache_mode(cache);
  }
  if (const json* oj = f.object("optimizer")) {
    Fields of(*oj, "optimizer");
    of.get("lr", cfg.adam.lr);
    of.get("beta1", cfg.adam.beta1);
    of.get("beta2", cfg.adam.beta2);
    of.get("eps", cfg.adam.eps);
    of.get("netwarp_lr", cfg.netwarp_lr);
    of.finish();
  }
  if (const json* ej = f.object("eval")) {
    Fields ef(*ej, "eval");
    ef.get("band_px", cfg.band_px);
    ef.finish();
  }
  f.finish();

  if (cfg.steps < 0) throw ConfigError("steps must be >= 0");
  if (cfg.band_px < 1) throw ConfigError("eval.band_px must be >= 1");
  if (cfg.adam.lr <= 0) throw ConfigError("optimizer.lr must be positive");
  cfg.segnet.validate();
  cfg.netwarp.warp.validate();
  // Layer names are checked against the network before any work starts.
  validate_spec(SegNet<float>(cfg.segnet), cfg.netwarp);
  return cfg;
}

ParamSet<float> initial_params(const SegNet<float>& net, const ExperimentConfig& cfg, Mode mode) {
  Rng rng(cfg.seed);
  ParamSet<float> params;
  net.init_params(params, rng);
  const NetWarpSpec spec = cfg.spec_for(mode);
  if (!spec.insertion_layers.empty()) add_netwarp_params(params, net, spec, rng);
  return params;
}

SegNetConfig infer_segnet_config(const ParamSet<float>& params) {
  SegNetConfig cfg;
  cfg.channels.clear();
  for (int i = 1;; ++i) {
    const std::string name = "segnet.conv" + std::to_string(i) + ".w";
    if (!params.contains(name)) break;
    const Shape& s = params.get(name).shape();
    if (i == 1) cfg.in_channels = s.c;
    cfg.channels.push_back(s.n);
  }
  if (cfg.channels.empty() || !params.contains("segnet.head.w")) {
    throw ConfigError("checkpoint has no base network weights");
  }
  cfg.num_classes = params.get("segnet.head.w").shape().n;
  cfg.validate();
  return cfg;
}

NetWarpSpec infer_netwarp_spec(const ParamSet<float>& params, const WarpConfig& warp) {
  NetWarpSpec spec;
  spec.warp = warp;
  for (const auto& name : params.names()) {
    const std::string prefix = "netwarp.", suffix = ".w1";
    if (name.starts_with(prefix) && name.ends_with(suffix)) {
      spec.insertion_layers.push_back(
          name.substr(prefix.size(), name.size() - prefix.size() - suffix.size()));
    }
  }
  spec.use_flowcnn = params.contains("flowcnn.conv1.w");
  return spec;
}

Mode infer_mode(const ParamSet<float>& params) {
  const NetWarpSpec spec = infer_netwarp_spec(params);
  if (spec.insertion_layers.empty()) return Mode::baseline;
  return spec.use_flowcnn ? Mode::netwarp : Mode::netwarp_noflowcnn;
}

std::vector<std::optional<FlowField<float>>> sequence_flows(const VideoSample& sample,
                                                            FlowMethod method) {
  if (method == FlowMethod::ground_truth) return sample.scene.gt_flow;
  const auto& frames = sample.scene.frames;
  bool have = sample.est_flow.size() == frames.size();
  for (std::size_t t = 1; have && t < frames.size(); ++t) have = sample.est_flow[t].has_value();
  if (have) return sample.est_flow;
  std::vector<std::optional<FlowField<float>>> flows(frames.size());
  for (std::size_t t = 1; t < frames.size(); ++t) {
    flows[t] = block_match_flow(frames[t], frames[t - 1]);
  }
  return flows;
}

namespace {

struct Pair {
  std::size_t seq;
  std::size_t t;
};

}  // namespace

TrainResult train(const ExperimentConfig& cfg, const Dataset& data, Mode mode,
                  ParamSet<float> params, const std::function<void(int, double)>& progress) {
  if (static_cast<std::size_t>(data.num_classes) != cfg.segnet.num_classes) {
    throw ConfigError("dataset has " + std::to_string(data.num_classes) +
                      " classes but the network predicts " +
                      std::to_string(cfg.segnet.num_classes));
  }
  const SegNet<float> net(cfg.segnet);
  const NetWarpSpec spec = cfg.spec_for(mode);
  validate_spec(net, spec);

  std::vector<Pair> pairs;
  std::vector<std::vector<std::optional<FlowField<float>>>> flows;
  for (std::size_t i = 0; i < data.train.size(); ++i) {
    const VideoSample& s = data.train[i];
    flows.push_back(mode == Mode::baseline ? decltype(flows)::value_type(s.scene.size())
                                           : sequence_flows(s, cfg.flow));
    for (std::size_t t = 1; t < s.scene.size(); ++t) {
      if (s.labeled[t]) pairs.push_back({i, t});
    }
  }
  if (pairs.empty() && cfg.steps > 0) throw ValidationError("no labelled training frames");

  auto is_netwarp = [](const std::string& name) {
    return name.starts_with("netwarp.") || name.starts_with("flowcnn.");
  };
  const bool freeze = cfg.freeze_base;
  auto base_trainable = [&](const std::string& name) { return !freeze && !is_netwarp(name); };
  AdamConfig nw_adam = cfg.adam;
  if (cfg.netwarp_lr > 0) nw_adam.lr = cfg.netwarp_lr;

  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_int_distribution<std::size_t> pick(0, pairs.empty() ? 0 : pairs.size() - 1);
  Adam<float> adam(cfg.adam);
  Adam<float> adam_nw(nw_adam);
  TrainResult result;
  result.losses.reserve(static_cast<std::size_t>(cfg.steps));
  for (int step = 0; step < cfg.steps; ++step) {
    const Pair p = pairs[pick(rng)];
    const SceneSequence& scene = data.train[p.seq].scene;
    Tape<float> tape;
    params.zero_grad();
    Var<float> logits;
    if (spec.insertion_layers.empty()) {
      logits = net.forward(&tape, params, constant(scene.frames[p.t]));
    } else {
      logits = two_frame_forward(&tape, net, params, scene.frames[p.t - 1], scene.frames[p.t],
                                 *flows[p.seq][p.t], spec);
    }
    const LabelMap* label = &scene.labels[p.t];
    Var<float> loss = softmax_xent_loss(&tape, logits, std::span<const LabelMap>(label, 1));
    tape.backward(loss);
    adam.step(params, base_trainable);
    adam_nw.step(params, is_netwarp);
    const double l = loss.value()[0];
    if (!std::isfinite(l)) throw ValidationError("non-finite loss at step " + std::to_string(step));
    result.losses.push_back(l);
    if (progress) progress(step, l);
  }
  result.params = std::move(params);
  return result;
}

MetricsReport evaluate(const std::string& name, const Dataset& data, const SegNet<float>& net,
                       const ParamSet<float>& params, Mode mode, const ExperimentConfig& cfg) {
  if (static_cast<std::size_t>(data.num_classes) != net.config().num_classes) {
    throw ConfigError("class-count mismatch: checkpoint predicts " +
                      std::to_string(net.config().num_classes) + " classes, dataset has " +
                      std::to_string(data.num_classes));
  }
  NetWarpSpec spec = infer_netwarp_spec(params, cfg.netwarp.warp);
  if (mode == Mode::baseline) spec.insertion_layers.clear();

  std::vector<LabelMap> all_labels, all_instances;
  for (const auto& s : data.test) {
    all_labels.insert(all_labels.end(), s.scene.labels.begin(), s.scene.labels.end());
    all_instances.insert(all_instances.end(), s.scene.instances.begin(), s.scene.instances.end());
  }
  const int k = data.num_classes;
  ConfusionMatrix conf(k);
  TrimapAccumulator tri(k, cfg.band_px);
  IiouAccumulator inst(k, data.instance_classes,
                       class_average_instance_sizes(all_labels, all_instances, k));

  for (const auto& s : data.test) {
    std::vector<LabelMap> preds;
    if (spec.insertion_layers.empty()) {
      for (const auto& frame : s.scene.frames) {
        preds.push_back(argmax_labels(net.forward(nullptr, params, constant(frame)).value()));
      }
    } else {
      preds = video_inference(net, s.scene.frames, sequence_flows(s, cfg.flow), spec, params,
                              cfg.cache_mode);
    }
    for (std::size_t t = 0; t < preds.size(); ++t) {
      conf.add(preds[t], s.scene.labels[t]);
      tri.add(preds[t], s.scene.labels[t]);
      inst.add(preds[t], s.scene.labels[t], s.scene.instances[t]);
    }
  }
  MetricsReport report;
  report.name = name;
  report.iou = iou(conf);
  report.tiou = tri.scores();
  report.iiou = inst.scores();
  report.band_px = cfg.band_px;
  report.pixels = conf.total();
  return report;
}

void save_checkpoint(const fs::path& path, const ParamSet<float>& params) {
  save_archive(path, params.to_archive());
}

ParamSet<float> load_checkpoint(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("checkpoint not found: " + path.string());
  return ParamSet<float>::from_archive(load_archive(path));
}

}  // namespace netwarp
