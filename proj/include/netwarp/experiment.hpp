#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "netwarp/dataset.hpp"
#include "netwarp/metrics.hpp"
#include "netwarp/netwarp.hpp"
#include "netwarp/params.hpp"
#include "netwarp/segnet.hpp"

namespace netwarp {

enum class Mode { baseline, netwarp, netwarp_noflowcnn };

std::string to_string(Mode mode);
Mode parse_mode(const std::string& s);

enum class FlowMethod { ground_truth, block_match };

std::string to_string(FlowMethod method);
FlowMethod parse_flow_method(const std::string& s);

struct ExperimentConfig {
  std::filesystem::path dataset;
  SegNetConfig segnet;
  /// Insertion layers and warp settings; use_flowcnn is derived from `mode`.
  NetWarpSpec netwarp{{"conv3", "head"}, {}, true};
  CacheMode cache_mode = CacheMode::recurrent;
  FlowMethod flow = FlowMethod::block_match;
  AdamConfig adam;
  /// Learning rate of the NetWarp parameters; <= 0 means adam.lr.
  double netwarp_lr = 0.0;
  int steps = 2000;
  /// Train only the NetWarp parameters (combination weights and flow network).
  bool freeze_base = false;
  int band_px = 2;
  std::uint64_t seed = 1;
  Mode mode = Mode::netwarp;
  /// Optional checkpoint whose entries initialise matching parameters.
  std::filesystem::path init_checkpoint;

  NetWarpSpec spec_for(Mode m) const;
};

/// Strict JSON parsing: unknown keys and wrong types raise ConfigError.
ExperimentConfig parse_experiment_config(const std::string& json_text);
DatasetSpec parse_dataset_spec(const std::string& json_text);
std::string read_text_file(const std::filesystem::path& path);

/// Fresh parameters for `mode`: base network plus, for NetWarp modes, the
/// combination weights (w1 = 1, w2 = 0) and optionally the flow network.
ParamSet<float> initial_params(const SegNet<float>& net, const ExperimentConfig& cfg, Mode mode);

/// Recovers the base-network configuration from "segnet.*" weight shapes.
SegNetConfig infer_segnet_config(const ParamSet<float>& params);
/// Recovers insertion layers and the flow-network switch from parameter names.
NetWarpSpec infer_netwarp_spec(const ParamSet<float>& params, const WarpConfig& warp = {});
Mode infer_mode(const ParamSet<float>& params);

struct TrainResult {
  ParamSet<float> params;
  std::vector<double> losses;
};

/// Adam training on adjacent frame pairs (t-1, t) whose frame t is labelled.
/// Baseline mode trains the single-image network on frame t only.
/// `progress`, when set, is called after every step with (step, loss).
TrainResult train(const ExperimentConfig& cfg, const Dataset& data, Mode mode,
                  ParamSet<float> params,
                  const std::function<void(int, double)>& progress = {});

/// Segments every test sequence online and scores it. Baseline mode runs the
/// network frame by frame.
MetricsReport evaluate(const std::string& name, const Dataset& data, const SegNet<float>& net,
                       const ParamSet<float>& params, Mode mode, const ExperimentConfig& cfg);

/// Reverse flows of a sequence according to `method`.
std::vector<std::optional<FlowField<float>>> sequence_flows(const VideoSample& sample,
                                                            FlowMethod method);

void save_checkpoint(const std::filesystem::path& path, const ParamSet<float>& params);
ParamSet<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace netwarp
