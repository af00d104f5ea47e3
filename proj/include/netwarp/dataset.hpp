#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "netwarp/flow_source.hpp"
#include "netwarp/synth.hpp"

namespace netwarp {

/// 8-bit binary PGM (P5); values must lie in [0, 255].
void write_pgm(const std::filesystem::path& path, const LabelMap& map);
LabelMap read_pgm(const std::filesystem::path& path);

/// A generated sequence plus what training and evaluation need alongside it.
struct VideoSample {
  SceneSequence scene;
  /// Block-matching estimate of the reverse flow; absent for frame 0.
  std::vector<std::optional<FlowField<float>>> est_flow;
  /// Whether frame i carries ground-truth labels usable for training.
  std::vector<bool> labeled;
};

struct Dataset {
  int num_classes = 3;
  /// Classes scored by iIoU.
  std::vector<int> instance_classes;
  std::vector<VideoSample> train;
  std::vector<VideoSample> test;
};

struct DatasetSpec {
  RandomSceneParams scene;
  int num_train = 6;
  int num_test = 3;
  std::uint64_t seed = 1;
  /// Training frames carry labels every N-th frame (1 = all).
  int labels_every = 1;
  bool estimate_flow = true;
  BlockMatchParams block_match;
};

/// Deterministic in-memory generation. Classes 1.. are instance classes.
Dataset build_dataset(const DatasetSpec& spec);

// On-disk layout:
//   <root>/train/seq_000/{frame_000.nwt, label_000.pgm, inst_000.pgm, occ_000.pgm,
//                         flow_gt_001.flo, flow_bm_001.flo, manifest.txt}
//   <root>/index.txt
// manifest.txt has one line per frame:
//   <index> <frame> <label|-> <instance> <gt flow|-> <estimated flow|-> <occlusion>
// index.txt lists "num_classes K", "instance_classes a b ..." and one
// "sequence <split> <relative dir>" line per sequence. Manifests and the index
// are written last.
void save_sequence(const std::filesystem::path& dir, const VideoSample& sample);
VideoSample load_sequence(const std::filesystem::path& dir, int num_classes);

void save_dataset(const std::filesystem::path& root, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& root);

}  // namespace netwarp
