#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "netwarp/tensor.hpp"
#include "netwarp/warp.hpp"

namespace netwarp {

enum class ShapeKind { rectangle, disc, thin_bar };

std::string to_string(ShapeKind kind);
ShapeKind parse_shape_kind(const std::string& s);

/// One moving textured shape. Position is the centre at frame 0; it moves by
/// (vx, vy) pixels per frame. Disc diameter is `width`.
struct ShapeSpec {
  ShapeKind kind = ShapeKind::rectangle;
  int class_id = 1;
  double x = 0.0, y = 0.0;
  double width = 8.0, height = 8.0;
  double vx = 0.0, vy = 0.0;
  std::uint64_t texture_seed = 0;
};

struct SceneSpec {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t length = 30;
  int num_classes = 3;
  std::uint64_t seed = 0;
  /// Drawn in order; later shapes occlude earlier ones. Background is class 0.
  std::vector<ShapeSpec> shapes;
  /// RGB base colour per class, values in [0, 1].
  std::vector<std::array<double, 3>> class_colors{{0.45, 0.45, 0.45}, {0.60, 0.40, 0.35},
                                                  {0.35, 0.45, 0.60}};
  double texture_amplitude = 0.3;
  /// Independent per-frame Gaussian pixel noise.
  double noise_std = 0.0;
  /// Velocity bound (the default block-matching search radius).
  double max_speed = 8.0;

  void validate() const;
};

struct SceneSequence {
  std::vector<Tensor<float>> frames;   // 1x3xHxW in [0, 1]
  std::vector<LabelMap> labels;        // class ids
  std::vector<LabelMap> instances;     // 0 = background, shape i -> i + 1
  std::vector<std::optional<FlowField<float>>> gt_flow;  // reverse flow; absent for frame 0
  std::vector<LabelMap> occlusion;     // 1 = no reliable correspondence in the previous frame
  int num_classes = 0;

  std::size_t size() const { return frames.size(); }
};

/// Deterministic rendering of a scene. A pixel is non-occluded when all four
/// bilinear corners of its flow target (with the default warp epsilon) are
/// inside the canvas and belong to the same instance in the previous frame.
SceneSequence generate(const SceneSpec& spec);

struct RandomSceneParams {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t length = 30;
  int num_classes = 3;
  /// Rectangles/discs per scene, assigned to classes 1 .. num_classes-2.
  int num_blobs = 2;
  /// One thin bar of class num_classes-1 when set.
  bool thin_bar = true;
  double max_speed = 2.0;
  double noise_std = 0.0;
  double texture_amplitude = 0.3;
  int max_retries = 50;
};

/// Samples shapes and velocities that stay on the canvas for the whole sequence
/// and re-rolls (bounded) until every class appears in every frame.
SceneSpec random_scene(const RandomSceneParams& params, std::uint64_t seed);

/// One-hot encoding of a label map, shape 1 x num_classes x H x W.
Tensor<float> one_hot(const LabelMap& labels, int num_classes);

}  // namespace netwarp
