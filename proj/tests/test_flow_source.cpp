#include <doctest.h>

#include "netwarp/flow_source.hpp"
#include "netwarp/synth.hpp"
#include "support.hpp"

using namespace netwarp;

namespace {

SceneSpec translating_scene(double vx, double vy) {
  // One large textured rectangle covering the canvas, so every interior pixel
  // is a pure translation.
  SceneSpec spec;
  spec.height = 40;
  spec.width = 48;
  spec.length = 2;
  spec.num_classes = 2;
  spec.texture_amplitude = 0.5;
  spec.shapes = {ShapeSpec{ShapeKind::rectangle, 1, 24, 20, 44, 38, vx, vy, 17}};
  return spec;
}

}  // namespace

TEST_SUITE("flow-source") {

TEST_CASE("identical frames give zero flow") {
  std::mt19937_64 r(1);
  const auto f = testutil::random_tensor<float>({1, 3, 20, 24}, r, 0, 1);
  const auto flow = block_match_flow(f, f);
  CHECK(flow.shape() == Shape{1, 2, 20, 24});
  for (float v : flow.tensor().data()) CHECK(v == 0.0f);
}

TEST_CASE("block matching recovers translations with the generator's sign") {
  for (auto [vx, vy] : {std::pair{3.0, 0.0}, {-2.0, 1.0}, {1.5, -2.5}, {0.0, 0.0}, {-5.0, -4.0}}) {
    const SceneSequence seq = generate(translating_scene(vx, vy));
    const FlowField<float>& gt = *seq.gt_flow[1];
    const auto est = block_match_flow(seq.frames[1], seq.frames[0]);
    double worst = 0;
    for (std::size_t y = 12; y < 28; ++y) {
      for (std::size_t x = 12; x < 36; ++x) {
        const double du = est.u(0, y, x) - gt.u(0, y, x);
        const double dv = est.v(0, y, x) - gt.v(0, y, x);
        worst = std::max(worst, std::hypot(du, dv));
      }
    }
    CHECK_MESSAGE(worst <= 0.5, "translation " << vx << "," << vy);
    // Content moving right means the reverse flow points left.
    CHECK(gt.u(0, 20, 24) == static_cast<float>(-vx));
  }
}

TEST_CASE("frames smaller than a patch are rejected") {
  const Tensor<float> tiny(Shape{1, 3, 5, 5});
  CHECK_THROWS_AS(block_match_flow(tiny, tiny), ValidationError);
  const Tensor<float> batch(Shape{2, 3, 16, 16});
  CHECK_THROWS_AS(block_match_flow(batch, batch), DimensionError);
}

TEST_CASE("ties go to the smallest displacement") {
  // A flat image matches every candidate equally.
  const Tensor<float> flat(Shape{1, 3, 16, 16}, 0.5f);
  BlockMatchParams p;
  p.subpixel = false;
  const auto flow = block_match_flow(flat, flat, p);
  for (float v : flow.tensor().data()) CHECK(v == 0.0f);
}

}  // TEST_SUITE
