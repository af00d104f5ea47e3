#include <doctest.h>

#include <set>

#include "netwarp/synth.hpp"
#include "netwarp/warp.hpp"

using namespace netwarp;

namespace {

// Warps the previous one-hot labels by the ground-truth flow and counts
// non-occluded pixels whose argmax disagrees with the current labels.
std::size_t consistency_violations(const SceneSequence& seq) {
  std::size_t bad = 0;
  for (std::size_t t = 1; t < seq.size(); ++t) {
    const auto warped = warp(one_hot(seq.labels[t - 1], seq.num_classes), *seq.gt_flow[t], WarpConfig{});
    for (std::size_t y = 0; y < seq.labels[t].height; ++y) {
      for (std::size_t x = 0; x < seq.labels[t].width; ++x) {
        if (seq.occlusion[t].at(y, x)) continue;
        int best = 0;
        for (int c = 1; c < seq.num_classes; ++c) {
          if (warped.at(0, c, y, x) > warped.at(0, best, y, x)) best = c;
        }
        bad += best != seq.labels[t].at(y, x);
      }
    }
  }
  return bad;
}

}  // namespace

TEST_SUITE("synth-data") {

TEST_CASE("static scenes have zero flow and identical frames") {
  SceneSpec spec;
  spec.length = 4;
  spec.shapes = {ShapeSpec{ShapeKind::disc, 1, 30, 30, 12, 12, 0, 0, 1},
                 ShapeSpec{ShapeKind::thin_bar, 2, 20, 40, 30, 2, 0, 0, 2}};
  const auto seq = generate(spec);
  REQUIRE(seq.size() == 4);
  CHECK_FALSE(seq.gt_flow[0].has_value());
  for (std::size_t t = 1; t < 4; ++t) {
    CHECK(seq.frames[t] == seq.frames[0]);
    for (float v : seq.gt_flow[t]->tensor().data()) CHECK(v == 0.0f);
  }
}

TEST_CASE("moving rectangle has the negated velocity as reverse flow") {
  SceneSpec spec;
  spec.length = 3;
  spec.num_classes = 2;
  spec.shapes = {ShapeSpec{ShapeKind::rectangle, 1, 20, 30, 16, 12, 2, 0, 4}};
  const auto seq = generate(spec);
  const auto& f = *seq.gt_flow[2];
  // Centre at frame 2 is (24, 30).
  CHECK(f.u(0, 30, 24) == -2.0f);
  CHECK(f.v(0, 30, 24) == 0.0f);
  CHECK(seq.labels[2].at(30, 24) == 1);
  CHECK(seq.instances[2].at(30, 24) == 1);
  CHECK(f.u(0, 2, 2) == 0.0f);  // background is static
}

TEST_CASE("generation is deterministic and validated") {
  const auto spec = random_scene(RandomSceneParams{}, 42);
  CHECK(generate(spec).frames == generate(spec).frames);
  CHECK(generate(spec).labels == generate(spec).labels);

  SceneSpec big;
  big.shapes = {ShapeSpec{ShapeKind::rectangle, 1, 10, 10, 100, 10, 0, 0, 1}};
  CHECK_THROWS_AS(generate(big), ValidationError);
  SceneSpec thick;
  thick.shapes = {ShapeSpec{ShapeKind::thin_bar, 2, 30, 30, 20, 5, 0, 0, 1}};
  CHECK_THROWS_AS(generate(thick), ValidationError);
  SceneSpec fast;
  fast.shapes = {ShapeSpec{ShapeKind::disc, 1, 30, 30, 10, 10, 9, 0, 1}};
  CHECK_THROWS_AS(generate(fast), ValidationError);
}

TEST_CASE("warping labels by ground-truth flow reproduces non-occluded labels") {
  RandomSceneParams p;
  p.length = 12;
  p.max_speed = 3.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto seq = generate(random_scene(p, seed));
    CHECK(consistency_violations(seq) == 0);
  }
}

TEST_CASE("random scenes keep every class in every frame and a thin bar") {
  RandomSceneParams p;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto spec = random_scene(p, seed);
    bool has_bar = false;
    for (const auto& s : spec.shapes) has_bar |= s.kind == ShapeKind::thin_bar;
    CHECK(has_bar);
    const auto seq = generate(spec);
    for (const auto& lab : seq.labels) {
      std::set<int> present(lab.labels.begin(), lab.labels.end());
      CHECK(present.size() == 3u);
    }
    for (const auto& f : seq.frames) {
      for (float v : f.data()) CHECK((v >= 0.0f && v <= 1.0f));
    }
  }
}

TEST_CASE("one-hot encoding") {
  LabelMap m(1, 3);
  m.labels = {0, 2, 1};
  const auto oh = one_hot(m, 3);
  CHECK(oh.shape() == Shape{1, 3, 1, 3});
  CHECK(oh.at(0, 2, 0, 1) == 1.0f);
  CHECK(oh.at(0, 0, 0, 1) == 0.0f);
  m.labels[0] = 3;
  CHECK_THROWS_AS(one_hot(m, 3), ValidationError);
}

}  // TEST_SUITE
