#include <doctest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "netwarp/metrics.hpp"
#include "support.hpp"

using namespace netwarp;
using testutil::label_map;

namespace {

/// 8x8 map, class 0 left of column 4 and class 1 from column 4 on.
LabelMap two_regions() {
  LabelMap m(8, 8);
  for (std::size_t y = 0; y < 8; ++y) {
    for (std::size_t x = 0; x < 8; ++x) m.at(y, x) = x < 4 ? 0 : 1;
  }
  return m;
}

ConfusionMatrix confusion(const LabelMap& pred, const LabelMap& gt, int k) {
  ConfusionMatrix c(k);
  c.add(pred, gt);
  return c;
}

LabelMap random_labels(std::size_t h, std::size_t w, int k, std::mt19937_64& rng) {
  LabelMap m(h, w);
  for (auto& v : m.labels) v = static_cast<int>(rng() % static_cast<unsigned>(k));
  return m;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("IoU of the 2x2 two-class case") {
  const auto gt = label_map(2, 2, {0, 0, 1, 1});
  const auto pred = label_map(2, 2, {0, 1, 1, 1});
  const auto conf = confusion(pred, gt, 2);
  CHECK(conf.total() == 4);
  CHECK(conf.at(0, 1) == 1);
  const auto s = iou(conf);
  CHECK(s.per_class[0] == 1.0 / 2.0);
  CHECK(s.per_class[1] == 2.0 / 3.0);
  CHECK(s.mean == (1.0 / 2.0 + 2.0 / 3.0) / 2.0);
  CHECK(std::abs(s.mean - 7.0 / 12.0) < 1e-15);
}

TEST_CASE("perfect predictions, predicted-only classes and absent classes") {
  const auto gt = label_map(2, 3, {0, 0, 1, 1, 2, 2});
  const auto perfect = iou(confusion(gt, gt, 4));
  CHECK(perfect.per_class[0] == 1.0);
  CHECK(perfect.per_class[2] == 1.0);
  CHECK(std::isnan(perfect.per_class[3]));  // absent from both: excluded
  CHECK(perfect.mean == 1.0);

  const auto pred = label_map(2, 3, {0, 3, 1, 1, 2, 2});
  const auto s = iou(confusion(pred, gt, 4));
  CHECK(s.per_class[3] == 0.0);
  CHECK(s.per_class[0] == 0.5);
  CHECK(s.mean == (0.5 + 1.0 + 1.0 + 0.0) / 4.0);

  auto ignored = gt;
  ignored.labels[0] = 255;
  CHECK(confusion(gt, ignored, 4).total() == 5);
  CHECK_THROWS_AS(ConfusionMatrix(1), ValidationError);
}

TEST_CASE("trimap: empty band is undefined") {
  const LabelMap flat(6, 6);
  const auto s = trimap_iou(flat, flat, 2, 2);
  CHECK_FALSE(s.defined);
  CHECK(std::isnan(s.mean));
  CHECK_THROWS_AS(trimap_iou(flat, flat, 2, 0), ValidationError);
}

TEST_CASE("trimap: a flipped pixel counts only inside the band") {
  const auto gt = two_regions();
  const auto mask = trimap_mask(gt, 2);
  int band = 0;
  for (std::size_t y = 0; y < 8; ++y) {
    for (std::size_t x = 0; x < 8; ++x) {
      CHECK(mask[y * 8 + x] == (x >= 1 && x <= 6 ? 1 : 0));
      band += mask[y * 8 + x];
    }
  }
  CHECK(band == 48);

  const auto clean = trimap_iou(gt, gt, 2, 2);
  CHECK(clean.mean == 1.0);

  auto inside = gt;
  inside.at(0, 3) = 1;
  const auto a = trimap_iou(inside, gt, 2, 2);
  CHECK(a.per_class[0] == 23.0 / 24.0);
  CHECK(a.per_class[1] == 24.0 / 25.0);
  CHECK(a.mean == (23.0 / 24.0 + 24.0 / 25.0) / 2.0);
  CHECK(a.mean < clean.mean);

  auto outside = gt;
  outside.at(0, 0) = 1;
  CHECK(trimap_iou(outside, gt, 2, 2).mean == clean.mean);
  // Plain IoU still sees the outside flip.
  CHECK(iou(confusion(outside, gt, 2)).mean < 1.0);
}

TEST_CASE("trimap with an unbounded band equals IoU") {
  std::mt19937_64 rng(1);
  for (int k = 0; k < 10; ++k) {
    const auto gt = random_labels(9, 11, 3, rng);
    const auto pred = random_labels(9, 11, 3, rng);
    const auto t = trimap_iou(pred, gt, 3, 100);
    const auto i = iou(confusion(pred, gt, 3));
    CHECK(t.per_class == i.per_class);
  }
}

TEST_CASE("iIoU on the two-instance toy map") {
  // Class 1 has instances of 4 and 2 pixels, so the average size is 3.
  const auto gt = label_map(1, 8, {1, 1, 1, 1, 1, 1, 0, 0});
  const auto inst = label_map(1, 8, {1, 1, 1, 1, 2, 2, 0, 0});
  const auto avg = class_average_instance_sizes({gt}, {inst}, 2);
  CHECK(avg[1] == 3.0);

  // Missing the small instance: IoU 4/6, iIoU 3/(3 + 3).
  const auto pred = label_map(1, 8, {1, 1, 1, 1, 0, 0, 0, 0});
  CHECK(iou(confusion(pred, gt, 2)).per_class[1] == 4.0 / 6.0);
  const auto s = iiou(pred, gt, inst, 2, {1}, avg);
  CHECK(s.per_class[1] == 0.5);
  CHECK(std::isnan(s.per_class[0]));
  CHECK(s.mean == 0.5);

  CHECK(iiou(gt, gt, inst, 2, {1}, avg).mean == 1.0);

  // Equal-sized instances weigh 1, so iIoU is IoU.
  const auto even = label_map(1, 8, {1, 1, 1, 0, 1, 1, 1, 0});
  const auto even_inst = label_map(1, 8, {1, 1, 1, 0, 2, 2, 2, 0});
  const auto even_pred = label_map(1, 8, {1, 0, 1, 1, 1, 1, 1, 0});
  const auto ea = class_average_instance_sizes({even}, {even_inst}, 2);
  CHECK(iiou(even_pred, even, even_inst, 2, {1}, ea).per_class[1] ==
        iou(confusion(even_pred, even, 2)).per_class[1]);

  CHECK_THROWS_AS(iiou(pred, gt, inst, 2, {1}, {0.0, 0.0}), ValidationError);
  CHECK_THROWS_AS(iiou(pred, gt, label_map(1, 8, {1, 1, 1, 1, 0, 0, 0, 0}), 2, {1}, avg),
                  ValidationError);
}

TEST_CASE("streaming accumulation equals one concatenated matrix") {
  std::mt19937_64 rng(2);
  ConfusionMatrix stream(4), merged(4);
  LabelMap all_gt(6 * 5, 7), all_pred(6 * 5, 7);
  TrimapAccumulator tri(4, 2);
  for (std::size_t f = 0; f < 5; ++f) {
    const auto gt = random_labels(6, 7, 4, rng);
    const auto pred = random_labels(6, 7, 4, rng);
    stream.add(pred, gt);
    ConfusionMatrix part(4);
    part.add(pred, gt);
    merged.merge(part);
    std::copy(gt.labels.begin(), gt.labels.end(), all_gt.labels.begin() + f * 42);
    std::copy(pred.labels.begin(), pred.labels.end(), all_pred.labels.begin() + f * 42);
    tri.add(pred, gt);
  }
  const auto batch = confusion(all_pred, all_gt, 4);
  for (int g = 0; g < 4; ++g) {
    for (int p = 0; p < 4; ++p) {
      CHECK(stream.at(g, p) == batch.at(g, p));
      CHECK(merged.at(g, p) == batch.at(g, p));
    }
  }
  CHECK(iou(stream).per_class == iou(batch).per_class);
  CHECK(tri.confusion().total() <= batch.total());
}

TEST_CASE("metrics are equivariant under class relabelling") {
  std::mt19937_64 rng(3);
  const std::vector<int> perm{2, 0, 3, 1};
  auto relabel = [&](LabelMap m) {
    for (auto& v : m.labels) v = perm[v];
    return m;
  };
  for (int k = 0; k < 5; ++k) {
    const auto gt = random_labels(10, 10, 4, rng);
    const auto pred = random_labels(10, 10, 4, rng);
    LabelMap inst(10, 10);
    for (std::size_t i = 0; i < inst.labels.size(); ++i) inst.labels[i] = gt.labels[i] + 1;
    const auto a = iou(confusion(pred, gt, 4));
    const auto b = iou(confusion(relabel(pred), relabel(gt), 4));
    const auto ta = trimap_iou(pred, gt, 4, 1);
    const auto tb = trimap_iou(relabel(pred), relabel(gt), 4, 1);
    const std::vector<int> cls{0, 1, 2, 3};
    const auto avg = class_average_instance_sizes({gt}, {inst}, 4);
    const auto avg_b = class_average_instance_sizes({relabel(gt)}, {inst}, 4);
    const auto ia = iiou(pred, gt, inst, 4, cls, avg);
    const auto ib = iiou(relabel(pred), relabel(gt), inst, 4, cls, avg_b);
    for (int c = 0; c < 4; ++c) {
      CHECK(a.per_class[c] == b.per_class[perm[c]]);
      CHECK(ta.per_class[c] == tb.per_class[perm[c]]);
      CHECK(ia.per_class[c] == ib.per_class[perm[c]]);
    }
  }
}

TEST_CASE("text and CSV reports") {
  const auto gt = label_map(2, 2, {0, 0, 1, 1});
  const auto pred = label_map(2, 2, {0, 1, 1, 1});
  MetricsReport r;
  r.name = "baseline";
  r.iou = iou(confusion(pred, gt, 2));
  r.tiou = trimap_iou(pred, gt, 2, 2);
  r.iiou = iiou(pred, gt, label_map(2, 2, {0, 0, 1, 1}), 2, {1}, {0.0, 2.0});
  std::ostringstream csv;
  write_report_csv(csv, {r});
  CHECK(csv.str() ==
        "row,class,iou,tiou,iiou\n"
        "baseline,0,0.500000,0.500000,nan\n"
        "baseline,1,0.666667,0.666667,0.666667\n"
        "baseline,mean,0.583333,0.583333,0.666667\n");
  std::ostringstream text;
  write_report_text(text, {r});
  CHECK(text.str().find("58.333333") != std::string::npos);
}

}  // TEST_SUITE
