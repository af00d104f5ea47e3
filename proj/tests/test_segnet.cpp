#include <doctest.h>

#include "netwarp/netwarp.hpp"
#include "netwarp/segnet.hpp"
#include "netwarp/synth.hpp"
#include "support.hpp"

using namespace netwarp;
using testutil::random_tensor;

namespace {

// Align-corners-false bilinear resize written out per output pixel.
Tensor<double> naive_resize(const Tensor<double>& in, std::size_t oh, std::size_t ow) {
  const Shape s = in.shape();
  Tensor<double> out(Shape{s.n, s.c, oh, ow});
  auto tap = [](std::size_t o, std::size_t isz, std::size_t osz) {
    const double scale = static_cast<double>(isz) / static_cast<double>(osz);
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    const std::size_t i0 = std::min(static_cast<std::size_t>(src), isz - 1);
    const std::size_t i1 = std::min(i0 + 1, isz - 1);
    const double l1 = src - static_cast<double>(i0);
    return std::tuple{i0, i1, 1.0 - l1, l1};
  };
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      for (std::size_t y = 0; y < oh; ++y) {
        const auto [y0, y1, a0, a1] = tap(y, s.h, oh);
        for (std::size_t x = 0; x < ow; ++x) {
          const auto [x0, x1, b0, b1] = tap(x, s.w, ow);
          out.at(n, c, y, x) = a0 * (b0 * in.at(n, c, y0, x0) + b1 * in.at(n, c, y0, x1)) +
                               a1 * (b0 * in.at(n, c, y1, x0) + b1 * in.at(n, c, y1, x1));
        }
      }
    }
  }
  return out;
}

}  // namespace

TEST_SUITE("base-segnet") {

TEST_CASE("layer names, strides and activation shapes") {
  SegNet<float> net(SegNetConfig{});
  const std::vector<std::string> names{"conv1", "conv2", "conv3", "head"};
  CHECK(net.layer_names() == names);
  CHECK(net.layer_stride(0) == 1);
  CHECK(net.layer_stride(1) == 2);
  CHECK(net.layer_stride(2) == 4);
  CHECK(net.layer_stride(3) == 4);
  CHECK_THROWS_AS(net.layer_index("fc7"), ConfigError);

  ParamSet<float> params;
  Rng rng(1);
  net.init_params(params, rng);
  std::mt19937_64 r(2);
  auto x = constant(random_tensor<float>({1, 3, 32, 32}, r, 0, 1));
  CHECK(net.forward_to(nullptr, params, x, "conv2").shape() == Shape{1, 32, 16, 16});
  CHECK(net.forward_to(nullptr, params, x, "conv3").shape() == Shape{1, 64, 8, 8});
  CHECK(net.forward(nullptr, params, x).shape() == Shape{1, 3, 32, 32});
  // Odd sizes pool in ceil mode.
  auto odd = constant(random_tensor<float>({1, 3, 13, 11}, r, 0, 1));
  CHECK(net.forward_to(nullptr, params, odd, "conv3").shape() == Shape{1, 64, 4, 3});
  CHECK(net.forward(nullptr, params, odd).shape() == Shape{1, 3, 13, 11});

  SegNetConfig bad;
  bad.num_classes = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("forward to the head, then upsampled, is the full forward; resuming is exact") {
  SegNet<float> net(SegNetConfig{});
  ParamSet<float> params;
  Rng rng(3);
  net.init_params(params, rng);
  std::mt19937_64 r(4);
  auto x = constant(random_tensor<float>({1, 3, 24, 20}, r, 0, 1));
  const auto head = net.forward_to(nullptr, params, x, "head");
  const auto full = net.forward(nullptr, params, x).value();
  CHECK(upsample_bilinear<float>(nullptr, head, 24, 20).value() == full);
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const auto z = net.forward_to(nullptr, params, x, net.layer_names()[l]);
    CHECK(net.forward_from(nullptr, params, z, l, 24, 20).value() == full);
  }
}

TEST_CASE("bilinear upsampling: identity, constants and the per-pixel oracle") {
  std::mt19937_64 r(5);
  const auto m = random_tensor<double>({1, 2, 5, 6}, r);
  CHECK(upsample_bilinear<double>(nullptr, constant(m), 5, 6).value() == m);
  const auto c = upsample_bilinear<double>(nullptr, constant(Tensor<double>(Shape{1, 1, 2, 2}, 0.37)), 4, 4).value();
  for (double v : c.data()) CHECK(v == 0.37);
  for (auto [oh, ow] : {std::pair<std::size_t, std::size_t>{10, 12}, {7, 13}, {5, 6}, {16, 21}}) {
    CHECK(upsample_bilinear<double>(nullptr, constant(m), oh, ow).value() == naive_resize(m, oh, ow));
  }
  CHECK_THROWS_AS(upsample_bilinear<double>(nullptr, constant(m), 4, 6), ValidationError);
}

TEST_CASE("trains to 95% pixel accuracy on one moving square within 200 steps") {
  SceneSpec spec;
  spec.height = spec.width = 32;
  spec.length = 8;
  spec.num_classes = 2;
  spec.class_colors = {{0.2, 0.2, 0.2}, {0.8, 0.6, 0.3}};
  spec.shapes = {ShapeSpec{ShapeKind::rectangle, 1, 12, 14, 10, 8, 1.5, 0.5, 3}};
  const SceneSequence seq = generate(spec);
  SegNetConfig cfg;
  cfg.num_classes = 2;
  SegNet<float> net(cfg);
  ParamSet<float> params;
  Rng rng(6);
  net.init_params(params, rng);
  Adam<float> adam;
  for (int step = 0; step < 200; ++step) {
    const std::size_t t = static_cast<std::size_t>(step) % seq.size();
    Tape<float> tape;
    params.zero_grad();
    auto logits = net.forward(&tape, params, constant(seq.frames[t]));
    tape.backward(softmax_xent_loss<float>(&tape, logits, std::span(&seq.labels[t], 1)));
    adam.step(params);
  }
  std::size_t right = 0, total = 0;
  for (std::size_t t = 0; t < seq.size(); ++t) {
    const auto pred = argmax_labels(net.forward(nullptr, params, constant(seq.frames[t])).value());
    for (std::size_t i = 0; i < pred.labels.size(); ++i) right += pred.labels[i] == seq.labels[t].labels[i];
    total += pred.labels.size();
  }
  CHECK(static_cast<double>(right) / static_cast<double>(total) >= 0.95);
}

}  // TEST_SUITE
