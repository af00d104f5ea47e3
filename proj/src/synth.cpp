#include "netwarp/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace netwarp {

std::string to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::rectangle: return "rectangle";
    case ShapeKind::disc: return "disc";
    case ShapeKind::thin_bar: return "thin_bar";
  }
  return "unknown";
}

ShapeKind parse_shape_kind(const std::string& s) {
  if (s == "rectangle") return ShapeKind::rectangle;
  if (s == "disc") return ShapeKind::disc;
  if (s == "thin_bar") return ShapeKind::thin_bar;
  throw ValidationError("unknown shape kind '" + s + "'");
}

void SceneSpec::validate() const {
  if (height == 0 || width == 0) throw ValidationError("scene canvas must be non-empty");
  if (length == 0) throw ValidationError("scene length must be >= 1");
  if (num_classes < 2) throw ValidationError("scene needs at least 2 classes");
  if (class_colors.size() < static_cast<std::size_t>(num_classes)) {
    throw ValidationError("scene needs a colour for each of its " + std::to_string(num_classes) +
                          " classes");
  }
  if (noise_std < 0.0 || texture_amplitude < 0.0) {
    throw ValidationError("noise and texture amplitude must be non-negative");
  }
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const ShapeSpec& s = shapes[i];
    const std::string who = "shape " + std::to_string(i) + ": ";
    if (s.class_id < 1 || s.class_id >= num_classes) {
      throw ValidationError(who + "class id " + std::to_string(s.class_id) + " out of range");
    }
    if (!(s.width > 0.0) || !(s.height > 0.0)) throw ValidationError(who + "size must be positive");
    const double extent_h = s.kind == ShapeKind::disc ? s.width : s.height;
    if (s.width > static_cast<double>(width) || extent_h > static_cast<double>(height)) {
      throw ValidationError(who + "larger than the canvas");
    }
    if (s.kind == ShapeKind::thin_bar) {
      const double thickness = std::min(s.width, s.height);
      if (thickness < 1.0 || thickness > 3.0) {
        throw ValidationError(who + "thin bar thickness must be in [1, 3] px");
      }
    }
    if (std::max(std::abs(s.vx), std::abs(s.vy)) > max_speed) {
      throw ValidationError(who + "speed exceeds " + std::to_string(max_speed) + " px/frame");
    }
  }
}

namespace {

// Smoothed uniform noise, sampled bilinearly in shape-local coordinates.
class Texture {
 public:
  Texture(std::size_t h, std::size_t w, std::uint64_t seed) : h_(h), w_(w), v_(h * w) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    std::vector<double> raw(h * w);
    for (auto& r : raw) r = dist(rng);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        int n = 0;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const long yy = static_cast<long>(y) + dy, xx = static_cast<long>(x) + dx;
            if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w)) continue;
            acc += raw[yy * w + xx];
            ++n;
          }
        }
        v_[y * w + x] = acc / n;
      }
    }
  }

  double at(std::size_t y, std::size_t x) const { return v_[y * w_ + x]; }

  double sample(double y, double x) const {
    y = std::clamp(y, 0.0, static_cast<double>(h_ - 1));
    x = std::clamp(x, 0.0, static_cast<double>(w_ - 1));
    const std::size_t y0 = static_cast<std::size_t>(std::floor(y));
    const std::size_t x0 = static_cast<std::size_t>(std::floor(x));
    const std::size_t y1 = std::min(y0 + 1, h_ - 1), x1 = std::min(x0 + 1, w_ - 1);
    const double ly = y - y0, lx = x - x0;
    return (1 - ly) * ((1 - lx) * at(y0, x0) + lx * at(y0, x1)) +
           ly * ((1 - lx) * at(y1, x0) + lx * at(y1, x1));
  }

 private:
  std::size_t h_, w_;
  std::vector<double> v_;
};

constexpr double kTextureMargin = 2.0;

bool inside(const ShapeSpec& s, double dx, double dy) {
  if (s.kind == ShapeKind::disc) {
    const double r = s.width / 2.0;
    return dx * dx + dy * dy <= r * r;
  }
  return dx >= -s.width / 2.0 && dx < s.width / 2.0 && dy >= -s.height / 2.0 &&
         dy < s.height / 2.0;
}

double extent_h(const ShapeSpec& s) { return s.kind == ShapeKind::disc ? s.width : s.height; }

}  // namespace

SceneSequence generate(const SceneSpec& spec) {
  spec.validate();
  const std::size_t H = spec.height, W = spec.width;
  SceneSequence seq;
  seq.num_classes = spec.num_classes;

  const Texture background(H, W, spec.seed ^ 0x9e3779b97f4a7c15ull);
  std::vector<Texture> textures;
  for (const auto& s : spec.shapes) {
    const auto th = static_cast<std::size_t>(std::ceil(extent_h(s) + 2 * kTextureMargin)) + 1;
    const auto tw = static_cast<std::size_t>(std::ceil(s.width + 2 * kTextureMargin)) + 1;
    textures.emplace_back(th, tw, s.texture_seed);
  }

  const float eps = static_cast<float>(WarpConfig{}.epsilon);
  for (std::size_t t = 0; t < spec.length; ++t) {
    std::mt19937_64 noise_rng(spec.seed * 1000003ull + t);
    std::normal_distribution<double> noise(0.0, spec.noise_std > 0 ? spec.noise_std : 1.0);
    Tensor<float> frame(Shape{1, 3, H, W});
    LabelMap labels(H, W, 0), inst(H, W, 0);
    FlowField<float> flow = FlowField<float>::zeros(1, H, W);
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        int owner = -1;
        double tex = background.at(y, x);
        for (std::size_t i = 0; i < spec.shapes.size(); ++i) {
          const ShapeSpec& s = spec.shapes[i];
          const double cx = s.x + s.vx * static_cast<double>(t);
          const double cy = s.y + s.vy * static_cast<double>(t);
          const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
          if (!inside(s, dx, dy)) continue;
          owner = static_cast<int>(i);
          tex = textures[i].sample(dy + extent_h(s) / 2.0 + kTextureMargin,
                                   dx + s.width / 2.0 + kTextureMargin);
        }
        const int cls = owner < 0 ? 0 : spec.shapes[owner].class_id;
        labels.at(y, x) = cls;
        inst.at(y, x) = owner + 1;
        if (owner >= 0) {
          flow.u(0, y, x) = static_cast<float>(-spec.shapes[owner].vx);
          flow.v(0, y, x) = static_cast<float>(-spec.shapes[owner].vy);
        }
        for (std::size_t c = 0; c < 3; ++c) {
          double v = spec.class_colors[cls][c] + spec.texture_amplitude * (tex - 0.5);
          if (spec.noise_std > 0) v += noise(noise_rng);
          frame.at(0, c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
      }
    }

    LabelMap occ(H, W, 1);
    if (t > 0) {
      const LabelMap& prev_inst = seq.instances.back();
      for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
          const float xs = static_cast<float>(x) + flow.u(0, y, x) + eps;
          const float ys = static_cast<float>(y) + flow.v(0, y, x) + eps;
          if (xs < 0.f || ys < 0.f || xs > static_cast<float>(W - 1) || ys > static_cast<float>(H - 1)) {
            continue;
          }
          const std::size_t x1 = static_cast<std::size_t>(std::floor(xs));
          const std::size_t y1 = static_cast<std::size_t>(std::floor(ys));
          const std::size_t x2 = std::min(x1 + 1, W - 1), y2 = std::min(y1 + 1, H - 1);
          const int me = inst.at(y, x);
          if (prev_inst.at(y1, x1) == me && prev_inst.at(y1, x2) == me &&
              prev_inst.at(y2, x1) == me && prev_inst.at(y2, x2) == me) {
            occ.at(y, x) = 0;
          }
        }
      }
      seq.gt_flow.emplace_back(std::move(flow));
    } else {
      seq.gt_flow.emplace_back(std::nullopt);
    }
    seq.frames.push_back(std::move(frame));
    seq.labels.push_back(std::move(labels));
    seq.instances.push_back(std::move(inst));
    seq.occlusion.push_back(std::move(occ));
  }
  return seq;
}

SceneSpec random_scene(const RandomSceneParams& p, std::uint64_t seed) {
  if (p.num_classes < 2) throw ValidationError("random scene needs at least 2 classes");
  if (p.num_classes > 3 && p.num_blobs < p.num_classes - 2) {
    throw ValidationError("random scene: not enough blobs to cover every class");
  }
  std::mt19937_64 rng(seed);
  auto uni = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
  const double H = static_cast<double>(p.height), W = static_cast<double>(p.width);
  const double travel = std::max<double>(1.0, static_cast<double>(p.length) - 1.0);

  // Centre position and velocity along one axis keeping [c - e/2, c + e/2] on the canvas.
  auto place = [&](double extent, double canvas, double& c, double& v) {
    const double room = std::max(0.0, canvas - extent);
    const double vmax = std::min(p.max_speed, room / travel);
    v = uni(-vmax, vmax);
    const double start_lo = extent / 2.0 + std::max(0.0, -v * travel);
    const double start_hi = canvas - extent / 2.0 - std::max(0.0, v * travel);
    c = start_hi > start_lo ? uni(start_lo, start_hi) : canvas / 2.0;
  };

  for (int attempt = 0; attempt < p.max_retries; ++attempt) {
    SceneSpec spec;
    spec.height = p.height;
    spec.width = p.width;
    spec.length = p.length;
    spec.num_classes = p.num_classes;
    spec.seed = rng();
    spec.noise_std = p.noise_std;
    spec.texture_amplitude = p.texture_amplitude;
    spec.max_speed = p.max_speed;
    while (spec.class_colors.size() < static_cast<std::size_t>(p.num_classes)) {
      spec.class_colors.push_back({uni(0.2, 0.8), uni(0.2, 0.8), uni(0.2, 0.8)});
    }
    const int blob_classes = std::max(1, p.num_classes - (p.thin_bar ? 2 : 1));
    for (int b = 0; b < p.num_blobs; ++b) {
      ShapeSpec s;
      s.kind = uni(0.0, 1.0) < 0.5 ? ShapeKind::rectangle : ShapeKind::disc;
      s.class_id = 1 + b % blob_classes;
      s.width = uni(10.0, 18.0);
      s.height = s.kind == ShapeKind::disc ? s.width : uni(10.0, 18.0);
      place(s.width, W, s.x, s.vx);
      place(extent_h(s), H, s.y, s.vy);
      s.texture_seed = rng();
      spec.shapes.push_back(s);
    }
    if (p.thin_bar) {
      ShapeSpec s;
      s.kind = ShapeKind::thin_bar;
      s.class_id = p.num_classes - 1;
      const double thickness = static_cast<double>(1 + rng() % 3);
      const double length = uni(0.4, 0.7) * std::min(H, W);
      if (uni(0.0, 1.0) < 0.5) {
        s.width = thickness;
        s.height = length;
      } else {
        s.width = length;
        s.height = thickness;
      }
      place(s.width, W, s.x, s.vx);
      place(s.height, H, s.y, s.vy);
      s.texture_seed = rng();
      spec.shapes.push_back(s);
    }

    const SceneSequence seq = generate(spec);
    bool balanced = true;
    for (const auto& lm : seq.labels) {
      std::vector<bool> seen(static_cast<std::size_t>(p.num_classes), false);
      for (int l : lm.labels) seen[static_cast<std::size_t>(l)] = true;
      balanced = balanced && std::all_of(seen.begin(), seen.end(), [](bool b) { return b; });
    }
    if (balanced) return spec;
  }
  throw ValidationError("random scene: class balance not reached within " +
                        std::to_string(p.max_retries) + " attempts");
}

Tensor<float> one_hot(const LabelMap& labels, int num_classes) {
  Tensor<float> t(Shape{1, static_cast<std::size_t>(num_classes), labels.height, labels.width});
  for (std::size_t i = 0; i < labels.labels.size(); ++i) {
    const int l = labels.labels[i];
    if (l < 0 || l >= num_classes) throw ValidationError("one_hot: label out of range");
    t.plane(0, static_cast<std::size_t>(l))[i] = 1.0f;
  }
  return t;
}

}  // namespace netwarp
