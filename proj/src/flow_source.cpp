#include "netwarp/flow_source.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <tuple>
#include <vector>

#include "binary_io.hpp"

namespace netwarp {

namespace {

constexpr float kFloMagic = 202021.25f;

std::vector<double> grayscale(const Tensor<float>& frame) {
  const Shape& s = frame.shape();
  std::vector<double> g(s.h * s.w, 0.0);
  for (std::size_t c = 0; c < s.c; ++c) {
    const float* p = frame.plane(0, c);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += p[i];
  }
  for (auto& v : g) v /= static_cast<double>(s.c);
  return g;
}

struct Offset {
  int u, v;
};

}  // namespace

FlowField<float> block_match_flow(const Tensor<float>& frame_t, const Tensor<float>& frame_prev,
                                  const BlockMatchParams& params) {
  require_same_shape(frame_t.shape(), frame_prev.shape(), "block_match_flow");
  const Shape& s = frame_t.shape();
  if (s.n != 1) throw DimensionError("block_match_flow: expects batch 1, got " + s.str());
  if (params.patch < 1 || params.search_radius < 0) {
    throw ValidationError("block_match_flow: patch must be >= 1 and radius >= 0");
  }
  const int patch = params.patch;
  if (s.h < static_cast<std::size_t>(patch) || s.w < static_cast<std::size_t>(patch)) {
    throw ValidationError("block_match_flow: frame " + s.str() + " smaller than patch " +
                          std::to_string(patch));
  }
  const int h = static_cast<int>(s.h), w = static_cast<int>(s.w);
  const int r = params.search_radius;
  const int lo = -(patch / 2);  // patch covers offsets [lo, lo + patch)
  const auto gt = grayscale(frame_t);
  const auto gp = grayscale(frame_prev);
  auto clampi = [](int v, int n) { return std::clamp(v, 0, n - 1); };

  std::vector<Offset> candidates;
  for (int v = -r; v <= r; ++v) {
    for (int u = -r; u <= r; ++u) candidates.push_back({u, v});
  }
  std::stable_sort(candidates.begin(), candidates.end(), [](Offset a, Offset b) {
    return std::make_tuple(std::abs(a.u) + std::abs(a.v), a.u, a.v) <
           std::make_tuple(std::abs(b.u) + std::abs(b.v), b.u, b.v);
  });

  const int side = 2 * r + 1;
  // cost[(v + r) * side + (u + r)] per pixel; +inf marks targets outside the image.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> cost(static_cast<std::size_t>(h) * w * side * side, inf);
  // Padded squared-difference image, box-summed separably.
  const int ph = h + patch - 1, pw = w + patch - 1;
  std::vector<double> diff(static_cast<std::size_t>(ph) * pw);
  std::vector<double> rows(static_cast<std::size_t>(ph) * w);
  for (const Offset& off : candidates) {
    for (int py = 0; py < ph; ++py) {
      const int y = clampi(py + lo, h);
      const int yp = clampi(py + lo + off.v, h);
      for (int px = 0; px < pw; ++px) {
        const int x = clampi(px + lo, w);
        const int xp = clampi(px + lo + off.u, w);
        const double d = gt[y * w + x] - gp[yp * w + xp];
        diff[py * pw + px] = d * d;
      }
    }
    for (int py = 0; py < ph; ++py) {
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int k = 0; k < patch; ++k) acc += diff[py * pw + x + k];
        rows[py * w + x] = acc;
      }
    }
    const std::size_t slot = static_cast<std::size_t>(off.v + r) * side + (off.u + r);
    for (int y = 0; y < h; ++y) {
      if (y + off.v < 0 || y + off.v >= h) continue;
      for (int x = 0; x < w; ++x) {
        if (x + off.u < 0 || x + off.u >= w) continue;
        double acc = 0.0;
        for (int k = 0; k < patch; ++k) acc += rows[(y + k) * w + x];
        cost[(static_cast<std::size_t>(y) * w + x) * side * side + slot] = acc;
      }
    }
  }

  FlowField<float> flow = FlowField<float>::zeros(1, s.h, s.w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double* c = &cost[(static_cast<std::size_t>(y) * w + x) * side * side];
      auto at = [&](int u, int v) {
        if (u < -r || u > r || v < -r || v > r) return inf;
        return c[(v + r) * side + (u + r)];
      };
      Offset best = candidates.front();
      double best_cost = at(best.u, best.v);
      for (const Offset& off : candidates) {
        const double cc = at(off.u, off.v);
        if (cc < best_cost) {
          best_cost = cc;
          best = off;
        }
      }
      double du = 0.0, dv = 0.0;
      if (params.subpixel && best_cost > 0.0) {  // an exact match needs no refinement
        auto refine = [](double cm, double c0, double cp) {
          if (!std::isfinite(cm) || !std::isfinite(cp)) return 0.0;
          const double denom = cm - 2.0 * c0 + cp;
          if (denom <= 0.0) return 0.0;
          return std::clamp((cm - cp) / (2.0 * denom), -0.5, 0.5);
        };
        du = refine(at(best.u - 1, best.v), best_cost, at(best.u + 1, best.v));
        dv = refine(at(best.u, best.v - 1), best_cost, at(best.u, best.v + 1));
      }
      flow.u(0, y, x) = static_cast<float>(best.u + du);
      flow.v(0, y, x) = static_cast<float>(best.v + dv);
    }
  }
  return flow;
}

void write_flo(const std::filesystem::path& path, const FlowField<float>& flow) {
  if (flow.batch() != 1) throw DimensionError(".flo holds a single flow field, got " + flow.shape().str());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open for writing: " + path.string());
  detail::put_f32(out, kFloMagic);
  detail::put_u32(out, static_cast<std::uint32_t>(flow.width()));
  detail::put_u32(out, static_cast<std::uint32_t>(flow.height()));
  for (std::size_t y = 0; y < flow.height(); ++y) {
    for (std::size_t x = 0; x < flow.width(); ++x) {
      detail::put_f32(out, flow.u(0, y, x));
      detail::put_f32(out, flow.v(0, y, x));
    }
  }
  if (!out) throw FormatError("write failed: " + path.string());
}

FlowField<float> read_flo(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open: " + path.string());
  const float magic = detail::get_f32(in, ".flo magic");
  if (magic != kFloMagic) throw FormatError("bad .flo magic in " + path.string());
  const auto w = static_cast<std::int32_t>(detail::get_u32(in, ".flo width"));
  const auto h = static_cast<std::int32_t>(detail::get_u32(in, ".flo height"));
  if (w <= 0 || h <= 0 || static_cast<std::int64_t>(w) * h > (1 << 28)) {
    throw FormatError("implausible .flo dimensions in " + path.string());
  }
  FlowField<float> flow = FlowField<float>::zeros(1, static_cast<std::size_t>(h), static_cast<std::size_t>(w));
  for (std::int32_t y = 0; y < h; ++y) {
    for (std::int32_t x = 0; x < w; ++x) {
      flow.u(0, y, x) = detail::get_f32(in, ".flo payload");
      flow.v(0, y, x) = detail::get_f32(in, ".flo payload");
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError(".flo payload longer than header dimensions in " + path.string());
  }
  return flow;
}

}  // namespace netwarp
