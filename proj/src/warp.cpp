#include "netwarp/warp.hpp"

#include <atomic>
#include <cmath>
#include <vector>

namespace netwarp {

namespace fault_injection {
namespace {
std::atomic<double> g_flow_grad_scale{1.0};
}
void set_warp_flow_grad_scale(double scale) { g_flow_grad_scale.store(scale); }
double warp_flow_grad_scale() { return g_flow_grad_scale.load(); }
}  // namespace fault_injection

void WarpConfig::validate() const {
  if (!(epsilon > 0.0)) throw ValidationError("warp epsilon must be > 0");
  if (flow_stride < 1) throw ValidationError("flow_stride must be >= 1");
}

namespace {

// Where one output pixel samples the source grid.
template <typename T>
struct Sample {
  std::size_t x1, x2, y1, y2;
  T ax, bx;  // weights of columns x1 and x2: (x2 - x'), (x' - x1)
  T ay, by;  // weights of rows y1 and y2
  bool clamped_x, clamped_y;
};

template <typename T>
Sample<T> locate(std::size_t x, std::size_t y, T u, T v, T eps, std::size_t w, std::size_t h) {
  Sample<T> s{};
  T xs = T(x) + u + eps;
  T ys = T(y) + v + eps;
  const T xmax = T(w - 1), ymax = T(h - 1);
  s.clamped_x = false;
  s.clamped_y = false;
  if (xs < T(0)) {
    xs = T(0);
    s.clamped_x = true;
  } else if (xs > xmax) {
    xs = xmax;
    s.clamped_x = true;
  }
  if (ys < T(0)) {
    ys = T(0);
    s.clamped_y = true;
  } else if (ys > ymax) {
    ys = ymax;
    s.clamped_y = true;
  }
  const T fx = std::floor(xs);
  const T fy = std::floor(ys);
  s.x1 = static_cast<std::size_t>(fx);
  s.y1 = static_cast<std::size_t>(fy);
  s.x2 = std::min(s.x1 + 1, w - 1);
  s.y2 = std::min(s.y1 + 1, h - 1);
  s.ax = (fx + T(1)) - xs;
  s.bx = xs - fx;
  s.ay = (fy + T(1)) - ys;
  s.by = ys - fy;
  return s;
}

template <typename T>
void check_shapes(const Shape& f, const Shape& flow) {
  if (flow.c != 2) throw DimensionError("warp: flow must have 2 channels, got " + flow.str());
  if (flow.n != f.n || flow.h != f.h || flow.w != f.w) {
    throw DimensionError("warp: flow " + flow.str() + " does not match features " + f.str());
  }
  if (f.h == 0 || f.w == 0) throw DimensionError("warp: empty spatial domain " + f.str());
}

template <typename T>
std::vector<Sample<T>> locate_all(const Tensor<T>& flow, std::size_t n, T eps) {
  const Shape& s = flow.shape();
  std::vector<Sample<T>> samples(s.h * s.w);
  const T* u = flow.plane(n, 0);
  const T* v = flow.plane(n, 1);
  for (std::size_t y = 0; y < s.h; ++y) {
    for (std::size_t x = 0; x < s.w; ++x) {
      const std::size_t i = y * s.w + x;
      samples[i] = locate(x, y, u[i], v[i], eps, s.w, s.h);
    }
  }
  return samples;
}

template <typename T>
Tensor<T> warp_impl(const Tensor<T>& features, const Tensor<T>& flow, const WarpConfig& cfg) {
  cfg.validate();
  const Shape& fs = features.shape();
  check_shapes<T>(fs, flow.shape());
  const T eps = static_cast<T>(cfg.epsilon);
  Tensor<T> out(fs);
  const std::size_t hw = fs.h * fs.w;
  std::vector<std::vector<Sample<T>>> samples(fs.n);
  for (std::size_t n = 0; n < fs.n; ++n) samples[n] = locate_all(flow, n, eps);
#pragma omp parallel for collapse(2) schedule(static)
  for (std::size_t n = 0; n < fs.n; ++n) {
    for (std::size_t c = 0; c < fs.c; ++c) {
      const T* z = features.plane(n, c);
      T* o = out.plane(n, c);
      for (std::size_t i = 0; i < hw; ++i) {
        const Sample<T>& s = samples[n][i];
        const T z11 = z[s.y1 * fs.w + s.x1];
        const T z12 = z[s.y2 * fs.w + s.x1];
        const T z21 = z[s.y1 * fs.w + s.x2];
        const T z22 = z[s.y2 * fs.w + s.x2];
        o[i] = s.ax * (z11 * s.ay + z12 * s.by) + s.bx * (z21 * s.ay + z22 * s.by);
      }
    }
  }
  return out;
}

template <typename T>
void warp_backward_impl(const Tensor<T>& upstream, const Tensor<T>& features, const Tensor<T>& flow,
                        const WarpConfig& cfg, Tensor<T>* d_features, Tensor<T>* d_flow) {
  cfg.validate();
  const Shape& fs = features.shape();
  check_shapes<T>(fs, flow.shape());
  require_same_shape(upstream.shape(), fs, "warp_backward");
  const T eps = static_cast<T>(cfg.epsilon);
  const T fault = static_cast<T>(fault_injection::warp_flow_grad_scale());
  const std::size_t hw = fs.h * fs.w;
#pragma omp parallel for schedule(static)
  for (std::size_t n = 0; n < fs.n; ++n) {
    const auto samples = locate_all(flow, n, eps);
    for (std::size_t c = 0; c < fs.c; ++c) {
      const T* z = features.plane(n, c);
      const T* g = upstream.plane(n, c);
      if (d_features) {
        T* dz = d_features->plane(n, c);
        for (std::size_t i = 0; i < hw; ++i) {
          const Sample<T>& s = samples[i];
          dz[s.y1 * fs.w + s.x1] += g[i] * (s.ax * s.ay);
          dz[s.y2 * fs.w + s.x1] += g[i] * (s.ax * s.by);
          dz[s.y1 * fs.w + s.x2] += g[i] * (s.bx * s.ay);
          dz[s.y2 * fs.w + s.x2] += g[i] * (s.bx * s.by);
        }
      }
      if (d_flow) {
        T* du = d_flow->plane(n, 0);
        T* dv = d_flow->plane(n, 1);
        for (std::size_t i = 0; i < hw; ++i) {
          const Sample<T>& s = samples[i];
          const T z11 = z[s.y1 * fs.w + s.x1];
          const T z12 = z[s.y2 * fs.w + s.x1];
          const T z21 = z[s.y1 * fs.w + s.x2];
          const T z22 = z[s.y2 * fs.w + s.x2];
          if (!s.clamped_x) du[i] += fault * g[i] * (s.ay * (z21 - z11) + s.by * (z22 - z12));
          if (!s.clamped_y) dv[i] += fault * g[i] * (s.ax * (z12 - z11) + s.bx * (z22 - z21));
        }
      }
    }
  }
}

template <typename T>
Tensor<T> subsample_impl(const Tensor<T>& flow, int stride) {
  if (stride < 1) throw ValidationError("subsample_flow: stride must be >= 1");
  const Shape& s = flow.shape();
  if (s.c != 2) throw DimensionError("subsample_flow: flow must have 2 channels, got " + s.str());
  const std::size_t st = static_cast<std::size_t>(stride);
  const std::size_t oh = (s.h + st - 1) / st, ow = (s.w + st - 1) / st;
  Tensor<T> out(Shape{s.n, 2, oh, ow});
  const T scale = T(stride);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < 2; ++c) {
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t x = 0; x < ow; ++x) {
          out.at(n, c, y, x) = flow.at(n, c, y * st, x * st) / scale;
        }
      }
    }
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> warp(const Tensor<T>& features, const FlowField<T>& flow, const WarpConfig& cfg) {
  return warp_impl(features, flow.tensor(), cfg);
}

template <typename T>
WarpGrads<T> warp_backward(const Tensor<T>& upstream, const Tensor<T>& features,
                           const FlowField<T>& flow, const WarpConfig& cfg) {
  Tensor<T> df(features.shape());
  Tensor<T> dflow(flow.shape());
  warp_backward_impl(upstream, features, flow.tensor(), cfg, &df, &dflow);
  return {std::move(df), FlowField<T>(std::move(dflow))};
}

template <typename T>
FlowField<T> subsample_flow(const FlowField<T>& flow, int stride) {
  return FlowField<T>(subsample_impl(flow.tensor(), stride));
}

template <typename T>
Var<T> warp(Tape<T>* tape, const Var<T>& features, const Var<T>& flow, const WarpConfig& cfg) {
  Var<T> out(warp_impl(features.value(), flow.value(), cfg),
             features.requires_grad() || flow.requires_grad());
  if (tape) tape->check(out.value(), "warp");
  if (tape && out.requires_grad()) {
    tape->record("warp", [features, flow, out, cfg]() mutable {
      if (!out.has_grad()) return;
      Tensor<T>* df = features.requires_grad() ? &features.grad_buffer() : nullptr;
      Tensor<T>* dflow = flow.requires_grad() ? &flow.grad_buffer() : nullptr;
      warp_backward_impl(out.grad(), features.value(), flow.value(), cfg, df, dflow);
    });
  }
  return out;
}

template <typename T>
Var<T> subsample_flow(Tape<T>* tape, const Var<T>& flow, int stride) {
  Var<T> out(subsample_impl(flow.value(), stride), flow.requires_grad());
  if (tape) tape->check(out.value(), "subsample_flow");
  if (tape && out.requires_grad()) {
    tape->record("subsample_flow", [flow, out, stride]() mutable {
      if (!out.has_grad()) return;
      const Shape& os = out.shape();
      const std::size_t st = static_cast<std::size_t>(stride);
      const T scale = T(stride);
      auto& g = flow.grad_buffer();
      for (std::size_t n = 0; n < os.n; ++n) {
        for (std::size_t c = 0; c < 2; ++c) {
          for (std::size_t y = 0; y < os.h; ++y) {
            for (std::size_t x = 0; x < os.w; ++x) {
              g.at(n, c, y * st, x * st) += out.grad().at(n, c, y, x) / scale;
            }
          }
        }
      }
    });
  }
  return out;
}

#define NETWARP_INSTANTIATE_WARP(T)                                                             \
  template Tensor<T> warp(const Tensor<T>&, const FlowField<T>&, const WarpConfig&);            \
  template WarpGrads<T> warp_backward(const Tensor<T>&, const Tensor<T>&, const FlowField<T>&,  \
                                      const WarpConfig&);                                       \
  template FlowField<T> subsample_flow(const FlowField<T>&, int);                               \
  template Var<T> warp(Tape<T>*, const Var<T>&, const Var<T>&, const WarpConfig&);              \
  template Var<T> subsample_flow(Tape<T>*, const Var<T>&, int);

NETWARP_INSTANTIATE_WARP(float)
NETWARP_INSTANTIATE_WARP(double)

}  // namespace netwarp
