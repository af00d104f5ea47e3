#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>

#include "netwarp/autodiff.hpp"

namespace netwarp {

namespace {

template <typename T>
bool any_requires_grad(std::initializer_list<const Var<T>*> vars) {
  for (const Var<T>* v : vars) {
    if (v->defined() && v->requires_grad()) return true;
  }
  return false;
}

// Range of output columns whose input column ox*stride + k - pad lies in [0, in_w).
inline void valid_range(std::ptrdiff_t in_w, std::ptrdiff_t out_w, std::ptrdiff_t k,
                        std::ptrdiff_t pad, std::ptrdiff_t stride, std::ptrdiff_t& lo,
                        std::ptrdiff_t& hi) {
  const std::ptrdiff_t shift = k - pad;
  lo = shift >= 0 ? 0 : (-shift + stride - 1) / stride;
  const std::ptrdiff_t last = in_w - 1 - shift;
  hi = last < 0 ? -1 : std::min(out_w - 1, last / stride);
}

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* b, int pad,
                         int stride) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  const std::size_t k = ws.h;
  const std::ptrdiff_t oh = (static_cast<std::ptrdiff_t>(xs.h) + 2 * pad - k) / stride + 1;
  const std::ptrdiff_t ow = (static_cast<std::ptrdiff_t>(xs.w) + 2 * pad - k) / stride + 1;
  Tensor<T> out(Shape{xs.n, ws.n, static_cast<std::size_t>(oh), static_cast<std::size_t>(ow)});
  const std::ptrdiff_t in_h = xs.h, in_w = xs.w;
#pragma omp parallel for collapse(2) schedule(static)
  for (std::size_t n = 0; n < xs.n; ++n) {
    for (std::size_t co = 0; co < ws.n; ++co) {
      T* o = out.plane(n, co);
      const T bias = b ? (*b)[co] : T(0);
      std::fill(o, o + oh * ow, bias);
      for (std::size_t ci = 0; ci < ws.c; ++ci) {
        const T* in = x.plane(n, ci);
        for (std::size_t ky = 0; ky < k; ++ky) {
          for (std::size_t kx = 0; kx < k; ++kx) {
            const T wv = w.at(co, ci, ky, kx);
            std::ptrdiff_t lo, hi;
            valid_range(in_w, ow, kx, pad, stride, lo, hi);
            for (std::ptrdiff_t oy = 0; oy < oh; ++oy) {
              const std::ptrdiff_t iy = oy * stride + static_cast<std::ptrdiff_t>(ky) - pad;
              if (iy < 0 || iy >= in_h) continue;
              T* orow = o + oy * ow;
              const T* irow = in + iy * in_w + static_cast<std::ptrdiff_t>(kx) - pad;
              if (stride == 1) {
                for (std::ptrdiff_t ox = lo; ox <= hi; ++ox) orow[ox] += wv * irow[ox];
              } else {
                for (std::ptrdiff_t ox = lo; ox <= hi; ++ox) orow[ox] += wv * irow[ox * stride];
              }
            }
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
void conv2d_backward(const Tensor<T>& dy, const Tensor<T>& x, const Tensor<T>& w, int pad,
                     int stride, Tensor<T>* dx, Tensor<T>* dw, Tensor<T>* db) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  const std::size_t k = ws.h;
  const std::ptrdiff_t oh = dy.shape().h, ow = dy.shape().w;
  const std::ptrdiff_t in_h = xs.h, in_w = xs.w;

  if (dx) {
#pragma omp parallel for collapse(2) schedule(static)
    for (std::size_t n = 0; n < xs.n; ++n) {
      for (std::size_t ci = 0; ci < ws.c; ++ci) {
        T* g = dx->plane(n, ci);
        for (std::size_t co = 0; co < ws.n; ++co) {
          const T* d = dy.plane(n, co);
          for (std::size_t ky = 0; ky < k; ++ky) {
            for (std::size_t kx = 0; kx < k; ++kx) {
              const T wv = w.at(co, ci, ky, kx);
              std::ptrdiff_t lo, hi;
              valid_range(in_w, ow, kx, pad, stride, lo, hi);
              for (std::ptrdiff_t oy = 0; oy < oh; ++oy) {
                const std::ptrdiff_t iy = oy * stride + static_cast<std::ptrdiff_t>(ky) - pad;
                if (iy < 0 || iy >= in_h) continue;
                const T* drow = d + oy * ow;
                T* grow = g + iy * in_w + static_cast<std::ptrdiff_t>(kx) - pad;
                if (stride == 1) {
                  for (std::ptrdiff_t ox = lo; ox <= hi; ++ox) grow[ox] += wv * drow[ox];
                } else {
                  for (std::ptrdiff_t ox = lo; ox <= hi; ++ox) grow[ox * stride] += wv * drow[ox];
                }
              }
            }
          }
        }
      }
    }
  }

  if (dw) {
    // Per-column partial sums keep the inner loop free of a serial reduction.
#pragma omp parallel for schedule(static)
    for (std::size_t co = 0; co < ws.n; ++co) {
      std::vector<T> lanes(static_cast<std::size_t>(ow));
      for (std::size_t ci = 0; ci < ws.c; ++ci) {
        for (std::size_t ky = 0; ky < k; ++ky) {
          for (std::size_t kx = 0; kx < k; ++kx) {
            std::ptrdiff_t lo, hi;
            valid_range(in_w, ow, kx, pad, stride, lo, hi);
            std::fill(lanes.begin(), lanes.end(), T(0));
            T* acc = lanes.data();
            for (std::size_t n = 0; n < xs.n; ++n) {
              const T* d = dy.plane(n, co);
              const T* in = x.plane(n, ci);
              for (std::ptrdiff_t oy = 0; oy < oh; ++oy) {
                const std::ptrdiff_t iy = oy * stride + static_cast<std::ptrdiff_t>(ky) - pad;
                if (iy < 0 || iy >= in_h) continue;
                const T* drow = d + oy * ow;
                const T* irow = in + iy * in_w + static_cast<std::ptrdiff_t>(kx) - pad;
                if (stride == 1) {
                  for (std::ptrdiff_t ox = lo; ox <= hi; ++ox) acc[ox] += drow[ox] * irow[ox];
                } else {
                  for (std::ptrdiff_t ox = lo; ox <= hi; ++ox) acc[ox] += drow[ox] * irow[ox * stride];
                }
              }
            }
            T total = T(0);
            for (std::ptrdiff_t ox = lo; ox <= hi; ++ox) total += acc[ox];
            dw->at(co, ci, ky, kx) += total;
          }
        }
      }
    }
  }

  if (db) {
    for (std::size_t co = 0; co < ws.n; ++co) {
      T acc = T(0);
      for (std::size_t n = 0; n < xs.n; ++n) {
        const T* d = dy.plane(n, co);
        for (std::ptrdiff_t i = 0; i < oh * ow; ++i) acc += d[i];
      }
      (*db)[co] += acc;
    }
  }
}

// Bilinear resize coefficients for one axis (half-pixel centres).
template <typename T>
struct AxisTap {
  std::size_t i0, i1;
  T l0, l1;
};

template <typename T>
std::vector<AxisTap<T>> resize_taps(std::size_t in, std::size_t out) {
  std::vector<AxisTap<T>> taps(out);
  const T scale = T(in) / T(out);
  for (std::size_t o = 0; o < out; ++o) {
    T src = (T(o) + T(0.5)) * scale - T(0.5);
    if (src < T(0)) src = T(0);
    const T f = std::floor(src);
    std::size_t i0 = static_cast<std::size_t>(f);
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    const T l1 = src - T(i0);
    taps[o] = {i0, i1, T(1) - l1, l1};
  }
  return taps;
}

}  // namespace

template <typename T>
Var<T> conv2d(Tape<T>* tape, const Var<T>& input, const Var<T>& weights, const Var<T>& bias,
              int padding, int stride) {
  const Shape& xs = input.shape();
  const Shape& ws = weights.shape();
  if (stride < 1) throw ValidationError("conv2d: stride must be >= 1");
  if (padding < 0) throw ValidationError("conv2d: padding must be >= 0");
  if (ws.h != ws.w) throw DimensionError("conv2d: kernel must be square, got " + ws.str());
  if (xs.c != ws.c) {
    throw DimensionError("conv2d: input " + xs.str() + " incompatible with weights " + ws.str());
  }
  if (xs.h + 2 * padding < ws.h || xs.w + 2 * padding < ws.w) {
    throw DimensionError("conv2d: kernel " + ws.str() + " larger than padded input " + xs.str());
  }
  if (bias.defined() && bias.shape() != Shape{1, ws.n, 1, 1}) {
    throw DimensionError("conv2d: bias " + bias.shape().str() + " does not match weights " +
                         ws.str());
  }
  const Tensor<T>* b = bias.defined() ? &bias.value() : nullptr;
  Var<T> out(conv2d_forward(input.value(), weights.value(), b, padding, stride),
             any_requires_grad<T>({&input, &weights, &bias}));
  if (tape) tape->check(out.value(), "conv2d");
  if (tape && out.requires_grad()) {
    tape->record("conv2d", [input, weights, bias, out, padding, stride]() mutable {
      if (!out.has_grad()) return;
      Tensor<T>* dx = input.requires_grad() ? &input.grad_buffer() : nullptr;
      Tensor<T>* dw = weights.requires_grad() ? &weights.grad_buffer() : nullptr;
      Tensor<T>* db = bias.defined() && bias.requires_grad() ? &bias.grad_buffer() : nullptr;
      conv2d_backward(out.grad(), input.value(), weights.value(), padding, stride, dx, dw, db);
    });
  }
  return out;
}

template <typename T>
Var<T> relu(Tape<T>* tape, const Var<T>& input) {
  Tensor<T> y(input.shape());
  const auto x = input.value().data();
  auto o = y.data();
  for (std::size_t i = 0; i < x.size(); ++i) o[i] = x[i] > T(0) ? x[i] : T(0);
  Var<T> out(std::move(y), input.requires_grad());
  if (tape) tape->check(out.value(), "relu");
  if (tape && out.requires_grad()) {
    tape->record("relu", [input, out]() mutable {
      if (!out.has_grad()) return;
      const auto x = input.value().data();
      const auto d = out.grad().data();
      auto g = input.grad_buffer().data();
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] > T(0)) g[i] += d[i];
      }
    });
  }
  return out;
}

template <typename T>
Var<T> concat_channels(Tape<T>* tape, std::span<const Var<T>> parts) {
  if (parts.empty()) throw DimensionError("concat_channels: no inputs");
  const Shape first = parts[0].shape();
  std::size_t channels = 0;
  bool needs_grad = false;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw DimensionError("concat_channels: spatial mismatch " + first.str() + " vs " + s.str());
    }
    channels += s.c;
    needs_grad = needs_grad || p.requires_grad();
  }
  Tensor<T> y(Shape{first.n, channels, first.h, first.w});
  const std::size_t hw = first.h * first.w;
  for (std::size_t n = 0; n < first.n; ++n) {
    std::size_t offset = 0;
    for (const auto& p : parts) {
      for (std::size_t c = 0; c < p.shape().c; ++c) {
        const T* src = p.value().plane(n, c);
        std::copy(src, src + hw, y.plane(n, offset + c));
      }
      offset += p.shape().c;
    }
  }
  Var<T> out(std::move(y), needs_grad);
  if (tape) tape->check(out.value(), "concat_channels");
  if (tape && needs_grad) {
    std::vector<Var<T>> saved(parts.begin(), parts.end());
    tape->record("concat_channels", [saved, out]() mutable {
      if (!out.has_grad()) return;
      const Shape s = out.shape();
      const std::size_t hw = s.h * s.w;
      for (std::size_t n = 0; n < s.n; ++n) {
        std::size_t offset = 0;
        for (auto& p : saved) {
          if (p.requires_grad()) {
            auto& g = p.grad_buffer();
            for (std::size_t c = 0; c < p.shape().c; ++c) {
              const T* src = out.grad().plane(n, offset + c);
              T* dst = g.plane(n, c);
              for (std::size_t i = 0; i < hw; ++i) dst[i] += src[i];
            }
          }
          offset += p.shape().c;
        }
      }
    });
  }
  return out;
}

template <typename T>
Var<T> scale_per_channel(Tape<T>* tape, const Var<T>& input, const Var<T>& w) {
  const Shape& s = input.shape();
  if (w.shape() != Shape{1, s.c, 1, 1}) {
    throw DimensionError("scale_per_channel: weights " + w.shape().str() + " vs input " + s.str());
  }
  Tensor<T> y(s);
  const std::size_t hw = s.h * s.w;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const T wc = w.value()[c];
      const T* src = input.value().plane(n, c);
      T* dst = y.plane(n, c);
      for (std::size_t i = 0; i < hw; ++i) dst[i] = wc * src[i];
    }
  }
  Var<T> out(std::move(y), input.requires_grad() || w.requires_grad());
  if (tape) tape->check(out.value(), "scale_per_channel");
  if (tape && out.requires_grad()) {
    tape->record("scale_per_channel", [input, w, out]() mutable {
      if (!out.has_grad()) return;
      const Shape s = input.shape();
      const std::size_t hw = s.h * s.w;
      for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t c = 0; c < s.c; ++c) {
          const T* d = out.grad().plane(n, c);
          if (input.requires_grad()) {
            const T wc = w.value()[c];
            T* g = input.grad_buffer().plane(n, c);
            for (std::size_t i = 0; i < hw; ++i) g[i] += wc * d[i];
          }
          if (w.requires_grad()) {
            const T* x = input.value().plane(n, c);
            T acc = T(0);
            for (std::size_t i = 0; i < hw; ++i) acc += d[i] * x[i];
            w.grad_buffer()[c] += acc;
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Var<T> add(Tape<T>* tape, const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> y(a.shape());
  const auto av = a.value().data();
  const auto bv = b.value().data();
  auto o = y.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] + bv[i];
  Var<T> out(std::move(y), a.requires_grad() || b.requires_grad());
  if (tape) tape->check(out.value(), "add");
  if (tape && out.requires_grad()) {
    tape->record("add", [a, b, out]() mutable {
      if (!out.has_grad()) return;
      const auto d = out.grad().data();
      for (const Var<T>* v : {&a, &b}) {
        if (!v->requires_grad()) continue;
        auto g = v->grad_buffer().data();
        for (std::size_t i = 0; i < d.size(); ++i) g[i] += d[i];
      }
    });
  }
  return out;
}

template <typename T>
Var<T> max_pool2(Tape<T>* tape, const Var<T>& input) {
  const Shape& s = input.shape();
  const std::size_t oh = (s.h + 1) / 2, ow = (s.w + 1) / 2;
  Tensor<T> y(Shape{s.n, s.c, oh, ow});
  std::vector<std::uint32_t> argmax(y.size());
  std::size_t k = 0;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* in = input.value().plane(n, c);
      T* o = y.plane(n, c);
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox, ++k) {
          std::size_t best = (2 * oy) * s.w + 2 * ox;
          for (std::size_t dy = 0; dy < 2; ++dy) {
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t iy = 2 * oy + dy, ix = 2 * ox + dx;
              if (iy >= s.h || ix >= s.w) continue;
              const std::size_t idx = iy * s.w + ix;
              if (in[idx] > in[best]) best = idx;
            }
          }
          o[oy * ow + ox] = in[best];
          argmax[k] = static_cast<std::uint32_t>(best);
        }
      }
    }
  }
  Var<T> out(std::move(y), input.requires_grad());
  if (tape) tape->check(out.value(), "max_pool2");
  if (tape && out.requires_grad()) {
    tape->record("max_pool2", [input, out, argmax = std::move(argmax)]() mutable {
      if (!out.has_grad()) return;
      const Shape& os = out.shape();
      const std::size_t ohw = os.h * os.w;
      std::size_t k = 0;
      for (std::size_t n = 0; n < os.n; ++n) {
        for (std::size_t c = 0; c < os.c; ++c) {
          const T* d = out.grad().plane(n, c);
          T* g = input.grad_buffer().plane(n, c);
          for (std::size_t i = 0; i < ohw; ++i, ++k) g[argmax[k]] += d[i];
        }
      }
    });
  }
  return out;
}

template <typename T>
Var<T> upsample_bilinear(Tape<T>* tape, const Var<T>& input, std::size_t out_h,
                         std::size_t out_w) {
  const Shape& s = input.shape();
  if (out_h < s.h || out_w < s.w) {
    throw ValidationError("upsample_bilinear: output " + std::to_string(out_h) + "x" +
                          std::to_string(out_w) + " smaller than input " + s.str());
  }
  const auto ty = resize_taps<T>(s.h, out_h);
  const auto tx = resize_taps<T>(s.w, out_w);
  Tensor<T> y(Shape{s.n, s.c, out_h, out_w});
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* in = input.value().plane(n, c);
      T* o = y.plane(n, c);
      for (std::size_t oy = 0; oy < out_h; ++oy) {
        const auto& a = ty[oy];
        const T* r0 = in + a.i0 * s.w;
        const T* r1 = in + a.i1 * s.w;
        for (std::size_t ox = 0; ox < out_w; ++ox) {
          const auto& b = tx[ox];
          o[oy * out_w + ox] =
              a.l0 * (b.l0 * r0[b.i0] + b.l1 * r0[b.i1]) + a.l1 * (b.l0 * r1[b.i0] + b.l1 * r1[b.i1]);
        }
      }
    }
  }
  Var<T> out(std::move(y), input.requires_grad());
  if (tape) tape->check(out.value(), "upsample_bilinear");
  if (tape && out.requires_grad()) {
    tape->record("upsample_bilinear", [input, out, ty, tx]() mutable {
      if (!out.has_grad()) return;
      const Shape& s = input.shape();
      const Shape& os = out.shape();
      for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t c = 0; c < s.c; ++c) {
          const T* d = out.grad().plane(n, c);
          T* g = input.grad_buffer().plane(n, c);
          for (std::size_t oy = 0; oy < os.h; ++oy) {
            const auto& a = ty[oy];
            for (std::size_t ox = 0; ox < os.w; ++ox) {
              const auto& b = tx[ox];
              const T v = d[oy * os.w + ox];
              g[a.i0 * s.w + b.i0] += v * a.l0 * b.l0;
              g[a.i0 * s.w + b.i1] += v * a.l0 * b.l1;
              g[a.i1 * s.w + b.i0] += v * a.l1 * b.l0;
              g[a.i1 * s.w + b.i1] += v * a.l1 * b.l1;
            }
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Var<T> softmax_xent_loss(Tape<T>* tape, const Var<T>& logits, std::span<const LabelMap> labels,
                         int ignore_label) {
  const Shape& s = logits.shape();
  if (labels.size() != s.n) {
    throw DimensionError("softmax_xent_loss: " + std::to_string(labels.size()) +
                         " label maps for logits " + s.str());
  }
  const int classes = static_cast<int>(s.c);
  std::size_t count = 0;
  for (const auto& lm : labels) {
    if (lm.height != s.h || lm.width != s.w) {
      throw DimensionError("softmax_xent_loss: label map " + std::to_string(lm.height) + "x" +
                           std::to_string(lm.width) + " vs logits " + s.str());
    }
    for (int l : lm.labels) {
      if (l == ignore_label) continue;
      if (l < 0 || l >= classes) {
        throw ValidationError("softmax_xent_loss: label " + std::to_string(l) +
                              " out of range for " + std::to_string(classes) + " classes");
      }
      ++count;
    }
  }
  const std::size_t hw = s.h * s.w;
  // Softmax probabilities are kept for the backward pass.
  Tensor<T> prob(s);
  T total = T(0);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t i = 0; i < hw; ++i) {
      T m = -std::numeric_limits<T>::infinity();
      for (std::size_t c = 0; c < s.c; ++c) m = std::max(m, logits.value().plane(n, c)[i]);
      T sum = T(0);
      for (std::size_t c = 0; c < s.c; ++c) {
        const T e = std::exp(logits.value().plane(n, c)[i] - m);
        prob.plane(n, c)[i] = e;
        sum += e;
      }
      for (std::size_t c = 0; c < s.c; ++c) prob.plane(n, c)[i] /= sum;
      const int l = labels[n].labels[i];
      if (l == ignore_label) continue;
      total += std::log(sum) - (logits.value().plane(n, static_cast<std::size_t>(l))[i] - m);
    }
  }
  const T loss = count > 0 ? total / T(count) : T(0);
  Var<T> out(Tensor<T>(Shape{1, 1, 1, 1}, loss), logits.requires_grad());
  if (tape) tape->check(out.value(), "softmax_xent_loss");
  if (tape && out.requires_grad()) {
    std::vector<LabelMap> saved(labels.begin(), labels.end());
    tape->record("softmax_xent_loss", [logits, out, prob = std::move(prob), saved = std::move(saved),
                                       count, ignore_label]() mutable {
      if (!out.has_grad() || count == 0) return;
      const T scale = out.grad()[0] / T(count);
      const Shape& s = logits.shape();
      const std::size_t hw = s.h * s.w;
      auto& g = logits.grad_buffer();
      for (std::size_t n = 0; n < s.n; ++n) {
        for (std::size_t i = 0; i < hw; ++i) {
          const int l = saved[n].labels[i];
          if (l == ignore_label) continue;
          for (std::size_t c = 0; c < s.c; ++c) {
            const T target = static_cast<int>(c) == l ? T(1) : T(0);
            g.plane(n, c)[i] += scale * (prob.plane(n, c)[i] - target);
          }
        }
      }
    });
  }
  return out;
}

#define NETWARP_INSTANTIATE_OPS(T)                                                              \
  template Var<T> conv2d(Tape<T>*, const Var<T>&, const Var<T>&, const Var<T>&, int, int);      \
  template Var<T> relu(Tape<T>*, const Var<T>&);                                               \
  template Var<T> concat_channels(Tape<T>*, std::span<const Var<T>>);                          \
  template Var<T> scale_per_channel(Tape<T>*, const Var<T>&, const Var<T>&);                   \
  template Var<T> add(Tape<T>*, const Var<T>&, const Var<T>&);                                 \
  template Var<T> max_pool2(Tape<T>*, const Var<T>&);                                          \
  template Var<T> upsample_bilinear(Tape<T>*, const Var<T>&, std::size_t, std::size_t);        \
  template Var<T> softmax_xent_loss(Tape<T>*, const Var<T>&, std::span<const LabelMap>, int);

NETWARP_INSTANTIATE_OPS(float)
NETWARP_INSTANTIATE_OPS(double)

}  // namespace netwarp
