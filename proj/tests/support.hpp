#pragma once

// Shared test helpers: random data, independent reference implementations and a
// central-difference gradient oracle.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "netwarp/autodiff.hpp"
#include "netwarp/params.hpp"
#include "netwarp/warp.hpp"

namespace testutil {

using netwarp::LabelMap;
using netwarp::Shape;
using netwarp::Tensor;
using netwarp::Var;

template <typename T>
Tensor<T> random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor<T> t(s);
  for (auto& v : t.data()) v = static_cast<T>(d(rng));
  return t;
}

/// The bilinear warp written out per pixel, independent of the library's sample cache.
template <typename T>
Tensor<T> naive_warp(const Tensor<T>& z, const Tensor<T>& flow, T eps) {
  const Shape s = z.shape();
  Tensor<T> out(s);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t y = 0; y < s.h; ++y) {
      for (std::size_t x = 0; x < s.w; ++x) {
        T xp = T(x) + flow.at(n, 0, y, x) + eps;
        T yp = T(y) + flow.at(n, 1, y, x) + eps;
        xp = std::min(std::max(xp, T(0)), T(s.w - 1));
        yp = std::min(std::max(yp, T(0)), T(s.h - 1));
        const T x1 = std::floor(xp), y1 = std::floor(yp);
        const T x2 = x1 + T(1), y2 = y1 + T(1);
        const std::size_t ix1 = static_cast<std::size_t>(x1);
        const std::size_t iy1 = static_cast<std::size_t>(y1);
        const std::size_t ix2 = std::min(ix1 + 1, s.w - 1);
        const std::size_t iy2 = std::min(iy1 + 1, s.h - 1);
        for (std::size_t c = 0; c < s.c; ++c) {
          const T z11 = z.at(n, c, iy1, ix1);
          const T z12 = z.at(n, c, iy2, ix1);
          const T z21 = z.at(n, c, iy1, ix2);
          const T z22 = z.at(n, c, iy2, ix2);
          out.at(n, c, y, x) = (x2 - xp) * (z11 * (y2 - yp) + z12 * (yp - y1)) +
                               (xp - x1) * (z21 * (y2 - yp) + z22 * (yp - y1));
        }
      }
    }
  }
  return out;
}

/// Scalar <r, x> with its gradient rule, for turning any op into a loss.
inline Var<double> project(netwarp::Tape<double>* tape, const Var<double>& x,
                           const Tensor<double>& r) {
  Tensor<double> out(Shape{1, 1, 1, 1});
  for (std::size_t i = 0; i < r.size(); ++i) out[0] += x.value()[i] * r[i];
  Var<double> y(std::move(out), true);
  if (tape) {
    tape->record("project", [x, y, r] {
      if (!x.requires_grad()) return;
      auto& g = x.grad_buffer();
      for (std::size_t i = 0; i < r.size(); ++i) g[i] += y.grad()[0] * r[i];
    });
  }
  return y;
}

struct FdReport {
  double worst = 0.0;
  int checked = 0;
  int skipped = 0;
};

/// Tape gradients against central differences over every coordinate of every
/// leaf. A coordinate is skipped when its one-sided slopes disagree by more
/// than half the tolerance band, which only happens next to a kink (ReLU at
/// zero, a max-pool switch, a warp cell edge).
inline FdReport fd_check(const std::vector<Var<double>>& leaves,
                         const std::function<Var<double>(netwarp::Tape<double>*)>& f,
                         double tol = 1e-4, double h = 1e-5, double floor = 1e-6) {
  for (const auto& l : leaves) l.zero_grad();
  netwarp::Tape<double> tape;
  tape.backward(f(&tape));
  FdReport rep;
  for (auto leaf : leaves) {
    const Tensor<double> g = leaf.has_grad() ? leaf.grad() : Tensor<double>(leaf.shape());
    for (std::size_t i = 0; i < leaf.value().size(); ++i) {
      double& x = leaf.mutable_value()[i];
      const double x0 = x;
      const double f0 = f(nullptr).value()[0];
      x = x0 + h;
      const double fp = f(nullptr).value()[0];
      x = x0 - h;
      const double fm = f(nullptr).value()[0];
      x = x0;
      const double num = (fp - fm) / (2 * h);
      const double denom = std::max({std::abs(num), std::abs(g[i]), floor});
      if (std::abs((fp - f0) / h - (f0 - fm) / h) > 0.5 * tol * denom) {
        ++rep.skipped;
        continue;
      }
      rep.worst = std::max(rep.worst, std::abs(num - g[i]) / denom);
      ++rep.checked;
    }
  }
  return rep;
}

inline LabelMap label_map(std::size_t h, std::size_t w, std::vector<int> values) {
  LabelMap m(h, w);
  m.labels = std::move(values);
  return m;
}

}  // namespace testutil
