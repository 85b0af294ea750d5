#pragma once

// Independent reference implementations used only by tests. These stay
// deliberately naive (nested loops, 64-bit accumulation) so they share no
// code path with the library.

#include <cmath>
#include <vector>

#include "edgekt/rng.hpp"
#include "edgekt/tensor.hpp"

namespace oracle {

/// Six-nested-loop cross-correlation at 64-bit.
template <class Real>
edgekt::TensorT<double> conv2d_reference(const edgekt::TensorT<Real>& x,
                                         const edgekt::TensorT<Real>& w, int stride, int pad) {
  const int oh = (x.h + 2 * pad - w.h) / stride + 1;
  const int ow = (x.w + 2 * pad - w.w) / stride + 1;
  edgekt::TensorT<double> out(x.n, w.n, oh, ow);
  for (int s = 0; s < x.n; ++s)
    for (int oc = 0; oc < w.n; ++oc)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double acc = 0.0;
          for (int ic = 0; ic < x.c; ++ic)
            for (int ky = 0; ky < w.h; ++ky)
              for (int kx = 0; kx < w.w; ++kx) {
                const int iy = oy * stride + ky - pad;
                const int ix = ox * stride + kx - pad;
                if (iy < 0 || iy >= x.h || ix < 0 || ix >= x.w) continue;
                acc += double(x.at(s, ic, iy, ix)) * double(w.at(oc, ic, ky, kx));
              }
          out.at(s, oc, oy, ox) = acc;
        }
  return out;
}

/// Row softmax via direct exp/sum at 64-bit (no max subtraction).
inline std::vector<double> softmax_reference(const std::vector<double>& row) {
  double denom = 0.0;
  for (double z : row) denom += std::exp(z);
  std::vector<double> out(row.size());
  for (std::size_t i = 0; i < row.size(); ++i) out[i] = std::exp(row[i]) / denom;
  return out;
}

/// Nesterov momentum recursion on a single scalar, 64-bit. Mirrors the
/// conventional formulation: d = g + wd*w; buf = mu*buf + d; w -= lr*(d + mu*buf).
struct NesterovScalar {
  double w, buf = 0.0;
  void step(double grad, double lr, double mu, double wd) {
    const double d = grad + wd * w;
    buf = mu * buf + d;
    w -= lr * (d + mu * buf);
  }
};

/// Adam recursion on a single scalar, 64-bit, bias-corrected.
struct AdamScalar {
  double w, m = 0.0, v = 0.0;
  long t = 0;
  void step(double grad, double lr, double b1, double b2, double eps, double wd) {
    ++t;
    const double d = grad + wd * w;
    m = b1 * m + (1 - b1) * d;
    v = b2 * v + (1 - b2) * d * d;
    const double mhat = m / (1 - std::pow(b1, double(t)));
    const double vhat = v / (1 - std::pow(b2, double(t)));
    w -= lr * mhat / (std::sqrt(vhat) + eps);
  }
};

template <class Real>
void fill_uniform(edgekt::TensorT<Real>& t, edgekt::Rng& rng, double lo = -1.0, double hi = 1.0) {
  for (auto& v : t.data) v = Real(rng.uniform(lo, hi));
}

/// Uniform fill keeping every element at least `margin` away from zero, for
/// probing ops with a kink at the origin.
template <class Real>
void fill_uniform_away_from_zero(edgekt::TensorT<Real>& t, edgekt::Rng& rng, double margin) {
  for (auto& v : t.data) {
    double x = rng.uniform(margin, 1.0);
    if (rng.bernoulli(0.5)) x = -x;
    v = Real(x);
  }
}

}  // namespace oracle
