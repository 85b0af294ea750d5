#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "edgekt/errors.hpp"

namespace edgekt {

/// Rank-4 batch tensor, dims (n: batch, c: channels, h: rows, w: cols),
/// row-major. Parameters reuse the same storage with role-specific dims,
/// e.g. conv weights (out_c, in_c, kh, kw), per-channel vectors (c,1,1,1).
template <class Real>
struct TensorT {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<Real> data;

  TensorT() = default;
  TensorT(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_), data(std::size_t(n_) * c_ * h_ * w_, Real(0)) {
    if (n_ < 0 || c_ < 0 || h_ < 0 || w_ < 0)
      throw ShapeError("tensor dims must be non-negative, got " + dims_str());
  }

  std::size_t numel() const { return data.size(); }
  bool empty() const { return data.empty(); }

  Real& at(int in, int ic, int iy, int ix) {
    return data[((std::size_t(in) * c + ic) * h + iy) * w + ix];
  }
  Real at(int in, int ic, int iy, int ix) const {
    return data[((std::size_t(in) * c + ic) * h + iy) * w + ix];
  }

  bool same_dims(const TensorT& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }

  std::string dims_str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
           std::to_string(h) + "," + std::to_string(w) + ")";
  }

  void fill(Real v) { std::fill(data.begin(), data.end(), v); }

  bool all_finite() const {
    for (Real v : data)
      if (!std::isfinite(double(v))) return false;
    return true;
  }

  /// Sum of squares accumulated at 64-bit.
  double sumsq() const {
    double s = 0.0;
    for (Real v : data) s += double(v) * double(v);
    return s;
  }

  template <class Other>
  TensorT<Other> cast() const {
    TensorT<Other> out(n, c, h, w);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = Other(data[i]);
    return out;
  }
};

using Tensor = TensorT<float>;

template <class Real>
void check_same_dims(const TensorT<Real>& a, const TensorT<Real>& b, const char* op) {
  if (!a.same_dims(b))
    throw ShapeError(std::string(op) + ": dims " + a.dims_str() + " vs " + b.dims_str());
}

}  // namespace edgekt
