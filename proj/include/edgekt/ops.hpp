#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "edgekt/autograd.hpp"
#include "edgekt/gemm.hpp"
#include "edgekt/tensor.hpp"

namespace edgekt {

// ---------------------------------------------------------------------------
// Convolution (cross-correlation, no kernel flip)
// ---------------------------------------------------------------------------

namespace detail {

inline int conv_out_extent(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

/// Scatter one sample into column form: col is (c*kh*kw) x (oh*ow).
/// Stride-1 rows are contiguous in both source and destination, so the
/// common case reduces to segment copies.
template <class Real>
void im2col(const Real* x, int c, int h, int w, int kh, int kw, int stride, int pad,
            int oh, int ow, Real* col) {
  for (int ic = 0; ic < c; ++ic) {
    const Real* xc = x + std::size_t(ic) * h * w;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        Real* row = col + (std::size_t(ic) * kh * kw + ky * kw + kx) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride + ky - pad;
          Real* dst = row + std::size_t(oy) * ow;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + ow, Real(0));
            continue;
          }
          if (stride == 1) {
            // valid ox range: 0 <= ox + kx - pad < w
            int x0 = std::max(0, pad - kx);
            int x1 = std::min(ow, w + pad - kx);
            if (x1 < x0) x1 = x0;
            std::fill(dst, dst + x0, Real(0));
            const Real* src = xc + std::size_t(iy) * w + (kx - pad);
            std::copy(src + x0, src + x1, dst + x0);
            std::fill(dst + x1, dst + ow, Real(0));
          } else {
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride + kx - pad;
              dst[ox] = (ix >= 0 && ix < w) ? xc[std::size_t(iy) * w + ix] : Real(0);
            }
          }
        }
      }
    }
  }
}

/// Accumulate column-form gradients back into one sample's input gradient.
template <class Real>
void col2im_acc(const Real* col, int c, int h, int w, int kh, int kw, int stride, int pad,
                int oh, int ow, Real* dx) {
  for (int ic = 0; ic < c; ++ic) {
    Real* dxc = dx + std::size_t(ic) * h * w;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const Real* row = col + (std::size_t(ic) * kh * kw + ky * kw + kx) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= h) continue;
          const Real* src = row + std::size_t(oy) * ow;
          if (stride == 1) {
            int x0 = std::max(0, pad - kx);
            int x1 = std::min(ow, w + pad - kx);
            Real* dst = dxc + std::size_t(iy) * w + (kx - pad);
            for (int ox = x0; ox < x1; ++ox) dst[ox] += src[ox];
          } else {
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride + kx - pad;
              if (ix >= 0 && ix < w) dxc[std::size_t(iy) * w + ix] += src[ox];
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

/// 2-D convolution. weight dims (out_c, in_c, kh, kw); bias, when present,
/// is a per-output-channel vector (out_c,1,1,1).
template <class Real>
VarPtr<Real> conv2d(const VarPtr<Real>& x, const VarPtr<Real>& weight, int stride, int padding,
                    const VarPtr<Real>& bias = nullptr) {
  const TensorT<Real>& xv = x->value;
  const TensorT<Real>& wv = weight->value;
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (padding < 0) throw ShapeError("conv2d: padding must be >= 0");
  if (xv.c != wv.c)
    throw ShapeError("conv2d: input " + xv.dims_str() + " has " + std::to_string(xv.c) +
                     " channels but weight " + wv.dims_str() + " expects " + std::to_string(wv.c));
  const int oh = detail::conv_out_extent(xv.h, wv.h, stride, padding);
  const int ow = detail::conv_out_extent(xv.w, wv.w, stride, padding);
  if (oh < 1 || ow < 1)
    throw ShapeError("conv2d: kernel " + wv.dims_str() + " does not fit input " + xv.dims_str());
  if (bias && (bias->value.n != wv.n || bias->value.numel() != std::size_t(wv.n)))
    throw ShapeError("conv2d: bias " + bias->value.dims_str() + " vs out channels " +
                     std::to_string(wv.n));

  const int cout = wv.n, cin = xv.c, kh = wv.h, kw = wv.w;
  const int K = cin * kh * kw, N = oh * ow;
  TensorT<Real> out(xv.n, cout, oh, ow);
  std::vector<Real> col(std::size_t(K) * N);
  for (int s = 0; s < xv.n; ++s) {
    detail::im2col(xv.data.data() + std::size_t(s) * cin * xv.h * xv.w, cin, xv.h, xv.w, kh, kw,
                   stride, padding, oh, ow, col.data());
    detail::gemm_nn(wv.data.data(), col.data(), out.data.data() + std::size_t(s) * cout * N, cout,
                    K, N);
  }
  if (bias) {
    for (int s = 0; s < xv.n; ++s)
      for (int oc = 0; oc < cout; ++oc) {
        Real* o = out.data.data() + (std::size_t(s) * cout + oc) * N;
        const Real b = bias->value.data[oc];
        for (int i = 0; i < N; ++i) o[i] += b;
      }
  }

  std::vector<VarPtr<Real>> parents = {x, weight};
  if (bias) parents.push_back(bias);
  return make_op_node<Real>(
      std::move(out), std::move(parents),
      [stride, padding, cin, cout, kh, kw, oh, ow, has_bias = bool(bias)](VarT<Real>& node) {
        auto& xp = node.parents[0];
        auto& wp = node.parents[1];
        const TensorT<Real>& xv = xp->value;
        const int K = cin * kh * kw, N = oh * ow;
        std::vector<Real> col(std::size_t(K) * N), dcol(std::size_t(K) * N);
        const bool need_dx = xp->requires_grad;
        const bool need_dw = wp->requires_grad;
        if (need_dx) xp->ensure_grad();
        if (need_dw) wp->ensure_grad();
        for (int s = 0; s < xv.n; ++s) {
          const Real* dy = node.grad.data.data() + std::size_t(s) * cout * N;
          if (need_dw) {
            detail::im2col(xv.data.data() + std::size_t(s) * cin * xv.h * xv.w, cin, xv.h, xv.w,
                           kh, kw, stride, padding, oh, ow, col.data());
            detail::gemm_nt_acc(dy, col.data(), wp->grad.data.data(), cout, N, K);
          }
          if (need_dx) {
            detail::gemm_tn(wp->value.data.data(), dy, dcol.data(), K, cout, N);
            detail::col2im_acc(dcol.data(), cin, xv.h, xv.w, kh, kw, stride, padding, oh, ow,
                               xp->grad.data.data() + std::size_t(s) * cin * xv.h * xv.w);
          }
        }
        if (has_bias && node.parents[2]->requires_grad) {
          auto& bp = node.parents[2];
          bp->ensure_grad();
          for (int s = 0; s < xv.n; ++s)
            for (int oc = 0; oc < cout; ++oc) {
              const Real* dy = node.grad.data.data() + (std::size_t(s) * cout + oc) * N;
              double acc = 0.0;
              for (int i = 0; i < N; ++i) acc += double(dy[i]);
              bp->grad.data[oc] += Real(acc);
            }
        }
      });
}

// ---------------------------------------------------------------------------
// Elementwise / structural ops
// ---------------------------------------------------------------------------

template <class Real>
VarPtr<Real> relu(const VarPtr<Real>& x) {
  TensorT<Real> out = x->value;
  for (Real& v : out.data) v = v > Real(0) ? v : Real(0);
  return make_op_node<Real>(std::move(out), {x}, [](VarT<Real>& node) {
    auto& xp = node.parents[0];
    if (!xp->requires_grad) return;
    xp->ensure_grad();
    for (std::size_t i = 0; i < node.grad.numel(); ++i)
      if (xp->value.data[i] > Real(0)) xp->grad.data[i] += node.grad.data[i];
  });
}

/// Elementwise sum of two same-shaped tensors (the residual skip join).
template <class Real>
VarPtr<Real> residual_add(const VarPtr<Real>& a, const VarPtr<Real>& b) {
  check_same_dims(a->value, b->value, "residual_add");
  TensorT<Real> out = a->value;
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += b->value.data[i];
  return make_op_node<Real>(std::move(out), {a, b}, [](VarT<Real>& node) {
    for (auto& p : node.parents) {
      if (!p->requires_grad) continue;
      p->ensure_grad();
      for (std::size_t i = 0; i < node.grad.numel(); ++i) p->grad.data[i] += node.grad.data[i];
    }
  });
}

template <class Real>
VarPtr<Real> global_avg_pool(const VarPtr<Real>& x) {
  const TensorT<Real>& xv = x->value;
  if (xv.h < 1 || xv.w < 1)
    throw ShapeError("global_avg_pool: empty spatial dims " + xv.dims_str());
  TensorT<Real> out(xv.n, xv.c, 1, 1);
  const std::size_t hw = std::size_t(xv.h) * xv.w;
  for (int s = 0; s < xv.n; ++s)
    for (int ic = 0; ic < xv.c; ++ic) {
      const Real* p = xv.data.data() + (std::size_t(s) * xv.c + ic) * hw;
      double acc = 0.0;
      for (std::size_t i = 0; i < hw; ++i) acc += double(p[i]);
      out.data[std::size_t(s) * xv.c + ic] = Real(acc / double(hw));
    }
  return make_op_node<Real>(std::move(out), {x}, [hw](VarT<Real>& node) {
    auto& xp = node.parents[0];
    if (!xp->requires_grad) return;
    xp->ensure_grad();
    const Real inv = Real(1.0 / double(hw));
    for (std::size_t r = 0; r < node.grad.numel(); ++r) {
      const Real g = node.grad.data[r] * inv;
      Real* dst = xp->grad.data.data() + r * hw;
      for (std::size_t i = 0; i < hw; ++i) dst[i] += g;
    }
  });
}

/// Appends all-zero trailing channels so the map reaches target_channels.
template <class Real>
VarPtr<Real> pad_channels(const VarPtr<Real>& x, int target_channels) {
  const TensorT<Real>& xv = x->value;
  if (xv.c > target_channels)
    throw ShapeError("pad_channels: input " + xv.dims_str() + " already exceeds target " +
                     std::to_string(target_channels) + " channels");
  if (xv.c == target_channels) {
    // Identity; still wire a node so grads pass through uniformly.
    TensorT<Real> out = xv;
    return make_op_node<Real>(std::move(out), {x}, [](VarT<Real>& node) {
      auto& xp = node.parents[0];
      if (!xp->requires_grad) return;
      xp->ensure_grad();
      for (std::size_t i = 0; i < node.grad.numel(); ++i) xp->grad.data[i] += node.grad.data[i];
    });
  }
  TensorT<Real> out(xv.n, target_channels, xv.h, xv.w);
  const std::size_t hw = std::size_t(xv.h) * xv.w;
  for (int s = 0; s < xv.n; ++s)
    std::copy(xv.data.begin() + std::size_t(s) * xv.c * hw,
              xv.data.begin() + std::size_t(s + 1) * xv.c * hw,
              out.data.begin() + std::size_t(s) * target_channels * hw);
  return make_op_node<Real>(std::move(out), {x}, [hw](VarT<Real>& node) {
    auto& xp = node.parents[0];
    if (!xp->requires_grad) return;
    xp->ensure_grad();
    const int cin = xp->value.c, cpad = node.value.c;
    for (int s = 0; s < xp->value.n; ++s) {
      const Real* src = node.grad.data.data() + std::size_t(s) * cpad * hw;
      Real* dst = xp->grad.data.data() + std::size_t(s) * cin * hw;
      for (std::size_t i = 0; i < std::size_t(cin) * hw; ++i) dst[i] += src[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

/// Per-channel batch normalization. In train mode normalizes with batch
/// statistics and updates the caller-owned running stats in place by EMA;
/// in eval mode normalizes with the running stats. scale/shift are
/// per-channel vectors (c,1,1,1).
template <class Real>
VarPtr<Real> batchnorm(const VarPtr<Real>& x, const VarPtr<Real>& scale,
                       const VarPtr<Real>& shift, TensorT<Real>& running_mean,
                       TensorT<Real>& running_var, bool train_mode,
                       Real momentum = Real(0.1), Real eps = Real(1e-5)) {
  const TensorT<Real>& xv = x->value;
  const int C = xv.c;
  if (int(scale->value.numel()) != C || int(shift->value.numel()) != C ||
      int(running_mean.numel()) != C || int(running_var.numel()) != C)
    throw ShapeError("batchnorm: per-channel params must have length " + std::to_string(C) +
                     " for input " + xv.dims_str());

  const std::size_t hw = std::size_t(xv.h) * xv.w;
  const std::size_t cnt = std::size_t(xv.n) * hw;
  std::vector<Real> mu(C), inv_std(C);
  if (train_mode) {
    std::vector<double> sum(C, 0.0), sumsq(C, 0.0);
    for (int s = 0; s < xv.n; ++s)
      for (int ic = 0; ic < C; ++ic) {
        const Real* p = xv.data.data() + (std::size_t(s) * C + ic) * hw;
        double acc = 0.0, acc2 = 0.0;
        for (std::size_t i = 0; i < hw; ++i) {
          acc += double(p[i]);
          acc2 += double(p[i]) * double(p[i]);
        }
        sum[ic] += acc;
        sumsq[ic] += acc2;
      }
    for (int ic = 0; ic < C; ++ic) {
      const double m = sum[ic] / double(cnt);
      const double var = std::max(0.0, sumsq[ic] / double(cnt) - m * m);
      mu[ic] = Real(m);
      inv_std[ic] = Real(1.0 / std::sqrt(var + double(eps)));
      // Running variance stored unbiased, normalization uses biased.
      const double var_run = cnt > 1 ? var * double(cnt) / double(cnt - 1) : var;
      running_mean.data[ic] =
          Real((1.0 - double(momentum)) * double(running_mean.data[ic]) + double(momentum) * m);
      running_var.data[ic] = Real((1.0 - double(momentum)) * double(running_var.data[ic]) +
                                  double(momentum) * var_run);
    }
  } else {
    for (int ic = 0; ic < C; ++ic) {
      mu[ic] = running_mean.data[ic];
      inv_std[ic] = Real(1.0 / std::sqrt(double(running_var.data[ic]) + double(eps)));
    }
  }

  TensorT<Real> out(xv.n, C, xv.h, xv.w);
  for (int s = 0; s < xv.n; ++s)
    for (int ic = 0; ic < C; ++ic) {
      const Real* p = xv.data.data() + (std::size_t(s) * C + ic) * hw;
      Real* o = out.data.data() + (std::size_t(s) * C + ic) * hw;
      const Real g = scale->value.data[ic], b = shift->value.data[ic];
      const Real m = mu[ic], is = inv_std[ic];
      for (std::size_t i = 0; i < hw; ++i) o[i] = (p[i] - m) * is * g + b;
    }

  return make_op_node<Real>(
      std::move(out), {x, scale, shift},
      [mu = std::move(mu), inv_std = std::move(inv_std), train_mode, hw, cnt](VarT<Real>& node) {
        auto& xp = node.parents[0];
        auto& sp = node.parents[1];
        auto& bp = node.parents[2];
        const TensorT<Real>& xv = xp->value;
        const int C = xv.c;
        // Per-channel reductions of g and g*xhat, shared by all grads.
        std::vector<double> sum_g(C, 0.0), sum_gx(C, 0.0);
        for (int s = 0; s < xv.n; ++s)
          for (int ic = 0; ic < C; ++ic) {
            const Real* p = xv.data.data() + (std::size_t(s) * C + ic) * hw;
            const Real* g = node.grad.data.data() + (std::size_t(s) * C + ic) * hw;
            const Real m = mu[ic], is = inv_std[ic];
            double sg = 0.0, sgx = 0.0;
            for (std::size_t i = 0; i < hw; ++i) {
              sg += double(g[i]);
              sgx += double(g[i]) * double((p[i] - m) * is);
            }
            sum_g[ic] += sg;
            sum_gx[ic] += sgx;
          }
        if (sp->requires_grad) {
          sp->ensure_grad();
          for (int ic = 0; ic < C; ++ic) sp->grad.data[ic] += Real(sum_gx[ic]);
        }
        if (bp->requires_grad) {
          bp->ensure_grad();
          for (int ic = 0; ic < C; ++ic) bp->grad.data[ic] += Real(sum_g[ic]);
        }
        if (!xp->requires_grad) return;
        xp->ensure_grad();
        for (int s = 0; s < xv.n; ++s)
          for (int ic = 0; ic < C; ++ic) {
            const Real* p = xv.data.data() + (std::size_t(s) * C + ic) * hw;
            const Real* g = node.grad.data.data() + (std::size_t(s) * C + ic) * hw;
            Real* d = xp->grad.data.data() + (std::size_t(s) * C + ic) * hw;
            const Real m = mu[ic], is = inv_std[ic];
            const Real gs = sp->value.data[ic] * is;
            if (train_mode) {
              const Real mean_g = Real(sum_g[ic] / double(cnt));
              const Real mean_gx = Real(sum_gx[ic] / double(cnt));
              for (std::size_t i = 0; i < hw; ++i) {
                const Real xhat = (p[i] - m) * is;
                d[i] += gs * (g[i] - mean_g - xhat * mean_gx);
              }
            } else {
              for (std::size_t i = 0; i < hw; ++i) d[i] += gs * g[i];
            }
          }
      });
}

// ---------------------------------------------------------------------------
// Fully connected / softmax
// ---------------------------------------------------------------------------

/// Affine map treating each sample's (c,h,w) block as a flat feature row.
/// weight dims (out, in, 1, 1); bias (out,1,1,1). Output (n, out, 1, 1).
template <class Real>
VarPtr<Real> fully_connected(const VarPtr<Real>& x, const VarPtr<Real>& weight,
                             const VarPtr<Real>& bias) {
  const TensorT<Real>& xv = x->value;
  const TensorT<Real>& wv = weight->value;
  const int fin = xv.c * xv.h * xv.w;
  const int out_dim = wv.n;
  if (wv.c * wv.h * wv.w != fin)
    throw ShapeError("fully_connected: input features " + std::to_string(fin) + " from " +
                     xv.dims_str() + " vs weight " + wv.dims_str());
  if (int(bias->value.numel()) != out_dim)
    throw ShapeError("fully_connected: bias " + bias->value.dims_str() + " vs out dim " +
                     std::to_string(out_dim));
  TensorT<Real> out(xv.n, out_dim, 1, 1);
  detail::gemm_nt(xv.data.data(), wv.data.data(), out.data.data(), xv.n, fin, out_dim);
  for (int s = 0; s < xv.n; ++s)
    for (int j = 0; j < out_dim; ++j) out.data[std::size_t(s) * out_dim + j] += bias->value.data[j];

  return make_op_node<Real>(std::move(out), {x, weight, bias}, [fin, out_dim](VarT<Real>& node) {
    auto& xp = node.parents[0];
    auto& wp = node.parents[1];
    auto& bp = node.parents[2];
    const int n = xp->value.n;
    if (xp->requires_grad) {
      xp->ensure_grad();
      detail::gemm_nn_acc(node.grad.data.data(), wp->value.data.data(), xp->grad.data.data(), n,
                          out_dim, fin);
    }
    if (wp->requires_grad) {
      wp->ensure_grad();
      detail::gemm_tn_acc(node.grad.data.data(), xp->value.data.data(), wp->grad.data.data(),
                          out_dim, n, fin);
    }
    if (bp->requires_grad) {
      bp->ensure_grad();
      for (int j = 0; j < out_dim; ++j) {
        double acc = 0.0;
        for (int s = 0; s < n; ++s) acc += double(node.grad.data[std::size_t(s) * out_dim + j]);
        bp->grad.data[j] += Real(acc);
      }
    }
  });
}

/// Row-wise softmax with max subtraction. Input (n, c, 1, 1).
template <class Real>
VarPtr<Real> softmax_rows(const VarPtr<Real>& x) {
  const TensorT<Real>& xv = x->value;
  if (xv.h != 1 || xv.w != 1)
    throw ShapeError("softmax_rows: expected (n,c,1,1), got " + xv.dims_str());
  const int C = xv.c;
  TensorT<Real> out(xv.n, C, 1, 1);
  for (int s = 0; s < xv.n; ++s) {
    const Real* z = xv.data.data() + std::size_t(s) * C;
    Real* p = out.data.data() + std::size_t(s) * C;
    Real zmax = z[0];
    for (int j = 1; j < C; ++j) zmax = std::max(zmax, z[j]);
    double denom = 0.0;
    for (int j = 0; j < C; ++j) {
      const double e = std::exp(double(z[j] - zmax));
      p[j] = Real(e);
      denom += e;
    }
    const double inv = 1.0 / denom;
    for (int j = 0; j < C; ++j) p[j] = Real(double(p[j]) * inv);
  }
  return make_op_node<Real>(std::move(out), {x}, [C](VarT<Real>& node) {
    auto& xp = node.parents[0];
    if (!xp->requires_grad) return;
    xp->ensure_grad();
    for (int s = 0; s < node.value.n; ++s) {
      const Real* p = node.value.data.data() + std::size_t(s) * C;
      const Real* g = node.grad.data.data() + std::size_t(s) * C;
      Real* d = xp->grad.data.data() + std::size_t(s) * C;
      double dot = 0.0;
      for (int j = 0; j < C; ++j) dot += double(g[j]) * double(p[j]);
      for (int j = 0; j < C; ++j) d[j] += p[j] * (g[j] - Real(dot));
    }
  });
}

// ---------------------------------------------------------------------------
// l2 normalization
// ---------------------------------------------------------------------------

template <class Real>
struct NormalizeResult {
  VarPtr<Real> out;
  bool degenerate = false;  // some normalized slice had zero input norm
};

/// Flattens and scales to unit l2 norm. Default treats the whole tensor as
/// one vector (output (1,L,1,1)); per_sample normalizes each sample's
/// flattened row independently (output (n,f,1,1)). An all-zero slice yields
/// the zero vector and sets `degenerate`, with zero gradient.
template <class Real>
NormalizeResult<Real> l2_normalize_flat(const VarPtr<Real>& x, bool per_sample = false) {
  const TensorT<Real>& xv = x->value;
  const int rows = per_sample ? xv.n : 1;
  const std::size_t len = per_sample ? xv.numel() / std::size_t(std::max(xv.n, 1)) : xv.numel();
  if (len == 0) throw ShapeError("l2_normalize_flat: empty input");
  TensorT<Real> out(rows, int(len), 1, 1);
  std::vector<Real> inv_norm(rows, Real(0));
  bool degenerate = false;
  for (int r = 0; r < rows; ++r) {
    const Real* src = xv.data.data() + std::size_t(r) * len;
    double ss = 0.0;
    for (std::size_t i = 0; i < len; ++i) ss += double(src[i]) * double(src[i]);
    const double nrm = std::sqrt(ss);
    if (nrm == 0.0) {
      degenerate = true;  // output row stays zero
      continue;
    }
    inv_norm[r] = Real(1.0 / nrm);
    Real* dst = out.data.data() + std::size_t(r) * len;
    for (std::size_t i = 0; i < len; ++i) dst[i] = Real(double(src[i]) / nrm);
  }
  auto node = make_op_node<Real>(
      std::move(out), {x}, [inv_norm = std::move(inv_norm), len](VarT<Real>& node) {
        auto& xp = node.parents[0];
        if (!xp->requires_grad) return;
        xp->ensure_grad();
        for (int r = 0; r < node.value.n; ++r) {
          const Real is = inv_norm[r];
          if (is == Real(0)) continue;  // degenerate row: subgradient zero
          const Real* y = node.value.data.data() + std::size_t(r) * len;
          const Real* g = node.grad.data.data() + std::size_t(r) * len;
          Real* d = xp->grad.data.data() + std::size_t(r) * len;
          double dot = 0.0;
          for (std::size_t i = 0; i < len; ++i) dot += double(g[i]) * double(y[i]);
          for (std::size_t i = 0; i < len; ++i)
            d[i] += Real((double(g[i]) - dot * double(y[i])) * double(is));
        }
      });
  return {node, degenerate};
}

// ---------------------------------------------------------------------------
// Loss primitives
// ---------------------------------------------------------------------------

/// Root of the summed squared difference over all elements; the shared form
/// of the logit-matching and block-matching loss terms. Subgradient 0 at 0.
template <class Real>
VarPtr<Real> euclidean_distance(const VarPtr<Real>& a, const VarPtr<Real>& b) {
  check_same_dims(a->value, b->value, "euclidean_distance");
  double ss = 0.0;
  for (std::size_t i = 0; i < a->value.numel(); ++i) {
    const double d = double(a->value.data[i]) - double(b->value.data[i]);
    ss += d * d;
  }
  const double dist = std::sqrt(ss);
  TensorT<Real> out(1, 1, 1, 1);
  out.data[0] = Real(dist);
  return make_op_node<Real>(std::move(out), {a, b}, [dist](VarT<Real>& node) {
    auto& ap = node.parents[0];
    auto& bp = node.parents[1];
    if (ap->requires_grad) ap->ensure_grad();
    if (bp->requires_grad) bp->ensure_grad();
    if (dist == 0.0) return;  // subgradient 0 at the root's kink
    const Real coeff = node.grad.data[0] * Real(1.0 / dist);
    for (std::size_t i = 0; i < ap->value.numel(); ++i) {
      const Real diff = (ap->value.data[i] - bp->value.data[i]) * coeff;
      if (ap->requires_grad) ap->grad.data[i] += diff;
      if (bp->requires_grad) bp->grad.data[i] -= diff;
    }
  });
}

/// Two-sided log-likelihood loss on probabilities, negated and averaged over
/// the batch. Probabilities are clamped to [eps, 1-eps]; the clamp also
/// gates the gradient. targets must be one-hot rows.
template <class Real>
VarPtr<Real> nll_two_sided(const VarPtr<Real>& probs, const TensorT<Real>& targets,
                           Real eps = Real(1e-7)) {
  check_same_dims(probs->value, targets, "nll_two_sided");
  const int n = probs->value.n, C = probs->value.c;
  for (int s = 0; s < n; ++s) {
    double row = 0.0;
    for (int j = 0; j < C; ++j) {
      const Real y = targets.data[std::size_t(s) * C + j];
      if (y != Real(0) && y != Real(1))
        throw ShapeError("nll_two_sided: targets must be one-hot");
      row += double(y);
    }
    if (row != 1.0) throw ShapeError("nll_two_sided: targets must be one-hot");
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < probs->value.numel(); ++i) {
    const double p = std::clamp(double(probs->value.data[i]), double(eps), 1.0 - double(eps));
    const double y = double(targets.data[i]);
    loss -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  loss /= double(n);
  TensorT<Real> out(1, 1, 1, 1);
  out.data[0] = Real(loss);
  return make_op_node<Real>(std::move(out), {probs}, [targets, eps, n](VarT<Real>& node) {
    auto& pp = node.parents[0];
    if (!pp->requires_grad) return;
    pp->ensure_grad();
    const Real g = node.grad.data[0];
    for (std::size_t i = 0; i < pp->value.numel(); ++i) {
      const double p = double(pp->value.data[i]);
      if (p <= double(eps) || p >= 1.0 - double(eps)) continue;  // clamped: flat
      const double y = double(targets.data[i]);
      pp->grad.data[i] += g * Real(-(y / p - (1.0 - y) / (1.0 - p)) / double(n));
    }
  });
}

/// Mean categorical cross entropy on logits (fused log-softmax).
template <class Real>
VarPtr<Real> cross_entropy_logits(const VarPtr<Real>& logits, const std::vector<int>& labels) {
  const TensorT<Real>& zv = logits->value;
  if (int(labels.size()) != zv.n)
    throw ShapeError("cross_entropy_logits: " + std::to_string(labels.size()) + " labels for " +
                     zv.dims_str());
  const int C = zv.c;
  for (int lab : labels)
    if (lab < 0 || lab >= C)
      throw ShapeError("cross_entropy_logits: label " + std::to_string(lab) + " out of range [0," +
                       std::to_string(C) + ")");
  double loss = 0.0;
  for (int s = 0; s < zv.n; ++s) {
    const Real* z = zv.data.data() + std::size_t(s) * C;
    double zmax = double(z[0]);
    for (int j = 1; j < C; ++j) zmax = std::max(zmax, double(z[j]));
    double denom = 0.0;
    for (int j = 0; j < C; ++j) denom += std::exp(double(z[j]) - zmax);
    loss += zmax + std::log(denom) - double(z[labels[s]]);
  }
  loss /= double(zv.n);
  TensorT<Real> out(1, 1, 1, 1);
  out.data[0] = Real(loss);
  return make_op_node<Real>(std::move(out), {logits}, [labels, C](VarT<Real>& node) {
    auto& zp = node.parents[0];
    if (!zp->requires_grad) return;
    zp->ensure_grad();
    const int n = zp->value.n;
    const Real g = node.grad.data[0];
    for (int s = 0; s < n; ++s) {
      const Real* z = zp->value.data.data() + std::size_t(s) * C;
      Real* d = zp->grad.data.data() + std::size_t(s) * C;
      double zmax = double(z[0]);
      for (int j = 1; j < C; ++j) zmax = std::max(zmax, double(z[j]));
      double denom = 0.0;
      for (int j = 0; j < C; ++j) denom += std::exp(double(z[j]) - zmax);
      for (int j = 0; j < C; ++j) {
        const double p = std::exp(double(z[j]) - zmax) / denom;
        const double y = (j == labels[s]) ? 1.0 : 0.0;
        d[j] += g * Real((p - y) / double(n));
      }
    }
  });
}

/// Scalar linear combination sum_i coeffs[i] * terms[i].
template <class Real>
VarPtr<Real> scalar_combine(const std::vector<VarPtr<Real>>& terms,
                            const std::vector<Real>& coeffs) {
  if (terms.size() != coeffs.size() || terms.empty())
    throw ShapeError("scalar_combine: needs equally many terms and coefficients");
  double acc = 0.0;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (terms[i]->value.numel() != 1)
      throw ShapeError("scalar_combine: term " + std::to_string(i) + " is not scalar");
    acc += double(coeffs[i]) * double(terms[i]->value.data[0]);
  }
  TensorT<Real> out(1, 1, 1, 1);
  out.data[0] = Real(acc);
  return make_op_node<Real>(std::move(out), terms, [coeffs](VarT<Real>& node) {
    const Real g = node.grad.data[0];
    for (std::size_t i = 0; i < node.parents.size(); ++i) {
      auto& p = node.parents[i];
      if (!p->requires_grad) continue;
      p->ensure_grad();
      p->grad.data[0] += g * coeffs[i];
    }
  });
}

/// Top-1 predictions per row of a logits/probability tensor (n,c,1,1).
template <class Real>
std::vector<int> argmax_rows(const TensorT<Real>& t) {
  std::vector<int> out(t.n);
  for (int s = 0; s < t.n; ++s) {
    const Real* p = t.data.data() + std::size_t(s) * t.c;
    int best = 0;
    for (int j = 1; j < t.c; ++j)
      if (p[j] > p[best]) best = j;
    out[s] = best;
  }
  return out;
}

}  // namespace edgekt
