#pragma once

#include <algorithm>

#include "tensor.hpp"

namespace raki {

namespace detail {

// Layers with at most this many outputs use the direct kernels below.
inline constexpr Eigen::Index direct_max_out = 4;
inline constexpr Eigen::Index strip = 16;

// Convolutions run on a "padded-width" layout: the input is zero padded by
// r = k/2 on every side (plus one spare row) and flattened with row stride
// Wp = W + 2r. Output pixel (y, x) then lives at column y*Wp + x, and tap
// (ky, kx) reads the contiguous column range starting at ky*Wp + kx, so each
// tap is a single matrix product with no patch matrix.

template <typename Scalar>
RowMajorMatrix<Scalar> pad_input(Tensor3<Scalar> const &x, Eigen::Index r) {
  auto const h = x.height(), w = x.width(), wp = w + 2 * r;
  RowMajorMatrix<Scalar> p = RowMajorMatrix<Scalar>::Zero(x.channels(), (h + 2 * r + 1) * wp + strip);
  for (Eigen::Index c = 0; c < x.channels(); ++c) {
    for (Eigen::Index y = 0; y < h; ++y) {
      std::copy_n(x.data() + c * h * w + y * w, w, p.data() + c * p.cols() + (y + r) * wp + r);
    }
  }
  return p;
}

// Spread a (C, H*W) gradient into the padded-width layout (C, H*Wp),
// starting at column `front`; everything else stays zero.
template <typename Scalar>
RowMajorMatrix<Scalar> widen(Tensor3<Scalar> const &g, Eigen::Index r, Eigen::Index front = 0) {
  auto const h = g.height(), w = g.width(), wp = w + 2 * r;
  RowMajorMatrix<Scalar> out = RowMajorMatrix<Scalar>::Zero(g.channels(), (h + 2 * r + 1) * wp + front + strip);
  for (Eigen::Index c = 0; c < g.channels(); ++c) {
    for (Eigen::Index y = 0; y < h; ++y) std::copy_n(g.data() + c * h * w + y * w, w, out.data() + c * out.cols() + front + y * wp);
  }
  return out;
}

template <typename Scalar>
using TapMap = Eigen::Map<RowMajorMatrix<Scalar> const, 0, Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>>;
template <typename Scalar>
using MutableTapMap = Eigen::Map<RowMajorMatrix<Scalar>, 0, Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>>;

// (out x in) slice of the weights for one kernel tap.
template <typename Scalar>
TapMap<Scalar> tap(ConvWeights<Scalar> const &w, Eigen::Index t) {
  auto const kk = w.kernel() * w.kernel();
  return TapMap<Scalar>(w.data() + t, w.out_channels(), w.in_channels(),
                        Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>(w.in_channels() * kk, kk));
}

template <typename Scalar>
MutableTapMap<Scalar> tap(ConvWeights<Scalar> &w, Eigen::Index t) {
  auto const kk = w.kernel() * w.kernel();
  return MutableTapMap<Scalar>(w.data() + t, w.out_channels(), w.in_channels(),
                               Eigen::Stride<Eigen::Dynamic, Eigen::Dynamic>(w.in_channels() * kk, kk));
}

template <typename Scalar>
void require_conv_shapes(Tensor3<Scalar> const &x, ConvWeights<Scalar> const &w) {
  if (x.channels() != w.in_channels()) {
    throw ShapeError("conv2d: input has " + std::to_string(x.channels()) + " channels, weights expect " +
                     std::to_string(w.in_channels()));
  }
}

template <typename Scalar>
void require_grad_shape(Tensor3<Scalar> const &x, ConvWeights<Scalar> const &w, Tensor3<Scalar> const &grad_out) {
  if (grad_out.channels() != w.out_channels() || grad_out.height() != x.height() || grad_out.width() != x.width()) {
    throw ShapeError("conv2d_backward: grad_out shape does not match the forward output");
  }
}

// Layers with only a few output channels (the 2-channel output conv) make
// the per-tap products too thin for a GEMM. The direct kernels below keep a
// strip of `strip` outputs in registers and stream the taps through it.

template <typename Scalar>
using Strip = Eigen::Array<Scalar, strip, 1>;
template <typename Scalar>
using StripMap = Eigen::Map<Strip<Scalar> const, Eigen::Unaligned>;

template <int Out, typename Scalar>
void direct_forward_n(RowMajorMatrix<Scalar> const &xp, ConvWeights<Scalar> const &w, RowMajorMatrix<Scalar> &wide,
                      Eigen::Index wp, Eigen::Index n) {
  auto const k = w.kernel(), cin = w.in_channels(), kk = k * k;
  for (Eigen::Index j0 = 0; j0 < n; j0 += strip) {
    Strip<Scalar> acc[Out];
    for (int o = 0; o < Out; ++o) acc[o].setZero();
    for (Eigen::Index i = 0; i < cin; ++i) {
      Scalar const *src = xp.data() + i * xp.cols() + j0;
      Scalar const *wi = w.data() + i * kk;
      for (Eigen::Index ky = 0; ky < k; ++ky) {
        for (Eigen::Index kx = 0; kx < k; ++kx) {
          StripMap<Scalar> s(src + ky * wp + kx);
          for (int o = 0; o < Out; ++o) acc[o] += wi[o * w.matrix().cols() + ky * k + kx] * s;
        }
      }
    }
    for (int o = 0; o < Out; ++o) Eigen::Map<Strip<Scalar>>(wide.data() + o * wide.cols() + j0) = acc[o];
  }
}

template <int Out, typename Scalar>
void direct_weight_grad_n(RowMajorMatrix<Scalar> const &xp, RowMajorMatrix<Scalar> const &gwide,
                          ConvWeights<Scalar> &gw, Eigen::Index wp, Eigen::Index n) {
  constexpr int block = 4;
  auto const k = gw.kernel(), cin = gw.in_channels();
  for (Eigen::Index i = 0; i < cin; ++i) {
    Scalar const *src = xp.data() + i * xp.cols();
    for (Eigen::Index ky = 0; ky < k; ++ky) {
      Eigen::Index kx0 = 0;
      for (; kx0 + block <= k; kx0 += block) {
        Strip<Scalar> acc[Out][block];
        for (int o = 0; o < Out; ++o)
          for (int b = 0; b < block; ++b) acc[o][b].setZero();
        for (Eigen::Index j0 = 0; j0 < n; j0 += strip) {
          for (int b = 0; b < block; ++b) {
            StripMap<Scalar> s(src + ky * wp + kx0 + b + j0);
            for (int o = 0; o < Out; ++o) acc[o][b] += s * StripMap<Scalar>(gwide.data() + o * gwide.cols() + j0);
          }
        }
        for (int o = 0; o < Out; ++o)
          for (int b = 0; b < block; ++b) gw(o, i, ky, kx0 + b) = acc[o][b].sum();
      }
      for (; kx0 < k; ++kx0) {
        Strip<Scalar> acc[Out];
        for (int o = 0; o < Out; ++o) acc[o].setZero();
        for (Eigen::Index j0 = 0; j0 < n; j0 += strip) {
          StripMap<Scalar> s(src + ky * wp + kx0 + j0);
          for (int o = 0; o < Out; ++o) acc[o] += s * StripMap<Scalar>(gwide.data() + o * gwide.cols() + j0);
        }
        for (int o = 0; o < Out; ++o) gw(o, i, ky, kx0) = acc[o].sum();
      }
    }
  }
}

// gxp(i, q) = sum over (o, tap) of w(o, i, tap) * gwide(o, q - offset(tap)),
// read from a front-padded copy of gwide so every offset stays in range.
// Only rows r .. h+r-1 of the padded layout are produced; the crop never
// reads the others.
template <int Out, typename Scalar>
void direct_input_grad_n(RowMajorMatrix<Scalar> const &gpad, ConvWeights<Scalar> const &w, RowMajorMatrix<Scalar> &gxp,
                         Eigen::Index wp, Eigen::Index h) {
  constexpr int block = 4;
  auto const k = w.kernel(), r = k / 2, cin = w.in_channels(), kk = k * k, front = (k - 1) * wp + (k - 1);
  auto const q_begin = r * wp, q_end = (h + r) * wp;
  auto const wcols = w.matrix().cols();
  auto run = [&]<int B>(Eigen::Index i0) {
    for (Eigen::Index q0 = q_begin; q0 < q_end; q0 += strip) {
      Strip<Scalar> acc[B];
      for (int b = 0; b < B; ++b) acc[b].setZero();
      for (int o = 0; o < Out; ++o) {
        Scalar const *g = gpad.data() + o * gpad.cols() + q0 + front;
        Scalar const *wo = w.data() + o * wcols + i0 * kk;
        for (Eigen::Index t = 0; t < kk; ++t) {
          StripMap<Scalar> s(g - (t / k) * wp - t % k);
          for (int b = 0; b < B; ++b) acc[b] += wo[b * kk + t] * s;
        }
      }
      for (int b = 0; b < B; ++b) Eigen::Map<Strip<Scalar>>(gxp.data() + (i0 + b) * gxp.cols() + q0) = acc[b];
    }
  };
  Eigen::Index i0 = 0;
  for (; i0 + block <= cin; i0 += block) run.template operator()<block>(i0);
  for (; i0 < cin; ++i0) run.template operator()<1>(i0);
}

template <typename F>
void dispatch_out(Eigen::Index out, F &&f) {
  switch (out) {
  case 1: f.template operator()<1>(); break;
  case 2: f.template operator()<2>(); break;
  case 3: f.template operator()<3>(); break;
  default: f.template operator()<4>(); break;
  }
}

// gw_wide holds the output gradient widened with front = 0.
template <typename Scalar>
ConvWeights<Scalar> weight_grad(RowMajorMatrix<Scalar> const &xp, ConvWeights<Scalar> const &w,
                                RowMajorMatrix<Scalar> const &gw_wide, Eigen::Index wp, Eigen::Index n) {
  auto const k = w.kernel();
  ConvWeights<Scalar> gw(w.out_channels(), w.in_channels(), k);
  if (w.out_channels() <= direct_max_out) {
    dispatch_out(w.out_channels(), [&]<int Out>() { direct_weight_grad_n<Out>(xp, gw_wide, gw, wp, n); });
    return gw;
  }
  for (Eigen::Index ky = 0; ky < k; ++ky) {
    for (Eigen::Index kx = 0; kx < k; ++kx) {
      tap(gw, ky * k + kx).noalias() = gw_wide.leftCols(n) * xp.middleCols(ky * wp + kx, n).transpose();
    }
  }
  return gw;
}

} // namespace detail

/// Single-group cross-correlation with "same" zero padding (k/2 on every
/// side), no bias.
template <typename Scalar>
Tensor3<Scalar> conv2d_forward(Tensor3<Scalar> const &x, ConvWeights<Scalar> const &w) {
  detail::require_conv_shapes(x, w);
  Tensor3<Scalar> out(w.out_channels(), x.height(), x.width());
  if (w.kernel() == 1) {
    out.matrix().noalias() = w.matrix() * x.matrix();
    return out;
  }
  auto const k = w.kernel(), r = k / 2, h = x.height(), wd = x.width(), wp = wd + 2 * r, n = h * wp;
  auto const xp = detail::pad_input(x, r);
  RowMajorMatrix<Scalar> wide = RowMajorMatrix<Scalar>::Zero(w.out_channels(), n + detail::strip);
  if (w.out_channels() <= detail::direct_max_out) {
    detail::dispatch_out(w.out_channels(), [&]<int Out>() { detail::direct_forward_n<Out>(xp, w, wide, wp, n); });
  } else {
    for (Eigen::Index ky = 0; ky < k; ++ky) {
      for (Eigen::Index kx = 0; kx < k; ++kx) {
        wide.leftCols(n).noalias() += detail::tap(w, ky * k + kx) * xp.middleCols(ky * wp + kx, n);
      }
    }
  }
  for (Eigen::Index c = 0; c < out.channels(); ++c) {
    for (Eigen::Index y = 0; y < h; ++y) std::copy_n(wide.data() + c * wide.cols() + y * wp, wd, out.data() + c * h * wd + y * wd);
  }
  return out;
}

template <typename Scalar>
struct ConvGrads {
  Tensor3<Scalar> input;
  ConvWeights<Scalar> weights;
};

/// Gradients of sum(grad_out * conv2d_forward(x, w)) with respect to x and w.
template <typename Scalar>
ConvGrads<Scalar> conv2d_backward(Tensor3<Scalar> const &x, ConvWeights<Scalar> const &w,
                                  Tensor3<Scalar> const &grad_out) {
  detail::require_conv_shapes(x, w);
  detail::require_grad_shape(x, w, grad_out);
  ConvGrads<Scalar> g{Tensor3<Scalar>(x.channels(), x.height(), x.width()), ConvWeights<Scalar>()};
  if (w.kernel() == 1) {
    g.weights = ConvWeights<Scalar>(w.out_channels(), w.in_channels(), 1);
    g.weights.matrix().noalias() = grad_out.matrix() * x.matrix().transpose();
    g.input.matrix().noalias() = w.matrix().transpose() * grad_out.matrix();
    return g;
  }
  auto const k = w.kernel(), r = k / 2, h = x.height(), wd = x.width(), wp = wd + 2 * r, n = h * wp;
  auto const xp = detail::pad_input(x, r);
  auto const gwide = detail::widen(grad_out, r);
  g.weights = detail::weight_grad(xp, w, gwide, wp, n);

  RowMajorMatrix<Scalar> gxp = RowMajorMatrix<Scalar>::Zero(x.channels(), xp.cols());
  if (w.out_channels() <= detail::direct_max_out) {
    auto const gpad = detail::widen(grad_out, r, (k - 1) * wp + (k - 1));
    detail::dispatch_out(w.out_channels(), [&]<int Out>() { detail::direct_input_grad_n<Out>(gpad, w, gxp, wp, h); });
  } else {
    for (Eigen::Index ky = 0; ky < k; ++ky) {
      for (Eigen::Index kx = 0; kx < k; ++kx) {
        gxp.middleCols(ky * wp + kx, n).noalias() += detail::tap(w, ky * k + kx).transpose() * gwide.leftCols(n);
      }
    }
  }
  for (Eigen::Index c = 0; c < x.channels(); ++c) {
    for (Eigen::Index y = 0; y < h; ++y) {
      std::copy_n(gxp.data() + c * gxp.cols() + (y + r) * wp + r, wd, g.input.data() + c * h * wd + y * wd);
    }
  }
  return g;
}

/// Weight gradient only; the first layer of a network never needs the input
/// gradient.
template <typename Scalar>
ConvWeights<Scalar> conv2d_weight_grad(Tensor3<Scalar> const &x, ConvWeights<Scalar> const &w,
                                       Tensor3<Scalar> const &grad_out) {
  detail::require_conv_shapes(x, w);
  detail::require_grad_shape(x, w, grad_out);
  if (w.kernel() == 1) {
    ConvWeights<Scalar> gw(w.out_channels(), w.in_channels(), 1);
    gw.matrix().noalias() = grad_out.matrix() * x.matrix().transpose();
    return gw;
  }
  auto const r = w.kernel() / 2, wp = x.width() + 2 * r;
  return detail::weight_grad(detail::pad_input(x, r), w, detail::widen(grad_out, r), wp, x.height() * wp);
}

} // namespace raki
