#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "gunet/errors.hpp"
#include "gunet/gemm.hpp"
#include "gunet/tensor.hpp"

namespace gunet {

enum class Padding { kSame, kValid };

// Convolution parameters. The weight layout is (d0, d1, kh, kw) where
// conv2d reads d0 = out-channels, d1 = in-channels, and transpose_conv2d
// reads d0 = in-channels, d1 = out-channels. With this convention a single
// weight tensor makes the two ops exact adjoints of each other:
// <conv2d(a, p), b> = <a, transpose_conv2d(b, p)> for bias-free p.
template <typename T>
struct ConvParams {
  Tensor4<T> weights;
  std::vector<T> bias;
  int stride_h = 1, stride_w = 1;
  Padding padding = Padding::kSame;
};

namespace detail {
template <typename T>
ConvParams<T> make_params(int d0, int d1, int kh, int kw, int out_channels, int stride_h,
                          int stride_w, Padding padding) {
  if (kh < 1 || kw < 1 || stride_h < 1 || stride_w < 1)
    throw ShapeError("conv params: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                     " stride " + std::to_string(stride_h) + "x" + std::to_string(stride_w) +
                     " must all be >= 1");
  ConvParams<T> p;
  p.weights = Tensor4<T>(Shape4{d0, d1, kh, kw});
  p.bias.assign(static_cast<std::size_t>(out_channels), T{});
  p.stride_h = stride_h;
  p.stride_w = stride_w;
  p.padding = padding;
  return p;
}
}  // namespace detail

// Zero-initialized parameters for conv2d: weights (out, in, kh, kw).
template <typename T>
ConvParams<T> make_conv(int out_c, int in_c, int kh, int kw, int stride_h, int stride_w,
                        Padding padding) {
  return detail::make_params<T>(out_c, in_c, kh, kw, out_c, stride_h, stride_w, padding);
}

// Zero-initialized parameters for transpose_conv2d: weights (in, out, kh, kw).
template <typename T>
ConvParams<T> make_transpose_conv(int in_c, int out_c, int kh, int kw, int stride_h, int stride_w,
                                  Padding padding) {
  return detail::make_params<T>(in_c, out_c, kh, kw, out_c, stride_h, stride_w, padding);
}

struct ConvGeometry {
  int out_h = 0, out_w = 0;
  int pad_top = 0, pad_left = 0;
};

namespace detail {
// Output size and leading padding along one axis. Same padding: out =
// ceil(in/s), total pad = max((out-1)*s + k - in, 0) split floor-left /
// ceil-right. Valid: out = floor((in-k)/s) + 1, no padding.
inline void conv_axis(const char* op, int in, int k, int s, Padding pad, int* out, int* before) {
  if (pad == Padding::kSame) {
    *out = (in + s - 1) / s;
    const int total = std::max((*out - 1) * s + k - in, 0);
    *before = total / 2;
  } else {
    if (in < k)
      throw ShapeError(std::string(op) + ": input extent " + std::to_string(in) +
                       " smaller than kernel " + std::to_string(k) + " with valid padding");
    *out = (in - k) / s + 1;
    *before = 0;
  }
}
}  // namespace detail

template <typename T>
ConvGeometry conv_geometry(const Shape4& x, const ConvParams<T>& p) {
  ConvGeometry g;
  const Shape4& w = p.weights.shape();
  detail::conv_axis("conv2d", x.h, w.h, p.stride_h, p.padding, &g.out_h, &g.pad_top);
  detail::conv_axis("conv2d", x.w, w.w, p.stride_w, p.padding, &g.out_w, &g.pad_left);
  return g;
}

// Geometry of the strided conv that a transpose conv is the adjoint of: the
// transpose conv's OUTPUT plays the conv's input role. Same padding: output
// spatial extent = input * stride. Valid: output = (input-1)*stride + k.
template <typename T>
ConvGeometry transpose_conv_geometry(const Shape4& x, const ConvParams<T>& p) {
  const Shape4& w = p.weights.shape();
  ConvGeometry g;  // here out_h/out_w hold the transpose conv's OUTPUT size
  if (p.padding == Padding::kSame) {
    g.out_h = x.h * p.stride_h;
    g.out_w = x.w * p.stride_w;
  } else {
    g.out_h = (x.h - 1) * p.stride_h + w.h;
    g.out_w = (x.w - 1) * p.stride_w + w.w;
  }
  int check_h = 0, check_w = 0;
  detail::conv_axis("transpose_conv2d", g.out_h, w.h, p.stride_h, p.padding, &check_h, &g.pad_top);
  detail::conv_axis("transpose_conv2d", g.out_w, w.w, p.stride_w, p.padding, &check_w, &g.pad_left);
  if (check_h != x.h || check_w != x.w)
    throw ShapeError("transpose_conv2d: no conv geometry maps " + std::to_string(g.out_h) + "x" +
                     std::to_string(g.out_w) + " back to input " + std::to_string(x.h) + "x" +
                     std::to_string(x.w));
  return g;
}

namespace detail {

template <typename T>
std::vector<T>& conv_scratch(int which) {
  thread_local std::vector<T> bufs[2];
  return bufs[which];
}

// Gathers kh*kw-windowed patches of one image (c, h, w) into a column matrix
// with rows indexed (channel, ki, kj) and columns indexed by output pixel.
// Out-of-bounds taps read as zero.
template <typename T>
void im2col(const T* img, int c, int h, int w, int kh, int kw, int sh, int sw, int pad_t,
            int pad_l, int out_h, int out_w, T* col) {
  const std::size_t P = static_cast<std::size_t>(out_h) * out_w;
  std::size_t r = 0;
  for (int ch = 0; ch < c; ++ch) {
    const T* plane = img + static_cast<std::size_t>(ch) * h * w;
    for (int ki = 0; ki < kh; ++ki)
      for (int kj = 0; kj < kw; ++kj, ++r) {
        T* dst = col + r * P;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * sh - pad_t + ki;
          if (iy < 0 || iy >= h) {
            for (int ox = 0; ox < out_w; ++ox) *dst++ = T{};
            continue;
          }
          const T* row = plane + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * sw - pad_l + kj;
            *dst++ = (ix < 0 || ix >= w) ? T{} : row[ix];
          }
        }
      }
  }
}

// Adjoint of im2col: scatter-adds a column matrix back into the image grid.
// Fixed (row, pixel) iteration order keeps accumulation deterministic.
template <typename T>
void col2im_accum(const T* col, int c, int h, int w, int kh, int kw, int sh, int sw, int pad_t,
                  int pad_l, int out_h, int out_w, T* img) {
  const std::size_t P = static_cast<std::size_t>(out_h) * out_w;
  std::size_t r = 0;
  for (int ch = 0; ch < c; ++ch) {
    T* plane = img + static_cast<std::size_t>(ch) * h * w;
    for (int ki = 0; ki < kh; ++ki)
      for (int kj = 0; kj < kw; ++kj, ++r) {
        const T* src = col + r * P;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * sh - pad_t + ki;
          if (iy < 0 || iy >= h) {
            src += out_w;
            continue;
          }
          T* row = plane + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * sw - pad_l + kj;
            if (ix >= 0 && ix < w) row[ix] += src[ox];
          }
          src += out_w;
        }
      }
  }
}

template <typename T>
void require_conv_input(const char* op, const Tensor4<T>& x, const ConvParams<T>& p,
                        int in_channels, int out_channels) {
  if (p.weights.empty()) throw ShapeError(std::string(op) + ": empty kernel");
  if (x.shape().c != in_channels)
    throw ShapeError(std::string(op) + ": input has " + std::to_string(x.shape().c) +
                     " channels but kernel expects " + std::to_string(in_channels) + " (input " +
                     x.shape().str() + ", kernel " + p.weights.shape().str() + ")");
  if (static_cast<int>(p.bias.size()) != out_channels)
    throw ShapeError(std::string(op) + ": bias length " + std::to_string(p.bias.size()) +
                     " != out-channels " + std::to_string(out_channels));
}

}  // namespace detail

template <typename T>
Tensor4<T> conv2d(const Tensor4<T>& x, const ConvParams<T>& p) {
  const Shape4& ws = p.weights.shape();
  const int oc = ws.n, ic = ws.c, kh = ws.h, kw = ws.w;
  detail::require_conv_input("conv2d", x, p, ic, oc);
  const ConvGeometry g = conv_geometry(x.shape(), p);
  Tensor4<T> y(Shape4{x.shape().n, oc, g.out_h, g.out_w});
  const int K = ic * kh * kw;
  const std::size_t P = static_cast<std::size_t>(g.out_h) * g.out_w;
  auto& col = detail::conv_scratch<T>(0);
  col.resize(static_cast<std::size_t>(K) * P);
  for (int n = 0; n < x.shape().n; ++n) {
    detail::im2col(x.data() + x.index(n, 0, 0, 0), ic, x.shape().h, x.shape().w, kh, kw,
                   p.stride_h, p.stride_w, g.pad_top, g.pad_left, g.out_h, g.out_w, col.data());
    T* yn = y.data() + y.index(n, 0, 0, 0);
    for (int o = 0; o < oc; ++o)
      for (std::size_t i = 0; i < P; ++i) yn[o * P + i] = p.bias[o];
    gemm_accum(oc, static_cast<int>(P), K, p.weights.data(), col.data(), yn);
  }
  return y;
}

// Accumulates gradients of conv2d into the non-null outputs: gx (input
// gradient), gw (flat weight gradient in conv layout), gbias (length
// out-channels).
template <typename T>
void conv2d_backward(const Tensor4<T>& x, const ConvParams<T>& p, const Tensor4<T>& gy,
                     Tensor4<T>* gx, T* gw, T* gbias) {
  const Shape4& ws = p.weights.shape();
  const int oc = ws.n, ic = ws.c, kh = ws.h, kw = ws.w;
  const ConvGeometry g = conv_geometry(x.shape(), p);
  const int K = ic * kh * kw;
  const std::size_t P = static_cast<std::size_t>(g.out_h) * g.out_w;
  auto& col = detail::conv_scratch<T>(0);
  auto& gcol = detail::conv_scratch<T>(1);
  for (int n = 0; n < x.shape().n; ++n) {
    const T* gyn = gy.data() + gy.index(n, 0, 0, 0);
    if (gbias) {
      for (int o = 0; o < oc; ++o) {
        T s{};
        for (std::size_t i = 0; i < P; ++i) s += gyn[o * P + i];
        gbias[o] += s;
      }
    }
    if (gw) {
      col.resize(static_cast<std::size_t>(K) * P);
      detail::im2col(x.data() + x.index(n, 0, 0, 0), ic, x.shape().h, x.shape().w, kh, kw,
                     p.stride_h, p.stride_w, g.pad_top, g.pad_left, g.out_h, g.out_w, col.data());
      gemm_transB_accum(oc, K, static_cast<int>(P), gyn, col.data(), gw);
    }
    if (gx) {
      gcol.assign(static_cast<std::size_t>(K) * P, T{});
      gemm_transA_accum(K, static_cast<int>(P), oc, p.weights.data(), gyn, gcol.data());
      detail::col2im_accum(gcol.data(), ic, x.shape().h, x.shape().w, kh, kw, p.stride_h,
                           p.stride_w, g.pad_top, g.pad_left, g.out_h, g.out_w,
                           gx->data() + gx->index(n, 0, 0, 0));
    }
  }
}

template <typename T>
Tensor4<T> transpose_conv2d(const Tensor4<T>& x, const ConvParams<T>& p) {
  const Shape4& ws = p.weights.shape();
  const int ic = ws.n, oc = ws.c, kh = ws.h, kw = ws.w;
  detail::require_conv_input("transpose_conv2d", x, p, ic, oc);
  const ConvGeometry g = transpose_conv_geometry(x.shape(), p);
  Tensor4<T> y(Shape4{x.shape().n, oc, g.out_h, g.out_w});
  const int K = oc * kh * kw;
  const std::size_t P = static_cast<std::size_t>(x.shape().h) * x.shape().w;
  auto& col = detail::conv_scratch<T>(0);
  for (int n = 0; n < x.shape().n; ++n) {
    col.assign(static_cast<std::size_t>(K) * P, T{});
    // col = W^T x, with W viewed as an (ic x K) matrix.
    gemm_transA_accum(K, static_cast<int>(P), ic, p.weights.data(),
                      x.data() + x.index(n, 0, 0, 0), col.data());
    T* yn = y.data() + y.index(n, 0, 0, 0);
    const std::size_t plane = static_cast<std::size_t>(g.out_h) * g.out_w;
    for (int o = 0; o < oc; ++o)
      for (std::size_t i = 0; i < plane; ++i) yn[o * plane + i] = p.bias[o];
    detail::col2im_accum(col.data(), oc, g.out_h, g.out_w, kh, kw, p.stride_h, p.stride_w,
                         g.pad_top, g.pad_left, x.shape().h, x.shape().w, yn);
  }
  return y;
}

// Accumulates gradients of transpose_conv2d into the non-null outputs; gw is
// flat in the transpose-conv weight layout (in, out, kh, kw).
template <typename T>
void transpose_conv2d_backward(const Tensor4<T>& x, const ConvParams<T>& p, const Tensor4<T>& gy,
                               Tensor4<T>* gx, T* gw, T* gbias) {
  const Shape4& ws = p.weights.shape();
  const int ic = ws.n, oc = ws.c, kh = ws.h, kw = ws.w;
  const ConvGeometry g = transpose_conv_geometry(x.shape(), p);
  const int K = oc * kh * kw;
  const std::size_t P = static_cast<std::size_t>(x.shape().h) * x.shape().w;
  const std::size_t plane = static_cast<std::size_t>(g.out_h) * g.out_w;
  auto& gcol = detail::conv_scratch<T>(1);
  for (int n = 0; n < x.shape().n; ++n) {
    const T* gyn = gy.data() + gy.index(n, 0, 0, 0);
    if (gbias) {
      for (int o = 0; o < oc; ++o) {
        T s{};
        for (std::size_t i = 0; i < plane; ++i) s += gyn[o * plane + i];
        gbias[o] += s;
      }
    }
    gcol.resize(static_cast<std::size_t>(K) * P);
    detail::im2col(gyn, oc, g.out_h, g.out_w, kh, kw, p.stride_h, p.stride_w, g.pad_top,
                   g.pad_left, x.shape().h, x.shape().w, gcol.data());
    if (gx)
      gemm_accum(ic, static_cast<int>(P), K, p.weights.data(), gcol.data(),
                 gx->data() + gx->index(n, 0, 0, 0));
    if (gw)
      gemm_transB_accum(ic, K, static_cast<int>(P), x.data() + x.index(n, 0, 0, 0), gcol.data(),
                        gw);
  }
}

}  // namespace gunet
