#pragma once

#include <cstddef>

#include "catnet/tensor.hpp"

// Convolution, transposed convolution and average pooling. These are the hot
// loops of the whole toolkit, so each kernel tap precomputes the range of
// output positions whose input index is in bounds and then runs a branch-free
// inner loop. With stride 1 both operands of the inner loop are contiguous.

namespace catnet {

namespace detail {

struct OutRange {
  std::size_t lo, hi;  // half-open
};

// Output positions x in [0, out_extent) with 0 <= x*stride + shift < in_extent.
inline OutRange valid_out_range(std::size_t in_extent, std::size_t out_extent,
                                std::size_t stride, std::ptrdiff_t shift) {
  const auto s = static_cast<std::ptrdiff_t>(stride);
  std::ptrdiff_t lo = 0;
  if (shift < 0) lo = (-shift + s - 1) / s;
  const std::ptrdiff_t hi_num = static_cast<std::ptrdiff_t>(in_extent) - 1 - shift;
  if (hi_num < 0) return {0, 0};
  std::ptrdiff_t hi = hi_num / s + 1;
  if (hi > static_cast<std::ptrdiff_t>(out_extent)) hi = static_cast<std::ptrdiff_t>(out_extent);
  if (lo > hi) lo = hi;
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// 1-D convolution: x [B, Cin, L], w [Cout, Cin, K], zero padding on both ends.

template <class S>
Tensor<S> conv1d(Graph<S>& g, const Tensor<S>& x, const Tensor<S>& w, std::size_t stride,
                 std::size_t padding) {
  if (x.rank() != 3 || w.rank() != 3 || x.dim(1) != w.dim(1)) {
    throw_error(ErrorKind::dimension, "conv1d: input ", shape_str(x.shape()), " vs weight ",
                shape_str(w.shape()));
  }
  if (stride == 0) throw_error(ErrorKind::dimension, "conv1d: stride must be positive");
  const std::size_t batch = x.dim(0), cin = x.dim(1), len = x.dim(2);
  const std::size_t cout = w.dim(0), k = w.dim(2);
  if (len + 2 * padding < k) {
    throw_error(ErrorKind::dimension, "conv1d: kernel ", k, " exceeds padded length ",
                len + 2 * padding);
  }
  const std::size_t out_len = (len + 2 * padding - k) / stride + 1;
  auto out = Tensor<S>::zeros({batch, cout, out_len});
  {
    auto ov = out.values_mut();
    auto xv = x.values(), wv = w.values();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t co = 0; co < cout; ++co) {
        S* out_row = &ov[(b * cout + co) * out_len];
        for (std::size_t ci = 0; ci < cin; ++ci) {
          const S* in_row = &xv[(b * cin + ci) * len];
          const S* w_row = &wv[(co * cin + ci) * k];
          for (std::size_t kk = 0; kk < k; ++kk) {
            const S wk = w_row[kk];
            const auto shift = static_cast<std::ptrdiff_t>(kk) -
                               static_cast<std::ptrdiff_t>(padding);
            const auto r = detail::valid_out_range(len, out_len, stride, shift);
            if (stride == 1) {
              const S* src = in_row + shift;
              for (std::size_t xo = r.lo; xo < r.hi; ++xo) out_row[xo] += wk * src[xo];
            } else {
              for (std::size_t xo = r.lo; xo < r.hi; ++xo)
                out_row[xo] += wk * in_row[xo * stride + shift];
            }
          }
        }
      }
  }
  if (g.track(x, w)) {
    g.record({x, w}, out,
             [x, w, out, batch, cin, cout, len, k, out_len, stride, padding]() {
               auto go = out.grad();
               auto xv = x.values(), wv = w.values();
               for (std::size_t b = 0; b < batch; ++b)
                 for (std::size_t co = 0; co < cout; ++co) {
                   const S* go_row = &go[(b * cout + co) * out_len];
                   for (std::size_t ci = 0; ci < cin; ++ci) {
                     const S* in_row = &xv[(b * cin + ci) * len];
                     const S* w_row = &wv[(co * cin + ci) * k];
                     S* gx_row = x.requires_grad() ? &x.grad_mut()[(b * cin + ci) * len] : nullptr;
                     S* gw_row = w.requires_grad() ? &w.grad_mut()[(co * cin + ci) * k] : nullptr;
                     for (std::size_t kk = 0; kk < k; ++kk) {
                       const auto shift = static_cast<std::ptrdiff_t>(kk) -
                                          static_cast<std::ptrdiff_t>(padding);
                       const auto r = detail::valid_out_range(len, out_len, stride, shift);
                       if (gx_row) {
                         const S wk = w_row[kk];
                         if (stride == 1) {
                           S* dst = gx_row + shift;
                           for (std::size_t xo = r.lo; xo < r.hi; ++xo) dst[xo] += wk * go_row[xo];
                         } else {
                           for (std::size_t xo = r.lo; xo < r.hi; ++xo)
                             gx_row[xo * stride + shift] += wk * go_row[xo];
                         }
                       }
                       if (gw_row) {
                         S acc = S(0);
                         if (stride == 1) {
                           const S* src = in_row + shift;
                           for (std::size_t xo = r.lo; xo < r.hi; ++xo) acc += go_row[xo] * src[xo];
                         } else {
                           for (std::size_t xo = r.lo; xo < r.hi; ++xo)
                             acc += go_row[xo] * in_row[xo * stride + shift];
                         }
                         gw_row[kk] += acc;
                       }
                     }
                   }
                 }
             });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Transposed 1-D convolution: x [B, Cin, L], w [Cin, Cout, K], no padding.
// Output length (L-1)*stride + K; adjoint of conv1d with the same stride.

template <class S>
Tensor<S> conv1d_transposed(Graph<S>& g, const Tensor<S>& x, const Tensor<S>& w,
                            std::size_t stride) {
  if (x.rank() != 3 || w.rank() != 3 || x.dim(1) != w.dim(0)) {
    throw_error(ErrorKind::dimension, "conv1d_transposed: input ", shape_str(x.shape()),
                " vs weight ", shape_str(w.shape()));
  }
  if (stride == 0) throw_error(ErrorKind::dimension, "conv1d_transposed: stride must be positive");
  const std::size_t batch = x.dim(0), cin = x.dim(1), len = x.dim(2);
  const std::size_t cout = w.dim(1), k = w.dim(2);
  const std::size_t out_len = (len - 1) * stride + k;
  auto out = Tensor<S>::zeros({batch, cout, out_len});
  {
    auto ov = out.values_mut();
    auto xv = x.values(), wv = w.values();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const S* in_row = &xv[(b * cin + ci) * len];
        for (std::size_t co = 0; co < cout; ++co) {
          S* out_row = &ov[(b * cout + co) * out_len];
          const S* w_row = &wv[(ci * cout + co) * k];
          for (std::size_t kk = 0; kk < k; ++kk) {
            const S wk = w_row[kk];
            if (wk == S(0)) continue;
            if (stride == 1) {
              S* dst = out_row + kk;
              for (std::size_t xi = 0; xi < len; ++xi) dst[xi] += wk * in_row[xi];
            } else {
              for (std::size_t xi = 0; xi < len; ++xi)
                out_row[xi * stride + kk] += wk * in_row[xi];
            }
          }
        }
      }
  }
  if (g.track(x, w)) {
    g.record({x, w}, out, [x, w, out, batch, cin, cout, len, k, out_len, stride]() {
      auto go = out.grad();
      auto xv = x.values(), wv = w.values();
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t ci = 0; ci < cin; ++ci) {
          const S* in_row = &xv[(b * cin + ci) * len];
          S* gx_row = x.requires_grad() ? &x.grad_mut()[(b * cin + ci) * len] : nullptr;
          for (std::size_t co = 0; co < cout; ++co) {
            const S* go_row = &go[(b * cout + co) * out_len];
            const S* w_row = &wv[(ci * cout + co) * k];
            S* gw_row = w.requires_grad() ? &w.grad_mut()[(ci * cout + co) * k] : nullptr;
            for (std::size_t kk = 0; kk < k; ++kk) {
              if (gx_row) {
                const S wk = w_row[kk];
                if (stride == 1) {
                  const S* src = go_row + kk;
                  for (std::size_t xi = 0; xi < len; ++xi) gx_row[xi] += wk * src[xi];
                } else {
                  for (std::size_t xi = 0; xi < len; ++xi)
                    gx_row[xi] += wk * go_row[xi * stride + kk];
                }
              }
              if (gw_row) {
                S acc = S(0);
                if (stride == 1) {
                  const S* src = go_row + kk;
                  for (std::size_t xi = 0; xi < len; ++xi) acc += in_row[xi] * src[xi];
                } else {
                  for (std::size_t xi = 0; xi < len; ++xi)
                    acc += in_row[xi] * go_row[xi * stride + kk];
                }
                gw_row[kk] += acc;
              }
            }
          }
        }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// 2-D convolution: x [B, Cin, H, W], w [Cout, Cin, Kh, Kw], zero padding.

template <class S>
Tensor<S> conv2d(Graph<S>& g, const Tensor<S>& x, const Tensor<S>& w, std::size_t stride_h,
                 std::size_t stride_w, std::size_t pad_h, std::size_t pad_w) {
  if (x.rank() != 4 || w.rank() != 4 || x.dim(1) != w.dim(1)) {
    throw_error(ErrorKind::dimension, "conv2d: input ", shape_str(x.shape()), " vs weight ",
                shape_str(w.shape()));
  }
  if (stride_h == 0 || stride_w == 0) {
    throw_error(ErrorKind::dimension, "conv2d: strides must be positive");
  }
  const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), width = x.dim(3);
  const std::size_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (h + 2 * pad_h < kh || width + 2 * pad_w < kw) {
    throw_error(ErrorKind::dimension, "conv2d: kernel ", kh, "x", kw, " exceeds padded input ",
                h + 2 * pad_h, "x", width + 2 * pad_w);
  }
  const std::size_t oh = (h + 2 * pad_h - kh) / stride_h + 1;
  const std::size_t ow = (width + 2 * pad_w - kw) / stride_w + 1;
  auto out = Tensor<S>::zeros({batch, cout, oh, ow});
  {
    auto ov = out.values_mut();
    auto xv = x.values(), wv = w.values();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t co = 0; co < cout; ++co) {
        S* out_plane = &ov[(b * cout + co) * oh * ow];
        for (std::size_t ci = 0; ci < cin; ++ci) {
          const S* in_plane = &xv[(b * cin + ci) * h * width];
          const S* w_base = &wv[(co * cin + ci) * kh * kw];
          for (std::size_t ky = 0; ky < kh; ++ky) {
            const auto shift_y = static_cast<std::ptrdiff_t>(ky) -
                                 static_cast<std::ptrdiff_t>(pad_h);
            const auto ry = detail::valid_out_range(h, oh, stride_h, shift_y);
            for (std::size_t y = ry.lo; y < ry.hi; ++y) {
              const S* in_row = in_plane + (y * stride_h + shift_y) * width;
              S* out_row = out_plane + y * ow;
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const S wk = w_base[ky * kw + kx];
                const auto shift_x = static_cast<std::ptrdiff_t>(kx) -
                                     static_cast<std::ptrdiff_t>(pad_w);
                const auto rx = detail::valid_out_range(width, ow, stride_w, shift_x);
                if (stride_w == 1) {
                  const S* src = in_row + shift_x;
                  for (std::size_t xo = rx.lo; xo < rx.hi; ++xo) out_row[xo] += wk * src[xo];
                } else {
                  for (std::size_t xo = rx.lo; xo < rx.hi; ++xo)
                    out_row[xo] += wk * in_row[xo * stride_w + shift_x];
                }
              }
            }
          }
        }
      }
  }
  if (g.track(x, w)) {
    g.record({x, w}, out,
             [x, w, out, batch, cin, cout, h, width, kh, kw, oh, ow, stride_h, stride_w, pad_h,
              pad_w]() {
               auto go = out.grad();
               auto xv = x.values(), wv = w.values();
               for (std::size_t b = 0; b < batch; ++b)
                 for (std::size_t co = 0; co < cout; ++co) {
                   const S* go_plane = &go[(b * cout + co) * oh * ow];
                   for (std::size_t ci = 0; ci < cin; ++ci) {
                     const S* in_plane = &xv[(b * cin + ci) * h * width];
                     const S* w_base = &wv[(co * cin + ci) * kh * kw];
                     S* gx_plane =
                         x.requires_grad() ? &x.grad_mut()[(b * cin + ci) * h * width] : nullptr;
                     S* gw_base =
                         w.requires_grad() ? &w.grad_mut()[(co * cin + ci) * kh * kw] : nullptr;
                     for (std::size_t ky = 0; ky < kh; ++ky) {
                       const auto shift_y = static_cast<std::ptrdiff_t>(ky) -
                                            static_cast<std::ptrdiff_t>(pad_h);
                       const auto ry = detail::valid_out_range(h, oh, stride_h, shift_y);
                       for (std::size_t y = ry.lo; y < ry.hi; ++y) {
                         const std::size_t iy = y * stride_h + shift_y;
                         const S* go_row = go_plane + y * ow;
                         const S* in_row = in_plane + iy * width;
                         S* gx_row = gx_plane ? gx_plane + iy * width : nullptr;
                         for (std::size_t kx = 0; kx < kw; ++kx) {
                           const auto shift_x = static_cast<std::ptrdiff_t>(kx) -
                                                static_cast<std::ptrdiff_t>(pad_w);
                           const auto rx = detail::valid_out_range(width, ow, stride_w, shift_x);
                           if (gx_row) {
                             const S wk = w_base[ky * kw + kx];
                             if (stride_w == 1) {
                               S* dst = gx_row + shift_x;
                               for (std::size_t xo = rx.lo; xo < rx.hi; ++xo)
                                 dst[xo] += wk * go_row[xo];
                             } else {
                               for (std::size_t xo = rx.lo; xo < rx.hi; ++xo)
                                 gx_row[xo * stride_w + shift_x] += wk * go_row[xo];
                             }
                           }
                           if (gw_base) {
                             S acc = S(0);
                             if (stride_w == 1) {
                               const S* src = in_row + shift_x;
                               for (std::size_t xo = rx.lo; xo < rx.hi; ++xo)
                                 acc += go_row[xo] * src[xo];
                             } else {
                               for (std::size_t xo = rx.lo; xo < rx.hi; ++xo)
                                 acc += go_row[xo] * in_row[xo * stride_w + shift_x];
                             }
                             gw_base[ky * kw + kx] += acc;
                           }
                         }
                       }
                     }
                   }
                 }
             });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Transposed 2-D convolution: x [B, Cin, H, W], w [Cin, Cout, Kh, Kw], no
// padding. Output (H-1)*stride_h + Kh by (W-1)*stride_w + Kw.

template <class S>
Tensor<S> conv2d_transposed(Graph<S>& g, const Tensor<S>& x, const Tensor<S>& w,
                            std::size_t stride_h, std::size_t stride_w) {
  if (x.rank() != 4 || w.rank() != 4 || x.dim(1) != w.dim(0)) {
    throw_error(ErrorKind::dimension, "conv2d_transposed: input ", shape_str(x.shape()),
                " vs weight ", shape_str(w.shape()));
  }
  if (stride_h == 0 || stride_w == 0) {
    throw_error(ErrorKind::dimension, "conv2d_transposed: strides must be positive");
  }
  const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), width = x.dim(3);
  const std::size_t cout = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const std::size_t oh = (h - 1) * stride_h + kh;
  const std::size_t ow = (width - 1) * stride_w + kw;
  auto out = Tensor<S>::zeros({batch, cout, oh, ow});
  {
    auto ov = out.values_mut();
    auto xv = x.values(), wv = w.values();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const S* in_plane = &xv[(b * cin + ci) * h * width];
        for (std::size_t co = 0; co < cout; ++co) {
          S* out_plane = &ov[(b * cout + co) * oh * ow];
          const S* w_base = &wv[(ci * cout + co) * kh * kw];
          for (std::size_t ky = 0; ky < kh; ++ky)
            for (std::size_t y = 0; y < h; ++y) {
              const S* in_row = in_plane + y * width;
              S* out_row = out_plane + (y * stride_h + ky) * ow;
              for (std::size_t kx = 0; kx < kw; ++kx) {
                const S wk = w_base[ky * kw + kx];
                if (wk == S(0)) continue;
                if (stride_w == 1) {
                  S* dst = out_row + kx;
                  for (std::size_t xi = 0; xi < width; ++xi) dst[xi] += wk * in_row[xi];
                } else {
                  for (std::size_t xi = 0; xi < width; ++xi)
                    out_row[xi * stride_w + kx] += wk * in_row[xi];
                }
              }
            }
        }
      }
  }
  if (g.track(x, w)) {
    g.record({x, w}, out,
             [x, w, out, batch, cin, cout, h, width, kh, kw, oh, ow, stride_h,
              stride_w]() {
               auto go = out.grad();
               auto xv = x.values(), wv = w.values();
               for (std::size_t b = 0; b < batch; ++b)
                 for (std::size_t ci = 0; ci < cin; ++ci) {
                   const S* in_plane = &xv[(b * cin + ci) * h * width];
                   S* gx_plane =
                       x.requires_grad() ? &x.grad_mut()[(b * cin + ci) * h * width] : nullptr;
                   for (std::size_t co = 0; co < cout; ++co) {
                     const S* go_plane = &go[(b * cout + co) * oh * ow];
                     const S* w_base = &wv[(ci * cout + co) * kh * kw];
                     S* gw_base =
                         w.requires_grad() ? &w.grad_mut()[(ci * cout + co) * kh * kw] : nullptr;
                     for (std::size_t ky = 0; ky < kh; ++ky)
                       for (std::size_t y = 0; y < h; ++y) {
                         const S* go_row = go_plane + (y * stride_h + ky) * ow;
                         const S* in_row = in_plane + y * width;
                         S* gx_row = gx_plane ? gx_plane + y * width : nullptr;
                         for (std::size_t kx = 0; kx < kw; ++kx) {
                           if (gx_row) {
                             const S wk = w_base[ky * kw + kx];
                             if (stride_w == 1) {
                               const S* src = go_row + kx;
                               for (std::size_t xi = 0; xi < width; ++xi)
                                 gx_row[xi] += wk * src[xi];
                             } else {
                               for (std::size_t xi = 0; xi < width; ++xi)
                                 gx_row[xi] += wk * go_row[xi * stride_w + kx];
                             }
                           }
                           if (gw_base) {
                             S acc = S(0);
                             if (stride_w == 1) {
                               const S* src = go_row + kx;
                               for (std::size_t xi = 0; xi < width; ++xi)
                                 acc += in_row[xi] * src[xi];
                             } else {
                               for (std::size_t xi = 0; xi < width; ++xi)
                                 acc += in_row[xi] * go_row[xi * stride_w + kx];
                             }
                             gw_base[ky * kw + kx] += acc;
                           }
                         }
                       }
                   }
                 }
             });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Average pooling. Extents must divide evenly; the model pads beforehand.

template <class S>
Tensor<S> avg_pool1d(Graph<S>& g, const Tensor<S>& x, std::size_t window) {
  if (x.rank() != 3 || window == 0 || x.dim(2) % window != 0) {
    throw_error(ErrorKind::dimension, "avg_pool1d: input ", shape_str(x.shape()),
                " not divisible by window ", window);
  }
  const std::size_t rows = x.dim(0) * x.dim(1), len = x.dim(2);
  const std::size_t out_len = len / window;
  auto out = Tensor<S>::zeros({x.dim(0), x.dim(1), out_len});
  const S inv = S(1) / S(window);
  {
    auto ov = out.values_mut();
    auto xv = x.values();
    for (std::size_t r = 0; r < rows; ++r) {
      const S* src = &xv[r * len];
      S* dst = &ov[r * out_len];
      for (std::size_t i = 0; i < out_len; ++i) {
        S acc = S(0);
        for (std::size_t j = 0; j < window; ++j) acc += src[i * window + j];
        dst[i] = acc * inv;
      }
    }
  }
  if (g.track(x)) {
    g.record({x}, out, [x, out, rows, len, out_len, window, inv]() {
      auto go = out.grad();
      auto gx = x.grad_mut();
      for (std::size_t r = 0; r < rows; ++r) {
        const S* src = &go[r * out_len];
        S* dst = &gx[r * len];
        for (std::size_t i = 0; i < out_len; ++i) {
          const S gi = src[i] * inv;
          for (std::size_t j = 0; j < window; ++j) dst[i * window + j] += gi;
        }
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> avg_pool2d(Graph<S>& g, const Tensor<S>& x, std::size_t window_h,
                     std::size_t window_w) {
  if (x.rank() != 4 || window_h == 0 || window_w == 0 || x.dim(2) % window_h != 0 ||
      x.dim(3) % window_w != 0) {
    throw_error(ErrorKind::dimension, "avg_pool2d: input ", shape_str(x.shape()),
                " not divisible by window ", window_h, "x", window_w);
  }
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = h / window_h, ow = w / window_w;
  auto out = Tensor<S>::zeros({x.dim(0), x.dim(1), oh, ow});
  const S inv = S(1) / S(window_h * window_w);
  {
    auto ov = out.values_mut();
    auto xv = x.values();
    for (std::size_t p = 0; p < planes; ++p) {
      const S* src = &xv[p * h * w];
      S* dst = &ov[p * oh * ow];
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xo = 0; xo < ow; ++xo) {
          S acc = S(0);
          for (std::size_t j = 0; j < window_h; ++j)
            for (std::size_t i = 0; i < window_w; ++i)
              acc += src[(y * window_h + j) * w + xo * window_w + i];
          dst[y * ow + xo] = acc * inv;
        }
    }
  }
  if (g.track(x)) {
    g.record({x}, out, [x, out, planes, h, w, oh, ow, window_h, window_w, inv]() {
      auto go = out.grad();
      auto gx = x.grad_mut();
      for (std::size_t p = 0; p < planes; ++p) {
        const S* src = &go[p * oh * ow];
        S* dst = &gx[p * h * w];
        for (std::size_t y = 0; y < oh; ++y)
          for (std::size_t xo = 0; xo < ow; ++xo) {
            const S gi = src[y * ow + xo] * inv;
            for (std::size_t j = 0; j < window_h; ++j)
              for (std::size_t i = 0; i < window_w; ++i)
                dst[(y * window_h + j) * w + xo * window_w + i] += gi;
          }
      }
    });
  }
  return out;
}

}  // namespace catnet
