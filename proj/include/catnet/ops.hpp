#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "catnet/tensor.hpp"

// Differentiable operations on tensors. Every op computes its forward value
// eagerly and, when the graph is recording and an input requires grad,
// registers a closure that accumulates input gradients from the output
// gradient. Non-differentiable points follow the conventions pinned in the
// module contract: relu'(0) = 0, d|0|/dx = 0.

namespace catnet {

namespace detail {

template <class S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw_error(ErrorKind::dimension, op, ": shape mismatch ", shape_str(a.shape()), " vs ",
                shape_str(b.shape()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <class S>
Tensor<S> add(Graph<S>& g, const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "add");
  auto out = Tensor<S>::zeros(a.shape());
  auto ov = out.values_mut();
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  if (g.track(a, b)) {
    g.record({a, b}, out, [a, b, out]() {
      auto go = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad_mut();
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_mut();
        for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> sub(Graph<S>& g, const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "sub");
  auto out = Tensor<S>::zeros(a.shape());
  auto ov = out.values_mut();
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
  if (g.track(a, b)) {
    g.record({a, b}, out, [a, b, out]() {
      auto go = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad_mut();
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_mut();
        for (std::size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> mul(Graph<S>& g, const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "mul");
  auto out = Tensor<S>::zeros(a.shape());
  auto ov = out.values_mut();
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  if (g.track(a, b)) {
    g.record({a, b}, out, [a, b, out]() {
      auto go = out.grad();
      auto av = a.values(), bv = b.values();
      if (a.requires_grad()) {
        auto ga = a.grad_mut();
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bv[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_mut();
        for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * av[i];
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> div(Graph<S>& g, const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "div");
  auto out = Tensor<S>::zeros(a.shape());
  auto ov = out.values_mut();
  auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] / bv[i];
  if (g.track(a, b)) {
    g.record({a, b}, out, [a, b, out]() {
      auto go = out.grad();
      auto av = a.values(), bv = b.values();
      if (a.requires_grad()) {
        auto ga = a.grad_mut();
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] / bv[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_mut();
        for (std::size_t i = 0; i < go.size(); ++i) gb[i] -= go[i] * av[i] / (bv[i] * bv[i]);
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> add_scalar(Graph<S>& g, const Tensor<S>& a, S c) {
  auto out = Tensor<S>::zeros(a.shape());
  auto ov = out.values_mut();
  auto av = a.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + c;
  if (g.track(a)) {
    g.record({a}, out, [a, out]() {
      auto go = out.grad();
      auto ga = a.grad_mut();
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
    });
  }
  return out;
}

template <class S>
Tensor<S> mul_scalar(Graph<S>& g, const Tensor<S>& a, S c) {
  auto out = Tensor<S>::zeros(a.shape());
  auto ov = out.values_mut();
  auto av = a.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * c;
  if (g.track(a)) {
    g.record({a}, out, [a, out, c]() {
      auto go = out.grad();
      auto ga = a.grad_mut();
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * c;
    });
  }
  return out;
}

template <class S>
Tensor<S> sqrt_elem(Graph<S>& g, const Tensor<S>& a) {
  auto out = Tensor<S>::zeros(a.shape());
  auto ov = out.values_mut();
  auto av = a.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = std::sqrt(av[i]);
  if (g.track(a)) {
    g.record({a}, out, [a, out]() {
      auto go = out.grad();
      auto ov = out.values();
      auto ga = a.grad_mut();
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * S(0.5) / ov[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Activations

template <class S>
Tensor<S> relu(Graph<S>& g, const Tensor<S>& a) {
  auto out = Tensor<S>::zeros(a.shape());
  auto ov = out.values_mut();
  auto av = a.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] > S(0) ? av[i] : S(0);
  if (g.track(a)) {
    g.record({a}, out, [a, out]() {
      auto go = out.grad();
      auto av = a.values();
      auto ga = a.grad_mut();
      for (std::size_t i = 0; i < go.size(); ++i) {
        if (av[i] > S(0)) ga[i] += go[i];
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> sigmoid(Graph<S>& g, const Tensor<S>& a) {
  auto out = Tensor<S>::zeros(a.shape());
  auto ov = out.values_mut();
  auto av = a.values();
  for (std::size_t i = 0; i < ov.size(); ++i) {
    // Branch on sign to avoid overflow in exp.
    const S x = av[i];
    if (x >= S(0)) {
      ov[i] = S(1) / (S(1) + std::exp(-x));
    } else {
      const S e = std::exp(x);
      ov[i] = e / (S(1) + e);
    }
  }
  if (g.track(a)) {
    g.record({a}, out, [a, out]() {
      auto go = out.grad();
      auto ov = out.values();
      auto ga = a.grad_mut();
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * ov[i] * (S(1) - ov[i]);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Matrix product

template <class S>
Tensor<S> matmul(Graph<S>& g, const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw_error(ErrorKind::dimension, "matmul: incompatible shapes ", shape_str(a.shape()),
                " and ", shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), p = b.dim(1);
  auto out = Tensor<S>::zeros({m, p});
  {
    auto ov = out.values_mut();
    auto av = a.values(), bv = b.values();
    for (std::size_t i = 0; i < m; ++i) {
      S* orow = &ov[i * p];
      for (std::size_t l = 0; l < k; ++l) {
        const S av_il = av[i * k + l];
        const S* brow = &bv[l * p];
        for (std::size_t j = 0; j < p; ++j) orow[j] += av_il * brow[j];
      }
    }
  }
  if (g.track(a, b)) {
    g.record({a, b}, out, [a, b, out, m, k, p]() {
      auto go = out.grad();
      auto av = a.values(), bv = b.values();
      if (a.requires_grad()) {
        // a_grad = out_grad . b^T
        auto ga = a.grad_mut();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t l = 0; l < k; ++l) {
            S acc = S(0);
            const S* grow = &go[i * p];
            const S* brow = &bv[l * p];
            for (std::size_t j = 0; j < p; ++j) acc += grow[j] * brow[j];
            ga[i * k + l] += acc;
          }
        }
      }
      if (b.requires_grad()) {
        // b_grad = a^T . out_grad
        auto gb = b.grad_mut();
        for (std::size_t l = 0; l < k; ++l) {
          S* gbrow = &gb[l * p];
          for (std::size_t i = 0; i < m; ++i) {
            const S av_il = av[i * k + l];
            const S* grow = &go[i * p];
            for (std::size_t j = 0; j < p; ++j) gbrow[j] += av_il * grow[j];
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shape ops

template <class S>
Tensor<S> concat(Graph<S>& g, const Tensor<S>& a, const Tensor<S>& b, std::size_t axis) {
  if (a.rank() != b.rank() || axis >= a.rank()) {
    throw_error(ErrorKind::dimension, "concat: rank mismatch ", shape_str(a.shape()), " vs ",
                shape_str(b.shape()), " on axis ", axis);
  }
  for (std::size_t i = 0; i < a.rank(); ++i) {
    if (i != axis && a.dim(i) != b.dim(i)) {
      throw_error(ErrorKind::dimension, "concat: extent mismatch on axis ", i, ": ",
                  shape_str(a.shape()), " vs ", shape_str(b.shape()));
    }
  }
  Shape out_shape = a.shape();
  out_shape[axis] += b.dim(axis);
  auto out = Tensor<S>::zeros(out_shape);

  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= a.dim(i);
  for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
  const std::size_t a_block = a.dim(axis) * inner;
  const std::size_t b_block = b.dim(axis) * inner;
  {
    auto ov = out.values_mut();
    auto av = a.values(), bv = b.values();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(&av[o * a_block], a_block, &ov[o * (a_block + b_block)]);
      std::copy_n(&bv[o * b_block], b_block, &ov[o * (a_block + b_block) + a_block]);
    }
  }
  if (g.track(a, b)) {
    g.record({a, b}, out, [a, b, out, outer, a_block, b_block]() {
      auto go = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad_mut();
        for (std::size_t o = 0; o < outer; ++o) {
          const S* src = &go[o * (a_block + b_block)];
          for (std::size_t i = 0; i < a_block; ++i) ga[o * a_block + i] += src[i];
        }
      }
      if (b.requires_grad()) {
        auto gb = b.grad_mut();
        for (std::size_t o = 0; o < outer; ++o) {
          const S* src = &go[o * (a_block + b_block) + a_block];
          for (std::size_t i = 0; i < b_block; ++i) gb[o * b_block + i] += src[i];
        }
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> reshape(Graph<S>& g, const Tensor<S>& a, Shape new_shape) {
  if (shape_size(new_shape) != a.size()) {
    throw_error(ErrorKind::dimension, "reshape: ", shape_str(a.shape()), " to ",
                shape_str(new_shape), " changes element count");
  }
  auto av = a.values();
  auto out = Tensor<S>::from_values(std::move(new_shape), {av.begin(), av.end()});
  if (g.track(a)) {
    g.record({a}, out, [a, out]() {
      auto go = out.grad();
      auto ga = a.grad_mut();
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
    });
  }
  return out;
}

template <class S>
Tensor<S> transpose_last2(Graph<S>& g, const Tensor<S>& a) {
  if (a.rank() < 2) {
    throw_error(ErrorKind::dimension, "transpose_last2 needs rank >= 2, got ",
                shape_str(a.shape()));
  }
  Shape out_shape = a.shape();
  const std::size_t r = a.dim(a.rank() - 2), c = a.dim(a.rank() - 1);
  std::swap(out_shape[a.rank() - 2], out_shape[a.rank() - 1]);
  auto out = Tensor<S>::zeros(out_shape);
  const std::size_t outer = a.size() / (r * c);
  {
    auto ov = out.values_mut();
    auto av = a.values();
    for (std::size_t o = 0; o < outer; ++o) {
      const S* src = &av[o * r * c];
      S* dst = &ov[o * r * c];
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) dst[j * r + i] = src[i * c + j];
    }
  }
  if (g.track(a)) {
    g.record({a}, out, [a, out, outer, r, c]() {
      auto go = out.grad();
      auto ga = a.grad_mut();
      for (std::size_t o = 0; o < outer; ++o) {
        const S* src = &go[o * r * c];
        S* dst = &ga[o * r * c];
        for (std::size_t j = 0; j < c; ++j)
          for (std::size_t i = 0; i < r; ++i) dst[i * c + j] += src[j * r + i];
      }
    });
  }
  return out;
}

// Zero padding / cropping along the last axis.
template <class S>
Tensor<S> pad_last(Graph<S>& g, const Tensor<S>& a, std::size_t left, std::size_t right) {
  Shape out_shape = a.shape();
  const std::size_t n = out_shape.back();
  out_shape.back() = n + left + right;
  auto out = Tensor<S>::zeros(out_shape);
  const std::size_t outer = a.size() / n;
  {
    auto ov = out.values_mut();
    auto av = a.values();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(&av[o * n], n, &ov[o * out_shape.back() + left]);
  }
  if (g.track(a)) {
    const std::size_t on = out_shape.back();
    g.record({a}, out, [a, out, outer, n, on, left]() {
      auto go = out.grad();
      auto ga = a.grad_mut();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < n; ++i) ga[o * n + i] += go[o * on + left + i];
    });
  }
  return out;
}

template <class S>
Tensor<S> crop_last(Graph<S>& g, const Tensor<S>& a, std::size_t start, std::size_t len) {
  const std::size_t n = a.shape().back();
  if (start + len > n) {
    throw_error(ErrorKind::dimension, "crop_last: [", start, ", ", start + len,
                ") out of range for extent ", n);
  }
  Shape out_shape = a.shape();
  out_shape.back() = len;
  auto out = Tensor<S>::zeros(out_shape);
  const std::size_t outer = a.size() / n;
  {
    auto ov = out.values_mut();
    auto av = a.values();
    for (std::size_t o = 0; o < outer; ++o) std::copy_n(&av[o * n + start], len, &ov[o * len]);
  }
  if (g.track(a)) {
    g.record({a}, out, [a, out, outer, n, start, len]() {
      auto go = out.grad();
      auto ga = a.grad_mut();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < len; ++i) ga[o * n + start + i] += go[o * len + i];
    });
  }
  return out;
}

// Zero padding / cropping over the last two axes (rows then columns).
template <class S>
Tensor<S> pad_last2(Graph<S>& g, const Tensor<S>& a, std::size_t bottom, std::size_t right) {
  if (a.rank() < 2) {
    throw_error(ErrorKind::dimension, "pad_last2 needs rank >= 2, got ", shape_str(a.shape()));
  }
  Shape out_shape = a.shape();
  const std::size_t h = a.dim(a.rank() - 2), w = a.dim(a.rank() - 1);
  out_shape[a.rank() - 2] = h + bottom;
  out_shape[a.rank() - 1] = w + right;
  auto out = Tensor<S>::zeros(out_shape);
  const std::size_t oh = h + bottom, ow = w + right;
  const std::size_t outer = a.size() / (h * w);
  {
    auto ov = out.values_mut();
    auto av = a.values();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < h; ++i)
        std::copy_n(&av[(o * h + i) * w], w, &ov[(o * oh + i) * ow]);
  }
  if (g.track(a)) {
    g.record({a}, out, [a, out, outer, h, w, oh, ow]() {
      auto go = out.grad();
      auto ga = a.grad_mut();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < h; ++i)
          for (std::size_t j = 0; j < w; ++j)
            ga[(o * h + i) * w + j] += go[(o * oh + i) * ow + j];
    });
  }
  return out;
}

template <class S>
Tensor<S> crop_last2(Graph<S>& g, const Tensor<S>& a, std::size_t h_len, std::size_t w_len) {
  if (a.rank() < 2) {
    throw_error(ErrorKind::dimension, "crop_last2 needs rank >= 2, got ", shape_str(a.shape()));
  }
  const std::size_t h = a.dim(a.rank() - 2), w = a.dim(a.rank() - 1);
  if (h_len > h || w_len > w) {
    throw_error(ErrorKind::dimension, "crop_last2: target ", h_len, "x", w_len,
                " exceeds source ", h, "x", w);
  }
  Shape out_shape = a.shape();
  out_shape[a.rank() - 2] = h_len;
  out_shape[a.rank() - 1] = w_len;
  auto out = Tensor<S>::zeros(out_shape);
  const std::size_t outer = a.size() / (h * w);
  {
    auto ov = out.values_mut();
    auto av = a.values();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < h_len; ++i)
        std::copy_n(&av[(o * h + i) * w], w_len, &ov[(o * h_len + i) * w_len]);
  }
  if (g.track(a)) {
    g.record({a}, out, [a, out, outer, h, w, h_len, w_len]() {
      auto go = out.grad();
      auto ga = a.grad_mut();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < h_len; ++i)
          for (std::size_t j = 0; j < w_len; ++j)
            ga[(o * h + i) * w + j] += go[(o * h_len + i) * w_len + j];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Per-channel bias for [B, C, ...] feature maps.

template <class S>
Tensor<S> add_channel_bias(Graph<S>& g, const Tensor<S>& x, const Tensor<S>& bias) {
  if (x.rank() < 2 || bias.rank() != 1 || bias.dim(0) != x.dim(1)) {
    throw_error(ErrorKind::dimension, "add_channel_bias: input ", shape_str(x.shape()),
                " vs bias ", shape_str(bias.shape()));
  }
  const std::size_t batch = x.dim(0), channels = x.dim(1);
  const std::size_t inner = x.size() / (batch * channels);
  auto out = Tensor<S>::zeros(x.shape());
  {
    auto ov = out.values_mut();
    auto xv = x.values();
    auto bv = bias.values();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t c = 0; c < channels; ++c) {
        const S bc = bv[c];
        const std::size_t base = (b * channels + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) ov[base + i] = xv[base + i] + bc;
      }
  }
  if (g.track(x, bias)) {
    g.record({x, bias}, out, [x, bias, out, batch, channels, inner]() {
      auto go = out.grad();
      if (x.requires_grad()) {
        auto gx = x.grad_mut();
        for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
      }
      if (bias.requires_grad()) {
        auto gb = bias.grad_mut();
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t base = (b * channels + c) * inner;
            S acc = S(0);
            for (std::size_t i = 0; i < inner; ++i) acc += go[base + i];
            gb[c] += acc;
          }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Batch normalization over batch + spatial axes of a [B, C, ...] tensor.
// Train mode uses batch statistics and updates the running stats in place
// (new = momentum * old + (1 - momentum) * batch); eval mode uses the
// running stats as constants.

template <class S>
Tensor<S> batch_norm(Graph<S>& g, const Tensor<S>& x, const Tensor<S>& gamma,
                     const Tensor<S>& beta, std::vector<S>& running_mean,
                     std::vector<S>& running_var, bool training, S momentum = S(0.9),
                     S eps = S(1e-5)) {
  if (x.rank() < 2) {
    throw_error(ErrorKind::dimension, "batch_norm needs [B,C,...], got ", shape_str(x.shape()));
  }
  const std::size_t batch = x.dim(0), channels = x.dim(1);
  const std::size_t inner = x.size() / (batch * channels);
  if (gamma.size() != channels || beta.size() != channels || running_mean.size() != channels ||
      running_var.size() != channels) {
    throw_error(ErrorKind::dimension, "batch_norm: per-channel state does not match C=", channels);
  }

  const std::size_t m = batch * inner;
  std::vector<S> mean(channels, S(0)), inv_std(channels, S(0));
  auto xv = x.values();
  if (training) {
    for (std::size_t c = 0; c < channels; ++c) {
      S sum = S(0);
      for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t base = (b * channels + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) sum += xv[base + i];
      }
      const S mu = sum / S(m);
      S var = S(0);
      for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t base = (b * channels + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) {
          const S d = xv[base + i] - mu;
          var += d * d;
        }
      }
      var /= S(m);
      mean[c] = mu;
      inv_std[c] = S(1) / std::sqrt(var + eps);
      running_mean[c] = momentum * running_mean[c] + (S(1) - momentum) * mu;
      running_var[c] = momentum * running_var[c] + (S(1) - momentum) * var;
    }
  } else {
    for (std::size_t c = 0; c < channels; ++c) {
      mean[c] = running_mean[c];
      inv_std[c] = S(1) / std::sqrt(running_var[c] + eps);
    }
  }

  auto out = Tensor<S>::zeros(x.shape());
  // Normalized values are kept for the backward pass.
  auto xhat = std::make_shared<std::vector<S>>(x.size());
  {
    auto ov = out.values_mut();
    auto gv = gamma.values(), bv = beta.values();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t c = 0; c < channels; ++c) {
        const std::size_t base = (b * channels + c) * inner;
        const S mu = mean[c], is = inv_std[c], ga = gv[c], be = bv[c];
        for (std::size_t i = 0; i < inner; ++i) {
          const S h = (xv[base + i] - mu) * is;
          (*xhat)[base + i] = h;
          ov[base + i] = ga * h + be;
        }
      }
  }

  if (g.track(x, gamma, beta)) {
    auto mean_c = std::make_shared<std::vector<S>>(std::move(mean));
    auto inv_std_c = std::make_shared<std::vector<S>>(std::move(inv_std));
    g.record({x, gamma, beta}, out,
             [x, gamma, beta, out, xhat, mean_c, inv_std_c, batch, channels, inner, m,
              training]() {
               auto go = out.grad();
               auto gv = gamma.values();
               if (gamma.requires_grad()) {
                 auto gg = gamma.grad_mut();
                 for (std::size_t b = 0; b < batch; ++b)
                   for (std::size_t c = 0; c < channels; ++c) {
                     const std::size_t base = (b * channels + c) * inner;
                     S acc = S(0);
                     for (std::size_t i = 0; i < inner; ++i)
                       acc += go[base + i] * (*xhat)[base + i];
                     gg[c] += acc;
                   }
               }
               if (beta.requires_grad()) {
                 auto gb = beta.grad_mut();
                 for (std::size_t b = 0; b < batch; ++b)
                   for (std::size_t c = 0; c < channels; ++c) {
                     const std::size_t base = (b * channels + c) * inner;
                     S acc = S(0);
                     for (std::size_t i = 0; i < inner; ++i) acc += go[base + i];
                     gb[c] += acc;
                   }
               }
               if (!x.requires_grad()) return;
               auto gx = x.grad_mut();
               if (!training) {
                 // Running stats are constants here.
                 for (std::size_t b = 0; b < batch; ++b)
                   for (std::size_t c = 0; c < channels; ++c) {
                     const std::size_t base = (b * channels + c) * inner;
                     const S k = gv[c] * (*inv_std_c)[c];
                     for (std::size_t i = 0; i < inner; ++i) gx[base + i] += go[base + i] * k;
                   }
                 return;
               }
               for (std::size_t c = 0; c < channels; ++c) {
                 // dxhat = go * gamma; reduce to the two per-channel sums the
                 // batch-statistics chain rule needs.
                 S sum_dxhat = S(0), sum_dxhat_h = S(0);
                 for (std::size_t b = 0; b < batch; ++b) {
                   const std::size_t base = (b * channels + c) * inner;
                   for (std::size_t i = 0; i < inner; ++i) {
                     const S dxh = go[base + i] * gv[c];
                     sum_dxhat += dxh;
                     sum_dxhat_h += dxh * (*xhat)[base + i];
                   }
                 }
                 const S is = (*inv_std_c)[c];
                 const S inv_m = S(1) / S(m);
                 for (std::size_t b = 0; b < batch; ++b) {
                   const std::size_t base = (b * channels + c) * inner;
                   for (std::size_t i = 0; i < inner; ++i) {
                     const S dxh = go[base + i] * gv[c];
                     const S h = (*xhat)[base + i];
                     gx[base + i] += is * (dxh - inv_m * sum_dxhat - h * inv_m * sum_dxhat_h);
                   }
                 }
               }
             });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions and loss

template <class S>
Tensor<S> sum(Graph<S>& g, const Tensor<S>& a) {
  S acc = S(0);
  for (S v : a.values()) acc += v;
  auto out = Tensor<S>::scalar(acc);
  if (g.track(a)) {
    g.record({a}, out, [a, out]() {
      const S go = out.grad()[0];
      auto ga = a.grad_mut();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go;
    });
  }
  return out;
}

template <class S>
Tensor<S> mean(Graph<S>& g, const Tensor<S>& a) {
  S acc = S(0);
  for (S v : a.values()) acc += v;
  const S inv_n = S(1) / S(a.size());
  auto out = Tensor<S>::scalar(acc * inv_n);
  if (g.track(a)) {
    g.record({a}, out, [a, out, inv_n]() {
      const S go = out.grad()[0] * inv_n;
      auto ga = a.grad_mut();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += go;
    });
  }
  return out;
}

// Mean absolute error with subgradient 0 at ties.
template <class S>
Tensor<S> mae_loss(Graph<S>& g, const Tensor<S>& estimate, const Tensor<S>& target) {
  detail::check_same_shape(estimate, target, "mae_loss");
  auto ev = estimate.values(), tv = target.values();
  S acc = S(0);
  for (std::size_t i = 0; i < ev.size(); ++i) acc += std::abs(ev[i] - tv[i]);
  const S inv_n = S(1) / S(ev.size());
  auto out = Tensor<S>::scalar(acc * inv_n);
  if (g.track(estimate, target)) {
    g.record({estimate, target}, out, [estimate, target, out, inv_n]() {
      const S go = out.grad()[0] * inv_n;
      auto ev = estimate.values(), tv = target.values();
      if (estimate.requires_grad()) {
        auto ge = estimate.grad_mut();
        for (std::size_t i = 0; i < ev.size(); ++i) {
          const S d = ev[i] - tv[i];
          if (d > S(0)) ge[i] += go;
          else if (d < S(0)) ge[i] -= go;
        }
      }
      if (target.requires_grad()) {
        auto gt = target.grad_mut();
        for (std::size_t i = 0; i < ev.size(); ++i) {
          const S d = ev[i] - tv[i];
          if (d > S(0)) gt[i] -= go;
          else if (d < S(0)) gt[i] += go;
        }
      }
    });
  }
  return out;
}

}  // namespace catnet
