#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "catnet/conv.hpp"
#include "catnet/ops.hpp"
#include "catnet/tensor.hpp"

// Short-time Fourier analysis and synthesis as graph operations. The forward
// transform is a strided convolution whose fixed kernels are the windowed
// rows of the DFT matrix; the inverse applies the inverse-DFT matrices as
// 1x1 convolutions per frame and overlap-adds with a transposed convolution.
// Everything stays on the tape, so masks applied in the spectral domain get
// gradients from waveform losses.

namespace catnet {

enum class WindowKind { hann, rect };

inline std::string window_kind_name(WindowKind k) {
  return k == WindowKind::hann ? "hann" : "rect";
}

inline WindowKind parse_window_kind(const std::string& name) {
  if (name == "hann") return WindowKind::hann;
  if (name == "rect") return WindowKind::rect;
  throw_error(ErrorKind::config, "unknown window kind '", name, "' (expected hann or rect)");
}

struct StftConfig {
  std::size_t window_size = 2048;
  std::size_t hop = 441;
  WindowKind window = WindowKind::hann;

  void validate() const {
    if (window_size < 2 || window_size % 2 != 0) {
      throw_error(ErrorKind::config, "window_size must be even and >= 2, got ", window_size);
    }
    if (hop == 0 || hop > window_size) {
      throw_error(ErrorKind::config, "hop must satisfy 0 < hop <= window_size, got ", hop,
                  " with window_size ", window_size);
    }
  }
};

// Periodic window, the right variant for overlap-add analysis.
template <class S>
std::vector<S> make_analysis_window(WindowKind kind, std::size_t n) {
  std::vector<S> w(n, S(1));
  if (kind == WindowKind::hann) {
    const double two_pi = 2.0 * std::acos(-1.0);
    for (std::size_t i = 0; i < n; ++i)
      w[i] = static_cast<S>(0.5 - 0.5 * std::cos(two_pi * static_cast<double>(i) /
                                                 static_cast<double>(n)));
  }
  return w;
}

// Forward and inverse DFT matrices, row-major N x N.
// d_r[k*n + t] = cos(2*pi*k*t/n), d_i[k*n + t] = -sin(2*pi*k*t/n);
// the inverse carries the opposite sign and the 1/n factor.
template <class S>
struct DftMatrices {
  std::size_t n = 0;
  std::vector<S> d_r, d_i, dinv_r, dinv_i;
};

template <class S>
DftMatrices<S> make_dft_matrices(std::size_t n) {
  if (n < 2 || n % 2 != 0) {
    throw_error(ErrorKind::config, "DFT size must be even and >= 2, got ", n);
  }
  DftMatrices<S> m;
  m.n = n;
  m.d_r.resize(n * n);
  m.d_i.resize(n * n);
  m.dinv_r.resize(n * n);
  m.dinv_i.resize(n * n);
  const double two_pi = 2.0 * std::acos(-1.0);
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t t = 0; t < n; ++t) {
      // Reduce the exact integer product modulo N: keeps arguments small for
      // accuracy and makes the matrices exactly symmetric in k and t.
      const double ang = two_pi * static_cast<double>((k * t) % n) / static_cast<double>(n);
      m.d_r[k * n + t] = static_cast<S>(std::cos(ang));
      m.d_i[k * n + t] = static_cast<S>(-std::sin(ang));
      m.dinv_r[k * n + t] = static_cast<S>(std::cos(ang) / static_cast<double>(n));
      m.dinv_i[k * n + t] = static_cast<S>(std::sin(ang) / static_cast<double>(n));
    }
  return m;
}

// Complex spectrogram of a batch of signals: real/imag are [B, T, N].
template <class S>
struct ComplexSpec {
  Tensor<S> real;
  Tensor<S> imag;
  std::size_t frame_count = 0;
  std::size_t bin_count = 0;
  std::size_t hop = 0;
  WindowKind window = WindowKind::hann;
};

namespace detail {

struct FrameGeometry {
  std::size_t tail_pad = 0;   // appended zeros beyond the centering pad
  std::size_t frames = 0;
  std::size_t padded_len = 0;
};

inline FrameGeometry frame_geometry(std::size_t length, const StftConfig& cfg, bool centered) {
  FrameGeometry geo;
  const std::size_t n = cfg.window_size;
  std::size_t base = centered ? length + n : length;
  if (base < n) {
    geo.tail_pad = n - base;
    base = n;
  }
  const std::size_t rem = (base - n) % cfg.hop;
  if (rem != 0) geo.tail_pad += cfg.hop - rem;
  geo.padded_len = base + geo.tail_pad;
  geo.frames = (geo.padded_len - n) / cfg.hop + 1;
  return geo;
}

}  // namespace detail

// Windowed frames of a padded signal, outside the graph. Used by tests to
// pin down the convolution-based transform and by callers that want raw
// frames. Frame t holds window .* padded[t*hop .. t*hop+N).
template <class S>
Tensor<S> frame_signal(const Tensor<S>& x, const StftConfig& cfg, bool centered = true) {
  cfg.validate();
  if (x.rank() != 2) {
    throw_error(ErrorKind::dimension, "frame_signal expects [B,L], got ", shape_str(x.shape()));
  }
  const std::size_t batch = x.dim(0), length = x.dim(1), n = cfg.window_size;
  const auto geo = detail::frame_geometry(length, cfg, centered);
  const std::size_t lead = centered ? n / 2 : 0;
  const auto window = make_analysis_window<S>(cfg.window, n);

  auto out = Tensor<S>::zeros({batch, geo.frames, n});
  auto ov = out.values_mut();
  auto xv = x.values();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < geo.frames; ++t) {
      S* frame = &ov[(b * geo.frames + t) * n];
      for (std::size_t i = 0; i < n; ++i) {
        const auto src = static_cast<std::ptrdiff_t>(t * cfg.hop + i) -
                         static_cast<std::ptrdiff_t>(lead);
        const S v = (src >= 0 && src < static_cast<std::ptrdiff_t>(length))
                        ? xv[b * length + src]
                        : S(0);
        frame[i] = window[i] * v;
      }
    }
  }
  return out;
}

// Mirrors one-sided bins [0, N/2] back to the full N bins by symmetry:
// out[k] = in[k] for k <= N/2, out[N-k] = in[k] for 0 < k < N/2. Applied to
// magnitudes, which are symmetric for real signals.
template <class S>
Tensor<S> mirror_spectrum(Graph<S>& g, const Tensor<S>& x, std::size_t n) {
  const std::size_t f = n / 2 + 1;
  if (x.rank() < 1 || x.shape().back() != f) {
    throw_error(ErrorKind::dimension, "mirror_spectrum: last extent of ", shape_str(x.shape()),
                " must be ", f, " for N=", n);
  }
  Shape out_shape = x.shape();
  out_shape.back() = n;
  auto out = Tensor<S>::zeros(out_shape);
  const std::size_t rows = x.size() / f;
  {
    auto ov = out.values_mut();
    auto xv = x.values();
    for (std::size_t r = 0; r < rows; ++r) {
      const S* src = &xv[r * f];
      S* dst = &ov[r * n];
      for (std::size_t k = 0; k < f; ++k) dst[k] = src[k];
      for (std::size_t k = 1; k < n / 2; ++k) dst[n - k] = src[k];
    }
  }
  if (g.track(x)) {
    g.record({x}, out, [x, out, rows, f, n]() {
      auto go = out.grad();
      auto gx = x.grad_mut();
      for (std::size_t r = 0; r < rows; ++r) {
        const S* src = &go[r * n];
        S* dst = &gx[r * f];
        for (std::size_t k = 0; k < f; ++k) dst[k] += src[k];
        for (std::size_t k = 1; k < n / 2; ++k) dst[k] += src[n - k];
      }
    });
  }
  return out;
}

template <class S>
struct MagnitudePhase {
  Tensor<S> magnitude;  // sqrt(re^2 + im^2 + eps^2)
  Tensor<S> cos_phase;  // re / magnitude
  Tensor<S> sin_phase;  // im / magnitude
};

inline constexpr double kPhaseEps = 1e-8;

template <class S>
MagnitudePhase<S> magnitude_phase(Graph<S>& g, const ComplexSpec<S>& spec) {
  const S eps2 = static_cast<S>(kPhaseEps * kPhaseEps);
  auto power = add(g, mul(g, spec.real, spec.real), mul(g, spec.imag, spec.imag));
  MagnitudePhase<S> out;
  out.magnitude = sqrt_elem(g, add_scalar(g, power, eps2));
  out.cos_phase = div(g, spec.real, out.magnitude);
  out.sin_phase = div(g, spec.imag, out.magnitude);
  return out;
}

// One-sided mask times mixture magnitude, recombined with the mixture phase.
// mask is [B, T, N/2+1] with values in [0,1]; the result is a full-spectrum
// ComplexSpec with the geometry of mix.
template <class S>
ComplexSpec<S> apply_mask_and_phase(Graph<S>& g, const Tensor<S>& mask,
                                    const ComplexSpec<S>& mix) {
  const std::size_t n = mix.bin_count, f = n / 2 + 1;
  if (mask.rank() != 3 || mask.dim(0) != mix.real.dim(0) || mask.dim(1) != mix.frame_count ||
      mask.dim(2) != f) {
    throw_error(ErrorKind::dimension, "apply_mask_and_phase: mask ", shape_str(mask.shape()),
                " does not match spec [", mix.real.dim(0), "x", mix.frame_count, "x", f, "]");
  }
  for (S v : mask.values()) {
    if (!(v >= S(0) && v <= S(1))) {
      throw_error(ErrorKind::contract, "mask value ", v, " outside [0,1]");
    }
  }
  auto mp = magnitude_phase(g, mix);
  auto mag_one_sided = crop_last(g, mp.magnitude, 0, f);
  auto masked = mul(g, mask, mag_one_sided);
  auto masked_full = mirror_spectrum(g, masked, n);
  ComplexSpec<S> out;
  out.real = mul(g, masked_full, mp.cos_phase);
  out.imag = mul(g, masked_full, mp.sin_phase);
  out.frame_count = mix.frame_count;
  out.bin_count = n;
  out.hop = mix.hop;
  out.window = mix.window;
  return out;
}

// Analysis/synthesis pair with precomputed fixed kernels.
template <class S>
class StftLayer {
 public:
  explicit StftLayer(StftConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    const std::size_t n = cfg_.window_size;
    window_ = make_analysis_window<S>(cfg_.window, n);
    const auto dft = make_dft_matrices<S>(n);

    // Forward kernels [N, 1, N]: bin k correlates the windowed DFT row with
    // the signal at stride hop.
    std::vector<S> fr(n * n), fi(n * n);
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t t = 0; t < n; ++t) {
        fr[k * n + t] = window_[t] * dft.d_r[k * n + t];
        fi[k * n + t] = window_[t] * dft.d_i[k * n + t];
      }
    fwd_r_ = Tensor<S>::from_values({n, 1, n}, std::move(fr));
    fwd_i_ = Tensor<S>::from_values({n, 1, n}, std::move(fi));

    // Inverse kernels [N, N, 1]: sample t of a frame from all N bins.
    std::vector<S> ir(n * n), ii(n * n);
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t k = 0; k < n; ++k) {
        ir[t * n + k] = dft.dinv_r[t * n + k];
        ii[t * n + k] = dft.dinv_i[t * n + k];
      }
    inv_r_ = Tensor<S>::from_values({n, n, 1}, std::move(ir));
    inv_i_ = Tensor<S>::from_values({n, n, 1}, std::move(ii));

    // Overlap-add kernel [N, 1, N]: channel t scatters to offset t within
    // each hop-spaced frame, scaled by the synthesis window.
    std::vector<S> ola(n * n, S(0));
    for (std::size_t t = 0; t < n; ++t) ola[t * n + t] = window_[t];
    ola_ = Tensor<S>::from_values({n, 1, n}, std::move(ola));
  }

  const StftConfig& config() const { return cfg_; }
  const std::vector<S>& window() const { return window_; }

  std::size_t frame_count(std::size_t length) const {
    return detail::frame_geometry(length, cfg_, true).frames;
  }

  // Longest waveform istft can reproduce from T frames.
  std::size_t reconstructable_length(std::size_t frames) const {
    return (frames - 1) * cfg_.hop;
  }

  ComplexSpec<S> stft(Graph<S>& g, const Tensor<S>& x) const {
    if (x.rank() != 2) {
      throw_error(ErrorKind::dimension, "stft expects [B,L], got ", shape_str(x.shape()));
    }
    const std::size_t batch = x.dim(0), length = x.dim(1), n = cfg_.window_size;
    const auto geo = detail::frame_geometry(length, cfg_, true);
    auto x3 = reshape(g, x, {batch, 1, length});
    auto padded = pad_last(g, x3, n / 2, n / 2 + geo.tail_pad);
    ComplexSpec<S> spec;
    spec.real = transpose_last2(g, conv1d(g, padded, fwd_r_, cfg_.hop, 0));
    spec.imag = transpose_last2(g, conv1d(g, padded, fwd_i_, cfg_.hop, 0));
    spec.frame_count = geo.frames;
    spec.bin_count = n;
    spec.hop = cfg_.hop;
    spec.window = cfg_.window;
    return spec;
  }

  Tensor<S> istft(Graph<S>& g, const ComplexSpec<S>& spec, std::size_t out_length) const {
    const std::size_t n = cfg_.window_size;
    if (spec.bin_count != n || spec.hop != cfg_.hop) {
      throw_error(ErrorKind::dimension, "istft: spec geometry (N=", spec.bin_count,
                  ", hop=", spec.hop, ") does not match config (N=", n, ", hop=", cfg_.hop, ")");
    }
    const std::size_t frames = spec.frame_count;
    if (out_length > reconstructable_length(frames)) {
      throw_error(ErrorKind::dimension, "istft: requested ", out_length,
                  " samples but only ", reconstructable_length(frames),
                  " are reconstructable from ", frames, " frames");
    }
    const std::size_t batch = spec.real.dim(0);

    // [B,T,N] -> [B,N,T], inverse transform per frame, then windowed
    // overlap-add at stride hop.
    auto sr = transpose_last2(g, spec.real);
    auto si = transpose_last2(g, spec.imag);
    auto frames_r = conv1d(g, sr, inv_r_, 1, 0);
    auto frames_i = conv1d(g, si, inv_i_, 1, 0);
    auto time_frames = sub(g, frames_r, frames_i);
    auto ola = conv1d_transposed(g, time_frames, ola_, cfg_.hop);

    // Compensate the summed squared windows, with a floor where no window
    // energy landed.
    const std::size_t total = (frames - 1) * cfg_.hop + n;
    std::vector<S> denom(total, S(0));
    for (std::size_t t = 0; t < frames; ++t)
      for (std::size_t i = 0; i < n; ++i) denom[t * cfg_.hop + i] += window_[i] * window_[i];
    std::vector<S> recip(batch * total);
    for (std::size_t i = 0; i < total; ++i) {
      const S d = std::max(denom[i], static_cast<S>(1e-8));
      recip[i] = S(1) / d;
    }
    for (std::size_t b = 1; b < batch; ++b)
      std::copy_n(recip.begin(), total, recip.begin() + b * total);
    auto recip_t = Tensor<S>::from_values({batch, 1, total}, std::move(recip));

    auto normalized = mul(g, ola, recip_t);
    auto trimmed = crop_last(g, normalized, n / 2, out_length);
    return reshape(g, trimmed, {batch, out_length});
  }

 private:
  StftConfig cfg_;
  std::vector<S> window_;
  Tensor<S> fwd_r_, fwd_i_;  // [N, 1, N] strided analysis kernels
  Tensor<S> inv_r_, inv_i_;  // [N, N, 1] per-frame inverse kernels
  Tensor<S> ola_;            // [N, 1, N] windowed scatter kernel
};

}  // namespace catnet
