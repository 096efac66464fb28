#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "catnet/audio.hpp"
#include "catnet/conv.hpp"
#include "catnet/dsp.hpp"
#include "catnet/ops.hpp"
#include "catnet/rng.hpp"
#include "catnet/tensor.hpp"

// The separation models. The UNet branch masks the mixture spectrogram and
// resynthesizes a waveform through the differentiable ISTFT; the WavUNet
// branch regresses the waveform directly; CatNet adds the two estimates and
// trains both branches through one loss.

namespace catnet {

enum class ModelKind { unet_spec_loss, unet_wav_loss, wavunet, catnet };

inline std::string model_kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::unet_spec_loss: return "unet_spec_loss";
    case ModelKind::unet_wav_loss: return "unet_wav_loss";
    case ModelKind::wavunet: return "wavunet";
    case ModelKind::catnet: return "catnet";
  }
  return "unknown";
}

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "unet" || s == "unet_wav_loss") return ModelKind::unet_wav_loss;
  if (s == "unet_spec_loss") return ModelKind::unet_spec_loss;
  if (s == "wavunet") return ModelKind::wavunet;
  if (s == "catnet") return ModelKind::catnet;
  throw_error(ErrorKind::config, "unknown model kind '", s,
              "' (expected unet, unet_spec_loss, wavunet or catnet)");
}

inline bool has_unet_branch(ModelKind k) { return k != ModelKind::wavunet; }
inline bool has_wavunet_branch(ModelKind k) {
  return k == ModelKind::wavunet || k == ModelKind::catnet;
}

struct ModelConfig {
  StftConfig stft;
  std::size_t sample_rate = 44100;
  std::size_t input_channels = 1;
  std::size_t unet_depth = 6;
  std::vector<std::size_t> unet_channels = {32, 64, 128, 256, 512, 1024};
  std::size_t wavunet_depth = 6;
  std::vector<std::size_t> wavunet_channels = {32, 64, 128, 256, 512, 1024};
  std::size_t wavunet_pool = 4;
  std::vector<std::string> sources = {"vocals", "drums", "bass", "other"};

  void validate() const {
    stft.validate();
    if (sample_rate == 0) throw_error(ErrorKind::config, "sample_rate must be positive");
    if (input_channels == 0) throw_error(ErrorKind::config, "input_channels must be positive");
    if (unet_depth == 0 || unet_channels.size() != unet_depth) {
      throw_error(ErrorKind::config, "unet_channels has ", unet_channels.size(),
                  " entries but unet_depth is ", unet_depth);
    }
    if (wavunet_depth == 0 || wavunet_channels.size() != wavunet_depth) {
      throw_error(ErrorKind::config, "wavunet_channels has ", wavunet_channels.size(),
                  " entries but wavunet_depth is ", wavunet_depth);
    }
    if (wavunet_pool < 2) throw_error(ErrorKind::config, "wavunet_pool must be >= 2");
    for (std::size_t c : unet_channels)
      if (c == 0) throw_error(ErrorKind::config, "unet channel counts must be positive");
    for (std::size_t c : wavunet_channels)
      if (c == 0) throw_error(ErrorKind::config, "wavunet channel counts must be positive");
    if (sources.empty()) throw_error(ErrorKind::config, "sources list must not be empty");
  }

  // Small preset that trains in minutes on one CPU core.
  static ModelConfig desk() {
    ModelConfig c;
    c.stft.window_size = 256;
    c.stft.hop = 64;
    c.stft.window = WindowKind::hann;
    c.sample_rate = 8000;
    c.input_channels = 1;
    c.unet_depth = 3;
    c.unet_channels = {8, 16, 32};
    c.wavunet_depth = 3;
    c.wavunet_channels = {8, 16, 32};
    c.wavunet_pool = 4;
    return c;
  }

  // Full-scale preset; far beyond what a single desktop core can train.
  static ModelConfig full_scale() { return ModelConfig{}; }
};

template <class S>
struct NamedParam {
  std::string name;
  Tensor<S> tensor;
};

template <class S>
struct NamedBuffer {
  std::string name;
  std::shared_ptr<std::vector<S>> values;
};

namespace detail {

// Registers parameters and running-stat buffers in a deterministic order,
// drawing initial values from one seeded stream.
template <class S>
class ParamBuilder {
 public:
  explicit ParamBuilder(Rng rng) : rng_(rng) {}

  // Uniform in +-scale*sqrt(1/fan_in).
  Tensor<S> uniform(const std::string& name, Shape shape, std::size_t fan_in, double scale = 1.0) {
    const double bound = scale * std::sqrt(1.0 / static_cast<double>(fan_in));
    auto t = Tensor<S>::zeros(std::move(shape), /*requires_grad=*/true);
    for (auto& v : t.values_mut()) v = static_cast<S>(rng_.uniform(-bound, bound));
    params.push_back({name, t});
    return t;
  }

  Tensor<S> constant(const std::string& name, Shape shape, S value) {
    auto t = Tensor<S>::full(std::move(shape), value, /*requires_grad=*/true);
    params.push_back({name, t});
    return t;
  }

  std::shared_ptr<std::vector<S>> buffer(const std::string& name, std::size_t size, S value) {
    auto b = std::make_shared<std::vector<S>>(size, value);
    buffers.push_back({name, b});
    return b;
  }

  std::vector<NamedParam<S>> params;
  std::vector<NamedBuffer<S>> buffers;

 private:
  Rng rng_;
};

template <class S>
struct BatchNormLayer {
  Tensor<S> gamma, beta;
  std::shared_ptr<std::vector<S>> running_mean, running_var;

  static BatchNormLayer make(ParamBuilder<S>& b, const std::string& prefix,
                             std::size_t channels) {
    BatchNormLayer l;
    l.gamma = b.constant(prefix + ".gamma", {channels}, S(1));
    l.beta = b.constant(prefix + ".beta", {channels}, S(0));
    l.running_mean = b.buffer(prefix + ".running_mean", channels, S(0));
    l.running_var = b.buffer(prefix + ".running_var", channels, S(1));
    return l;
  }

  Tensor<S> apply(Graph<S>& g, const Tensor<S>& x, bool training) const {
    return batch_norm(g, x, gamma, beta, *running_mean, *running_var, training);
  }
};

// conv 3x3 (no bias) + BN + ReLU; the workhorse of the UNet branch.
template <class S>
struct ConvBnRelu2d {
  Tensor<S> weight;
  BatchNormLayer<S> bn;

  static ConvBnRelu2d make(ParamBuilder<S>& b, const std::string& prefix, std::size_t cin,
                           std::size_t cout) {
    ConvBnRelu2d l;
    l.weight = b.uniform(prefix + ".weight", {cout, cin, 3, 3}, cin * 9);
    l.bn = BatchNormLayer<S>::make(b, prefix + ".bn", cout);
    return l;
  }

  Tensor<S> apply(Graph<S>& g, const Tensor<S>& x, bool training) const {
    return relu(g, bn.apply(g, conv2d(g, x, weight, 1, 1, 1, 1), training));
  }
};

template <class S>
struct ConvBnRelu1d {
  Tensor<S> weight;
  BatchNormLayer<S> bn;

  static ConvBnRelu1d make(ParamBuilder<S>& b, const std::string& prefix, std::size_t cin,
                           std::size_t cout) {
    ConvBnRelu1d l;
    l.weight = b.uniform(prefix + ".weight", {cout, cin, 3}, cin * 3);
    l.bn = BatchNormLayer<S>::make(b, prefix + ".bn", cout);
    return l;
  }

  Tensor<S> apply(Graph<S>& g, const Tensor<S>& x, bool training) const {
    return relu(g, bn.apply(g, conv1d(g, x, weight, 1, 1), training));
  }
};

template <class S>
struct UNetEncoderBlock {
  ConvBnRelu2d<S> conv0, conv1;
};

template <class S>
struct UNetDecoderBlock {
  Tensor<S> tconv_weight;  // [cin, cout, 3, 3], stride 2
  BatchNormLayer<S> tconv_bn;
  ConvBnRelu2d<S> conv0, conv1;
};

template <class S>
struct WavUNetEncoderBlock {
  ConvBnRelu1d<S> conv;
};

template <class S>
struct WavUNetDecoderBlock {
  Tensor<S> tconv_weight;  // [cin, cout, pool], stride pool
  BatchNormLayer<S> tconv_bn;
  ConvBnRelu1d<S> conv;
};

}  // namespace detail

enum class MaskMode { learned, force_ones, force_zeros };

struct ForwardOptions {
  bool training = false;
  // Test harness overrides: replace the predicted mask, or zero out the
  // WavUNet branch, to isolate pipeline properties.
  MaskMode mask_mode = MaskMode::learned;
  bool zero_wavunet = false;
};

template <class S>
struct UNetOutput {
  Tensor<S> waveform;          // [B, L]
  Tensor<S> mask;              // [B, T, F]
  Tensor<S> masked_magnitude;  // [B, T, F], one-sided
  Tensor<S> mix_magnitude;     // [B, T, F], one-sided, detached view of the input
};

template <class S>
class SeparationModel {
 public:
  SeparationModel(ModelKind kind, const ModelConfig& config, std::uint64_t seed)
      : kind_(kind), config_(config), stft_(config.stft) {
    config_.validate();
    // Separate init streams per branch: a CatNet starts with exactly the
    // parameters of the standalone branches built from the same seed.
    Rng root(seed);
    detail::ParamBuilder<S> builder(root);
    if (has_unet_branch(kind_)) {
      detail::ParamBuilder<S> ub(root.split(1));
      build_unet(ub);
      absorb(builder, ub);
    }
    if (has_wavunet_branch(kind_)) {
      detail::ParamBuilder<S> wb(root.split(2));
      build_wavunet(wb);
      absorb(builder, wb);
    }
    params_ = std::move(builder.params);
    buffers_ = std::move(builder.buffers);
  }

  ModelKind kind() const { return kind_; }
  const ModelConfig& config() const { return config_; }
  const StftLayer<S>& stft() const { return stft_; }

  const std::vector<NamedParam<S>>& parameters() const { return params_; }
  const std::vector<NamedBuffer<S>>& buffers() const { return buffers_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.size();
    return n;
  }

  // Spectrogram-mask branch. Input [B, L] waveform; every output keeps the
  // batch dimension.
  UNetOutput<S> unet_forward(Graph<S>& g, const Tensor<S>& wav,
                             const ForwardOptions& opts = {}) const {
    if (!has_unet_branch(kind_)) {
      throw_error(ErrorKind::contract, "unet_forward on a ", model_kind_name(kind_), " model");
    }
    check_wave_input(wav);
    const std::size_t batch = wav.dim(0), length = wav.dim(1);
    const std::size_t n = config_.stft.window_size, f = n / 2 + 1;

    auto spec = stft_.stft(g, wav);
    const std::size_t t = spec.frame_count;
    auto mp = magnitude_phase(g, spec);
    auto mag_one_sided = crop_last(g, mp.magnitude, 0, f);  // [B, T, F]

    Tensor<S> mask;
    if (opts.mask_mode == MaskMode::force_ones) {
      mask = Tensor<S>::full({batch, t, f}, S(1));
    } else if (opts.mask_mode == MaskMode::force_zeros) {
      mask = Tensor<S>::zeros({batch, t, f});
    } else {
      mask = predict_mask(g, mag_one_sided, opts.training);
    }

    UNetOutput<S> out;
    out.mask = mask;
    out.mix_magnitude = mag_one_sided;
    out.masked_magnitude = mul(g, mask, mag_one_sided);
    auto masked_full = mirror_spectrum(g, out.masked_magnitude, n);
    ComplexSpec<S> shat;
    shat.real = mul(g, masked_full, mp.cos_phase);
    shat.imag = mul(g, masked_full, mp.sin_phase);
    shat.frame_count = t;
    shat.bin_count = n;
    shat.hop = spec.hop;
    shat.window = spec.window;
    out.waveform = stft_.istft(g, shat, length);
    return out;
  }

  // Time-domain branch. Input [B, L], output [B, L].
  Tensor<S> wavunet_forward(Graph<S>& g, const Tensor<S>& wav,
                            const ForwardOptions& opts = {}) const {
    if (!has_wavunet_branch(kind_)) {
      throw_error(ErrorKind::contract, "wavunet_forward on a ", model_kind_name(kind_),
                  " model");
    }
    if (wav.rank() != 2) {
      throw_error(ErrorKind::dimension, "wavunet_forward expects [B,L], got ",
                  shape_str(wav.shape()));
    }
    if (opts.zero_wavunet) return Tensor<S>::zeros(wav.shape());
    const std::size_t batch = wav.dim(0), length = wav.dim(1);
    const std::size_t depth = config_.wavunet_depth, pool = config_.wavunet_pool;

    std::size_t unit = 1;
    for (std::size_t i = 0; i < depth; ++i) unit *= pool;
    const std::size_t padded = (length + unit - 1) / unit * unit;

    auto x = reshape(g, wav, {batch, 1, length});
    if (padded != length) x = pad_last(g, x, 0, padded - length);

    std::vector<Tensor<S>> skips;
    skips.reserve(depth);
    for (std::size_t i = 0; i < depth; ++i) {
      x = wav_enc_[i].conv.apply(g, x, opts.training);
      skips.push_back(x);
      x = avg_pool1d(g, x, pool);
    }
    for (std::size_t i = depth; i-- > 0;) {
      const auto& blk = wav_dec_[depth - 1 - i];
      x = conv1d_transposed(g, x, blk.tconv_weight, pool);
      x = relu(g, blk.tconv_bn.apply(g, x, opts.training));
      x = concat(g, x, skips[i], 1);
      x = blk.conv.apply(g, x, opts.training);
    }
    x = conv1d(g, x, wav_final_weight_, 1, 1);
    x = add_channel_bias(g, x, wav_final_bias_);
    if (padded != length) x = crop_last(g, x, 0, length);
    return reshape(g, x, {batch, length});
  }

  // Model output per kind; CatNet is the sum of its branches on one tape.
  Tensor<S> forward(Graph<S>& g, const Tensor<S>& wav, const ForwardOptions& opts = {}) const {
    switch (kind_) {
      case ModelKind::unet_spec_loss:
      case ModelKind::unet_wav_loss:
        return unet_forward(g, wav, opts).waveform;
      case ModelKind::wavunet:
        return wavunet_forward(g, wav, opts);
      case ModelKind::catnet: {
        auto u = unet_forward(g, wav, opts).waveform;
        auto w = wavunet_forward(g, wav, opts);
        return add(g, u, w);
      }
    }
    throw_error(ErrorKind::contract, "unreachable model kind");
  }

 private:
  static void absorb(detail::ParamBuilder<S>& dst, detail::ParamBuilder<S>& src) {
    for (auto& p : src.params) dst.params.push_back(std::move(p));
    for (auto& b : src.buffers) dst.buffers.push_back(std::move(b));
  }

  void check_wave_input(const Tensor<S>& wav) const {
    if (wav.rank() != 2) {
      throw_error(ErrorKind::dimension, "model forward expects [B,L], got ",
                  shape_str(wav.shape()));
    }
    if (wav.dim(1) < config_.stft.window_size) {
      throw_error(ErrorKind::dimension, "input of ", wav.dim(1),
                  " samples is shorter than one STFT frame (", config_.stft.window_size, ")");
    }
  }

  void build_unet(detail::ParamBuilder<S>& b) {
    const auto& ch = config_.unet_channels;
    const std::size_t depth = config_.unet_depth;
    std::size_t cin = 1;
    for (std::size_t i = 0; i < depth; ++i) {
      const std::string p = "unet.enc" + std::to_string(i);
      detail::UNetEncoderBlock<S> blk;
      blk.conv0 = detail::ConvBnRelu2d<S>::make(b, p + ".conv0", cin, ch[i]);
      blk.conv1 = detail::ConvBnRelu2d<S>::make(b, p + ".conv1", ch[i], ch[i]);
      unet_enc_.push_back(std::move(blk));
      cin = ch[i];
    }
    for (std::size_t i = depth; i-- > 0;) {
      const std::string p = "unet.dec" + std::to_string(i);
      detail::UNetDecoderBlock<S> blk;
      blk.tconv_weight = b.uniform(p + ".tconv.weight", {cin, ch[i], 3, 3}, cin * 9);
      blk.tconv_bn = detail::BatchNormLayer<S>::make(b, p + ".tconv.bn", ch[i]);
      blk.conv0 = detail::ConvBnRelu2d<S>::make(b, p + ".conv0", 2 * ch[i], ch[i]);
      blk.conv1 = detail::ConvBnRelu2d<S>::make(b, p + ".conv1", ch[i], ch[i]);
      unet_dec_.push_back(std::move(blk));
      cin = ch[i];
    }
    unet_final_weight_ = b.uniform("unet.final.weight", {1, cin, 1, 1}, cin);
    unet_final_bias_ = b.uniform("unet.final.bias", {1}, cin);
  }

  void build_wavunet(detail::ParamBuilder<S>& b) {
    const auto& ch = config_.wavunet_channels;
    const std::size_t depth = config_.wavunet_depth, pool = config_.wavunet_pool;
    std::size_t cin = 1;
    for (std::size_t i = 0; i < depth; ++i) {
      const std::string p = "wavunet.enc" + std::to_string(i);
      detail::WavUNetEncoderBlock<S> blk;
      blk.conv = detail::ConvBnRelu1d<S>::make(b, p + ".conv", cin, ch[i]);
      wav_enc_.push_back(std::move(blk));
      cin = ch[i];
    }
    for (std::size_t i = depth; i-- > 0;) {
      const std::string p = "wavunet.dec" + std::to_string(i);
      detail::WavUNetDecoderBlock<S> blk;
      blk.tconv_weight = b.uniform(p + ".tconv.weight", {cin, ch[i], pool}, cin * pool);
      blk.tconv_bn = detail::BatchNormLayer<S>::make(b, p + ".tconv.bn", ch[i]);
      blk.conv = detail::ConvBnRelu1d<S>::make(b, p + ".conv", 2 * ch[i], ch[i]);
      wav_dec_.push_back(std::move(blk));
      cin = ch[i];
    }
    // Small weights and a zero bias keep the branch quiet early in training
    // so the spectral branch dominates the first updates.
    wav_final_weight_ = b.uniform("wavunet.final.weight", {1, cin, 3}, cin * 3, 0.01);
    wav_final_bias_ = b.constant("wavunet.final.bias", {1}, S(0));
  }

  // Mask head: pad the magnitude to pool-able extents, run the 2-D UNet,
  // crop back and squash.
  Tensor<S> predict_mask(Graph<S>& g, const Tensor<S>& mag, bool training) const {
    const std::size_t batch = mag.dim(0), t = mag.dim(1), f = mag.dim(2);
    const std::size_t depth = config_.unet_depth;
    const std::size_t unit = std::size_t(1) << depth;
    const std::size_t tp = (t + unit - 1) / unit * unit;
    const std::size_t fp = (f + unit - 1) / unit * unit;

    auto x = reshape(g, mag, {batch, 1, t, f});
    if (tp != t || fp != f) x = pad_last2(g, x, tp - t, fp - f);

    std::vector<Tensor<S>> skips;
    skips.reserve(depth);
    for (std::size_t i = 0; i < depth; ++i) {
      x = unet_enc_[i].conv0.apply(g, x, training);
      x = unet_enc_[i].conv1.apply(g, x, training);
      skips.push_back(x);
      x = avg_pool2d(g, x, 2, 2);
    }
    for (std::size_t i = depth; i-- > 0;) {
      const auto& blk = unet_dec_[depth - 1 - i];
      x = conv2d_transposed(g, x, blk.tconv_weight, 2, 2);
      // kernel 3 at stride 2 overshoots each extent by 1; crop to the skip.
      x = crop_last2(g, x, skips[i].dim(2), skips[i].dim(3));
      x = relu(g, blk.tconv_bn.apply(g, x, training));
      x = concat(g, x, skips[i], 1);
      x = blk.conv0.apply(g, x, training);
      x = blk.conv1.apply(g, x, training);
    }
    x = conv2d(g, x, unet_final_weight_, 1, 1, 0, 0);
    x = add_channel_bias(g, x, unet_final_bias_);
    if (tp != t || fp != f) x = crop_last2(g, x, t, f);
    x = sigmoid(g, x);
    return reshape(g, x, {batch, t, f});
  }

  ModelKind kind_;
  ModelConfig config_;
  StftLayer<S> stft_;

  std::vector<detail::UNetEncoderBlock<S>> unet_enc_;
  std::vector<detail::UNetDecoderBlock<S>> unet_dec_;
  Tensor<S> unet_final_weight_, unet_final_bias_;

  std::vector<detail::WavUNetEncoderBlock<S>> wav_enc_;
  std::vector<detail::WavUNetDecoderBlock<S>> wav_dec_;
  Tensor<S> wav_final_weight_, wav_final_bias_;

  std::vector<NamedParam<S>> params_;
  std::vector<NamedBuffer<S>> buffers_;
};

struct TrackSeparation {
  AudioSegment estimate;       // the model's target source
  AudioSegment accompaniment;  // mixture - estimate
};

// Full-length inference: slide a window of segment_len samples with the given
// overlap, run the model on each window without recording a tape, and
// cross-fade overlapping regions with linear ramps that sum to one at every
// sample. Channels are processed as a batch with shared parameters.
template <class S>
TrackSeparation separate_track(const SeparationModel<S>& model, const AudioSegment& mixture,
                               std::size_t segment_len, std::size_t overlap,
                               ForwardOptions opts = {}) {
  mixture.validate();
  if (mixture.sample_rate != model.config().sample_rate) {
    throw_error(ErrorKind::data, "mixture sample rate ", mixture.sample_rate,
                " does not match the model's ", model.config().sample_rate, " Hz");
  }
  if (segment_len < model.config().stft.window_size) {
    throw_error(ErrorKind::config, "segment length ", segment_len,
                " is shorter than one STFT frame (", model.config().stft.window_size, ")");
  }
  if (overlap * 2 > segment_len) {
    throw_error(ErrorKind::config, "overlap ", overlap, " must be at most half the segment ",
                "length ", segment_len, " so no sample is covered by more than two segments");
  }
  opts.training = false;

  const std::size_t channels = mixture.channel_count();
  const std::size_t length = mixture.length();
  const std::size_t hop = segment_len - overlap;
  const std::size_t steps = length <= segment_len ? 1 : (length - overlap + hop - 1) / hop;

  // Ramp weights for the overlapped region: up[k] + down[k] == 1 exactly.
  std::vector<double> up(overlap), down(overlap);
  for (std::size_t k = 0; k < overlap; ++k) {
    up[k] = static_cast<double>(k + 1) / static_cast<double>(overlap + 1);
    down[k] = 1.0 - up[k];
  }

  std::vector<std::vector<double>> acc(channels, std::vector<double>(length, 0.0));
  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t start = s * hop;
    auto x = Tensor<S>::zeros({channels, segment_len});
    {
      auto xv = x.values_mut();
      for (std::size_t c = 0; c < channels; ++c) {
        const auto& src = mixture.channels[c];
        for (std::size_t j = 0; j < segment_len && start + j < length; ++j)
          xv[c * segment_len + j] = static_cast<S>(src[start + j]);
      }
    }
    Graph<S> g;
    g.set_recording(false);
    auto y = model.forward(g, x, opts);
    auto yv = y.values();
    const bool has_prev = s > 0;
    const bool has_next = s + 1 < steps;
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t j = 0; j < segment_len; ++j) {
        const std::size_t pos = start + j;
        if (pos >= length) break;
        double w = 1.0;
        if (has_prev && j < overlap) w = up[j];
        if (has_next && j >= segment_len - overlap) w = down[j - (segment_len - overlap)];
        acc[c][pos] += w * static_cast<double>(yv[c * segment_len + j]);
      }
    }
  }

  TrackSeparation out;
  out.estimate.sample_rate = mixture.sample_rate;
  out.estimate.channels = std::move(acc);
  out.accompaniment = sub_segments(mixture, out.estimate);
  return out;
}

}  // namespace catnet
