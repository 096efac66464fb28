#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "catnet/data.hpp"
#include "catnet/models.hpp"
#include "catnet/ops.hpp"
#include "catnet/rng.hpp"
#include "catnet/tensor.hpp"

// Adam optimization over a model's named parameters, the MAE training step,
// loss logging, and binary checkpoints with lossless resume.

namespace catnet {

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class S>
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<NamedParam<S>> params, AdamConfig cfg)
      : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
      m_.emplace_back(p.tensor.size(), S(0));
      v_.emplace_back(p.tensor.size(), S(0));
    }
  }

  // One Adam update from the gradients currently stored on the parameters.
  // A parameter without a gradient this step contributes g = 0 (its moments
  // still decay).
  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto vals = params_[i].tensor.values_mut();
      const bool has = params_[i].tensor.has_grad();
      auto grad = has ? params_[i].tensor.grad() : std::span<const S>();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < vals.size(); ++j) {
        const double g = has ? double(grad[j]) : 0.0;
        m[j] = S(cfg_.beta1 * double(m[j]) + (1.0 - cfg_.beta1) * g);
        v[j] = S(cfg_.beta2 * double(v[j]) + (1.0 - cfg_.beta2) * g * g);
        const double m_hat = double(m[j]) / bc1;
        const double v_hat = double(v[j]) / bc2;
        vals[j] = S(double(vals[j]) - cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps));
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  std::size_t step_count() const { return t_; }
  const AdamConfig& config() const { return cfg_; }
  const std::vector<NamedParam<S>>& parameters() const { return params_; }
  const std::vector<std::vector<S>>& first_moments() const { return m_; }
  const std::vector<std::vector<S>>& second_moments() const { return v_; }

  void restore_state(std::size_t t, std::vector<std::vector<S>> m, std::vector<std::vector<S>> v) {
    if (m.size() != params_.size() || v.size() != params_.size()) {
      throw_error(ErrorKind::checkpoint_integrity, "optimizer state covers ", m.size(),
                  " parameters, model has ", params_.size());
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (m[i].size() != params_[i].tensor.size() || v[i].size() != params_[i].tensor.size()) {
        throw_error(ErrorKind::checkpoint_integrity, "optimizer state size mismatch for '",
                    params_[i].name, "'");
      }
    }
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
  }

 private:
  std::vector<NamedParam<S>> params_;
  std::vector<std::vector<S>> m_, v_;
  std::size_t t_ = 0;
  AdamConfig cfg_;
};

enum class LossKind { waveform_mae, spectrogram_mae };

inline std::string loss_kind_name(LossKind k) {
  return k == LossKind::waveform_mae ? "waveform_mae" : "spectrogram_mae";
}

inline LossKind parse_loss_kind(const std::string& s) {
  if (s == "waveform_mae") return LossKind::waveform_mae;
  if (s == "spectrogram_mae") return LossKind::spectrogram_mae;
  throw_error(ErrorKind::config, "unknown loss kind '", s,
              "' (expected waveform_mae or spectrogram_mae)");
}

struct TrainConfig {
  double lr = 0.001;
  std::size_t batch_size = 4;
  std::size_t steps = 200;
  std::uint64_t seed = 0;
  std::optional<LossKind> loss;  // unset: spectrogram MAE for unet_spec_loss, else waveform
  std::size_t checkpoint_interval = 100;

  void validate() const {
    if (lr <= 0) throw_error(ErrorKind::config, "lr must be positive");
    if (batch_size == 0) throw_error(ErrorKind::config, "batch_size must be positive");
    if (steps == 0) throw_error(ErrorKind::config, "steps must be positive");
    if (checkpoint_interval == 0) {
      throw_error(ErrorKind::config, "checkpoint_interval must be positive");
    }
  }
};

// The loss a model kind trains with. An explicit choice must agree with the
// kind: unet_spec_loss exists to train on spectrogram MAE, everything else
// regresses waveforms.
inline LossKind resolve_loss(ModelKind kind, std::optional<LossKind> requested) {
  const LossKind natural = kind == ModelKind::unet_spec_loss ? LossKind::spectrogram_mae
                                                             : LossKind::waveform_mae;
  if (requested && *requested != natural) {
    throw_error(ErrorKind::config, "model kind ", model_kind_name(kind), " trains with ",
                loss_kind_name(natural), ", not ", loss_kind_name(*requested));
  }
  return natural;
}

template <class S>
struct TrainingBatch {
  Tensor<S> x;       // [B, L] mixtures
  Tensor<S> target;  // [B, L] target-source references
};

// Stacks batch_size training pairs into tensors; each audio channel becomes
// one batch row.
template <class S>
TrainingBatch<S> assemble_batch(const std::vector<TrackStems>& dataset,
                                const std::string& target_source,
                                const std::vector<std::string>& sources,
                                const AugmentConfig& aug, std::size_t batch_size, Rng& rng) {
  std::vector<TrainingPair> pairs;
  pairs.reserve(batch_size);
  for (std::size_t b = 0; b < batch_size; ++b)
    pairs.push_back(make_training_pair(dataset, target_source, sources, aug, rng));

  const std::size_t channels = pairs.front().x_mix.channel_count();
  const std::size_t length = pairs.front().x_mix.length();
  const std::size_t rows = batch_size * channels;
  TrainingBatch<S> batch;
  batch.x = Tensor<S>::zeros({rows, length});
  batch.target = Tensor<S>::zeros({rows, length});
  auto xv = batch.x.values_mut();
  auto tv = batch.target.values_mut();
  for (std::size_t b = 0; b < batch_size; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t row = b * channels + c;
      for (std::size_t i = 0; i < length; ++i) {
        xv[row * length + i] = S(pairs[b].x_mix.channels[c][i]);
        tv[row * length + i] = S(pairs[b].s_target.channels[c][i]);
      }
    }
  }
  return batch;
}

template <class S>
class Trainer {
 public:
  Trainer(SeparationModel<S> model, const TrainConfig& cfg)
      : model_(std::move(model)),
        cfg_(cfg),
        loss_kind_(resolve_loss(model_.kind(), cfg.loss)),
        optimizer_(model_.parameters(), AdamConfig{cfg.lr, 0.9, 0.999, 1e-8}),
        rng_(Rng(cfg.seed).split(100)) {
    cfg_.validate();
  }

  SeparationModel<S>& model() { return model_; }
  const SeparationModel<S>& model() const { return model_; }
  AdamOptimizer<S>& optimizer() { return optimizer_; }
  const AdamOptimizer<S>& optimizer() const { return optimizer_; }
  Rng& rng() { return rng_; }
  const Rng& rng() const { return rng_; }
  void restore_rng(const Rng& rng) { rng_ = rng; }
  LossKind loss_kind() const { return loss_kind_; }
  const TrainConfig& config() const { return cfg_; }
  std::size_t step_count() const { return optimizer_.step_count(); }

  // Appends `step,loss` lines; writes the header only when starting fresh.
  void set_loss_log(const std::string& path) {
    const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
    log_.open(path, std::ios::app);
    if (!log_) throw_error(ErrorKind::io, "cannot open loss log '", path, "'");
    if (fresh) log_ << "step,loss\n";
  }

  // Forward, backward, Adam update, gradient reset. Returns the loss.
  double step(const TrainingBatch<S>& batch, const ForwardOptions& overrides = {}) {
    Graph<S> g;
    ForwardOptions opts = overrides;
    opts.training = true;
    Tensor<S> loss;
    if (loss_kind_ == LossKind::spectrogram_mae) {
      auto out = model_.unet_forward(g, batch.x, opts);
      loss = mae_loss(g, out.masked_magnitude, target_magnitude(g, batch.target));
    } else {
      loss = mae_loss(g, model_.forward(g, batch.x, opts), batch.target);
    }
    const double value = double(loss.item());
    if (!std::isfinite(value)) {
      throw_error(ErrorKind::training, "non-finite loss (", value, ") at step ",
                  optimizer_.step_count() + 1, " with lr ", cfg_.lr, " and batch of ",
                  batch.x.dim(0));
    }
    g.backward(loss);
    optimizer_.step();
    optimizer_.zero_grad();
    if (log_.is_open()) {
      log_ << optimizer_.step_count() << ',' << value << '\n';
      log_.flush();
    }
    return value;
  }

 private:
  // One-sided magnitude of the target waveform; constant w.r.t. parameters.
  Tensor<S> target_magnitude(Graph<S>& g, const Tensor<S>& target) const {
    auto spec = model_.stft().stft(g, target);
    auto mp = magnitude_phase(g, spec);
    return crop_last(g, mp.magnitude, 0, model_.config().stft.window_size / 2 + 1);
  }

  SeparationModel<S> model_;
  TrainConfig cfg_;
  LossKind loss_kind_;
  AdamOptimizer<S> optimizer_;
  Rng rng_;
  std::ofstream log_;
};

// ---------------------------------------------------------------------------
// Checkpoints: "CATN" magic, u32 format version, then length-prefixed named
// chunks ([u32 name length][name][u64 payload length][payload]). Arrays are
// little-endian f64 with a rank/dims header; the file ends with an empty
// "end" chunk so truncation is detectable.

namespace detail {

constexpr char kCheckpointMagic[4] = {'C', 'A', 'T', 'N'};
constexpr std::uint32_t kCheckpointVersion = 1;

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  static_assert(sizeof bits == sizeof v);
  std::memcpy(&bits, &v, sizeof bits);
  put_u64(out, bits);
}

class CheckpointReader {
 public:
  CheckpointReader(std::string bytes, std::string path)
      : bytes_(std::move(bytes)), path_(std::move(path)) {}

  std::uint32_t take_u32() {
    need(4, "u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t((unsigned char)bytes_[at_ + i]) << (8 * i);
    at_ += 4;
    return v;
  }

  std::uint64_t take_u64() {
    need(8, "u64");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t((unsigned char)bytes_[at_ + i]) << (8 * i);
    at_ += 8;
    return v;
  }

  double take_f64() {
    const std::uint64_t bits = take_u64();
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }

  std::string take_bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(at_, n);
    at_ += n;
    return s;
  }

  std::size_t at() const { return at_; }
  bool exhausted() const { return at_ == bytes_.size(); }

  void need(std::size_t n, const char* what) const {
    if (at_ + n > bytes_.size()) {
      throw_error(ErrorKind::checkpoint_integrity, "checkpoint '", path_, "' truncated at byte ",
                  at_, " while reading ", what);
    }
  }

  const std::string& path() const { return path_; }

 private:
  std::string bytes_;
  std::string path_;
  std::size_t at_ = 0;
};

}  // namespace detail

struct RawCheckpoint {
  nlohmann::json meta;
  std::uint64_t step = 0;
  std::string rng_text;
  std::map<std::string, std::vector<double>> arrays;  // param:/buffer:/adam.m:/adam.v:
  std::map<std::string, Shape> shapes;
};

template <class S>
void save_checkpoint(const std::string& path, const SeparationModel<S>& model,
                     const AdamOptimizer<S>& optimizer, const Rng& rng,
                     const nlohmann::json& meta) {
  std::string out;
  out.append(detail::kCheckpointMagic, 4);
  detail::put_u32(out, detail::kCheckpointVersion);

  auto chunk = [&out](const std::string& name, const std::string& payload) {
    detail::put_u32(out, std::uint32_t(name.size()));
    out.append(name);
    detail::put_u64(out, payload.size());
    out.append(payload);
  };
  auto array_payload = [](const Shape& shape, auto&& values) {
    std::string p;
    detail::put_u32(p, std::uint32_t(shape.size()));
    for (std::size_t d : shape) detail::put_u64(p, d);
    for (auto v : values) detail::put_f64(p, double(v));
    return p;
  };

  chunk("meta", meta.dump());
  {
    std::string p;
    detail::put_u64(p, optimizer.step_count());
    chunk("step", p);
  }
  chunk("rng", rng.serialize());
  for (const auto& param : model.parameters())
    chunk("param:" + param.name, array_payload(param.tensor.shape(), param.tensor.values()));
  for (const auto& buffer : model.buffers())
    chunk("buffer:" + buffer.name, array_payload({buffer.values->size()}, *buffer.values));
  const auto& params = optimizer.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    chunk("adam.m:" + params[i].name,
          array_payload(params[i].tensor.shape(), optimizer.first_moments()[i]));
    chunk("adam.v:" + params[i].name,
          array_payload(params[i].tensor.shape(), optimizer.second_moments()[i]));
  }
  chunk("end", "");

  // Atomic replace: never leave a half-written checkpoint under the real name.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw_error(ErrorKind::io, "cannot open '", tmp, "' for writing");
    f.write(out.data(), std::streamsize(out.size()));
    if (!f) throw_error(ErrorKind::io, "failed writing checkpoint to '", tmp, "'");
  }
  std::filesystem::rename(tmp, path);
}

inline RawCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw_error(ErrorKind::io, "cannot open checkpoint '", path, "'");
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  detail::CheckpointReader r(std::move(bytes), path);

  const std::string magic = r.take_bytes(4, "magic");
  if (std::memcmp(magic.data(), detail::kCheckpointMagic, 4) != 0) {
    throw_error(ErrorKind::checkpoint_integrity, "'", path, "' is not a checkpoint (bad magic)");
  }
  const std::uint32_t version = r.take_u32();
  if (version != detail::kCheckpointVersion) {
    throw_error(ErrorKind::checkpoint_version, "checkpoint '", path, "' has format version ",
                version, ", this build reads version ", detail::kCheckpointVersion);
  }

  RawCheckpoint ckpt;
  bool saw_end = false;
  while (!r.exhausted()) {
    const std::uint32_t name_len = r.take_u32();
    const std::string name = r.take_bytes(name_len, "chunk name");
    const std::uint64_t payload_len = r.take_u64();
    const std::string payload = r.take_bytes(payload_len, ("chunk '" + name + "'").c_str());
    if (name == "end") {
      saw_end = true;
      break;
    }
    if (name == "meta") {
      ckpt.meta = nlohmann::json::parse(payload, nullptr, /*allow_exceptions=*/false);
      if (ckpt.meta.is_discarded()) {
        throw_error(ErrorKind::checkpoint_integrity, "checkpoint '", path,
                    "' has unparseable meta JSON");
      }
    } else if (name == "step") {
      detail::CheckpointReader pr(payload, path);
      ckpt.step = pr.take_u64();
    } else if (name == "rng") {
      ckpt.rng_text = payload;
    } else {
      detail::CheckpointReader pr(payload, path);
      const std::uint32_t rank = pr.take_u32();
      Shape shape(rank);
      std::size_t count = 1;
      for (auto& d : shape) {
        d = pr.take_u64();
        count *= d;
      }
      std::vector<double> values(count);
      for (auto& v : values) v = pr.take_f64();
      if (!pr.exhausted()) {
        throw_error(ErrorKind::checkpoint_integrity, "chunk '", name, "' in '", path,
                    "' carries trailing bytes");
      }
      ckpt.shapes[name] = std::move(shape);
      ckpt.arrays[name] = std::move(values);
    }
  }
  if (!saw_end) {
    throw_error(ErrorKind::checkpoint_integrity, "checkpoint '", path,
                "' ended without its end chunk (truncated?)");
  }
  return ckpt;
}

// Copies parameters and buffers from a loaded checkpoint into a model built
// from the same config.
template <class S>
void restore_model(SeparationModel<S>& model, const RawCheckpoint& ckpt) {
  for (const auto& param : model.parameters()) {
    const auto it = ckpt.arrays.find("param:" + param.name);
    if (it == ckpt.arrays.end()) {
      throw_error(ErrorKind::checkpoint_integrity, "checkpoint lacks parameter '", param.name,
                  "'");
    }
    if (ckpt.shapes.at("param:" + param.name) != param.tensor.shape()) {
      throw_error(ErrorKind::checkpoint_integrity, "parameter '", param.name,
                  "' shape differs from the checkpoint");
    }
    auto vals = param.tensor.values_mut();
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = S(it->second[i]);
  }
  for (const auto& buffer : model.buffers()) {
    const auto it = ckpt.arrays.find("buffer:" + buffer.name);
    if (it == ckpt.arrays.end()) {
      throw_error(ErrorKind::checkpoint_integrity, "checkpoint lacks buffer '", buffer.name, "'");
    }
    auto& vals = *buffer.values;
    if (vals.size() != it->second.size()) {
      throw_error(ErrorKind::checkpoint_integrity, "buffer '", buffer.name,
                  "' size differs from the checkpoint");
    }
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = S(it->second[i]);
  }
}

template <class S>
void restore_optimizer(AdamOptimizer<S>& optimizer, const RawCheckpoint& ckpt) {
  std::vector<std::vector<S>> m, v;
  for (const auto& param : optimizer.parameters()) {
    for (const char* prefix : {"adam.m:", "adam.v:"}) {
      const auto it = ckpt.arrays.find(prefix + param.name);
      if (it == ckpt.arrays.end()) {
        throw_error(ErrorKind::checkpoint_integrity, "checkpoint lacks optimizer state for '",
                    param.name, "'");
      }
      std::vector<S> vals(it->second.size());
      for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = S(it->second[i]);
      (prefix[5] == 'm' ? m : v).push_back(std::move(vals));
    }
  }
  optimizer.restore_state(ckpt.step, std::move(m), std::move(v));
}

}  // namespace catnet
