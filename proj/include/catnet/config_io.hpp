#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "catnet/data.hpp"
#include "catnet/models.hpp"
#include "catnet/train.hpp"

// JSON wiring for the configuration blocks shared by config files, the
// command-line tool and checkpoint metadata. Parsing is strict: unknown keys
// are config errors so a typo fails loudly instead of silently keeping a
// default. Serialization always emits every field, which makes the echo
// stored in checkpoints and reports self-contained.

namespace catnet {

// Everything a run needs beyond the dataset itself: the network, the
// optimizer schedule, the augmentation policy and the sliding-window geometry
// used by separation and evaluation.
struct RunConfig {
  ModelKind kind = ModelKind::catnet;
  ModelConfig model;
  TrainConfig train;
  AugmentConfig augment;
  double segment_seconds = 1.0;  // sliding-window length for separate/evaluate
  double overlap_seconds = 0.25;  // crossfaded overlap between adjacent windows
  double frame_seconds = 1.0;     // framewise SDR frame length
  double hop_seconds = 1.0;       // framewise SDR hop

  void validate() const {
    model.validate();
    train.validate();
    augment.validate();
    if (segment_seconds <= 0) throw_error(ErrorKind::config, "segment_seconds must be positive");
    if (overlap_seconds < 0) throw_error(ErrorKind::config, "overlap_seconds must be >= 0");
    if (overlap_seconds * 2 > segment_seconds) {
      throw_error(ErrorKind::config, "overlap_seconds (", overlap_seconds,
                  ") must be at most half of segment_seconds (", segment_seconds, ")");
    }
    if (frame_seconds <= 0 || hop_seconds <= 0) {
      throw_error(ErrorKind::config, "frame_seconds and hop_seconds must be positive");
    }
  }

  std::size_t segment_samples() const {
    return std::size_t(std::llround(segment_seconds * double(model.sample_rate)));
  }
  std::size_t overlap_samples() const {
    return std::size_t(std::llround(overlap_seconds * double(model.sample_rate)));
  }

  // Small preset that trains in minutes on one CPU core.
  static RunConfig desk() {
    RunConfig c;
    c.model = ModelConfig::desk();
    c.augment.segment_seconds = 1.0;
    c.segment_seconds = 1.0;
    c.overlap_seconds = 0.25;
    return c;
  }

  // Full-scale preset (44.1 kHz, window 2048/hop 441, depth 6). Not meant to
  // be trained on a laptop; shipped so the schema for a real run is explicit.
  static RunConfig full_scale() {
    RunConfig c;
    c.model = ModelConfig::full_scale();
    c.train.batch_size = 12;
    c.train.steps = 100000;
    c.train.checkpoint_interval = 1000;
    c.augment.segment_seconds = 3.0;
    c.segment_seconds = 3.0;
    c.overlap_seconds = 0.75;
    return c;
  }
};

namespace detail {

inline void expect_keys(const nlohmann::json& j, const char* block,
                        std::initializer_list<const char*> allowed) {
  if (!j.is_object()) {
    throw_error(ErrorKind::config, "config block '", block, "' must be a JSON object");
  }
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* a : allowed) {
      if (item.key() == a) {
        known = true;
        break;
      }
    }
    if (!known) {
      throw_error(ErrorKind::config, "unknown key '", item.key(), "' in config block '", block,
                  "'");
    }
  }
}

inline std::uint64_t as_count(const nlohmann::json& v, const char* key) {
  if (v.is_number_integer() && v.get<std::int64_t>() < 0) {
    throw_error(ErrorKind::config, "'", key, "' must be non-negative");
  }
  if (!v.is_number_integer() && !v.is_number_unsigned()) {
    throw_error(ErrorKind::config, "'", key, "' must be an integer");
  }
  return v.get<std::uint64_t>();
}

inline double as_real(const nlohmann::json& v, const char* key) {
  if (!v.is_number()) throw_error(ErrorKind::config, "'", key, "' must be a number");
  return v.get<double>();
}

inline bool as_flag(const nlohmann::json& v, const char* key) {
  if (!v.is_boolean()) throw_error(ErrorKind::config, "'", key, "' must be true or false");
  return v.get<bool>();
}

inline std::string as_text(const nlohmann::json& v, const char* key) {
  if (!v.is_string()) throw_error(ErrorKind::config, "'", key, "' must be a string");
  return v.get<std::string>();
}

inline std::vector<std::size_t> as_counts(const nlohmann::json& v, const char* key) {
  if (!v.is_array()) throw_error(ErrorKind::config, "'", key, "' must be an array");
  std::vector<std::size_t> out;
  out.reserve(v.size());
  for (const auto& e : v) out.push_back(std::size_t(as_count(e, key)));
  return out;
}

inline std::vector<std::string> as_texts(const nlohmann::json& v, const char* key) {
  if (!v.is_array()) throw_error(ErrorKind::config, "'", key, "' must be an array");
  std::vector<std::string> out;
  out.reserve(v.size());
  for (const auto& e : v) out.push_back(as_text(e, key));
  return out;
}

}  // namespace detail

// Each apply_* updates only the keys present, so config files can be sparse
// overlays on top of a preset.
inline void apply_stft_json(StftConfig& c, const nlohmann::json& j) {
  detail::expect_keys(j, "model.stft", {"window_size", "hop", "window"});
  if (j.contains("window_size")) c.window_size = detail::as_count(j["window_size"], "window_size");
  if (j.contains("hop")) c.hop = detail::as_count(j["hop"], "hop");
  if (j.contains("window")) c.window = parse_window_kind(detail::as_text(j["window"], "window"));
}

inline void apply_model_json(ModelConfig& c, const nlohmann::json& j) {
  detail::expect_keys(j, "model",
                      {"stft", "sample_rate", "input_channels", "unet_depth", "unet_channels",
                       "wavunet_depth", "wavunet_channels", "wavunet_pool", "sources"});
  if (j.contains("stft")) apply_stft_json(c.stft, j["stft"]);
  if (j.contains("sample_rate")) c.sample_rate = detail::as_count(j["sample_rate"], "sample_rate");
  if (j.contains("input_channels")) {
    c.input_channels = detail::as_count(j["input_channels"], "input_channels");
  }
  if (j.contains("unet_depth")) c.unet_depth = detail::as_count(j["unet_depth"], "unet_depth");
  if (j.contains("unet_channels")) {
    c.unet_channels = detail::as_counts(j["unet_channels"], "unet_channels");
  }
  if (j.contains("wavunet_depth")) {
    c.wavunet_depth = detail::as_count(j["wavunet_depth"], "wavunet_depth");
  }
  if (j.contains("wavunet_channels")) {
    c.wavunet_channels = detail::as_counts(j["wavunet_channels"], "wavunet_channels");
  }
  if (j.contains("wavunet_pool")) {
    c.wavunet_pool = detail::as_count(j["wavunet_pool"], "wavunet_pool");
  }
  if (j.contains("sources")) c.sources = detail::as_texts(j["sources"], "sources");
}

inline void apply_train_json(TrainConfig& c, const nlohmann::json& j) {
  detail::expect_keys(j, "train",
                      {"lr", "batch_size", "steps", "seed", "loss", "checkpoint_interval"});
  if (j.contains("lr")) c.lr = detail::as_real(j["lr"], "lr");
  if (j.contains("batch_size")) c.batch_size = detail::as_count(j["batch_size"], "batch_size");
  if (j.contains("steps")) c.steps = detail::as_count(j["steps"], "steps");
  if (j.contains("seed")) c.seed = detail::as_count(j["seed"], "seed");
  if (j.contains("checkpoint_interval")) {
    c.checkpoint_interval = detail::as_count(j["checkpoint_interval"], "checkpoint_interval");
  }
  if (j.contains("loss")) {
    if (j["loss"].is_null()) {
      c.loss.reset();
    } else {
      c.loss = parse_loss_kind(detail::as_text(j["loss"], "loss"));
    }
  }
}

inline void apply_augment_json(AugmentConfig& c, const nlohmann::json& j) {
  detail::expect_keys(
      j, "augment",
      {"enable", "mix_count", "random_track_mixing", "segment_seconds", "random_gain"});
  if (j.contains("enable")) c.enable = detail::as_flag(j["enable"], "enable");
  if (j.contains("mix_count")) c.mix_count = detail::as_count(j["mix_count"], "mix_count");
  if (j.contains("random_track_mixing")) {
    c.random_track_mixing = detail::as_flag(j["random_track_mixing"], "random_track_mixing");
  }
  if (j.contains("segment_seconds")) {
    c.segment_seconds = detail::as_real(j["segment_seconds"], "segment_seconds");
  }
  if (j.contains("random_gain")) c.random_gain = detail::as_flag(j["random_gain"], "random_gain");
}

inline void apply_run_json(RunConfig& c, const nlohmann::json& j) {
  detail::expect_keys(j, "top level", {"model_kind", "model", "train", "augment", "window"});
  if (j.contains("model_kind")) {
    c.kind = parse_model_kind(detail::as_text(j["model_kind"], "model_kind"));
  }
  if (j.contains("model")) apply_model_json(c.model, j["model"]);
  if (j.contains("train")) apply_train_json(c.train, j["train"]);
  if (j.contains("augment")) apply_augment_json(c.augment, j["augment"]);
  if (j.contains("window")) {
    const auto& w = j["window"];
    detail::expect_keys(w, "window",
                        {"segment_seconds", "overlap_seconds", "frame_seconds", "hop_seconds"});
    if (w.contains("segment_seconds")) {
      c.segment_seconds = detail::as_real(w["segment_seconds"], "segment_seconds");
    }
    if (w.contains("overlap_seconds")) {
      c.overlap_seconds = detail::as_real(w["overlap_seconds"], "overlap_seconds");
    }
    if (w.contains("frame_seconds")) {
      c.frame_seconds = detail::as_real(w["frame_seconds"], "frame_seconds");
    }
    if (w.contains("hop_seconds")) {
      c.hop_seconds = detail::as_real(w["hop_seconds"], "hop_seconds");
    }
  }
}

inline nlohmann::json stft_to_json(const StftConfig& c) {
  return {{"window_size", c.window_size}, {"hop", c.hop}, {"window", window_kind_name(c.window)}};
}

inline nlohmann::json model_to_json(const ModelConfig& c) {
  return {{"stft", stft_to_json(c.stft)},
          {"sample_rate", c.sample_rate},
          {"input_channels", c.input_channels},
          {"unet_depth", c.unet_depth},
          {"unet_channels", c.unet_channels},
          {"wavunet_depth", c.wavunet_depth},
          {"wavunet_channels", c.wavunet_channels},
          {"wavunet_pool", c.wavunet_pool},
          {"sources", c.sources}};
}

inline nlohmann::json train_to_json(const TrainConfig& c) {
  nlohmann::json j{{"lr", c.lr},
                   {"batch_size", c.batch_size},
                   {"steps", c.steps},
                   {"seed", c.seed},
                   {"checkpoint_interval", c.checkpoint_interval}};
  j["loss"] = c.loss ? nlohmann::json(loss_kind_name(*c.loss)) : nlohmann::json(nullptr);
  return j;
}

inline nlohmann::json augment_to_json(const AugmentConfig& c) {
  return {{"enable", c.enable},
          {"mix_count", c.mix_count},
          {"random_track_mixing", c.random_track_mixing},
          {"segment_seconds", c.segment_seconds},
          {"random_gain", c.random_gain}};
}

inline nlohmann::json run_config_to_json(const RunConfig& c) {
  return {{"model_kind", model_kind_name(c.kind)},
          {"model", model_to_json(c.model)},
          {"train", train_to_json(c.train)},
          {"augment", augment_to_json(c.augment)},
          {"window",
           {{"segment_seconds", c.segment_seconds},
            {"overlap_seconds", c.overlap_seconds},
            {"frame_seconds", c.frame_seconds},
            {"hop_seconds", c.hop_seconds}}}};
}

// What a checkpoint knows about itself, enough to rebuild the model and run
// separation or evaluation without the original config file.
struct CheckpointDescription {
  RunConfig config;
  std::string target_source;
  LossKind loss = LossKind::waveform_mae;
  std::string precision = "float32";
};

inline constexpr const char* kCheckpointFormatName = "catnet-checkpoint";

inline nlohmann::json checkpoint_meta_json(const CheckpointDescription& d,
                                           std::size_t parameter_count) {
  return {{"format", kCheckpointFormatName},
          {"target_source", d.target_source},
          {"loss", loss_kind_name(d.loss)},
          {"precision", d.precision},
          {"parameter_count", parameter_count},
          {"config", run_config_to_json(d.config)}};
}

inline CheckpointDescription parse_checkpoint_meta(const nlohmann::json& meta) {
  if (!meta.is_object() || !meta.contains("format") ||
      meta["format"] != kCheckpointFormatName) {
    throw_error(ErrorKind::checkpoint_integrity,
                "checkpoint metadata is missing the '", kCheckpointFormatName, "' format marker");
  }
  if (!meta.contains("target_source") || !meta.contains("config")) {
    throw_error(ErrorKind::checkpoint_integrity,
                "checkpoint metadata lacks target_source or config");
  }
  CheckpointDescription d;
  d.target_source = detail::as_text(meta["target_source"], "target_source");
  if (meta.contains("loss")) d.loss = parse_loss_kind(detail::as_text(meta["loss"], "loss"));
  if (meta.contains("precision")) d.precision = detail::as_text(meta["precision"], "precision");
  apply_run_json(d.config, meta["config"]);
  d.config.validate();
  return d;
}

inline nlohmann::json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw_error(ErrorKind::io, "cannot open config file '", path, "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw_error(ErrorKind::config, "config file '", path, "': ", e.what());
  }
}

}  // namespace catnet
