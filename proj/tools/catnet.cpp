// Command-line front end: dataset synthesis, training, separation and
// evaluation. Exit codes: 0 success, 1 usage or configuration problem,
// 2 bad input data (files, datasets, checkpoints), 3 internal failure.

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "catnet/config_io.hpp"
#include "catnet/metrics.hpp"
#include "catnet/train.hpp"
#include "catnet/version.hpp"
#include "catnet/wav.hpp"

namespace {

using namespace catnet;

template <class S>
const char* precision_name();
template <>
const char* precision_name<float>() {
  return "float32";
}
template <>
const char* precision_name<double>() {
  return "float64";
}

void ensure_parent_dir(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
}

// ---------------------------------------------------------------- synth ----

struct SynthOptions {
  std::string out;
  std::size_t tracks = 8;
  double seconds = 10.0;
  std::uint64_t seed = 0;
  std::size_t rate = 8000;
  bool pcm16 = false;
};

int run_synth(const SynthOptions& o) {
  SynthSpec spec;
  spec.track_count = o.tracks;
  spec.seconds = o.seconds;
  spec.sample_rate = o.rate;
  spec.seed = o.seed;
  auto dataset = generate_synthetic_dataset(spec);
  write_dataset(dataset, o.out, o.pcm16 ? WavEncoding::pcm16 : WavEncoding::float32);
  std::cout << "wrote " << dataset.size() << " synthetic tracks (" << o.seconds << " s at "
            << o.rate << " Hz) to " << o.out << "\n";
  return 0;
}

// ---------------------------------------------------------------- train ----

struct TrainOptions {
  std::string data_dir;
  std::string source = "vocals";
  std::string out;
  std::string resume;
  std::string loss_log;
};

template <class S>
int run_train_with(const TrainOptions& o, const RunConfig& cfg) {
  auto dataset = load_dataset(o.data_dir, cfg.model.sources);
  SeparationModel<S> model(cfg.kind, cfg.model, cfg.train.seed);
  Trainer<S> trainer(std::move(model), cfg.train);

  CheckpointDescription desc;
  desc.config = cfg;
  desc.target_source = o.source;
  desc.loss = trainer.loss_kind();
  desc.precision = precision_name<S>();

  const std::string loss_log = o.loss_log.empty() ? o.out + ".loss.csv" : o.loss_log;
  ensure_parent_dir(o.out);
  ensure_parent_dir(loss_log);

  if (!o.resume.empty()) {
    auto raw = load_checkpoint(o.resume);
    auto prev = parse_checkpoint_meta(raw.meta);
    if (prev.config.kind != cfg.kind || prev.target_source != o.source ||
        prev.precision != desc.precision ||
        model_to_json(prev.config.model) != model_to_json(cfg.model)) {
      throw_error(ErrorKind::checkpoint_integrity, "cannot resume from '", o.resume,
                  "': it was trained as ", model_kind_name(prev.config.kind), "/",
                  prev.target_source, " (", prev.precision,
                  ") with a possibly different model layout");
    }
    restore_model(trainer.model(), raw);
    restore_optimizer(trainer.optimizer(), raw);
    trainer.restore_rng(Rng::deserialize(raw.rng_text));
    std::cout << "resumed from " << o.resume << " at step " << trainer.step_count() << "\n";
  } else {
    std::filesystem::remove(loss_log);  // fresh run, fresh log
  }
  trainer.set_loss_log(loss_log);

  const auto meta = checkpoint_meta_json(desc, trainer.model().parameter_count());
  std::cout << "training " << model_kind_name(cfg.kind) << " for '" << o.source << "' ("
            << trainer.model().parameter_count() << " parameters, "
            << loss_kind_name(trainer.loss_kind()) << ", " << desc.precision << ")\n";

  if (trainer.step_count() >= cfg.train.steps) {
    std::cout << "checkpoint already has " << trainer.step_count() << " steps, nothing to do\n";
    save_checkpoint(o.out, trainer.model(), trainer.optimizer(), trainer.rng(), meta);
    return 0;
  }

  const std::size_t print_every = std::max<std::size_t>(std::size_t{1}, cfg.train.steps / 10);
  while (trainer.step_count() < cfg.train.steps) {
    auto batch = assemble_batch<S>(dataset, o.source, cfg.model.sources, cfg.augment,
                                   cfg.train.batch_size, trainer.rng());
    const double loss = trainer.step(batch);
    const std::size_t s = trainer.step_count();
    if (s % print_every == 0 || s == cfg.train.steps) {
      std::cout << "step " << s << "/" << cfg.train.steps << "  loss " << loss << std::endl;
    }
    if (s % cfg.train.checkpoint_interval == 0 || s == cfg.train.steps) {
      save_checkpoint(o.out, trainer.model(), trainer.optimizer(), trainer.rng(), meta);
    }
  }
  std::cout << "wrote checkpoint " << o.out << " and loss log " << loss_log << "\n";
  return 0;
}

// ------------------------------------------------------------- separate ----

struct SeparateOptions {
  std::vector<std::string> ckpts;
  std::string input;
  std::string out_dir;
  double segment_seconds = 0;  // 0: use the checkpoint's window
  double overlap_seconds = -1;
  bool pcm16 = false;
};

template <class S>
AudioSegment separate_with(const CheckpointDescription& d, const RawCheckpoint& raw,
                           const AudioSegment& mix, std::size_t seg, std::size_t overlap) {
  SeparationModel<S> model(d.config.kind, d.config.model, d.config.train.seed);
  restore_model(model, raw);
  return separate_track(model, mix, seg, overlap).estimate;
}

AudioSegment separate_any(const CheckpointDescription& d, const RawCheckpoint& raw,
                          const AudioSegment& mix, std::size_t seg, std::size_t overlap) {
  if (d.precision == "float32") return separate_with<float>(d, raw, mix, seg, overlap);
  if (d.precision == "float64") return separate_with<double>(d, raw, mix, seg, overlap);
  throw_error(ErrorKind::checkpoint_version, "checkpoint precision '", d.precision,
              "' is not supported by this build");
}

int run_separate(const SeparateOptions& o) {
  const AudioSegment mix = read_wav(o.input);
  std::filesystem::create_directories(o.out_dir);
  const WavEncoding enc = o.pcm16 ? WavEncoding::pcm16 : WavEncoding::float32;

  AudioSegment residual = mix;
  std::vector<std::pair<std::string, AudioSegment>> estimates;
  for (const auto& path : o.ckpts) {
    auto raw = load_checkpoint(path);
    auto desc = parse_checkpoint_meta(raw.meta);
    for (const auto& [name, _] : estimates) {
      if (name == desc.target_source) {
        throw_error(ErrorKind::config, "two checkpoints both separate '", name, "'");
      }
    }
    if (desc.target_source == "accompaniment") {
      throw_error(ErrorKind::config,
                  "'accompaniment' is reserved for the residual output file");
    }
    const std::size_t seg = o.segment_seconds > 0
                                ? std::size_t(std::llround(o.segment_seconds *
                                                           double(desc.config.model.sample_rate)))
                                : desc.config.segment_samples();
    const std::size_t overlap =
        o.overlap_seconds >= 0
            ? std::size_t(std::llround(o.overlap_seconds * double(desc.config.model.sample_rate)))
            : desc.config.overlap_samples();
    auto estimate = separate_any(desc, raw, mix, seg, overlap);
    residual = sub_segments(residual, estimate);
    estimates.emplace_back(desc.target_source, std::move(estimate));
  }

  for (const auto& [source, est] : estimates) {
    const auto path = (std::filesystem::path(o.out_dir) / (source + ".wav")).string();
    write_wav(path, est, enc);
    std::cout << "wrote " << path << "\n";
  }
  const auto acc_path = (std::filesystem::path(o.out_dir) / "accompaniment.wav").string();
  write_wav(acc_path, residual, enc);
  std::cout << "wrote " << acc_path << " (input minus estimated stems)\n";
  return 0;
}

// ------------------------------------------------------------- evaluate ----

struct EvaluateOptions {
  std::string ckpt;
  std::string data_dir;
  std::string report;
  std::string json_out;
  double segment_seconds = 0;
  double overlap_seconds = -1;
  double frame_seconds = 0;
  double hop_seconds = 0;
};

template <class S>
EvaluationResult evaluate_with(const CheckpointDescription& d, const RawCheckpoint& raw,
                               const std::vector<TrackStems>& dataset,
                               const EvaluationOptions& eo) {
  SeparationModel<S> model(d.config.kind, d.config.model, d.config.train.seed);
  restore_model(model, raw);
  return evaluate_model(model, dataset, d.target_source, eo);
}

int run_evaluate(const EvaluateOptions& o) {
  auto raw = load_checkpoint(o.ckpt);
  auto desc = parse_checkpoint_meta(raw.meta);
  auto dataset = load_dataset(o.data_dir, desc.config.model.sources);

  const double rate = double(desc.config.model.sample_rate);
  EvaluationOptions eo;
  eo.segment_len = o.segment_seconds > 0 ? std::size_t(std::llround(o.segment_seconds * rate))
                                         : desc.config.segment_samples();
  eo.overlap = o.overlap_seconds >= 0 ? std::size_t(std::llround(o.overlap_seconds * rate))
                                      : desc.config.overlap_samples();
  eo.frame_seconds = o.frame_seconds > 0 ? o.frame_seconds : desc.config.frame_seconds;
  eo.hop_seconds = o.hop_seconds > 0 ? o.hop_seconds : desc.config.hop_seconds;

  EvaluationResult result;
  if (desc.precision == "float32") {
    result = evaluate_with<float>(desc, raw, dataset, eo);
  } else if (desc.precision == "float64") {
    result = evaluate_with<double>(desc, raw, dataset, eo);
  } else {
    throw_error(ErrorKind::checkpoint_version, "checkpoint precision '", desc.precision,
                "' is not supported by this build");
  }
  if (result.reports.empty()) {
    throw_error(ErrorKind::data, "every track failed evaluation; first failure: ",
                result.failures.empty() ? "none recorded" : result.failures.front());
  }

  ensure_parent_dir(o.report);
  write_sdr_csv(o.report, result);

  nlohmann::json echo;
  echo["checkpoint"] = o.ckpt;
  echo["data"] = o.data_dir;
  echo["target_source"] = desc.target_source;
  echo["run"] = run_config_to_json(desc.config);
  echo["window"] = {{"segment_samples", eo.segment_len},
                    {"overlap_samples", eo.overlap},
                    {"frame_seconds", eo.frame_seconds},
                    {"hop_seconds", eo.hop_seconds}};
  const auto summary = sdr_summary_json(result, echo);
  const std::string json_path =
      o.json_out.empty()
          ? std::filesystem::path(o.report).replace_extension(".json").string()
          : o.json_out;
  ensure_parent_dir(json_path);
  {
    std::ofstream out(json_path, std::ios::trunc);
    if (!out) throw_error(ErrorKind::io, "cannot open '", json_path, "' for writing");
    out << summary.dump(2) << "\n";
  }

  for (const auto& [source, med] : result.aggregate_db) {
    std::size_t tracks = 0;
    for (const auto& r : result.reports) tracks += r.source == source ? 1 : 0;
    std::cout << source << ": median SDR " << med << " dB over " << tracks << " tracks\n";
  }
  if (!result.failures.empty()) {
    std::cout << result.failures.size() << " evaluation failures (listed in " << json_path
              << ")\n";
  }
  std::cout << "wrote " << o.report << " and " << json_path << "\n";
  return 0;
}

// ----------------------------------------------------------------- main ----

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config:
      return 1;
    case ErrorKind::data:
    case ErrorKind::io:
    case ErrorKind::checkpoint_integrity:
    case ErrorKind::checkpoint_version:
      return 2;
    default:
      return 3;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CatNet music source separation toolkit"};
  app.set_version_flag("--version", std::string(catnet::version()));
  app.require_subcommand(1);

  int threads = 1;
  app.add_option("--threads", threads,
                 "Worker threads (this build is single-threaded; only 1 is meaningful)");

  SynthOptions synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic stem dataset");
  synth_cmd->add_option("--out", synth.out, "Output dataset directory")->required();
  synth_cmd->add_option("--tracks", synth.tracks, "Number of tracks")->capture_default_str();
  synth_cmd->add_option("--seconds", synth.seconds, "Track length in seconds")
      ->capture_default_str();
  synth_cmd->add_option("--seed", synth.seed, "Generator seed")->capture_default_str();
  synth_cmd->add_option("--rate", synth.rate, "Sample rate in Hz")->capture_default_str();
  synth_cmd->add_flag("--pcm16", synth.pcm16, "Write 16-bit PCM instead of float32");

  TrainOptions train;
  std::string train_config, train_model, train_loss;
  std::uint64_t train_seed = 0;
  std::size_t train_steps = 0, train_batch = 0, train_interval = 0, train_mix = 0;
  double train_lr = 0, train_segseconds = 0;
  bool train_aug = false;
  auto* train_cmd = app.add_subcommand("train", "Train a separation model on a stem dataset");
  train_cmd->add_option("--data", train.data_dir, "Dataset root directory")->required();
  train_cmd->add_option("--source", train.source, "Target source to isolate")
      ->capture_default_str();
  train_cmd->add_option("--out", train.out, "Checkpoint output path")->required();
  auto* model_opt = train_cmd->add_option(
      "--model", train_model, "Model kind: catnet, unet, unet_spec_loss or wavunet");
  auto* config_opt = train_cmd->add_option(
      "--config", train_config, "JSON config overlaying the built-in desk preset");
  auto* aug_opt =
      train_cmd->add_flag("--aug,!--no-aug", train_aug, "Enable mix-audio augmentation");
  auto* mix_opt =
      train_cmd->add_option("--mix-count", train_mix, "Segments summed per source draw");
  auto* steps_opt = train_cmd->add_option("--steps", train_steps, "Optimizer steps to reach");
  auto* batch_opt = train_cmd->add_option("--batch-size", train_batch, "Training pairs per step");
  auto* lr_opt = train_cmd->add_option("--lr", train_lr, "Adam learning rate");
  auto* seed_opt = train_cmd->add_option("--seed", train_seed, "Seed for init and sampling");
  auto* loss_opt = train_cmd->add_option("--loss", train_loss,
                                         "waveform_mae or spectrogram_mae (default: by model)");
  auto* segsec_opt = train_cmd->add_option("--segment-seconds", train_segseconds,
                                           "Training segment length in seconds");
  auto* interval_opt =
      train_cmd->add_option("--checkpoint-interval", train_interval, "Steps between checkpoints");
  train_cmd->add_option("--resume", train.resume, "Continue from an existing checkpoint");
  train_cmd->add_option("--loss-log", train.loss_log, "Loss CSV path (default: <out>.loss.csv)");
  bool train_f64 = false;
  train_cmd->add_flag("--float64", train_f64, "Train in double precision (slower)");

  SeparateOptions sep;
  auto* sep_cmd = app.add_subcommand("separate", "Split a mixture WAV into stems");
  sep_cmd->add_option("--ckpt", sep.ckpts, "Checkpoint(s), one per target source")
      ->required()
      ->expected(-1);
  sep_cmd->add_option("--input", sep.input, "Mixture WAV file")->required();
  sep_cmd->add_option("--out", sep.out_dir, "Output directory for stem WAVs")->required();
  sep_cmd->add_option("--segment-seconds", sep.segment_seconds,
                      "Sliding window length (default: from checkpoint)");
  sep_cmd->add_option("--overlap-seconds", sep.overlap_seconds,
                      "Window overlap (default: from checkpoint)");
  sep_cmd->add_flag("--pcm16", sep.pcm16, "Write 16-bit PCM instead of float32");

  EvaluateOptions eval;
  auto* eval_cmd = app.add_subcommand("evaluate", "Score a checkpoint on a stem dataset");
  eval_cmd->add_option("--ckpt", eval.ckpt, "Checkpoint to evaluate")->required();
  eval_cmd->add_option("--data", eval.data_dir, "Dataset root directory")->required();
  eval_cmd->add_option("--report", eval.report, "CSV report path")->required();
  eval_cmd->add_option("--json", eval.json_out, "JSON summary path (default: report with .json)");
  eval_cmd->add_option("--segment-seconds", eval.segment_seconds,
                       "Sliding window length (default: from checkpoint)");
  eval_cmd->add_option("--overlap-seconds", eval.overlap_seconds,
                       "Window overlap (default: from checkpoint)");
  eval_cmd->add_option("--frame-seconds", eval.frame_seconds, "SDR frame length");
  eval_cmd->add_option("--hop-seconds", eval.hop_seconds, "SDR frame hop");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  }

  if (threads != 1) {
    std::cerr << "note: this build runs single-threaded; --threads " << threads
              << " has no effect\n";
  }

  try {
    if (synth_cmd->parsed()) return run_synth(synth);

    if (train_cmd->parsed()) {
      RunConfig cfg = RunConfig::desk();
      if (config_opt->count() > 0) apply_run_json(cfg, load_json_file(train_config));
      if (model_opt->count() > 0) cfg.kind = parse_model_kind(train_model);
      if (aug_opt->count() > 0) cfg.augment.enable = train_aug;
      if (mix_opt->count() > 0) cfg.augment.mix_count = train_mix;
      if (steps_opt->count() > 0) cfg.train.steps = train_steps;
      if (batch_opt->count() > 0) cfg.train.batch_size = train_batch;
      if (lr_opt->count() > 0) cfg.train.lr = train_lr;
      if (seed_opt->count() > 0) cfg.train.seed = train_seed;
      if (loss_opt->count() > 0) cfg.train.loss = parse_loss_kind(train_loss);
      if (segsec_opt->count() > 0) cfg.augment.segment_seconds = train_segseconds;
      if (interval_opt->count() > 0) cfg.train.checkpoint_interval = train_interval;
      cfg.validate();
      if (std::find(cfg.model.sources.begin(), cfg.model.sources.end(), train.source) ==
          cfg.model.sources.end()) {
        throw_error(ErrorKind::config, "'", train.source,
                    "' is not one of the configured sources");
      }
      return train_f64 ? run_train_with<double>(train, cfg) : run_train_with<float>(train, cfg);
    }

    if (sep_cmd->parsed()) return run_separate(sep);
    if (eval_cmd->parsed()) return run_evaluate(eval);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
