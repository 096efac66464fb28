#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "catnet/audio.hpp"
#include "catnet/rng.hpp"
#include "catnet/wav.hpp"

// Dataset access and training-pair assembly. A dataset is a directory of
// per-track folders, each holding one WAV per source; training pairs are
// built by summing randomly drawn same-source segments (mix-audio
// augmentation) and summing those mixes across sources.

namespace catnet {

inline const std::vector<std::string>& default_sources() {
  static const std::vector<std::string> s = {"vocals", "drums", "bass", "other"};
  return s;
}

struct TrackStems {
  std::string name;
  std::map<std::string, AudioSegment> stems;
  AudioSegment mixture;  // loaded from disk when present, else the stem sum

  void validate_consistency(double tolerance = 1e-3) const {
    if (stems.empty()) throw_error(ErrorKind::data, "track '", name, "' has no stems");
    const auto& first = stems.begin()->second;
    for (const auto& [source, seg] : stems) {
      seg.validate();
      if (seg.sample_rate != first.sample_rate) {
        throw_error(ErrorKind::data, "track '", name, "': stem '", source, "' sample rate ",
                    seg.sample_rate, " differs from ", first.sample_rate);
      }
      if (seg.length() != first.length() || seg.channel_count() != first.channel_count()) {
        throw_error(ErrorKind::data, "track '", name, "': stem '", source,
                    "' shape differs from the other stems");
      }
    }
    if (mixture.channel_count() != first.channel_count() ||
        mixture.length() != first.length() || mixture.sample_rate != first.sample_rate) {
      throw_error(ErrorKind::data, "track '", name, "': mixture shape differs from the stems");
    }
    for (std::size_t c = 0; c < mixture.channel_count(); ++c) {
      for (std::size_t i = 0; i < mixture.length(); ++i) {
        double sum = 0.0;
        for (const auto& [source, seg] : stems) sum += seg.channels[c][i];
        if (std::abs(sum - mixture.channels[c][i]) > tolerance) {
          throw_error(ErrorKind::data, "track '", name, "': mixture deviates from the stem sum ",
                      "by ", std::abs(sum - mixture.channels[c][i]), " at sample ", i,
                      " (tolerance ", tolerance, ")");
        }
      }
    }
  }

  AudioSegment stem_sum() const {
    auto it = stems.begin();
    AudioSegment sum = it->second;
    for (++it; it != stems.end(); ++it) sum = add_segments(sum, it->second);
    return sum;
  }
};

// Loads <root>/<track>/{<source>.wav...}[, mixture.wav]. A missing mixture is
// synthesized by summing the stems; a present one is validated against them.
inline std::vector<TrackStems> load_dataset(
    const std::string& root, const std::vector<std::string>& sources = default_sources()) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) {
    throw_error(ErrorKind::data, "dataset root '", root, "' is not a directory");
  }
  std::vector<std::string> track_names;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) track_names.push_back(entry.path().filename().string());
  }
  std::sort(track_names.begin(), track_names.end());
  if (track_names.empty()) {
    throw_error(ErrorKind::data, "dataset root '", root, "' contains no track directories");
  }

  std::vector<TrackStems> tracks;
  tracks.reserve(track_names.size());
  for (const auto& name : track_names) {
    TrackStems track;
    track.name = name;
    const fs::path dir = fs::path(root) / name;
    for (const auto& source : sources) {
      const fs::path p = dir / (source + ".wav");
      if (!fs::exists(p)) {
        throw_error(ErrorKind::data, "track '", name, "' is missing stem '", source, "' (",
                    p.string(), ")");
      }
      track.stems[source] = read_wav(p.string());
    }
    const fs::path mix_path = dir / "mixture.wav";
    track.mixture = fs::exists(mix_path) ? read_wav(mix_path.string()) : track.stem_sum();
    track.validate_consistency();
    tracks.push_back(std::move(track));
  }
  return tracks;
}

inline void write_dataset(const std::vector<TrackStems>& tracks, const std::string& root,
                          WavEncoding encoding = WavEncoding::float32) {
  namespace fs = std::filesystem;
  fs::create_directories(root);
  for (const auto& track : tracks) {
    const fs::path dir = fs::path(root) / track.name;
    fs::create_directories(dir);
    for (const auto& [source, seg] : track.stems)
      write_wav((dir / (source + ".wav")).string(), seg, encoding);
    write_wav((dir / "mixture.wav").string(), track.mixture, encoding);
  }
}

// Copies length samples starting at offset, zero-padding past the end.
inline AudioSegment extract_segment(const AudioSegment& src, std::size_t offset,
                                    std::size_t length) {
  AudioSegment out = AudioSegment::silence(src.channel_count(), length, src.sample_rate);
  for (std::size_t c = 0; c < src.channel_count(); ++c) {
    const auto& in = src.channels[c];
    for (std::size_t i = 0; i < length && offset + i < in.size(); ++i)
      out.channels[c][i] = in[offset + i];
  }
  return out;
}

// One uniform track draw, then one uniform offset draw over that track's
// samples. Segments reaching past the end are zero-padded.
inline AudioSegment sample_source_segment(const std::vector<TrackStems>& dataset,
                                          const std::string& source, double segment_seconds,
                                          Rng& rng) {
  if (dataset.empty()) throw_error(ErrorKind::data, "cannot sample from an empty dataset");
  const std::size_t t = rng.uniform_index(dataset.size());
  const auto it = dataset[t].stems.find(source);
  if (it == dataset[t].stems.end()) {
    throw_error(ErrorKind::data, "track '", dataset[t].name, "' has no stem '", source, "'");
  }
  const AudioSegment& stem = it->second;
  const std::size_t length =
      static_cast<std::size_t>(std::llround(segment_seconds * double(stem.sample_rate)));
  if (length == 0) throw_error(ErrorKind::config, "segment of ", segment_seconds, " s is empty");
  const std::size_t offset = rng.uniform_index(stem.length());
  return extract_segment(stem, offset, length);
}

struct AugmentConfig {
  std::size_t mix_count = 2;        // J: same-source segments summed per draw
  bool enable = true;               // disabled: J=1, no track remixing
  bool random_track_mixing = true;  // draw each segment from an independent track
  double segment_seconds = 3.0;
  bool random_gain = false;  // optional per-segment gain in [0.5, 1.0]

  void validate() const {
    if (mix_count < 1) throw_error(ErrorKind::config, "mix_count must be >= 1");
    if (segment_seconds <= 0) throw_error(ErrorKind::config, "segment_seconds must be positive");
  }
};

// Plain elementwise sum of same-source segments; no renormalization and no
// clipping, so training values may leave [-1, 1].
inline AudioSegment mix_audio_augment(const std::vector<AudioSegment>& segments) {
  if (segments.empty()) throw_error(ErrorKind::contract, "mix_audio_augment on an empty list");
  AudioSegment out = segments.front();
  for (std::size_t j = 1; j < segments.size(); ++j) out = add_segments(out, segments[j]);
  return out;
}

struct TrainingPair {
  AudioSegment x_mix;     // sum of the per-source mixes
  AudioSegment s_target;  // the target source's mix
};

// Draw order (replayable from a cloned rng):
//   remixing on:  per source in the given order, J times: track, offset[, gain]
//   remixing off: J times: track, offset[, gain]; windows shared by all sources
// x_mix is the exact sum of the per-source mixes, with no hidden scaling.
inline TrainingPair make_training_pair(const std::vector<TrackStems>& dataset,
                                       const std::string& target_source,
                                       const std::vector<std::string>& sources,
                                       const AugmentConfig& aug, Rng& rng) {
  aug.validate();
  if (dataset.empty()) throw_error(ErrorKind::data, "cannot sample from an empty dataset");
  if (std::find(sources.begin(), sources.end(), target_source) == sources.end()) {
    throw_error(ErrorKind::config, "target source '", target_source,
                "' is not in the configured source list");
  }
  const std::size_t j_count = aug.enable ? aug.mix_count : 1;
  const bool remix = aug.enable && aug.random_track_mixing;

  std::vector<AudioSegment> per_source_mix;
  per_source_mix.reserve(sources.size());

  if (remix) {
    for (const auto& source : sources) {
      std::vector<AudioSegment> segs;
      segs.reserve(j_count);
      for (std::size_t j = 0; j < j_count; ++j) {
        auto seg = sample_source_segment(dataset, source, aug.segment_seconds, rng);
        if (aug.random_gain) {
          const double gain = rng.uniform(0.5, 1.0);
          for (auto& ch : seg.channels)
            for (auto& v : ch) v *= gain;
        }
        segs.push_back(std::move(seg));
      }
      per_source_mix.push_back(mix_audio_augment(segs));
    }
  } else {
    // Shared windows keep each draw a coherent slice of one track.
    struct Window {
      std::size_t track, offset;
      double gain;
    };
    std::vector<Window> windows(j_count);
    for (auto& w : windows) {
      w.track = rng.uniform_index(dataset.size());
      const auto& track = dataset[w.track];
      w.offset = rng.uniform_index(track.stems.begin()->second.length());
      w.gain = aug.random_gain ? rng.uniform(0.5, 1.0) : 1.0;
    }
    for (const auto& source : sources) {
      std::vector<AudioSegment> segs;
      segs.reserve(j_count);
      for (const auto& w : windows) {
        const auto it = dataset[w.track].stems.find(source);
        if (it == dataset[w.track].stems.end()) {
          throw_error(ErrorKind::data, "track '", dataset[w.track].name, "' has no stem '",
                      source, "'");
        }
        const std::size_t length = static_cast<std::size_t>(
            std::llround(aug.segment_seconds * double(it->second.sample_rate)));
        auto seg = extract_segment(it->second, w.offset, length);
        if (w.gain != 1.0) {
          for (auto& ch : seg.channels)
            for (auto& v : ch) v *= w.gain;
        }
        segs.push_back(std::move(seg));
      }
      per_source_mix.push_back(mix_audio_augment(segs));
    }
  }

  TrainingPair pair;
  pair.x_mix = per_source_mix.front();
  for (std::size_t i = 1; i < per_source_mix.size(); ++i)
    pair.x_mix = add_segments(pair.x_mix, per_source_mix[i]);
  const std::size_t target_index = static_cast<std::size_t>(
      std::find(sources.begin(), sources.end(), target_source) - sources.begin());
  pair.s_target = std::move(per_source_mix[target_index]);
  return pair;
}

// ---------------------------------------------------------------------------
// Synthetic stems: four spectrally distinct mono sources so a desk-scale
// model has something separable to learn.

struct SynthSpec {
  std::size_t track_count = 8;
  double seconds = 10.0;
  std::size_t sample_rate = 8000;
  std::uint64_t seed = 0;
};

namespace detail {

constexpr double kTwoPi = 6.283185307179586476925286766559;

// Amplitude-modulated harmonic tone with vibrato, mid band.
inline std::vector<double> synth_vocals(std::size_t n, double rate, Rng& rng) {
  std::vector<double> out(n, 0.0);
  const double f0 = rng.uniform(200.0, 380.0);
  const double vib_rate = rng.uniform(4.0, 6.5);
  const double vib_depth = rng.uniform(0.005, 0.02);
  const double am_rate = rng.uniform(1.0, 3.0);
  const double phase0 = rng.uniform(0.0, kTwoPi);
  double phase = phase0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = double(i) / rate;
    const double f = f0 * (1.0 + vib_depth * std::sin(kTwoPi * vib_rate * t));
    phase += kTwoPi * f / rate;
    const double am = 0.55 + 0.45 * std::sin(kTwoPi * am_rate * t);
    double v = 0.0;
    v += std::sin(phase);
    v += 0.5 * std::sin(2.0 * phase);
    v += 0.25 * std::sin(3.0 * phase);
    out[i] = 0.14 * am * v;
  }
  return out;
}

// Noise bursts with sharp decay on a regular grid, high-band emphasis via a
// first difference.
inline std::vector<double> synth_drums(std::size_t n, double rate, Rng& rng) {
  std::vector<double> out(n, 0.0);
  const double grid = rng.uniform(0.4, 0.6);
  const std::size_t burst = static_cast<std::size_t>(0.06 * rate);
  double prev = 0.0;
  for (double start = rng.uniform(0.0, 0.1); start * rate < double(n); start += grid) {
    const std::size_t s0 = static_cast<std::size_t>(start * rate);
    for (std::size_t k = 0; k < burst && s0 + k < n; ++k) {
      const double env = std::exp(-double(k) / (0.012 * rate));
      const double white = rng.uniform(-1.0, 1.0);
      out[s0 + k] += 0.22 * env * (white - prev);
      prev = white;
    }
  }
  return out;
}

// Low sine over a small note scale, one note per second, plus a faint octave.
inline std::vector<double> synth_bass(std::size_t n, double rate, Rng& rng) {
  static const double scale[] = {41.2, 49.0, 55.0, 61.7};
  std::vector<double> out(n, 0.0);
  const std::size_t note_len = static_cast<std::size_t>(rate);
  double phase = rng.uniform(0.0, kTwoPi);
  double f = scale[rng.uniform_index(4)];
  for (std::size_t i = 0; i < n; ++i) {
    if (i % note_len == 0) f = scale[rng.uniform_index(4)];
    phase += kTwoPi * f / rate;
    out[i] = 0.2 * std::sin(phase) + 0.06 * std::sin(2.0 * phase);
  }
  return out;
}

// Sustained triad pad with a slow attack every couple of seconds.
inline std::vector<double> synth_other(std::size_t n, double rate, Rng& rng) {
  std::vector<double> out(n, 0.0);
  const double root = rng.uniform(520.0, 700.0);
  const double ratios[] = {1.0, 1.25, 1.5};
  double phases[3] = {rng.uniform(0.0, kTwoPi), rng.uniform(0.0, kTwoPi),
                      rng.uniform(0.0, kTwoPi)};
  const double swell_rate = rng.uniform(0.4, 0.6);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = double(i) / rate;
    const double swell = 0.6 + 0.4 * std::sin(kTwoPi * swell_rate * t);
    double v = 0.0;
    for (int k = 0; k < 3; ++k) {
      phases[k] += kTwoPi * root * ratios[k] / rate;
      v += std::sin(phases[k]);
    }
    out[i] = 0.07 * swell * v;
  }
  return out;
}

}  // namespace detail

inline std::vector<TrackStems> generate_synthetic_dataset(const SynthSpec& spec) {
  if (spec.track_count == 0 || spec.seconds <= 0 || spec.sample_rate == 0) {
    throw_error(ErrorKind::config, "synthetic dataset needs positive track count, duration ",
                "and sample rate");
  }
  const auto n = static_cast<std::size_t>(std::llround(spec.seconds * double(spec.sample_rate)));
  const double rate = double(spec.sample_rate);
  Rng root(spec.seed);

  std::vector<TrackStems> tracks;
  tracks.reserve(spec.track_count);
  for (std::size_t t = 0; t < spec.track_count; ++t) {
    Rng rng = root.split(t + 1);
    TrackStems track;
    std::string id = std::to_string(t);
    track.name = "track" + std::string(3 - std::min<std::size_t>(3, id.size()), '0') + id;

    auto put = [&](const char* source, std::vector<double> samples) {
      AudioSegment seg;
      seg.sample_rate = spec.sample_rate;
      seg.channels.push_back(std::move(samples));
      track.stems[source] = std::move(seg);
    };
    put("vocals", detail::synth_vocals(n, rate, rng));
    put("drums", detail::synth_drums(n, rate, rng));
    put("bass", detail::synth_bass(n, rate, rng));
    put("other", detail::synth_other(n, rate, rng));
    track.mixture = track.stem_sum();
    tracks.push_back(std::move(track));
  }
  return tracks;
}

}  // namespace catnet
