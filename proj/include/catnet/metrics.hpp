#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "catnet/audio.hpp"
#include "catnet/data.hpp"
#include "catnet/models.hpp"

// Separation quality metrics: energy-ratio SDR with framewise median
// aggregation. Reports state the metric explicitly since this is the plain
// energy ratio, not the BSSEval projection variant.

namespace catnet {

constexpr double kSdrCapDb = 60.0;
constexpr double kSilenceMeanSquare = 1e-8;

namespace detail {

struct EnergyPair {
  double reference = 0.0;
  double error = 0.0;
};

inline EnergyPair energies(const AudioSegment& reference, const AudioSegment& estimate,
                           std::size_t start, std::size_t len) {
  EnergyPair e;
  for (std::size_t c = 0; c < reference.channel_count(); ++c) {
    const auto& r = reference.channels[c];
    const auto& s = estimate.channels[c];
    for (std::size_t i = start; i < start + len; ++i) {
      e.reference += r[i] * r[i];
      const double d = r[i] - s[i];
      e.error += d * d;
    }
  }
  return e;
}

inline double ratio_db(const EnergyPair& e) {
  if (e.error == 0.0) return kSdrCapDb;
  return std::min(kSdrCapDb, 10.0 * std::log10(e.reference / e.error));
}

}  // namespace detail

// 10*log10(|s|^2 / |s - s_hat|^2) over all channels jointly, capped at +60 dB.
inline double sdr(const AudioSegment& reference, const AudioSegment& estimate) {
  reference.validate();
  estimate.validate();
  if (reference.channel_count() != estimate.channel_count() ||
      reference.length() != estimate.length()) {
    throw_error(ErrorKind::contract, "sdr needs matching shapes, got ",
                reference.channel_count(), "x", reference.length(), " vs ",
                estimate.channel_count(), "x", estimate.length());
  }
  const auto e = detail::energies(reference, estimate, 0, reference.length());
  if (e.reference == 0.0) {
    throw_error(ErrorKind::data, "sdr is undefined for an all-zero reference");
  }
  return detail::ratio_db(e);
}

struct SdrReport {
  std::string track;
  std::string source;
  std::vector<double> frame_sdrs_db;
  double median_sdr_db = 0.0;
  std::size_t frames_used = 0;
  std::size_t frames_silent = 0;  // skipped: reference mean square below threshold
  double frame_seconds = 1.0;
  double hop_seconds = 1.0;
};

inline double median_of(std::vector<double> values) {
  if (values.empty()) throw_error(ErrorKind::contract, "median of an empty list");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

// Per-frame SDR over non-overlapping (by default) windows; frames whose
// reference is quieter than the silence threshold are excluded and counted.
inline SdrReport framewise_median_sdr(const AudioSegment& reference,
                                      const AudioSegment& estimate, double frame_seconds = 1.0,
                                      double hop_seconds = 1.0) {
  reference.validate();
  estimate.validate();
  if (reference.channel_count() != estimate.channel_count() ||
      reference.length() != estimate.length() ||
      reference.sample_rate != estimate.sample_rate) {
    throw_error(ErrorKind::contract, "framewise sdr needs matching shapes and rates");
  }
  if (frame_seconds <= 0 || hop_seconds <= 0) {
    throw_error(ErrorKind::config, "frame and hop durations must be positive");
  }
  const auto rate = double(reference.sample_rate);
  const auto frame_len = static_cast<std::size_t>(std::llround(frame_seconds * rate));
  const auto hop_len = static_cast<std::size_t>(std::llround(hop_seconds * rate));
  if (frame_len == 0 || hop_len == 0) {
    throw_error(ErrorKind::config, "frame and hop must cover at least one sample");
  }

  SdrReport report;
  report.frame_seconds = frame_seconds;
  report.hop_seconds = hop_seconds;
  const double denom = double(frame_len * reference.channel_count());
  for (std::size_t start = 0; start + frame_len <= reference.length(); start += hop_len) {
    const auto e = detail::energies(reference, estimate, start, frame_len);
    if (e.reference / denom < kSilenceMeanSquare) {
      ++report.frames_silent;
      continue;
    }
    report.frame_sdrs_db.push_back(detail::ratio_db(e));
  }
  if (report.frame_sdrs_db.empty()) {
    throw_error(ErrorKind::data, "every reference frame is silent; sdr is undefined");
  }
  report.frames_used = report.frame_sdrs_db.size();
  report.median_sdr_db = median_of(report.frame_sdrs_db);
  return report;
}

struct EvaluationOptions {
  std::size_t segment_len = 0;  // samples per model forward
  std::size_t overlap = 0;
  double frame_seconds = 1.0;
  double hop_seconds = 1.0;
};

struct EvaluationResult {
  std::vector<SdrReport> reports;               // per (track, source), track-major
  std::map<std::string, double> aggregate_db;   // source -> median of per-track medians
  std::vector<std::string> failures;            // "track[/source]: message"
};

// Separates every track and scores the target source, plus the residual
// accompaniment when the target is vocals. Per-track failures are recorded
// and evaluation continues.
template <class S>
EvaluationResult evaluate_model(const SeparationModel<S>& model,
                                const std::vector<TrackStems>& dataset,
                                const std::string& target_source, const EvaluationOptions& opts,
                                const ForwardOptions& overrides = {}) {
  if (opts.segment_len == 0) throw_error(ErrorKind::config, "segment_len must be positive");

  std::vector<const TrackStems*> tracks;
  tracks.reserve(dataset.size());
  for (const auto& t : dataset) tracks.push_back(&t);
  std::sort(tracks.begin(), tracks.end(),
            [](const TrackStems* a, const TrackStems* b) { return a->name < b->name; });

  EvaluationResult result;
  std::map<std::string, std::vector<double>> per_source_medians;
  for (const TrackStems* track : tracks) {
    TrackSeparation separated;
    try {
      separated = separate_track(model, track->mixture, opts.segment_len, opts.overlap,
                                 overrides);
    } catch (const Error& e) {
      result.failures.push_back(track->name + ": " + e.what());
      continue;
    }

    auto score = [&](const std::string& source, const AudioSegment& reference,
                     const AudioSegment& estimate) {
      try {
        auto report =
            framewise_median_sdr(reference, estimate, opts.frame_seconds, opts.hop_seconds);
        report.track = track->name;
        report.source = source;
        per_source_medians[source].push_back(report.median_sdr_db);
        result.reports.push_back(std::move(report));
      } catch (const Error& e) {
        result.failures.push_back(track->name + "/" + source + ": " + e.what());
      }
    };

    const auto it = track->stems.find(target_source);
    if (it == track->stems.end()) {
      result.failures.push_back(track->name + ": no reference stem '" + target_source + "'");
      continue;
    }
    score(target_source, it->second, separated.estimate);
    if (target_source == "vocals") {
      score("accompaniment", sub_segments(track->mixture, it->second),
            separated.accompaniment);
    }
  }

  for (auto& [source, medians] : per_source_medians)
    result.aggregate_db[source] = median_of(medians);
  return result;
}

inline void write_sdr_csv(const std::string& path, const EvaluationResult& result) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw_error(ErrorKind::io, "cannot open report '", path, "' for writing");
  out << "track,source,frames_used,median_sdr_db\n";
  for (const auto& r : result.reports)
    out << r.track << ',' << r.source << ',' << r.frames_used << ',' << r.median_sdr_db << '\n';
}

// JSON summary with the metric's definition spelled out and the run's
// configuration echoed alongside the scores.
inline nlohmann::json sdr_summary_json(const EvaluationResult& result,
                                       const nlohmann::json& config_echo) {
  nlohmann::json j;
  j["metric"] = "energy_ratio_sdr";
  j["cap_db"] = kSdrCapDb;
  j["silence_mean_square_threshold"] = kSilenceMeanSquare;
  j["config"] = config_echo;
  j["tracks"] = nlohmann::json::array();
  for (const auto& r : result.reports) {
    j["tracks"].push_back({{"track", r.track},
                           {"source", r.source},
                           {"frames_used", r.frames_used},
                           {"frames_silent", r.frames_silent},
                           {"median_sdr_db", r.median_sdr_db}});
  }
  j["aggregate_median_sdr_db"] = result.aggregate_db;
  j["failures"] = result.failures;
  return j;
}

}  // namespace catnet
