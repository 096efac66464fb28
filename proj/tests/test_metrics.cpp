#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "catnet/metrics.hpp"

using catnet::AudioSegment;
using catnet::Error;
using catnet::ErrorKind;
using catnet::ForwardOptions;
using catnet::MaskMode;
using catnet::ModelConfig;
using catnet::ModelKind;
using catnet::SeparationModel;
using catnet::TrackStems;

namespace {

constexpr double kPi = 3.14159265358979323846;

AudioSegment sine(std::size_t length, std::size_t rate, double freq, double amp = 0.5) {
  AudioSegment s = AudioSegment::silence(1, length, rate);
  for (std::size_t i = 0; i < length; ++i)
    s.channels[0][i] = amp * std::sin(2.0 * kPi * freq * double(i) / double(rate));
  return s;
}

AudioSegment scaled(const AudioSegment& s, double alpha) {
  AudioSegment out = s;
  for (auto& ch : out.channels)
    for (auto& v : ch) v *= alpha;
  return out;
}

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "catnet_metrics_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

ModelConfig mini_config() {
  ModelConfig c;
  c.stft.window_size = 64;
  c.stft.hop = 16;
  c.sample_rate = 2000;
  c.unet_depth = 2;
  c.unet_channels = {4, 8};
  c.wavunet_depth = 2;
  c.wavunet_channels = {4, 8};
  c.wavunet_pool = 4;
  c.sources = {"vocals"};
  return c;
}

}  // namespace

TEST_CASE("sdr analytic cases") {
  auto ref = sine(1000, 1000, 60.0);
  CHECK(catnet::sdr(ref, ref) == 60.0);  // zero error hits the cap exactly

  auto zero = AudioSegment::silence(1, 1000, 1000);
  CHECK(std::abs(catnet::sdr(ref, zero) - 0.0) <= 1e-9);

  const double half = catnet::sdr(ref, scaled(ref, 0.5));
  CHECK(std::abs(half - 10.0 * std::log10(4.0)) <= 1e-6);
  CHECK(half == doctest::Approx(6.0206).epsilon(1e-4));
}

TEST_CASE("sdr scale law at alpha 0.5 and 0.9") {
  auto ref = sine(2000, 1000, 97.0);
  for (double alpha : {0.5, 0.9}) {
    const double expect = 10.0 * std::log10(1.0 / ((1.0 - alpha) * (1.0 - alpha)));
    CHECK(std::abs(catnet::sdr(ref, scaled(ref, alpha)) - expect) <= 1e-9);
  }
}

TEST_CASE("sdr is invariant to scaling both signals together") {
  auto ref = sine(1500, 1000, 123.0);
  auto est = scaled(sine(1500, 1000, 123.0, 0.4), 1.0);
  const double base = catnet::sdr(ref, est);
  const double joint = catnet::sdr(scaled(ref, 0.3), scaled(est, 0.3));
  CHECK(std::abs(base - joint) <= 1e-12);
}

TEST_CASE("sdr rejects silent references and mismatched shapes") {
  auto ref = sine(100, 100, 10.0);
  auto zero = AudioSegment::silence(1, 100, 100);
  try {
    (void)catnet::sdr(zero, ref);
    FAIL("expected a data error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::data);
  }
  auto longer = AudioSegment::silence(1, 200, 100);
  CHECK_THROWS_AS((void)catnet::sdr(ref, longer), Error);
}

TEST_CASE("median handles odd and even counts") {
  CHECK(catnet::median_of({3.0, 1.0, 2.0}) == 2.0);
  CHECK(catnet::median_of({4.0, 1.0, 2.0, 3.0}) == 2.5);
  CHECK(catnet::median_of({60.0, 0.0}) == 30.0);
  CHECK_THROWS_AS((void)catnet::median_of({}), Error);
}

TEST_CASE("framewise median on a uniformly scaled estimate equals the single-frame value") {
  auto ref = sine(5000, 1000, 50.0);  // five 1-second frames
  auto est = scaled(ref, 0.5);
  auto report = catnet::framewise_median_sdr(ref, est);
  CHECK(report.frames_used == 5);
  CHECK(report.frames_silent == 0);
  for (double v : report.frame_sdrs_db)
    CHECK(v == doctest::Approx(10.0 * std::log10(4.0)).epsilon(1e-9));
  CHECK(report.median_sdr_db == doctest::Approx(10.0 * std::log10(4.0)).epsilon(1e-9));
}

TEST_CASE("crafted three-frame signal yields the known median") {
  const std::size_t rate = 100;
  auto ref = sine(3 * rate, rate, 10.0);
  AudioSegment est = ref;
  for (std::size_t i = 0; i < rate; ++i) est.channels[0][i] = 0.0;            // 0 dB
  for (std::size_t i = rate; i < 2 * rate; ++i) est.channels[0][i] *= 0.5;    // 6.0206 dB
  // third frame untouched: 60 dB cap

  auto report = catnet::framewise_median_sdr(ref, est);
  REQUIRE(report.frames_used == 3);
  std::vector<double> sorted = report.frame_sdrs_db;
  std::sort(sorted.begin(), sorted.end());
  CHECK(std::abs(sorted[0] - 0.0) <= 1e-9);
  CHECK(std::abs(sorted[1] - 6.0206) <= 1e-4);
  CHECK(sorted[2] == 60.0);
  CHECK(std::abs(report.median_sdr_db - 6.0206) <= 1e-4);

  SUBCASE("permuting the frames does not move the median") {
    AudioSegment ref2 = ref, est2 = est;
    // rotate frame contents: [2,0,1]
    for (std::size_t i = 0; i < rate; ++i) {
      ref2.channels[0][i] = ref.channels[0][i + 2 * rate];
      est2.channels[0][i] = est.channels[0][i + 2 * rate];
      ref2.channels[0][i + rate] = ref.channels[0][i];
      est2.channels[0][i + rate] = est.channels[0][i];
      ref2.channels[0][i + 2 * rate] = ref.channels[0][i + rate];
      est2.channels[0][i + 2 * rate] = est.channels[0][i + rate];
    }
    auto permuted = catnet::framewise_median_sdr(ref2, est2);
    CHECK(permuted.median_sdr_db == report.median_sdr_db);
  }
}

TEST_CASE("perfect-on-half, zero-on-half frames give the midpoint median") {
  const std::size_t rate = 100;
  auto ref = sine(4 * rate, rate, 7.0);
  AudioSegment est = ref;
  for (std::size_t i = 0; i < 2 * rate; ++i) est.channels[0][i] = 0.0;
  auto report = catnet::framewise_median_sdr(ref, est);
  REQUIRE(report.frames_used == 4);
  CHECK(report.median_sdr_db == 30.0);  // midpoint of {0, 0, 60, 60}
}

TEST_CASE("silent reference frames are skipped and counted") {
  const std::size_t rate = 100;
  auto ref = sine(3 * rate, rate, 11.0);
  for (std::size_t i = rate; i < 2 * rate; ++i) ref.channels[0][i] = 0.0;  // silent second
  auto est = scaled(ref, 0.5);
  auto report = catnet::framewise_median_sdr(ref, est);
  CHECK(report.frames_used == 2);
  CHECK(report.frames_silent == 1);

  SUBCASE("a fully silent reference is an error") {
    auto silent = AudioSegment::silence(1, 3 * rate, rate);
    auto anything = sine(3 * rate, rate, 11.0);
    try {
      (void)catnet::framewise_median_sdr(silent, anything);
      FAIL("expected a data error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::data);
    }
  }
}

TEST_CASE("evaluation scores tracks in sorted order and survives per-track failures") {
  const auto cfg = mini_config();
  SeparationModel<double> model(ModelKind::catnet, cfg, 3);

  // Single-source dataset where vocals IS the mixture: the identity pipeline
  // then separates it perfectly.
  auto make_track = [&](const std::string& name, double freq, std::size_t rate) {
    TrackStems t;
    t.name = name;
    t.stems["vocals"] = sine(2 * rate, rate, freq);
    t.mixture = t.stems["vocals"];
    return t;
  };
  std::vector<TrackStems> dataset;
  dataset.push_back(make_track("zebra", 150.0, 2000));
  dataset.push_back(make_track("alpha", 220.0, 2000));
  dataset.push_back(make_track("broken", 300.0, 500));  // wrong sample rate

  catnet::EvaluationOptions opts;
  opts.segment_len = 2000;
  opts.overlap = 500;

  ForwardOptions identity;
  identity.mask_mode = MaskMode::force_ones;
  identity.zero_wavunet = true;

  auto result = catnet::evaluate_model(model, dataset, "vocals", opts, identity);

  // "broken" fails on the sample-rate check; the other two are scored and
  // their accompaniment rows fail quietly (reference is exactly silent).
  REQUIRE(result.reports.size() == 2);
  CHECK(result.reports[0].track == "alpha");
  CHECK(result.reports[1].track == "zebra");
  for (const auto& r : result.reports) {
    CHECK(r.source == "vocals");
    CHECK(r.median_sdr_db == 60.0);
  }
  CHECK(result.aggregate_db.at("vocals") == 60.0);
  REQUIRE(result.failures.size() == 3);
  bool saw_broken = false;
  for (const auto& f : result.failures) {
    if (f.rfind("broken", 0) == 0) saw_broken = true;
  }
  CHECK(saw_broken);

  SUBCASE("the zero separator scores exactly 0 dB") {
    ForwardOptions zero;
    zero.mask_mode = MaskMode::force_zeros;
    zero.zero_wavunet = true;
    auto zeroed = catnet::evaluate_model(model, dataset, "vocals", opts, zero);
    REQUIRE(zeroed.reports.size() == 2);
    for (const auto& r : zeroed.reports) CHECK(r.median_sdr_db == 0.0);
    CHECK(zeroed.aggregate_db.at("vocals") == 0.0);
  }
}

TEST_CASE("reports serialize to the documented csv and json layouts") {
  catnet::EvaluationResult result;
  catnet::SdrReport r;
  r.track = "track000";
  r.source = "vocals";
  r.frames_used = 9;
  r.frames_silent = 1;
  r.median_sdr_db = 7.25;
  result.reports.push_back(r);
  result.aggregate_db["vocals"] = 7.25;
  result.failures.push_back("track001: boom");

  const auto csv_path = temp_path("report.csv");
  catnet::write_sdr_csv(csv_path.string(), result);
  std::ifstream in(csv_path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "track,source,frames_used,median_sdr_db");
  std::getline(in, line);
  CHECK(line == "track000,vocals,9,7.25");

  nlohmann::json echo;
  echo["segment_len"] = 2000;
  auto j = catnet::sdr_summary_json(result, echo);
  CHECK(j["metric"] == "energy_ratio_sdr");
  CHECK(j["cap_db"] == 60.0);
  CHECK(j["silence_mean_square_threshold"] == 1e-8);
  CHECK(j["config"]["segment_len"] == 2000);
  CHECK(j["aggregate_median_sdr_db"]["vocals"] == 7.25);
  CHECK(j["tracks"][0]["track"] == "track000");
  CHECK(j["failures"].size() == 1);
}
