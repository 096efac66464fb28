#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "catnet/config_io.hpp"
#include "catnet/wav.hpp"

// CATNET_CLI_PATH and CATNET_SOURCE_DIR are injected by the build so the
// suite can drive the real binary and check the shipped presets.

using catnet::AudioSegment;
using catnet::Error;
using catnet::ErrorKind;
using catnet::RunConfig;

namespace fs = std::filesystem;

namespace {

struct CmdResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / "catnet_cli_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

CmdResult run_cli(const fs::path& workdir, const std::string& args) {
  const auto out_file = workdir / "_stdout.txt";
  const auto err_file = workdir / "_stderr.txt";
  const std::string cmd = "cd '" + workdir.string() + "' && '" + CATNET_CLI_PATH + "' " + args +
                          " > '" + out_file.string() + "' 2> '" + err_file.string() + "'";
  const int status = std::system(cmd.c_str());
  CmdResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out_file);
  r.err = slurp(err_file);
  return r;
}

void write_tiny_config(const fs::path& path) {
  std::ofstream out(path);
  out << R"({
    "model": {
      "stft": { "window_size": 64, "hop": 16 },
      "sample_rate": 2000,
      "unet_depth": 2, "unet_channels": [4, 8],
      "wavunet_depth": 2, "wavunet_channels": [4, 8], "wavunet_pool": 4
    },
    "train": { "batch_size": 1, "steps": 4, "checkpoint_interval": 2 },
    "augment": { "segment_seconds": 0.5 },
    "window": { "segment_seconds": 0.5, "overlap_seconds": 0.1 }
  })";
}

bool same_bytes(const fs::path& a, const fs::path& b) {
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  std::string ca((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
  std::string cb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
  return !ca.empty() && ca == cb;
}

}  // namespace

TEST_CASE("run config json round trips for both presets") {
  for (const RunConfig& preset : {RunConfig::desk(), RunConfig::full_scale()}) {
    const auto j = catnet::run_config_to_json(preset);
    RunConfig rebuilt;
    catnet::apply_run_json(rebuilt, j);
    CHECK(catnet::run_config_to_json(rebuilt) == j);
    rebuilt.validate();
  }
}

TEST_CASE("sparse config overlays change only the keys present") {
  RunConfig cfg = RunConfig::desk();
  catnet::apply_run_json(cfg, nlohmann::json::parse(R"({"train": {"steps": 7}})"));
  CHECK(cfg.train.steps == 7);
  CHECK(cfg.train.batch_size == RunConfig::desk().train.batch_size);
  CHECK(cfg.model.sample_rate == RunConfig::desk().model.sample_rate);

  catnet::apply_run_json(cfg, nlohmann::json::parse(R"({"model_kind": "wavunet"})"));
  CHECK(cfg.kind == catnet::ModelKind::wavunet);
  CHECK(cfg.train.steps == 7);
}

TEST_CASE("config parsing rejects junk loudly") {
  RunConfig cfg;
  auto expect_config_error = [&](const char* text) {
    try {
      catnet::apply_run_json(cfg, nlohmann::json::parse(text));
      FAIL_CHECK("accepted: " << text);
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::config);
    }
  };
  expect_config_error(R"({"modle": {}})");
  expect_config_error(R"({"model": {"window_size": 64}})");
  expect_config_error(R"({"train": {"steps": -5}})");
  expect_config_error(R"({"train": {"lr": "fast"}})");
  expect_config_error(R"({"augment": {"enable": 1}})");
  expect_config_error(R"({"model": {"stft": {"window": "kaiser"}}})");
  expect_config_error(R"({"model_kind": "transformer"})");
}

TEST_CASE("loss field accepts null and names") {
  RunConfig cfg;
  catnet::apply_run_json(cfg, nlohmann::json::parse(R"({"train": {"loss": "spectrogram_mae"}})"));
  REQUIRE(cfg.train.loss.has_value());
  CHECK(*cfg.train.loss == catnet::LossKind::spectrogram_mae);
  catnet::apply_run_json(cfg, nlohmann::json::parse(R"({"train": {"loss": null}})"));
  CHECK_FALSE(cfg.train.loss.has_value());
}

TEST_CASE("checkpoint metadata round trips") {
  catnet::CheckpointDescription d;
  d.config = RunConfig::desk();
  d.config.kind = catnet::ModelKind::wavunet;
  d.target_source = "drums";
  d.loss = catnet::LossKind::waveform_mae;
  d.precision = "float64";
  const auto meta = catnet::checkpoint_meta_json(d, 1234);
  CHECK(meta["parameter_count"] == 1234);

  const auto back = catnet::parse_checkpoint_meta(meta);
  CHECK(back.target_source == "drums");
  CHECK(back.loss == catnet::LossKind::waveform_mae);
  CHECK(back.precision == "float64");
  CHECK(catnet::run_config_to_json(back.config) == catnet::run_config_to_json(d.config));

  try {
    (void)catnet::parse_checkpoint_meta(nlohmann::json{{"hello", "world"}});
    FAIL("expected a checkpoint error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::checkpoint_integrity);
  }
}

TEST_CASE("shipped preset files match the built-in presets") {
  const fs::path root = CATNET_SOURCE_DIR;
  const auto desk = catnet::load_json_file((root / "configs" / "desk.json").string());
  CHECK(desk == catnet::run_config_to_json(RunConfig::desk()));
  const auto full = catnet::load_json_file((root / "configs" / "full_scale.json").string());
  CHECK(full == catnet::run_config_to_json(RunConfig::full_scale()));
}

TEST_CASE("synth is deterministic per seed from the command line") {
  const auto dir = fresh_dir("synth");
  auto r1 = run_cli(dir, "synth --out a --tracks 2 --seconds 1 --seed 5 --rate 2000");
  REQUIRE(r1.code == 0);
  auto r2 = run_cli(dir, "synth --out b --tracks 2 --seconds 1 --seed 5 --rate 2000");
  REQUIRE(r2.code == 0);
  auto r3 = run_cli(dir, "synth --out c --tracks 2 --seconds 1 --seed 6 --rate 2000");
  REQUIRE(r3.code == 0);

  for (const char* name : {"mixture.wav", "vocals.wav", "drums.wav", "bass.wav", "other.wav"}) {
    CHECK(same_bytes(dir / "a" / "track000" / name, dir / "b" / "track000" / name));
  }
  CHECK_FALSE(same_bytes(dir / "a" / "track000" / "mixture.wav",
                         dir / "c" / "track000" / "mixture.wav"));
}

TEST_CASE("synth, train, separate and evaluate compose into a working pipeline") {
  const auto dir = fresh_dir("pipeline");
  write_tiny_config(dir / "tiny.json");
  REQUIRE(run_cli(dir, "synth --out data --tracks 2 --seconds 2 --seed 3 --rate 2000").code == 0);

  auto train = run_cli(dir,
                       "train --data data --source vocals --model catnet --config tiny.json "
                       "--out run/model.ckpt --aug");
  REQUIRE_MESSAGE(train.code == 0, train.err);
  CHECK(fs::exists(dir / "run" / "model.ckpt"));

  // Loss CSV: header plus one line per step.
  const auto log_lines = slurp(dir / "run" / "model.ckpt.loss.csv");
  CHECK(log_lines.rfind("step,loss\n", 0) == 0);
  CHECK(std::count(log_lines.begin(), log_lines.end(), '\n') == 5);

  auto sep = run_cli(dir,
                     "separate --ckpt run/model.ckpt --input data/track000/mixture.wav "
                     "--out stems");
  REQUIRE_MESSAGE(sep.code == 0, sep.err);
  const auto mix = catnet::read_wav((dir / "data" / "track000" / "mixture.wav").string());
  const auto voc = catnet::read_wav((dir / "stems" / "vocals.wav").string());
  const auto acc = catnet::read_wav((dir / "stems" / "accompaniment.wav").string());
  REQUIRE(voc.length() == mix.length());
  REQUIRE(acc.length() == mix.length());
  CHECK(voc.sample_rate == mix.sample_rate);

  // The stems are a partition of the input: estimate + residual == mixture up
  // to float32 quantization of the stored samples.
  double worst = 0;
  for (std::size_t i = 0; i < mix.length(); ++i) {
    worst = std::max(worst,
                     std::abs(voc.channels[0][i] + acc.channels[0][i] - mix.channels[0][i]));
  }
  CHECK(worst <= 1e-5);

  auto eval = run_cli(dir, "evaluate --ckpt run/model.ckpt --data data --report out/report.csv");
  REQUIRE_MESSAGE(eval.code == 0, eval.err);
  const auto csv = slurp(dir / "out" / "report.csv");
  CHECK(csv.rfind("track,source,frames_used,median_sdr_db\n", 0) == 0);
  const auto summary = nlohmann::json::parse(slurp(dir / "out" / "report.json"));
  CHECK(summary["metric"] == "energy_ratio_sdr");
  CHECK(summary["aggregate_median_sdr_db"].contains("vocals"));
  CHECK(summary["config"]["run"]["model"]["sample_rate"] == 2000);
}

TEST_CASE("interrupting and resuming training reproduces the straight run bitwise") {
  const auto dir = fresh_dir("resume");
  write_tiny_config(dir / "tiny.json");
  REQUIRE(run_cli(dir, "synth --out data --tracks 2 --seconds 1 --seed 1 --rate 2000").code == 0);

  const std::string base =
      "train --data data --source vocals --model catnet --config tiny.json --aug ";
  REQUIRE(run_cli(dir, base + "--out full.ckpt --steps 4").code == 0);
  REQUIRE(run_cli(dir, base + "--out part.ckpt --steps 2").code == 0);
  REQUIRE(run_cli(dir, base + "--out resumed.ckpt --steps 4 --resume part.ckpt").code == 0);

  CHECK(same_bytes(dir / "full.ckpt", dir / "resumed.ckpt"));
  CHECK_FALSE(same_bytes(dir / "full.ckpt", dir / "part.ckpt"));
}

TEST_CASE("cli reports usage, data and config problems with distinct exit codes") {
  const auto dir = fresh_dir("errors");
  CHECK(run_cli(dir, "").code == 1);
  CHECK(run_cli(dir, "synth --out x --bogus-flag").code == 1);
  CHECK(run_cli(dir, "train --data nowhere --out c.ckpt").code == 2);
  CHECK(run_cli(dir, "separate --ckpt nothing.ckpt --input nothing.wav --out o").code == 2);

  std::ofstream(dir / "bad.json") << "{\"oops\": true}";
  write_tiny_config(dir / "tiny.json");
  REQUIRE(run_cli(dir, "synth --out data --tracks 1 --seconds 1 --seed 0 --rate 2000").code == 0);
  CHECK(run_cli(dir, "train --data data --out c.ckpt --config bad.json").code == 1);
  CHECK(run_cli(dir, "train --data data --out c.ckpt --config tiny.json --source flute").code ==
        1);

  // A WAV file is not a checkpoint: bad magic is a data problem.
  CHECK(run_cli(dir, "evaluate --ckpt data/track000/mixture.wav --data data --report r.csv")
            .code == 2);
}
