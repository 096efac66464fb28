// Acceptance gate: runs every shipping criterion and prints one PASS/FAIL
// line per criterion. Exits nonzero if any criterion fails. Heavier than the
// unit suites; the end-to-end criterion trains three desk-scale models.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "catnet/config_io.hpp"
#include "catnet/metrics.hpp"
#include "catnet/train.hpp"
#include "catnet/wav.hpp"
#include "oracles.hpp"

using namespace catnet;

namespace {

namespace fs = std::filesystem;

// Budget for the end-to-end criterion: steps per model at desk scale.
constexpr std::size_t kE2eSteps = 300;

std::ostringstream fail_msg;

bool check(bool ok, const std::string& detail) {
  if (!ok) fail_msg << (fail_msg.str().empty() ? "" : "; ") << detail;
  return ok;
}

template <class T>
std::string str(const T& v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

std::vector<double> random_signal(std::size_t len, Rng& rng) {
  std::vector<double> x(len);
  for (auto& v : x) v = rng.uniform(-1.0, 1.0);
  return x;
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.stft.window_size = 16;
  c.stft.hop = 8;
  c.sample_rate = 1000;
  c.unet_depth = 1;
  c.unet_channels = {2};
  c.wavunet_depth = 1;
  c.wavunet_channels = {2};
  c.wavunet_pool = 2;
  return c;
}

// Reference spectrogram: center padding and windowing with plain loops, then
// the O(N^2) DFT oracle frame by frame. Independent of the conv-based path.
void reference_stft(const std::vector<double>& x, const StftConfig& cfg,
                    std::vector<std::vector<double>>& re, std::vector<std::vector<double>>& im) {
  const std::size_t n = cfg.window_size;
  std::vector<double> padded(x.size() + n, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) padded[n / 2 + i] = x[i];
  while ((padded.size() - n) % cfg.hop != 0) padded.push_back(0.0);
  const std::size_t frames = (padded.size() - n) / cfg.hop + 1;
  std::vector<double> window(n, 1.0);
  if (cfg.window == WindowKind::hann) {
    for (std::size_t i = 0; i < n; ++i) {
      window[i] =
          0.5 - 0.5 * std::cos(2.0 * 3.14159265358979323846 * double(i) / double(n));
    }
  }
  re.assign(frames, {});
  im.assign(frames, {});
  std::vector<double> frame(n);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t i = 0; i < n; ++i) frame[i] = window[i] * padded[t * cfg.hop + i];
    oracle::dft_real(frame, re[t], im[t]);
  }
}

// ---- subprocess plumbing for the command-line criteria ---------------------

int run_cli(const fs::path& workdir, const std::string& args) {
  const std::string cmd = "cd '" + workdir.string() + "' && '" + CATNET_CLI_PATH + "' " + args +
                          " > cli_stdout.txt 2> cli_stderr.txt";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string cli_stderr(const fs::path& workdir) {
  std::ifstream in(workdir / "cli_stderr.txt");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / "catnet_acceptance" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

bool same_bytes(const fs::path& a, const fs::path& b) {
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  std::string ca((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
  std::string cb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
  return !ca.empty() && ca == cb;
}

// ---- criteria ---------------------------------------------------------------

// 1: scope statement.
bool criterion_scope() {
  std::cout << "        full-scale benchmark reproduction (MUSDB18 training, published SDR\n"
               "        tables) is out of scope at desk scale; the property checks below\n"
               "        substitute for it\n";
  return true;
}

// 2: stft equals a naive O(N^2) per-frame DFT.
bool criterion_stft_oracle() {
  Rng rng(2001);
  bool ok = true;
  for (std::size_t n : {std::size_t{8}, std::size_t{64}, std::size_t{256}}) {
    StftConfig cfg;
    cfg.window_size = n;
    cfg.hop = n / 4;
    cfg.window = WindowKind::hann;
    const std::size_t length = 3 * n + 17;
    const auto sig = random_signal(length, rng);
    std::vector<std::vector<double>> re, im;
    reference_stft(sig, cfg, re, im);

    Graph<double> g;
    g.set_recording(false);
    StftLayer<double> layer(cfg);
    const auto spec = layer.stft(g, Tensor<double>::from_values({1, length}, sig));
    if (!check(spec.frame_count == re.size(), "frame count mismatch at N=" + str(n))) {
      return false;
    }
    double worst = 0.0;
    for (std::size_t t = 0; t < spec.frame_count; ++t) {
      for (std::size_t k = 0; k < n; ++k) {
        worst = std::max(worst, std::abs(spec.real.values()[t * n + k] - re[t][k]));
        worst = std::max(worst, std::abs(spec.imag.values()[t * n + k] - im[t][k]));
      }
    }
    std::cout << "        N=" << n << " max abs err vs DFT oracle " << worst << "\n";
    ok = check(worst < 1e-9, "N=" + str(n) + " err " + str(worst) + " >= 1e-9") && ok;
  }
  return ok;
}

// 3: istft(stft(x)) on interior samples.
bool criterion_reconstruction() {
  Rng rng(2002);
  bool ok = true;
  struct Case {
    std::size_t n, hop, length;
  };
  for (auto c : {Case{256, 64, 2000}, Case{2048, 441, 22050}}) {
    StftConfig cfg;
    cfg.window_size = c.n;
    cfg.hop = c.hop;
    cfg.window = WindowKind::hann;
    const auto sig = random_signal(c.length, rng);
    Graph<double> g;
    g.set_recording(false);
    StftLayer<double> layer(cfg);
    const auto spec = layer.stft(g, Tensor<double>::from_values({1, c.length}, sig));
    const auto back = layer.istft(g, spec, c.length);
    double num = 0.0, den = 0.0;
    for (std::size_t i = c.n; i + c.n < c.length; ++i) {
      const double d = back.values()[i] - sig[i];
      num += d * d;
      den += sig[i] * sig[i];
    }
    const double rel = std::sqrt(num / den);
    std::cout << "        N=" << c.n << " hop=" << c.hop << " interior rel L2 " << rel << "\n";
    ok = check(rel < 1e-6, "N=" + str(c.n) + " rel " + str(rel) + " >= 1e-6") && ok;
  }
  return ok;
}

// 4: finite differences over the op vocabulary and the composed models.
bool criterion_gradients() {
  Rng rng(2003);
  bool ok = true;

  // Composed chain touching the elementwise/shape/reduction vocabulary.
  {
    auto a = Tensor<double>::zeros({2, 3}, /*requires_grad=*/true);
    auto b = Tensor<double>::zeros({3, 2}, /*requires_grad=*/true);
    oracle::fill_uniform(a, rng, 0.2, 1.0);  // positive: keeps sqrt/relu smooth
    oracle::fill_uniform(b, rng, 0.2, 1.0);
    auto target = Tensor<double>::zeros({1, 8});
    oracle::fill_uniform(target, rng);
    auto loss_fn = [&](Graph<double>& g) {
      auto m = matmul(g, a, b);                 // [2,2]
      auto t = transpose_last2(g, m);           // [2,2]
      auto u = concat(g, m, t, 1);              // [2,4]
      auto v = pad_last(g, u, 1, 1);            // [2,6]
      auto w = crop_last(g, v, 1, 4);           // [2,4]
      auto r = reshape(g, w, {1, 8});
      auto e = mul(g, sigmoid(g, r), add_scalar(g, relu(g, r), 0.3));
      auto q = div(g, e, sqrt_elem(g, add_scalar(g, mul(g, r, r), 1.0)));
      auto s = sub(g, q, mul_scalar(g, r, 0.25));
      auto blended = add(g, mul_scalar(g, sum(g, s), 0.125), mean(g, s));
      return add(g, mul_scalar(g, blended, 0.5), mae_loss(g, s, target));
    };
    const double err = oracle::max_grad_rel_error(loss_fn, {a, b});
    std::cout << "        op chain max FD rel err " << err << "\n";
    ok = check(err < 1e-4, "op chain err " + str(err)) && ok;
  }

  // Composed mask pipeline and both branches: every parameter and the input.
  {
    SeparationModel<double> model(ModelKind::catnet, tiny_config(), 19);
    auto x = Tensor<double>::zeros({1, 32}, /*requires_grad=*/true);
    oracle::fill_uniform(x, rng);
    auto target = Tensor<double>::zeros({1, 32});
    oracle::fill_uniform(target, rng);
    std::vector<std::vector<double>> saved;
    for (const auto& bf : model.buffers()) saved.push_back(*bf.values);
    auto loss_fn = [&](Graph<double>& g) {
      for (std::size_t i = 0; i < saved.size(); ++i) *model.buffers()[i].values = saved[i];
      ForwardOptions opts;
      opts.training = true;
      return mae_loss(g, model.forward(g, x, opts), target);
    };
    std::vector<Tensor<double>> leaves{x};
    for (const auto& p : model.parameters()) leaves.push_back(p.tensor);
    const double err = oracle::max_grad_rel_error(loss_fn, leaves);
    std::cout << "        composed separation pipeline (" << leaves.size()
              << " leaves) max FD rel err " << err << "\n";
    ok = check(err < 1e-4, "pipeline err " + str(err)) && ok;
  }
  return ok;
}

// 5: Adam against an independent scalar implementation.
bool criterion_adam_oracle() {
  auto theta = Tensor<double>::from_values({1}, {1.0}, /*requires_grad=*/true);
  AdamConfig cfg;
  AdamOptimizer<double> opt({{"theta", theta}}, cfg);
  double ref = 1.0;
  oracle::AdamScalar st;
  double worst = 0.0;
  for (int step = 1; step <= 10; ++step) {
    Graph<double> g;
    auto loss = sum(g, mul(g, theta, theta));
    g.backward(loss);
    opt.step();
    opt.zero_grad();
    ref = oracle::adam_scalar_step(ref, 2.0 * ref, st, step, cfg.lr, cfg.beta1, cfg.beta2,
                                   cfg.eps);
    worst = std::max(worst, std::abs(theta.values()[0] - ref));
  }
  std::cout << "        10-step trajectory max deviation " << worst << "\n";
  return check(worst < 1e-12, "deviation " + str(worst) + " >= 1e-12");
}

// 6: the combined model equals the sum of its branches.
bool criterion_branch_additivity() {
  Rng rng(2006);
  SeparationModel<double> model(ModelKind::catnet, tiny_config(), 7);
  double worst = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    auto x = Tensor<double>::zeros({2, 48});
    oracle::fill_uniform(x, rng);
    Graph<double> g;
    g.set_recording(false);
    const auto combined = model.forward(g, x);
    const auto u = model.unet_forward(g, x).waveform;
    const auto w = model.wavunet_forward(g, x);
    for (std::size_t i = 0; i < combined.size(); ++i) {
      worst = std::max(worst,
                       std::abs(combined.values()[i] - (u.values()[i] + w.values()[i])));
    }
  }
  std::cout << "        max |combined - (spec branch + wave branch)| " << worst << "\n";
  return check(worst <= 1e-10, "additivity gap " + str(worst) + " > 1e-10");
}

// 7: augmentation algebra, checked bitwise against a replayed draw stream.
bool criterion_augmentation() {
  SynthSpec spec;
  spec.track_count = 3;
  spec.seconds = 2.0;
  spec.sample_rate = 2000;
  spec.seed = 11;
  const auto ds = generate_synthetic_dataset(spec);
  const auto& sources = default_sources();
  bool ok = true;

  {
    AugmentConfig aug;
    aug.mix_count = 2;
    aug.segment_seconds = 1.0;
    Rng rng(31415);
    Rng replay = rng;
    const auto pair = make_training_pair(ds, "vocals", sources, aug, rng);

    std::vector<AudioSegment> mixes;
    for (const auto& source : sources) {
      std::vector<AudioSegment> segs;
      for (std::size_t j = 0; j < aug.mix_count; ++j) {
        const std::size_t t = replay.uniform_index(ds.size());
        const std::size_t off = replay.uniform_index(ds[t].stems.at(source).length());
        segs.push_back(extract_segment(ds[t].stems.at(source), off, 2000));
      }
      mixes.push_back(mix_audio_augment(segs));
    }
    AudioSegment x = mixes[0];
    for (std::size_t i = 1; i < mixes.size(); ++i) x = add_segments(x, mixes[i]);

    bool exact = rng.serialize() == replay.serialize();
    for (std::size_t i = 0; i < x.length() && exact; ++i) {
      exact = pair.x_mix.channels[0][i] == x.channels[0][i] &&
              pair.s_target.channels[0][i] == mixes[0].channels[0][i];
    }
    std::cout << "        J=2: input equals the per-source mix sum bitwise: "
              << (exact ? "yes" : "NO") << "\n";
    ok = check(exact, "J=2 replay mismatch") && ok;
  }

  {
    AugmentConfig aug;
    aug.enable = false;
    aug.segment_seconds = 1.0;
    Rng rng(271828);
    Rng replay = rng;
    const auto pair = make_training_pair(ds, "drums", sources, aug, rng);
    const std::size_t t = replay.uniform_index(ds.size());
    const std::size_t off = replay.uniform_index(ds[t].mixture.length());
    bool exact = rng.serialize() == replay.serialize();
    const auto want_s = extract_segment(ds[t].stems.at("drums"), off, 2000);
    AudioSegment stem_sum = extract_segment(ds[t].stems.at(sources[0]), off, 2000);
    for (std::size_t i = 1; i < sources.size(); ++i) {
      stem_sum = add_segments(stem_sum, extract_segment(ds[t].stems.at(sources[i]), off, 2000));
    }
    // The pipeline defines x_mix as the stem sum over the shared window; the
    // dataset's mixture field is the same sum in a different association
    // order, so it agrees only up to rounding.
    const auto mix_window = extract_segment(ds[t].mixture, off, 2000);
    double mix_dev = 0.0;
    for (std::size_t i = 0; i < stem_sum.length() && exact; ++i) {
      exact = pair.x_mix.channels[0][i] == stem_sum.channels[0][i] &&
              pair.s_target.channels[0][i] == want_s.channels[0][i];
      mix_dev = std::max(mix_dev,
                         std::abs(stem_sum.channels[0][i] - mix_window.channels[0][i]));
    }
    std::cout << "        disabled: reduces to one coherent stem-sum window bitwise: "
              << (exact ? "yes" : "NO") << "\n"
              << "        disabled: mixture window deviates from the stem sum by " << str(mix_dev)
              << " (rounding only)\n";
    ok = check(exact, "disabled-augmentation reduction mismatch") && ok;
    ok = check(mix_dev <= 1e-12, "mixture window deviates beyond rounding") && ok;
  }
  return ok;
}

// 8: one pair, 200 steps, >= 90% loss reduction.
bool criterion_overfit() {
  SynthSpec spec;
  spec.track_count = 2;
  spec.seconds = 4.0;
  spec.sample_rate = 8000;
  spec.seed = 5;
  const auto ds = generate_synthetic_dataset(spec);

  RunConfig cfg = RunConfig::desk();
  cfg.train.batch_size = 1;
  cfg.train.steps = 200;
  Rng rng(99);
  const auto batch = assemble_batch<float>(ds, "vocals", cfg.model.sources, cfg.augment,
                                           cfg.train.batch_size, rng);
  SeparationModel<float> model(ModelKind::catnet, cfg.model, cfg.train.seed);
  Trainer<float> trainer(std::move(model), cfg.train);

  double first = 0.0, last = 0.0;
  for (std::size_t s = 0; s < 200; ++s) {
    last = trainer.step(batch);
    if (s == 0) first = last;
  }
  std::cout << "        loss " << first << " -> " << last << " ("
            << 100.0 * (1.0 - last / first) << "% reduction)\n";
  return check(last <= 0.1 * first,
               "reduction " + str(100.0 * (1.0 - last / first)) + "% < 90%");
}

// 9: desk-scale pipeline through the command-line tool.
bool criterion_end_to_end() {
  const auto dir = fresh_dir("e2e");
  auto cli = [&](const std::string& args) {
    const int code = run_cli(dir, args);
    if (code != 0) {
      check(false, "command failed (" + str(code) + "): " + args + ": " + cli_stderr(dir));
    }
    return code == 0;
  };

  if (!cli("synth --out data --tracks 8 --seconds 10 --seed 0 --rate 8000")) return false;

  const std::string budget = " --aug --steps " + str(kE2eSteps) + " --seed 0";
  if (!cli("train --data data --source vocals --model catnet --out cat.ckpt" + budget)) {
    return false;
  }
  if (!cli("train --data data --source vocals --model unet --out unet.ckpt" + budget)) {
    return false;
  }
  if (!cli("train --data data --source vocals --model wavunet --out wav.ckpt" + budget)) {
    return false;
  }

  auto vocals_sdr = [&](const std::string& ckpt, const std::string& report) {
    if (!cli("evaluate --ckpt " + ckpt + " --data data --report " + report + ".csv")) {
      return std::nan("");
    }
    std::ifstream in(dir / (report + ".json"));
    const auto j = nlohmann::json::parse(in);
    return j.at("aggregate_median_sdr_db").at("vocals").get<double>();
  };
  const double cat = vocals_sdr("cat.ckpt", "cat");
  const double unet = vocals_sdr("unet.ckpt", "unet");
  const double wav = vocals_sdr("wav.ckpt", "wav");
  if (std::isnan(cat) || std::isnan(unet) || std::isnan(wav)) return false;

  // The all-zero separator baseline, computed on the same frames.
  const auto ds = load_dataset((dir / "data").string());
  std::vector<double> zero_medians;
  for (const auto& t : ds) {
    const auto& ref = t.stems.at("vocals");
    zero_medians.push_back(
        framewise_median_sdr(ref, AudioSegment::silence(ref.channel_count(), ref.length(),
                                                        ref.sample_rate))
            .median_sdr_db);
  }
  const double baseline = median_of(zero_medians);

  std::cout << "        " << kE2eSteps << " steps each: combined " << cat << " dB, spec branch "
            << unet << " dB, wave branch " << wav << " dB, zero baseline " << baseline
            << " dB\n";
  bool ok = check(std::abs(baseline) <= 1e-9, "zero baseline " + str(baseline) + " != 0");
  ok = check(cat >= baseline + 5.0,
             "combined " + str(cat) + " dB < baseline+5 dB") && ok;
  ok = check(cat >= unet - 1e-9, "combined " + str(cat) + " < spec branch " + str(unet)) && ok;
  ok = check(cat >= wav - 1e-9, "combined " + str(cat) + " < wave branch " + str(wav)) && ok;
  return ok;
}

// 10: analytic SDR values and frame-permutation invariance.
bool criterion_sdr_analytic() {
  const std::size_t rate = 1000;
  AudioSegment s = AudioSegment::silence(1, 3 * rate, rate);
  for (std::size_t i = 0; i < s.length(); ++i) {
    s.channels[0][i] = 0.5 * std::sin(2.0 * 3.14159265358979323846 * 50.0 * double(i) / rate);
  }
  AudioSegment half = s;
  for (auto& v : half.channels[0]) v *= 0.5;

  const double six = sdr(s, half);
  const double zero = sdr(s, AudioSegment::silence(1, s.length(), rate));
  // 10*log10(4) = 6.0205999..., within 1e-7 of the quoted 6.0206.
  bool ok = check(std::abs(six - 6.0206) <= 1e-6, "sdr(s, s/2) = " + str(six));
  ok = check(std::abs(six - 10.0 * std::log10(4.0)) <= 1e-9, "scale law " + str(six)) && ok;
  ok = check(std::abs(zero) <= 1e-9, "sdr(s, 0) = " + str(zero)) && ok;

  // Three frames with distinct quality; permuting them keeps the median.
  AudioSegment est = s;
  for (std::size_t i = 0; i < rate; ++i) est.channels[0][i] = 0.0;
  for (std::size_t i = rate; i < 2 * rate; ++i) est.channels[0][i] *= 0.5;
  const auto report = framewise_median_sdr(s, est);

  AudioSegment s2 = s, est2 = est;
  for (std::size_t i = 0; i < rate; ++i) {
    // rotate frames by one second
    s2.channels[0][i] = s.channels[0][i + 2 * rate];
    est2.channels[0][i] = est.channels[0][i + 2 * rate];
    s2.channels[0][i + rate] = s.channels[0][i];
    est2.channels[0][i + rate] = est.channels[0][i];
    s2.channels[0][i + 2 * rate] = s.channels[0][i + rate];
    est2.channels[0][i + 2 * rate] = est.channels[0][i + rate];
  }
  const auto permuted = framewise_median_sdr(s2, est2);
  std::cout << "        sdr(s, s/2) = " << six << " dB; sdr(s, 0) = " << zero
            << " dB; median " << report.median_sdr_db << " dB invariant: "
            << (permuted.median_sdr_db == report.median_sdr_db ? "yes" : "NO") << "\n";
  ok = check(permuted.median_sdr_db == report.median_sdr_db, "permutation moved the median") &&
       ok;
  return ok;
}

// 11: interrupted + resumed training is bitwise identical, via the real tool.
bool criterion_resume() {
  const auto dir = fresh_dir("resume");
  {
    std::ofstream cfg(dir / "tiny.json");
    cfg << R"({
      "model": {
        "stft": { "window_size": 64, "hop": 16 },
        "sample_rate": 2000,
        "unet_depth": 2, "unet_channels": [4, 8],
        "wavunet_depth": 2, "wavunet_channels": [4, 8], "wavunet_pool": 4
      },
      "train": { "batch_size": 2, "steps": 6, "checkpoint_interval": 3 },
      "augment": { "segment_seconds": 0.5 },
      "window": { "segment_seconds": 0.5, "overlap_seconds": 0.1 }
    })";
  }
  auto cli = [&](const std::string& args) {
    const int code = run_cli(dir, args);
    if (code != 0) check(false, "command failed: " + args + ": " + cli_stderr(dir));
    return code == 0;
  };
  if (!cli("synth --out data --tracks 2 --seconds 2 --seed 4 --rate 2000")) return false;
  const std::string base =
      "train --data data --source vocals --model catnet --config tiny.json --aug ";
  if (!cli(base + "--out full.ckpt --steps 6")) return false;
  if (!cli(base + "--out part.ckpt --steps 3")) return false;
  if (!cli(base + "--out resumed.ckpt --steps 6 --resume part.ckpt")) return false;

  const bool equal = same_bytes(dir / "full.ckpt", dir / "resumed.ckpt");
  const bool differs = !same_bytes(dir / "full.ckpt", dir / "part.ckpt");
  std::cout << "        straight 6-step vs 3+3 resumed checkpoint: "
            << (equal ? "bitwise equal" : "DIFFER") << "\n";
  return check(equal, "resumed checkpoint differs") &&
         check(differs, "partial checkpoint unexpectedly equals the full one");
}

// 12: WAV codec round trips and the hand-assembled reference file.
bool criterion_wav() {
  const auto dir = fresh_dir("wav");
  Rng rng(2012);
  AudioSegment seg = AudioSegment::silence(2, 777, 8000);
  for (auto& ch : seg.channels) {
    for (auto& v : ch) v = rng.uniform(-1.0, 1.0);
  }
  bool ok = true;

  {
    const auto p = (dir / "f32.wav").string();
    write_wav(p, seg, WavEncoding::float32);
    const auto back = read_wav(p);
    bool bitwise = back.sample_rate == seg.sample_rate && back.length() == seg.length();
    for (std::size_t c = 0; c < 2 && bitwise; ++c) {
      for (std::size_t i = 0; i < seg.length() && bitwise; ++i) {
        bitwise = back.channels[c][i] == double(float(seg.channels[c][i]));
      }
    }
    std::cout << "        float32 round trip bitwise: " << (bitwise ? "yes" : "NO") << "\n";
    ok = check(bitwise, "float32 round trip not bitwise") && ok;
  }

  {
    const auto p = (dir / "p16.wav").string();
    write_wav(p, seg, WavEncoding::pcm16);
    const auto back = read_wav(p);
    double worst = 0.0;
    for (std::size_t c = 0; c < 2; ++c) {
      for (std::size_t i = 0; i < seg.length(); ++i) {
        worst = std::max(worst, std::abs(back.channels[c][i] - seg.channels[c][i]));
      }
    }
    std::cout << "        pcm16 round trip max err " << worst << " (1 LSB = "
              << 1.0 / 32768 << ")\n";
    ok = check(worst <= 1.0 / 32768, "pcm16 err " + str(worst) + " > 1 LSB") && ok;
  }

  {
    // 44-byte canonical header, mono pcm16, six known samples.
    std::string bytes;
    auto push16 = [&](std::uint16_t v) {
      bytes.push_back(char(v & 0xff));
      bytes.push_back(char((v >> 8) & 0xff));
    };
    auto push32 = [&](std::uint32_t v) {
      for (int k = 0; k < 4; ++k) bytes.push_back(char((v >> (8 * k)) & 0xff));
    };
    bytes += "RIFF";
    push32(36 + 12);
    bytes += "WAVEfmt ";
    push32(16);
    push16(1);      // pcm
    push16(1);      // mono
    push32(44100);  // rate
    push32(44100 * 2);
    push16(2);
    push16(16);
    bytes += "data";
    push32(12);
    for (int v : {0, 8192, -8192, 32767, -32768, 16384}) push16(std::uint16_t(v & 0xffff));

    const auto p = dir / "fixture.wav";
    std::ofstream(p, std::ios::binary).write(bytes.data(), std::streamsize(bytes.size()));
    const auto back = read_wav(p.string());
    const std::vector<double> want{0.0, 0.25, -0.25, 32767.0 / 32768, -1.0, 0.5};
    bool exact = back.sample_rate == 44100 && back.channel_count() == 1 &&
                 back.length() == want.size();
    for (std::size_t i = 0; i < want.size() && exact; ++i) {
      exact = back.channels[0][i] == want[i];
    }
    std::cout << "        reference fixture decodes to the expected samples: "
              << (exact ? "yes" : "NO") << "\n";
    ok = check(exact, "fixture decode mismatch") && ok;
  }
  return ok;
}

struct Criterion {
  const char* title;
  std::function<bool()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {"scope: benchmark-table reproduction substituted by property checks", criterion_scope},
      {"stft matches the naive O(N^2) DFT oracle (N=8,64,256; <1e-9)", criterion_stft_oracle},
      {"istft(stft(x)) interior rel L2 < 1e-6 (256/64 and 2048/441)", criterion_reconstruction},
      {"finite-difference gradient suite < 1e-4 (ops + composed model)", criterion_gradients},
      {"Adam matches the independent scalar oracle to 1e-12", criterion_adam_oracle},
      {"combined model equals spec branch + wave branch to 1e-10", criterion_branch_additivity},
      {"augmentation algebra: exact sums, exact degenerate reduction", criterion_augmentation},
      {"desk overfit: one pair, 200 steps, >=90% loss reduction", criterion_overfit},
      {"desk end-to-end: vocals SDR >= baseline+5 dB, combined >= branches",
       criterion_end_to_end},
      {"SDR analytic values and frame-permutation invariance", criterion_sdr_analytic},
      {"interrupted+resumed training is bitwise identical", criterion_resume},
      {"WAV codec round trips and reference fixture", criterion_wav},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    fail_msg.str("");
    const auto start = std::chrono::steady_clock::now();
    bool ok = false;
    std::string why;
    try {
      ok = criteria[i].run();
      why = fail_msg.str();
    } catch (const std::exception& e) {
      why = std::string("exception: ") + e.what();
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("[%2zu/12] %s  %s (%.1fs)\n", i + 1, ok ? "PASS" : "FAIL", criteria[i].title,
                secs);
    if (!ok) {
      std::printf("        reason: %s\n", why.empty() ? "unspecified" : why.c_str());
      ++failures;
    }
  }
  if (failures > 0) {
    std::printf("%d of 12 criteria FAILED\n", failures);
    return 1;
  }
  std::printf("all 12 criteria passed\n");
  return 0;
}
