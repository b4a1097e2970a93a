// Acceptance run: one PASS/FAIL line per criterion. Trained smoke models are
// cached under --work-dir and reused when their configuration is unchanged.

#include <bit>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "rgbmark/core/log.hpp"
#include "rgbmark/embedder/embedder.hpp"
#include "rgbmark/eval/eval.hpp"
#include "rgbmark/losses/losses.hpp"
#include "rgbmark/training/trainer.hpp"
#include "support.hpp"

using namespace rgbmark;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 2) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

// ------------------------------------------------------------------ smoke setup

ArchConfig smoke_arch() {
  ArchConfig a;
  a.height = a.width = 64;
  a.message_length = 32;
  a.base_channels = 16;
  a.encoder_scales = 3;
  a.decoder_dim = 32;
  a.decoder_blocks = 4;
  a.attention_heads = 4;
  a.window_size = 8;
  a.discriminator_channels = 16;
  return a;
}

TrainConfig smoke_train() {
  TrainConfig c;
  c.learning_rate = 1e-3;
  c.batch_size = 16;
  c.epochs_stage1 = 30;
  c.epochs_stage2 = 20;
  c.validate_every = 5;
  c.checkpoint_every = 5;
  c.seed = 1;
  c.noise_kinds = {DistortionKind::kIdentity, DistortionKind::kGaussianNoise, DistortionKind::kDropout,
                   DistortionKind::kCrop};
  return c;
}

// Photos whose patches are only used for evaluation.
const std::set<std::string> kHeldOut = {"chelsea.png", "coffee.png", "rocket.jpg"};

std::vector<fs::path> sources(bool held_out) {
  std::vector<fs::path> out;
  for (const auto& p : testing::photo_sources()) {
    if (kHeldOut.contains(p.filename().string()) == held_out) out.push_back(p);
  }
  return out;
}

ImageSet corpus(const fs::path& work, const std::string& name, bool held_out, std::int64_t count,
                std::uint64_t seed) {
  const fs::path dir = work / "data" / name;
  if (!fs::exists(dir) || Corpus::scan(dir).size() != static_cast<std::size_t>(count)) {
    fs::remove_all(dir);
    build_patch_corpus(sources(held_out), dir, count, {64, 64}, seed);
  }
  return load_corpus(Corpus::scan(dir), {64, 64});
}

struct SmokeData {
  TrainData train;
  ImageSet test;
};

SmokeData smoke_data(const fs::path& work) {
  SmokeData d;
  d.train.stage1 = corpus(work, "stage1", false, 2000, 101);
  d.train.stage2 = corpus(work, "stage2", false, 2000, 202);
  d.train.validation = corpus(work, "validation", false, 200, 303);
  d.test = corpus(work, "test", true, 200, 404);
  return d;
}

// Test points of the training kinds plus Identity.
std::vector<DistortionSpec> smoke_suite() {
  std::vector<DistortionSpec> s = {DistortionSpec{}};
  for (const auto& d : test_suite()) {
    if (d.kind == DistortionKind::kGaussianNoise || d.kind == DistortionKind::kDropout ||
        d.kind == DistortionKind::kCrop) {
      s.push_back(d);
    }
  }
  return s;
}

// Runs (or reuses) a training run. With `split`, stage 1 and stage 2 are
// timed separately by stopping after stage 1 and resuming.
struct RunRecord {
  fs::path dir;
  double seconds_stage1 = 0;
  double seconds_stage2 = 0;
};

RunRecord train_cached(const fs::path& dir, const ArchConfig& arch, const TrainConfig& cfg, const TrainData& data,
                       bool split) {
  const json key = {{"arch", arch}, {"train", cfg}, {"split", split}};
  const fs::path record = dir / "record.json";
  if (fs::exists(record)) {
    std::ifstream in(record);
    auto j = json::parse(in);
    if (j.at("key") == key) {
      std::cerr << "reusing " << dir << "\n";
      return {dir, j.at("seconds_stage1"), j.at("seconds_stage2")};
    }
  }
  fs::remove_all(dir);
  fs::create_directories(dir);
  RunRecord r{dir, 0, 0};
  auto t0 = Clock::now();
  if (split) {
    run_training(arch, cfg, data, std::nullopt, {dir, {}, cfg.epochs_stage1});
    r.seconds_stage1 = seconds_since(t0);
    t0 = Clock::now();
    run_training(arch, cfg, data, load_checkpoint(dir / "last.ckpt"), {dir, {}, -1});
    r.seconds_stage2 = seconds_since(t0);
  } else {
    run_training(arch, cfg, data, std::nullopt, {dir, {}, -1});
    r.seconds_stage2 = seconds_since(t0);
  }
  std::ofstream(record) << json{{"key", key}, {"seconds_stage1", r.seconds_stage1}, {"seconds_stage2", r.seconds_stage2}}
                               .dump(2);
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// ------------------------------------------------------------------ 1-3, 7

Outcome metric_oracles() {
  auto t0 = Clock::now();
  std::int64_t mismatches = 0;
  auto msg = [](unsigned v) {
    std::vector<std::uint8_t> bits(8);
    for (int i = 0; i < 8; ++i) bits[i] = (v >> (7 - i)) & 1u;
    return Message(bits);
  };
  for (unsigned a = 0; a < 256; ++a) {
    for (unsigned b = 0; b < 256; ++b) {
      if (bit_accuracy(msg(a), msg(b)) != (1.0 - std::popcount(a ^ b) / 8.0) * 100.0) ++mismatches;
    }
  }
  double worst_psnr = 0, worst_apd = 0;
  auto base = testing::uniform({3, 16, 16}, 1, 0.1, 0.4, torch::kFloat64);
  for (double d : {1.0 / 255, 0.05, 0.3}) {
    worst_psnr = std::max(worst_psnr, std::abs(psnr(base, base + d) - 10 * std::log10(1 / (d * d))));
    worst_apd = std::max(worst_apd, std::abs(apd(base, base + d) - 255 * d));
  }
  auto x = testing::uniform({4, 3, 32, 32}, 2);
  const double ssim_err = std::abs(ssim(x, x).item<double>() - 1.0);
  const double secs = seconds_since(t0);
  const bool pass = mismatches == 0 && worst_psnr < 1e-6 && worst_apd < 1e-6 && ssim_err < 1e-6 && secs < 60;
  return {pass, "bit_accuracy mismatches " + std::to_string(mismatches) + "/65536, psnr err " + fmt(worst_psnr, 9) +
                    ", apd err " + fmt(worst_apd, 9) + ", |ssim(x,x)-1| " + fmt(ssim_err, 9) + ", " + fmt(secs, 1) +
                    " s"};
}

std::map<DistortionKind, std::map<std::string, double>> gradient_points() {
  return {{DistortionKind::kIdentity, {}},
          {DistortionKind::kJpeg, {{"q", 70}}},
          {DistortionKind::kGaussianNoise, {{"sigma", 5}}},
          {DistortionKind::kGaussianFilter, {{"sigma", 5}}},
          {DistortionKind::kDropout, {{"p", 0.8}}},
          {DistortionKind::kMedianFilter, {{"sigma", 3}}},
          {DistortionKind::kColor, {{"p0", 0.2}, {"p1", -0.1}, {"p2", 0.3}}},
          {DistortionKind::kBright, {{"p", 0.2}}},
          {DistortionKind::kSaturation, {{"p", 0.5}}},
          {DistortionKind::kHue, {{"p", 0.3}}},
          {DistortionKind::kContrast, {{"p", 0.4}}},
          {DistortionKind::kResize, {{"p", -0.3}}},
          {DistortionKind::kCrop, {{"p", 0.8}}},
          {DistortionKind::kPip, {{"p", 0.5}}},
          {DistortionKind::kPadding, {{"p", 5}}},
          {DistortionKind::kOcclusion, {{"p", 0.1}}},
          {DistortionKind::kRotate, {{"r", 37}}},
          {DistortionKind::kShear, {{"s", 12}}},
          {DistortionKind::kAffine, {{"r", 75}, {"s", 9}}}};
}

Outcome gradient_suite() {
  auto t0 = Clock::now();
  const auto d = torch::kFloat64;
  auto cover = testing::uniform({2, 3, 12, 12}, 11, 0.2, 0.8, d);
  auto x0 = testing::uniform({2, 3, 12, 12}, 12, 0.2, 0.8, d);
  auto bits = (testing::uniform({2, 8}, 13) > 0.5).to(d);
  auto l0 = testing::uniform({2, 8}, 14, -2, 2, d);
  auto s0 = testing::uniform({2}, 15, 0.2, 0.8, d);
  auto s1 = testing::uniform({2}, 16, 0.2, 0.8, d);
  auto primed = testing::uniform({2, 3, 12, 12}, 17, 0.2, 0.8, d);

  std::vector<std::pair<std::string, double>> losses = {
      {"ssim", testing::gradient_error([&](const torch::Tensor& x) { return ssim(cover, x); }, x0)},
      {"L_I", testing::gradient_error([&](const torch::Tensor& x) { return loss_image(cover, x, 0.005); }, x0)},
      {"L_M", testing::gradient_error([&](const torch::Tensor& l) { return loss_message(bits, l); }, l0)},
      {"L_A", testing::gradient_error([&](const torch::Tensor& f) { return loss_adversarial(s0, f).generator; }, s1)},
      {"L_D(fake)",
       testing::gradient_error([&](const torch::Tensor& f) { return loss_adversarial(s0, f).discriminator; }, s1)},
      {"L_D(real)",
       testing::gradient_error([&](const torch::Tensor& r) { return loss_adversarial(r, s1).discriminator; }, s0)},
      {"total stage 1", testing::gradient_error(
                            [&](const torch::Tensor& x) {
                              LossInputs in{cover, x, std::nullopt, std::nullopt, bits, l0 * x.mean(), s1 * x.mean()};
                              return loss_total(in, LossWeights{}, Stage::kStage1).total;
                            },
                            x0)},
      {"total stage 2", testing::gradient_error(
                            [&](const torch::Tensor& x) {
                              LossInputs in{cover, x, primed, x * 0.9 + 0.05, bits, l0 * x.mean(), s1 * x.mean()};
                              return loss_total(in, LossWeights{}, Stage::kStage2).total;
                            },
                            x0)},
  };
  double worst_loss = 0;
  std::string worst_loss_name;
  for (const auto& [name, err] : losses) {
    if (!(err <= worst_loss)) {
      worst_loss = err;
      worst_loss_name = name;
    }
  }

  auto img0 = testing::uniform({1, 3, 16, 16}, 21, 0.25, 0.65, d);
  auto img_cover = testing::uniform({1, 3, 16, 16}, 22, 0.25, 0.65, d);
  auto w = testing::uniform({1, 3, 16, 16}, 23, -1, 1, d);
  double worst_noise = 0;
  std::string worst_noise_name;
  for (const auto& [kind, params] : gradient_points()) {
    DistortionSpec spec{kind, params, NoiseMode::kTrain, false};
    const double err = testing::gradient_error(
        [&](const torch::Tensor& x) { return (apply_distortion(spec, x, img_cover, 31) * w).sum(); }, img0);
    if (!(err <= worst_noise)) {
      worst_noise = err;
      worst_noise_name = std::string(kind_name(kind));
    }
  }
  const double secs = seconds_since(t0);
  const bool pass = worst_loss < 1e-3 && worst_noise < 1e-2 && secs < 300;
  return {pass, "worst loss rel err " + fmt(worst_loss, 8) + " (" + worst_loss_name + ", < 1e-3), worst distortion " +
                    fmt(worst_noise, 6) + " (" + worst_noise_name + ", < 1e-2) over 19 kinds, " + fmt(secs, 1) + " s"};
}

Outcome noise_limits() {
  auto t0 = Clock::now();
  auto x = testing::uniform({4, 3, 32, 32}, 31);
  auto run = [&](DistortionKind k, std::map<std::string, double> p) {
    DistortionSpec s{k, std::move(p), NoiseMode::kTest, false};
    return (apply_distortion(s, x, x, 5) - x).abs().max().item<double>();
  };
  const std::vector<std::pair<std::string, double>> identities = {
      {"Rotate 360", run(DistortionKind::kRotate, {{"r", 360}})},
      {"Crop p=1", run(DistortionKind::kCrop, {{"p", 1}})},
      {"Padding p=0", run(DistortionKind::kPadding, {{"p", 0}})},
      {"Resize p=0", run(DistortionKind::kResize, {{"p", 0}})},
      {"GN sigma=0", run(DistortionKind::kGaussianNoise, {{"sigma", 0}})},
  };
  double worst = 0;
  for (const auto& [_, e] : identities) worst = std::max(worst, e);
  auto many = testing::uniform({100, 3, 16, 16}, 32);
  const double q100 = (jpeg_surrogate(many, 100).clamp(0, 1) - many).abs().max().item<double>() * 255;
  auto natural = testing::natural_batch(50, 64, 64, 33);
  const double gap =
      (jpeg_surrogate(natural, 50).clamp(0, 1) - jpeg_codec(natural, 50)).abs().mean().item<double>() * 255;
  const double secs = seconds_since(t0);
  const bool pass = worst < 1e-5 && q100 < 2 && gap < 6 && secs < 120;
  return {pass, "identity max err " + fmt(worst, 8) + " (< 1e-5), surrogate q=100 max err " + fmt(q100, 3) +
                    "/255 (< 2), surrogate-codec gap q=50 " + fmt(gap, 3) + "/255 (< 6), " + fmt(secs, 1) + " s"};
}

Outcome throughput() {
  ResidualWatermark wm;
  auto gen = make_generator(7);
  wm.epsilon = (torch::rand({3, 128, 128}, gen) * 2 - 1) * 0.05;
  wm.message = random_message(64, 7);
  auto eight = throughput_benchmark(wm, 100000, 8, 1);
  auto one = throughput_benchmark(wm, 20000, 1, 2);
  auto four = throughput_benchmark(wm, 20000, 4, 3);
  const double scaling = four.images_per_second / one.images_per_second;
  const bool pass = eight.images == 100000 && eight.images_per_second >= 5000 && scaling >= 3;
  return {pass, "100K 128x128 images with 8 workers: " + fmt(eight.images_per_second, 0) +
                    " images/s (>= 5000); 1 -> 4 workers speedup " + fmt(scaling) + "x (>= 3) on " +
                    std::to_string(std::thread::hardware_concurrency()) + " hardware thread(s)"};
}

// ------------------------------------------------------------------ 4-6, 8, 9

struct Smoke {
  SmokeData data;
  RunRecord main;
  RunRecord repeat;
  RunRecord ablation;
};

EvalReport eval_ckpt(const fs::path& ckpt, const ImageSet& set, const std::vector<DistortionSpec>& suite, Paradigm p) {
  auto model = WatermarkModel::load(ckpt);
  return evaluate_robustness(model, set, suite, p, {50, 9, false});
}

Outcome smoke_stage1(const Smoke& s) {
  const auto ckpt = s.main.dir / "stage1.ckpt";
  auto model = WatermarkModel::load(ckpt);
  std::vector<DistortionSpec> suite = {DistortionSpec{}};
  for (const auto& d : test_suite()) {
    if (d.kind == DistortionKind::kGaussianNoise) suite.push_back(d);
  }
  auto r = evaluate_robustness(model, s.data.test, suite, Paradigm::kLatent, {50, 9, false});
  r.save(s.main.dir / "eval_stage1_latent.json");
  const double ident = r.results[0].accuracy, gn = r.results[1].accuracy;
  const double hours = s.main.seconds_stage1 / 3600;
  const bool pass = ident >= 95 && gn >= 90 && r.psnr >= 30 && hours <= 4;
  return {pass, "latent accuracy Identity " + fmt(ident) + "% (>= 95), GN(10) " + fmt(gn) + "% (>= 90), PSNR " +
                    fmt(r.psnr) + " dB (>= 30), stage 1 took " + fmt(s.main.seconds_stage1 / 60, 1) +
                    " min (<= 240)"};
}

Outcome two_stage(const Smoke& s) {
  const auto suite = smoke_suite();
  auto single1 = eval_ckpt(s.main.dir / "stage1.ckpt", s.data.test, suite, Paradigm::kSingleShot);
  auto single2 = eval_ckpt(s.main.dir / "stage2.ckpt", s.data.test, suite, Paradigm::kSingleShot);
  auto latent2 = eval_ckpt(s.main.dir / "stage2.ckpt", s.data.test, suite, Paradigm::kLatent);
  single2.save(s.main.dir / "eval_stage2_single.json");
  latent2.save(s.main.dir / "eval_stage2_latent.json");
  const double gain = single2.average - single1.average;
  const double gap = std::abs(latent2.average - single2.average);
  const bool pass = gain >= 10 && gap <= 3 && s.main.seconds_stage2 <= 3600;
  return {pass, "single-shot avg " + fmt(single1.average) + "% after stage 1 -> " + fmt(single2.average) +
                    "% after stage 2 (gain " + fmt(gain) + " >= 10); latent avg " + fmt(latent2.average) + "% (gap " +
                    fmt(gap) + " <= 3); stage 2 took " + fmt(s.main.seconds_stage2 / 60, 1) + " min (<= 60)"};
}

Outcome stage2_only(const Smoke& s) {
  const auto suite = smoke_suite();
  auto both = eval_ckpt(s.main.dir / "stage2.ckpt", s.data.test, suite, Paradigm::kSingleShot);
  auto alone = eval_ckpt(s.ablation.dir / "stage2.ckpt", s.data.test, suite, Paradigm::kSingleShot);
  const double drop = both.average - alone.average;
  return {drop >= 15, "single-shot avg stage 2 only " + fmt(alone.average) + "% vs two-stage " + fmt(both.average) +
                          "% (shortfall " + fmt(drop) + " >= 15)"};
}

Outcome attack(const Smoke& s) {
  auto model = WatermarkModel::load(s.main.dir / "stage2.ckpt");
  const auto suite = test_suite();
  const EvalOptions opts{50, 9, false};
  auto clean = evaluate_robustness(model, s.data.test, suite, Paradigm::kSingleShot, opts);
  auto same = residual_attack(model, s.data.test, {DistortionSpec{}}, AttackSource::kSamePair, opts);
  auto other = residual_attack(model, s.data.test, suite, AttackSource::kOtherPair, opts);
  clean.save(s.main.dir / "eval_attack_baseline.json");
  same.save(s.main.dir / "eval_attack_same.json");
  other.save(s.main.dir / "eval_attack_other.json");
  const double cancel = same.results[0].accuracy;
  int violations = 0;
  std::string worst;
  for (std::size_t i = 0; i < suite.size(); ++i) {
    if (other.results[i].accuracy > clean.results[i].accuracy) {
      ++violations;
      worst += " " + other.results[i].label + ": " + fmt(other.results[i].accuracy) + ">" +
               fmt(clean.results[i].accuracy);
    }
  }
  const bool pass = std::abs(cancel - 50) <= 5 && violations == 0;
  return {pass, "exact cancellation " + fmt(cancel) + "% (50 +- 5); cross-image attack above unattacked on " +
                    std::to_string(violations) + "/18 distortions" + worst};
}

Outcome determinism(const Smoke& s) {
  const bool logs = slurp(s.main.dir / "metrics.jsonl") == slurp(s.repeat.dir / "metrics.jsonl") &&
                    !slurp(s.main.dir / "metrics.jsonl").empty();
  const bool ckpts = slurp(s.main.dir / "stage2.ckpt") == slurp(s.repeat.dir / "stage2.ckpt");
  auto model = WatermarkModel::load(s.main.dir / "stage2.ckpt");
  int reports = 0, identical = 0;
  for (const char* name : {"eval_stage2_single.json", "eval_stage2_latent.json", "eval_attack_other.json",
                           "eval_attack_same.json"}) {
    const auto path = s.main.dir / name;
    if (!fs::exists(path)) continue;
    ++reports;
    auto recorded = EvalReport::load(path);
    if (rerun(model, s.data.test, nullptr, recorded).to_json() == recorded.to_json()) ++identical;
  }
  const bool pass = logs && ckpts && reports > 0 && identical == reports;
  return {pass, std::string("metrics logs ") + (logs ? "identical" : "DIFFER") + ", final checkpoints " +
                    (ckpts ? "identical" : "DIFFER") + "; " + std::to_string(identical) + "/" +
                    std::to_string(reports) + " reports re-run bit-identically"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria 1-9"};
  std::string work = "acceptance";
  std::vector<int> only;
  app.add_option("--work-dir", work, "cache for corpora and trained models");
  app.add_option("--only", only, "run only these criteria (comma-separated)")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  set_log_level(LogLevel::kInfo);
  fs::create_directories(work);

  auto wanted = [&](int c) { return only.empty() || std::find(only.begin(), only.end(), c) != only.end(); };
  int failures = 0;
  auto report = [&](int c, const char* name, const std::function<Outcome()>& f) {
    if (!wanted(c)) return;
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::cout << "criterion " << c << " [" << (o.pass ? "PASS" : "FAIL") << "] " << name << ": " << o.detail
              << std::endl;
  };

  report(1, "metric oracles", metric_oracles);
  report(2, "gradient suite", gradient_suite);
  report(3, "noise identity/limit suite", noise_limits);
  report(7, "stamping throughput", throughput);

  if (wanted(4) || wanted(5) || wanted(6) || wanted(8) || wanted(9)) {
    Smoke s;
    const auto arch = smoke_arch();
    const auto cfg = smoke_train();
    std::string setup_error;
    try {
      s.data = smoke_data(work);
      s.main = train_cached(fs::path(work) / "two_stage", arch, cfg, s.data.train, true);
    } catch (const std::exception& e) {
      setup_error = e.what();
    }
    auto smoke = [&](const std::function<Outcome()>& f) {
      return [&, f] { return setup_error.empty() ? f() : Outcome{false, "smoke training failed: " + setup_error}; };
    };
    report(4, "smoke training, stage 1", smoke([&] { return smoke_stage1(s); }));
    report(5, "two-stage effect", smoke([&] { return two_stage(s); }));
    report(6, "stage-2-only ablation", smoke([&] {
             auto ablation = cfg;
             ablation.epochs_stage1 = 0;
             ablation.skip_stage1 = true;
             s.ablation = train_cached(fs::path(work) / "stage2_only", arch, ablation, s.data.train, false);
             return stage2_only(s);
           }));
    report(8, "residual attack", smoke([&] { return attack(s); }));
    report(9, "determinism", smoke([&] {
             s.repeat = train_cached(fs::path(work) / "two_stage_repeat", arch, cfg, s.data.train, false);
             return determinism(s);
           }));
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criterion/criteria failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
