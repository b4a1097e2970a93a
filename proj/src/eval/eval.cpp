#include "rgbmark/eval/eval.hpp"

#include <cmath>
#include <functional>
#include <iomanip>
#include <limits>
#include <sstream>

#include "rgbmark/core/error.hpp"
#include "rgbmark/core/rng.hpp"
#include "rgbmark/losses/losses.hpp"

namespace rgbmark {

double bit_accuracy(const Message& a, const Message& b) {
  if (a.size() != b.size()) throw ArgumentError("bit_accuracy: message lengths differ");
  if (a.size() == 0) throw ArgumentError("bit_accuracy: empty messages");
  std::int64_t wrong = 0;
  for (std::int64_t i = 0; i < a.size(); ++i) wrong += a[i] ^ b[i];
  return (1.0 - static_cast<double>(wrong) / static_cast<double>(a.size())) * 100.0;
}

torch::Tensor bit_accuracy(const torch::Tensor& bits, const torch::Tensor& extracted) {
  if (bits.sizes() != extracted.sizes() || bits.dim() != 2) {
    throw ArgumentError("bit_accuracy: expected two (B, L) tensors of the same shape");
  }
  auto wrong = (bits.round() != extracted.round()).to(torch::kFloat64).mean(1);
  return (1.0 - wrong) * 100.0;
}

namespace {

void check_pair(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (!a.defined() || !b.defined() || a.sizes() != b.sizes()) {
    throw ArgumentError(std::string(what) + ": inputs must have the same shape");
  }
}

}  // namespace

double psnr(const torch::Tensor& a, const torch::Tensor& b) {
  check_pair(a, b, "psnr");
  const double mse = (a.to(torch::kFloat64) - b.to(torch::kFloat64)).pow(2).mean().item<double>();
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

double apd(const torch::Tensor& a, const torch::Tensor& b) {
  check_pair(a, b, "apd");
  return (a.to(torch::kFloat64) - b.to(torch::kFloat64)).abs().mean().item<double>() * 255.0;
}

std::string to_string(Paradigm p) { return p == Paradigm::kLatent ? "latent" : "single_shot"; }

Paradigm paradigm_from_string(const std::string& name) {
  if (name == "latent") return Paradigm::kLatent;
  if (name == "single_shot") return Paradigm::kSingleShot;
  throw ArgumentError("unknown paradigm: " + name);
}

const DistortionResult* EvalReport::find(const std::string& label) const {
  for (const auto& r : results) {
    if (r.label == label || r.kind == label) return &r;
  }
  return nullptr;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json res = nlohmann::json::array();
  for (const auto& r : results) {
    res.push_back({{"label", r.label}, {"kind", r.kind}, {"accuracy", r.accuracy}, {"variants", r.variant_accuracy},
                   {"extrapolated", r.extrapolated}});
  }
  return {{"paradigm", paradigm}, {"results", res}, {"average", average}, {"psnr", psnr},
          {"ssim", ssim},         {"apd", apd},     {"metadata", metadata}};
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  EvalReport r;
  try {
    j.at("paradigm").get_to(r.paradigm);
    for (const auto& e : j.at("results")) {
      DistortionResult d;
      e.at("label").get_to(d.label);
      e.at("kind").get_to(d.kind);
      e.at("accuracy").get_to(d.accuracy);
      e.at("variants").get_to(d.variant_accuracy);
      d.extrapolated = e.value("extrapolated", false);
      r.results.push_back(std::move(d));
    }
    j.at("average").get_to(r.average);
    j.at("psnr").get_to(r.psnr);
    j.at("ssim").get_to(r.ssim);
    j.at("apd").get_to(r.apd);
    r.metadata = j.at("metadata");
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("malformed report: ") + e.what());
  }
  return r;
}

void EvalReport::save(const std::filesystem::path& path) const {
  write_file_atomic(path, to_json().dump(2) + "\n");
}

EvalReport EvalReport::load(const std::filesystem::path& path) {
  try {
    return from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

std::string EvalReport::table() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "paradigm: " << paradigm << "\n";
  for (const auto& r : results) {
    os << std::left << std::setw(28) << r.label << std::right << std::setw(8) << r.accuracy
       << (r.extrapolated ? "  (extrapolated)" : "") << "\n";
  }
  os << std::left << std::setw(28) << "AVG" << std::right << std::setw(8) << average << "\n";
  os << "PSNR " << psnr << " dB  SSIM " << std::setprecision(4) << ssim << "  APD " << std::setprecision(3) << apd
     << "\n";
  return os.str();
}

namespace {

/// Watermarked images of one batch plus the images they were made from.
struct MarkedBatch {
  torch::Tensor cover;
  torch::Tensor marked;
  torch::Tensor bits;
};

using MarkFn = std::function<MarkedBatch(std::int64_t batch, std::int64_t begin, std::int64_t end)>;

torch::Tensor rows(const ImageSet& set, std::int64_t begin, std::int64_t end) {
  return set.images.slice(0, begin, end);
}

/// Rows (i + shift) mod N of `set` for i in [begin, end).
torch::Tensor shifted_rows(const ImageSet& set, std::int64_t begin, std::int64_t end, std::int64_t shift) {
  auto idx = (torch::arange(begin, end, torch::kLong) + shift).remainder(set.size());
  return set.images.index_select(0, idx);
}

torch::Tensor residual_of(WatermarkModel& model, const torch::Tensor& templates, const torch::Tensor& bits) {
  auto t = templates.to(model.dtype());
  return model.encode(t, bits) - t;
}

std::uint64_t batch_bits_seed(std::uint64_t seed, std::int64_t batch) { return derive_seed(seed, {1, static_cast<std::uint64_t>(batch)}); }

EvalReport run_suite(WatermarkModel& model, std::int64_t count, const std::vector<DistortionSpec>& suite,
                     const EvalOptions& options, const MarkFn& mark) {
  if (count <= 0) throw ConfigError("evaluation corpus is empty");
  if (suite.empty()) throw ConfigError("evaluation suite is empty");
  if (options.batch_size <= 0) throw ConfigError("evaluation batch size must be positive");
  torch::NoGradGuard no_grad;

  std::vector<std::vector<DistortionSpec>> variants;
  std::vector<std::vector<double>> correct;
  for (const auto& s : suite) {
    variants.push_back(s.sign_variants());
    correct.emplace_back(variants.back().size(), 0.0);
  }
  double total_bits = 0, psnr_sum = 0, ssim_sum = 0, apd_sum = 0;

  const auto batches = (count + options.batch_size - 1) / options.batch_size;
  for (std::int64_t k = 0; k < batches; ++k) {
    const auto begin = k * options.batch_size;
    const auto end = std::min(count, begin + options.batch_size);
    auto mb = mark(k, begin, end);
    auto marked = options.quantize ? quantize_roundtrip(mb.marked) : mb.marked.clamp(0, 1);
    auto cover = mb.cover.to(marked.scalar_type());
    for (std::int64_t i = 0; i < marked.size(0); ++i) {
      psnr_sum += std::min(psnr(cover[i], marked[i]), kPsnrCap);
      ssim_sum += ssim(cover[i], marked[i]).item<double>();
      apd_sum += apd(cover[i], marked[i]);
    }
    total_bits += static_cast<double>(mb.bits.numel());
    for (std::size_t s = 0; s < suite.size(); ++s) {
      for (std::size_t v = 0; v < variants[s].size(); ++v) {
        const auto dseed = derive_seed(options.seed, {2, static_cast<std::uint64_t>(k), s, v});
        auto distorted = apply_distortion(variants[s][v], marked, cover, dseed);
        auto extracted = (model.decode(distorted) > 0).to(torch::kFloat64);
        correct[s][v] += (extracted == mb.bits.to(torch::kFloat64)).sum().item<double>();
      }
    }
  }

  EvalReport report;
  double acc_sum = 0;
  for (std::size_t s = 0; s < suite.size(); ++s) {
    DistortionResult r;
    r.label = suite[s].label();
    r.kind = std::string(kind_name(suite[s].kind));
    r.extrapolated = suite[s].extrapolated();
    double sum = 0;
    for (double c : correct[s]) {
      r.variant_accuracy.push_back(c / total_bits * 100.0);
      sum += r.variant_accuracy.back();
    }
    r.accuracy = sum / static_cast<double>(correct[s].size());
    acc_sum += r.accuracy;
    report.results.push_back(std::move(r));
  }
  report.average = acc_sum / static_cast<double>(suite.size());
  report.psnr = psnr_sum / static_cast<double>(count);
  report.ssim = ssim_sum / static_cast<double>(count);
  report.apd = apd_sum / static_cast<double>(count);
  report.metadata = {{"checkpoint", model.fingerprint()},
                     {"suite", suite_to_json(suite)},
                     {"seed", options.seed},
                     {"batch_size", options.batch_size},
                     {"quantize", options.quantize},
                     {"images", count},
                     {"omitted_metrics", {"LPIPS", "FID"}}};
  return report;
}

void check_set(WatermarkModel& model, const ImageSet& set) {
  if (set.size() == 0) throw ConfigError("evaluation corpus is empty");
  check_batch(set.images, "evaluation corpus");
  const ImageSize want{model.config().height, model.config().width};
  if (size_of(set.images) != want) throw ConfigError("evaluation images do not match the model size");
}

}  // namespace

EvalReport evaluate_robustness(WatermarkModel& model, const ImageSet& set, const std::vector<DistortionSpec>& suite,
                               Paradigm paradigm, const EvalOptions& options) {
  check_set(model, set);
  const auto L = model.config().message_length;
  auto report = run_suite(model, set.size(), suite, options, [&](std::int64_t k, std::int64_t b, std::int64_t e) {
    MarkedBatch mb;
    mb.cover = rows(set, b, e).to(model.dtype());
    mb.bits = random_message_batch(e - b, L, batch_bits_seed(options.seed, k)).to(model.dtype());
    if (paradigm == Paradigm::kLatent) {
      mb.marked = model.encode(mb.cover, mb.bits);
    } else {
      mb.marked = (mb.cover + residual_of(model, shifted_rows(set, b, e, 1), mb.bits)).clamp(0, 1);
    }
    return mb;
  });
  report.paradigm = to_string(paradigm);
  report.metadata["harness"] = "robustness";
  report.metadata["corpus"] = set.corpus_id;
  return report;
}

EvalReport residual_attack(WatermarkModel& model, const ImageSet& set, const std::vector<DistortionSpec>& suite,
                           AttackSource source, const EvalOptions& options) {
  check_set(model, set);
  const auto L = model.config().message_length;
  auto report = run_suite(model, set.size(), suite, options, [&](std::int64_t k, std::int64_t b, std::int64_t e) {
    MarkedBatch mb;
    mb.cover = rows(set, b, e).to(model.dtype());
    mb.bits = random_message_batch(e - b, L, batch_bits_seed(options.seed, k)).to(model.dtype());
    auto eps = residual_of(model, shifted_rows(set, b, e, 1), mb.bits);
    auto marked = (mb.cover + eps).clamp(0, 1);
    torch::Tensor attack;
    if (source == AttackSource::kSamePair) {
      attack = eps;
    } else {
      auto other_bits = random_message_batch(e - b, L, derive_seed(options.seed, {3, static_cast<std::uint64_t>(k)}));
      attack = residual_of(model, shifted_rows(set, b, e, 2), other_bits.to(model.dtype()));
    }
    mb.marked = (marked - attack).clamp(0, 1);
    return mb;
  });
  report.paradigm = to_string(Paradigm::kSingleShot);
  report.metadata["harness"] = "attack";
  report.metadata["attack_source"] = source == AttackSource::kSamePair ? "same_pair" : "other_pair";
  report.metadata["corpus"] = set.corpus_id;
  return report;
}

EvalReport cross_domain(WatermarkModel& model, const ImageSet& a, const ImageSet& b, Direction direction,
                        const std::vector<DistortionSpec>& suite, const EvalOptions& options) {
  check_set(model, a);
  check_set(model, b);
  const ImageSet& templates = direction == Direction::kCoverToDomain ? a : b;
  const ImageSet& targets = direction == Direction::kCoverToDomain ? b : a;
  const auto L = model.config().message_length;
  auto report = run_suite(model, targets.size(), suite, options, [&](std::int64_t k, std::int64_t s, std::int64_t e) {
    MarkedBatch mb;
    mb.cover = rows(targets, s, e).to(model.dtype());
    mb.bits = random_message_batch(e - s, L, batch_bits_seed(options.seed, k)).to(model.dtype());
    mb.marked = (mb.cover + residual_of(model, shifted_rows(templates, s, e, 1), mb.bits)).clamp(0, 1);
    return mb;
  });
  report.paradigm = to_string(Paradigm::kSingleShot);
  report.metadata["harness"] = "cross_domain";
  report.metadata["direction"] = direction == Direction::kCoverToDomain ? "cover_to_domain" : "domain_to_cover";
  report.metadata["corpus"] = a.corpus_id;
  report.metadata["corpus_b"] = b.corpus_id;
  return report;
}

nlohmann::json SweepResult::to_json() const {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : points) pts.push_back({{"level", p.level}, {"accuracy", p.accuracy}});
  return {{"kind", kind}, {"paradigm", paradigm}, {"points", pts}, {"monotone", monotone}};
}

SweepResult noise_sweep(WatermarkModel& model, const ImageSet& set, DistortionKind kind,
                        const std::vector<double>& levels, Paradigm paradigm, const EvalOptions& options) {
  if (levels.empty()) throw ArgumentError("noise_sweep needs at least one level");
  std::vector<DistortionSpec> suite;
  for (double l : levels) suite.push_back(spec_at_level(kind, l));
  auto report = evaluate_robustness(model, set, suite, paradigm, options);
  SweepResult out;
  out.kind = std::string(kind_name(kind));
  out.paradigm = to_string(paradigm);
  for (std::size_t i = 0; i < levels.size(); ++i) out.points.push_back({levels[i], report.results[i].accuracy});
  out.monotone = true;
  for (std::size_t i = 1; i < out.points.size(); ++i) {
    if (out.points[i].accuracy > out.points[i - 1].accuracy) out.monotone = false;
  }
  return out;
}

torch::Tensor decoder_saliency(WatermarkModel& model, const torch::Tensor& image, const Message& message) {
  check_image(image, "saliency input");
  if (message.size() != model.config().message_length) throw ArgumentError("saliency: message length mismatch");
  auto x = image.to(model.dtype()).unsqueeze(0).detach().requires_grad_(true);
  auto loss = loss_message(message.to_tensor(model.dtype()).unsqueeze(0), model.decode(x));
  auto grad = torch::autograd::grad({loss}, {x})[0].squeeze(0).abs().sum(0);
  const auto lo = grad.min(), hi = grad.max();
  if ((hi - lo).item<double>() <= 0) return torch::zeros_like(grad);
  return ((grad - lo) / (hi - lo)).detach();
}

void save_heatmap(const torch::Tensor& heatmap, const std::filesystem::path& path) {
  if (heatmap.dim() != 2) throw ArgumentError("heatmap must be (H, W)");
  save_image(heatmap.to(torch::kFloat32).unsqueeze(0).expand({3, -1, -1}).contiguous(), path);
}

EvalReport rerun(WatermarkModel& model, const ImageSet& set, const ImageSet* other, const EvalReport& report) {
  const auto& m = report.metadata;
  try {
    if (m.at("checkpoint").get<std::string>() != model.fingerprint()) {
      throw ConfigError("report was produced by a different checkpoint");
    }
    if (m.at("corpus").get<std::string>() != set.corpus_id) throw ConfigError("report was produced on another corpus");
    EvalOptions opt;
    m.at("seed").get_to(opt.seed);
    m.at("batch_size").get_to(opt.batch_size);
    m.at("quantize").get_to(opt.quantize);
    auto suite = suite_from_json(m.at("suite"));
    const auto harness = m.at("harness").get<std::string>();
    if (harness == "robustness") {
      return evaluate_robustness(model, set, suite, paradigm_from_string(report.paradigm), opt);
    }
    if (harness == "attack") {
      auto src = m.at("attack_source").get<std::string>() == "same_pair" ? AttackSource::kSamePair
                                                                            : AttackSource::kOtherPair;
      return residual_attack(model, set, suite, src, opt);
    }
    if (harness == "cross_domain") {
      if (!other) throw ConfigError("cross-domain report needs the second corpus");
      if (m.at("corpus_b").get<std::string>() != other->corpus_id) {
        throw ConfigError("report was produced on another second corpus");
      }
      auto dir = m.at("direction").get<std::string>() == "cover_to_domain" ? Direction::kCoverToDomain
                                                                           : Direction::kDomainToCover;
      return cross_domain(model, set, *other, dir, suite, opt);
    }
    throw ConfigError("unknown harness in report: " + harness);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("report metadata is incomplete: ") + e.what());
  }
}

CleanMetrics clean_metrics(WatermarkModel& model, const ImageSet& set, std::int64_t batch_size, std::uint64_t seed) {
  const std::vector<DistortionSpec> suite{DistortionSpec{}};
  EvalOptions opt;
  opt.batch_size = batch_size;
  opt.seed = seed;
  auto latent = evaluate_robustness(model, set, suite, Paradigm::kLatent, opt);
  auto single = evaluate_robustness(model, set, suite, Paradigm::kSingleShot, opt);
  return {latent.average, single.average, latent.psnr};
}

}  // namespace rgbmark
