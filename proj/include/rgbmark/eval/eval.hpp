#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "rgbmark/core/corpus.hpp"
#include "rgbmark/core/message.hpp"
#include "rgbmark/model/model.hpp"
#include "rgbmark/noise/distortion.hpp"

namespace rgbmark {

/// (1 - mean(a xor b)) * 100. Throws ArgumentError on a length mismatch.
double bit_accuracy(const Message& a, const Message& b);
/// Per-row accuracies for (B, L) bit tensors.
torch::Tensor bit_accuracy(const torch::Tensor& bits, const torch::Tensor& extracted);

/// Reports write this in place of an infinite PSNR.
inline constexpr double kPsnrCap = 100.0;

/// 10 log10(1 / MSE) for [0, 1] images; +infinity when identical.
double psnr(const torch::Tensor& a, const torch::Tensor& b);
/// mean |a - b| * 255.
double apd(const torch::Tensor& a, const torch::Tensor& b);

enum class Paradigm { kLatent, kSingleShot };
std::string to_string(Paradigm p);
Paradigm paradigm_from_string(const std::string& name);

struct DistortionResult {
  std::string label;
  std::string kind;
  /// Mean over sign variants.
  double accuracy = 0;
  /// One entry per sign variant, in sign_variants() order.
  std::vector<double> variant_accuracy;
  /// The test point lies outside the training range of its kind.
  bool extrapolated = false;
};

struct EvalReport {
  std::string paradigm;
  std::vector<DistortionResult> results;
  double average = 0;
  /// Image quality of the watermarked images against their covers, averaged
  /// over images. PSNR values are capped at kPsnrCap.
  double psnr = 0;
  double ssim = 0;
  double apd = 0;
  /// checkpoint hash, suite, seed, corpus id, batch size and harness options.
  nlohmann::json metadata = nlohmann::json::object();

  const DistortionResult* find(const std::string& label) const;
  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static EvalReport load(const std::filesystem::path& path);
  /// Plain-text table.
  std::string table() const;
};

struct EvalOptions {
  std::int64_t batch_size = 50;
  std::uint64_t seed = 0;
  /// Pass watermarked images through 8-bit storage before distortion.
  bool quantize = false;
};

/// Watermarks every image of `set` (latent: encoder per image; single shot:
/// the residual of image i+1 (mod N) carrying image i's message),
/// applies each distortion of the suite and decodes. Messages and distortion
/// randomness derive from options.seed and the batch/distortion indices.
EvalReport evaluate_robustness(WatermarkModel& model, const ImageSet& set, const std::vector<DistortionSpec>& suite,
                               Paradigm paradigm, const EvalOptions& options);

enum class AttackSource {
  /// The attacker's residual comes from another cover carrying another
  /// message.
  kOtherPair,
  /// The attacker knows the exact cover/message pair of the target.
  kSamePair,
};

/// Single-shot watermarks attacked by subtracting an estimated residual,
/// then distorted and decoded.
EvalReport residual_attack(WatermarkModel& model, const ImageSet& set, const std::vector<DistortionSpec>& suite,
                           AttackSource source, const EvalOptions& options);

enum class Direction {
  /// Residuals built on A, stamped on B.
  kCoverToDomain,
  /// Residuals built on B, stamped on A.
  kDomainToCover,
};

/// Single-shot evaluation with templates and targets taken from different
/// sets; target i uses template i+1 (mod template count) of the other set.
/// With a == b this reproduces evaluate_robustness(kSingleShot).
EvalReport cross_domain(WatermarkModel& model, const ImageSet& a, const ImageSet& b, Direction direction,
                        const std::vector<DistortionSpec>& suite, const EvalOptions& options);

struct SweepPoint {
  double level = 0;
  double accuracy = 0;
};

struct SweepResult {
  std::string kind;
  std::string paradigm;
  std::vector<SweepPoint> points;
  /// Accuracy never rises as the levels are traversed in the given order.
  bool monotone = false;

  nlohmann::json to_json() const;
};

SweepResult noise_sweep(WatermarkModel& model, const ImageSet& set, DistortionKind kind,
                        const std::vector<double>& levels, Paradigm paradigm, const EvalOptions& options);

/// |d loss_message / d image| summed over channels and min-max scaled to
/// [0, 1]; (H, W). A flat gradient gives all zeros.
torch::Tensor decoder_saliency(WatermarkModel& model, const torch::Tensor& image, const Message& message);

/// Saves a saliency map as a grayscale PNG.
void save_heatmap(const torch::Tensor& heatmap, const std::filesystem::path& path);

/// Re-runs the harness recorded in `report.metadata` and returns the fresh
/// report. `other` is the second set of a cross-domain run. Throws
/// ConfigError if the model or corpus does not match the recorded hashes.
EvalReport rerun(WatermarkModel& model, const ImageSet& set, const ImageSet* other, const EvalReport& report);

/// Validation used during training: bit accuracy on clean watermarked
/// images in both paradigms and mean PSNR, over the whole set.
struct CleanMetrics {
  double accuracy_latent = 0;
  double accuracy_single_shot = 0;
  double psnr = 0;
};
CleanMetrics clean_metrics(WatermarkModel& model, const ImageSet& set, std::int64_t batch_size, std::uint64_t seed);

}  // namespace rgbmark
