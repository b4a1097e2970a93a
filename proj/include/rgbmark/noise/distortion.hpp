#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

namespace rgbmark {

enum class DistortionKind {
  kIdentity,
  kJpeg,
  kGaussianNoise,
  kGaussianFilter,
  kDropout,
  kMedianFilter,
  kColor,
  kBright,
  kSaturation,
  kHue,
  kContrast,
  kResize,
  kCrop,
  kPip,
  kPadding,
  kOcclusion,
  kRotate,
  kShear,
  kAffine,
};

enum class NoiseMode { kTrain, kTest };

/// Short names used in reports and suite files: "JPEG", "GN", "GF",
/// "Dropout", "MF", "Color", "Bright", "Saturation", "Hue", "Contrast",
/// "Resize", "Crop", "PIP", "Padding", "Occlusion", "Rotate", "Shear",
/// "Affine", "Identity".
std::string_view kind_name(DistortionKind kind);
/// Throws ArgumentError for unknown names.
DistortionKind kind_from_name(std::string_view name);

/// The 18 distortion kinds (Identity excluded), in table order.
std::span<const DistortionKind> distortion_kinds();
/// The 18 kinds plus Identity: the outcomes of sample_train_spec.
std::span<const DistortionKind> train_kinds();

struct ParamRange {
  std::string name;
  double lo;
  double hi;
};

/// Training ranges per kind, on the scale the parameters are written in
/// (GN sigma on 0-255, degrees for angles, pixels for Padding).
std::vector<ParamRange> train_ranges(DistortionKind kind);

struct DistortionSpec {
  DistortionKind kind = DistortionKind::kIdentity;
  std::map<std::string, double> params;
  NoiseMode mode = NoiseMode::kTest;
  /// Test factor printed as +/-p: evaluated at both signs and averaged.
  bool both_signs = false;

  double param(const std::string& name) const;
  /// {spec} or {spec(+p), spec(-p)} for sign-symmetric specs.
  std::vector<DistortionSpec> sign_variants() const;
  /// True when a test parameter lies outside the training range.
  bool extrapolated() const;
  /// e.g. "Contrast(p=+-0.8)".
  std::string label() const;

  friend bool operator==(const DistortionSpec&, const DistortionSpec&) = default;
};

/// Applies the distortion to a watermarked batch. `cover` is consulted by
/// Dropout (pixels fall back to the cover) and PIP (the canvas is another
/// cover of the batch). Output is (B, 3, H, W) in [0, 1]. In train mode
/// the result is differentiable w.r.t. `watermarked` and parameters are
/// range-checked; in test mode JPEG uses the real codec.
torch::Tensor apply_distortion(const DistortionSpec& spec, const torch::Tensor& watermarked,
                               const torch::Tensor& cover, std::uint64_t seed);

/// Differentiable JPEG: YCbCr, 8x8 block DCT, quantization by the standard
/// tables scaled for `quality`, soft rounding x - sin(2 pi x) / (2 pi),
/// dequantization and inverse DCT. No chroma subsampling.
torch::Tensor jpeg_surrogate(const torch::Tensor& batch, double quality);
/// Real codec round trip (8-bit, libjpeg via OpenCV). Not differentiable.
torch::Tensor jpeg_codec(const torch::Tensor& batch, int quality);
/// Standard quantization table (luma or chroma) scaled for `quality`.
torch::Tensor jpeg_quant_table(bool chroma, double quality);

/// Kind uniform over `kinds` (all 19 outcomes by default), parameters
/// uniform in the training ranges. Pure function of the seed.
DistortionSpec sample_train_spec(std::uint64_t seed, std::span<const DistortionKind> kinds = train_kinds());

/// The 18 fixed test distortions.
std::vector<DistortionSpec> test_suite();

/// A test-mode spec for `kind` with its main parameter set to `level`
/// (Affine: rotation; Color: all three gains).
DistortionSpec spec_at_level(DistortionKind kind, double level);

nlohmann::json to_json(const DistortionSpec& spec);
DistortionSpec spec_from_json(const nlohmann::json& j);
nlohmann::json suite_to_json(const std::vector<DistortionSpec>& suite);
std::vector<DistortionSpec> suite_from_json(const nlohmann::json& j);
void save_suite(const std::vector<DistortionSpec>& suite, const std::filesystem::path& path);
std::vector<DistortionSpec> load_suite(const std::filesystem::path& path);

}  // namespace rgbmark
