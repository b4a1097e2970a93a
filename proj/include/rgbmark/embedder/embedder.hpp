#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "rgbmark/core/checkpoint.hpp"
#include "rgbmark/core/image.hpp"
#include "rgbmark/core/message.hpp"
#include "rgbmark/model/model.hpp"

namespace rgbmark {

/// A message-specific RGB residual that can be added to any cover.
///
/// File layout (little-endian):
///
///   8 bytes  magic "RGBMRESD"
///   u32      version (1)
///   u32 H, u32 W, u32 L
///   L bytes  message bits (0/1)
///   u8       stage of the producing model
///   u16 + n  checkpoint hash
///   u16 + n  template identifier
///   3*H*W    float32 residual, channel-major
struct ResidualWatermark {
  torch::Tensor epsilon;  // (3, H, W) float32
  Message message;
  std::string checkpoint_hash;
  std::string template_id;
  Stage stage = Stage::kInit;

  ImageSize size() const;
  /// max |epsilon|.
  double amplitude() const;

  void save(const std::filesystem::path& path) const;
  static ResidualWatermark load(const std::filesystem::path& path);
  std::string serialize() const;
  static ResidualWatermark deserialize(const std::string& bytes);
};

/// epsilon = encode(template, M) - template. The template is resized to the
/// model size if needed. Throws ConfigError for an untrained model or a
/// message of the wrong length.
ResidualWatermark make_residual(WatermarkModel& model, const torch::Tensor& template_image,
                                const Message& message, const std::string& template_id = "template");

struct StampResult {
  torch::Tensor image;
  /// Pixels (channel values) where I + epsilon left [0, 1] and was clipped.
  std::int64_t saturated = 0;
  std::int64_t values = 0;

  double saturation_rate() const { return values ? static_cast<double>(saturated) / values : 0.0; }
};

/// clamp(image + epsilon, 0, 1). Images of another size are resized to the
/// residual size first (with a warning).
StampResult stamp(const ResidualWatermark& wm, const torch::Tensor& image);

/// Stamps a list of images on `workers` threads; output order matches input.
std::vector<StampResult> stamp_all(const ResidualWatermark& wm, const std::vector<torch::Tensor>& images,
                                   int workers);

/// Raw kernel: out[i] = clamp(in[i] + eps[i], 0, 1) over n floats. Returns the
/// number of clipped values.
std::int64_t stamp_kernel(const float* in, const float* eps, float* out, std::int64_t n);

struct FileStampReport {
  std::int64_t images = 0;
  std::int64_t saturated = 0;
  std::int64_t values = 0;
  std::vector<std::filesystem::path> outputs;
};

/// Stamps every image under `in` (a directory, a single image, or a text
/// manifest with one path per line) and writes 8-bit PNGs to a mirrored
/// tree under `out`.
FileStampReport stamp_files(const ResidualWatermark& wm, const std::filesystem::path& in,
                            const std::filesystem::path& out, int workers);

/// Hard bits sigmoid(logits) > 0.5; resizes (with a warning) when the image
/// is not at the model size.
Message extract(WatermarkModel& model, const torch::Tensor& image);
std::vector<Message> extract_batch(WatermarkModel& model, const torch::Tensor& batch);

struct ThroughputReport {
  std::int64_t images = 0;
  int workers = 1;
  double seconds = 0;
  double images_per_second = 0;
  double saturation_rate = 0;
};

/// Stamps `n` synthetic images (drawn from a small pre-generated pool) and
/// times only the stamping.
ThroughputReport throughput_benchmark(const ResidualWatermark& wm, std::int64_t n, int workers,
                                      std::uint64_t seed = 0);

}  // namespace rgbmark
