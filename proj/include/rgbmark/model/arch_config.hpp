#pragma once

#include <cstdint>

#include <json.hpp>

#include "rgbmark/core/image.hpp"

namespace rgbmark {

/// The decoder stem halves the resolution twice before the attention blocks.
inline constexpr std::int64_t kDecoderStemStride = 4;

struct ArchConfig {
  std::int64_t base_channels = 32;
  std::int64_t encoder_scales = 3;
  std::int64_t decoder_blocks = 4;
  std::int64_t decoder_dim = 64;
  std::int64_t attention_heads = 4;
  std::int64_t window_size = 8;
  std::int64_t mlp_ratio = 2;
  std::int64_t discriminator_channels = 32;
  std::int64_t message_length = 64;
  std::int64_t height = 128;
  std::int64_t width = 128;
  /// Amplitude a of the tanh-bounded residual: |I_w - I_c| <= a per pixel.
  double perturbation_cap = 0.05;

  ImageSize image_size() const { return {height, width}; }
  /// Throws ConfigError naming the first violated constraint.
  void validate() const;

  friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

void to_json(nlohmann::json& j, const ArchConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected.
void from_json(const nlohmann::json& j, ArchConfig& c);

}  // namespace rgbmark
