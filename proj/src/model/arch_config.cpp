#include "rgbmark/model/arch_config.hpp"

#include <set>
#include <string>

#include "rgbmark/core/error.hpp"

namespace rgbmark {

void ArchConfig::validate() const {
  auto positive = [](std::int64_t v, const char* name) {
    if (v <= 0) throw ConfigError(std::string("arch.") + name + " must be positive");
  };
  positive(base_channels, "base_channels");
  positive(encoder_scales, "encoder_scales");
  positive(decoder_blocks, "decoder_blocks");
  positive(decoder_dim, "decoder_dim");
  positive(attention_heads, "attention_heads");
  positive(window_size, "window_size");
  positive(mlp_ratio, "mlp_ratio");
  positive(discriminator_channels, "discriminator_channels");
  positive(message_length, "message_length");
  positive(height, "height");
  positive(width, "width");
  if (!(perturbation_cap > 0.0 && perturbation_cap <= 1.0)) {
    throw ConfigError("arch.perturbation_cap must be in (0, 1]");
  }
  if (decoder_dim % attention_heads != 0) {
    throw ConfigError("arch.decoder_dim must be divisible by arch.attention_heads");
  }
  const std::int64_t down = std::int64_t{1} << (encoder_scales - 1);
  if (height % down != 0 || width % down != 0) {
    throw ConfigError("image size " + std::to_string(height) + "x" + std::to_string(width) +
                      " is not divisible by the encoder downsampling factor " + std::to_string(down));
  }
  if (height % kDecoderStemStride != 0 || width % kDecoderStemStride != 0) {
    throw ConfigError("image size must be divisible by the decoder stem stride 4");
  }
  if (height % window_size != 0 || width % window_size != 0) {
    throw ConfigError("image size must be divisible by arch.window_size");
  }
  const std::int64_t gh = height / kDecoderStemStride;
  const std::int64_t gw = width / kDecoderStemStride;
  if (gh % window_size != 0 || gw % window_size != 0) {
    throw ConfigError("decoder token grid " + std::to_string(gh) + "x" + std::to_string(gw) +
                      " is not divisible by arch.window_size");
  }
}

void to_json(nlohmann::json& j, const ArchConfig& c) {
  j = nlohmann::json{{"base_channels", c.base_channels},
                     {"encoder_scales", c.encoder_scales},
                     {"decoder_blocks", c.decoder_blocks},
                     {"decoder_dim", c.decoder_dim},
                     {"attention_heads", c.attention_heads},
                     {"window_size", c.window_size},
                     {"mlp_ratio", c.mlp_ratio},
                     {"discriminator_channels", c.discriminator_channels},
                     {"message_length", c.message_length},
                     {"height", c.height},
                     {"width", c.width},
                     {"perturbation_cap", c.perturbation_cap}};
}

void from_json(const nlohmann::json& j, ArchConfig& c) {
  if (!j.is_object()) throw ConfigError("arch config must be an object");
  static const std::set<std::string> kKeys = {
      "base_channels", "encoder_scales", "decoder_blocks", "decoder_dim",
      "attention_heads", "window_size", "mlp_ratio", "discriminator_channels",
      "message_length", "height", "width", "perturbation_cap"};
  for (const auto& [key, _] : j.items()) {
    if (!kKeys.contains(key)) throw ConfigError("unknown key: arch." + key);
  }
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("base_channels", c.base_channels);
  get("encoder_scales", c.encoder_scales);
  get("decoder_blocks", c.decoder_blocks);
  get("decoder_dim", c.decoder_dim);
  get("attention_heads", c.attention_heads);
  get("window_size", c.window_size);
  get("mlp_ratio", c.mlp_ratio);
  get("discriminator_channels", c.discriminator_channels);
  get("message_length", c.message_length);
  get("height", c.height);
  get("width", c.width);
  get("perturbation_cap", c.perturbation_cap);
}

}  // namespace rgbmark
