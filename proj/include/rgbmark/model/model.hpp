#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <torch/torch.h>

#include "rgbmark/core/checkpoint.hpp"
#include "rgbmark/model/arch_config.hpp"
#include "rgbmark/model/networks.hpp"

namespace rgbmark {

/// Encoder, decoder and discriminator with their architecture and training
/// stage. Inference calls are safe to share between threads; parameters are
/// only mutated by the trainer.
class WatermarkModel {
 public:
  /// Deterministic initialization from `seed`; the global torch RNG is not
  /// touched.
  WatermarkModel(const ArchConfig& cfg, std::uint64_t seed);

  // Submodules are shared handles; copying would alias parameters.
  WatermarkModel(const WatermarkModel&) = delete;
  WatermarkModel& operator=(const WatermarkModel&) = delete;
  WatermarkModel(WatermarkModel&&) = default;
  WatermarkModel& operator=(WatermarkModel&&) = default;

  /// Deep copy with the same parameters, stage and dtype.
  WatermarkModel clone() const;

  const ArchConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }
  Stage stage() const { return stage_; }
  void set_stage(Stage s) { stage_ = s; }
  bool stage1_skipped() const { return stage1_skipped_; }
  void set_stage1_skipped(bool v) { stage1_skipped_ = v; }

  Encoder& encoder() { return encoder_; }
  Decoder& decoder() { return decoder_; }
  Discriminator& discriminator() { return discriminator_; }

  /// Residual r = cap * tanh(.) for covers (B,3,H,W) and bits (B,L).
  torch::Tensor residual(const torch::Tensor& cover, const torch::Tensor& bits);
  /// clamp(cover + residual, 0, 1).
  torch::Tensor encode(const torch::Tensor& cover, const torch::Tensor& bits);
  /// (B, L) logits.
  torch::Tensor decode(const torch::Tensor& image);
  /// Realness score in (0, 1), shape (B,).
  torch::Tensor discriminate(const torch::Tensor& image);

  void train(bool on = true);
  void to(torch::ScalarType dtype);
  torch::ScalarType dtype() const { return dtype_; }

  /// Parameters prefixed "encoder.", "decoder.", "discriminator.", in a
  /// fixed order.
  NamedTensors named_parameters() const;
  std::vector<torch::Tensor> generator_parameters() const;
  std::vector<torch::Tensor> discriminator_parameters() const;
  /// Hash of all parameters; identical to the checkpoint hash.
  std::string fingerprint() const;

  /// Model part of a checkpoint (no optimizer state).
  Checkpoint to_checkpoint() const;
  /// Rebuilds a model, checking every parameter shape against the stored
  /// architecture. Throws ConfigError on any mismatch.
  static WatermarkModel from_checkpoint(const Checkpoint& ckpt);
  static WatermarkModel load(const std::filesystem::path& path);
  void load_parameters(const Checkpoint& ckpt);

 private:
  void check_input(const torch::Tensor& images, const char* what) const;

  ArchConfig cfg_;
  std::uint64_t seed_;
  Stage stage_ = Stage::kInit;
  bool stage1_skipped_ = false;
  torch::ScalarType dtype_ = torch::kFloat32;
  Encoder encoder_{nullptr};
  Decoder decoder_{nullptr};
  Discriminator discriminator_{nullptr};
};

}  // namespace rgbmark
