#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "rgbmark/core/checkpoint.hpp"
#include "rgbmark/core/corpus.hpp"
#include "rgbmark/losses/losses.hpp"
#include "rgbmark/model/model.hpp"
#include "rgbmark/noise/distortion.hpp"

namespace rgbmark {

struct TrainConfig {
  LossWeights weights;
  double learning_rate = 1e-4;
  /// AdamW decoupled weight decay.
  double weight_decay = 0.01;
  std::int64_t epochs_stage1 = 100;
  std::int64_t epochs_stage2 = 100;
  std::int64_t batch_size = 16;
  std::uint64_t seed = 0;
  /// Distortions sampled during training (one per batch). Empty = all 18
  /// kinds plus Identity.
  std::vector<DistortionKind> noise_kinds;
  /// Validation accuracy/PSNR cadence in epochs; the validation message loss
  /// is logged every epoch.
  std::int64_t validate_every = 5;
  /// Checkpoint cadence in epochs (the final state is always written).
  std::int64_t checkpoint_every = 5;
  /// Global gradient-norm clip; <= 0 disables.
  double grad_clip = 1.0;
  /// Stage-2-only ablation: allow stage 2 on a model that never ran stage 1.
  bool skip_stage1 = false;
  /// Let stage 2 reuse the stage-1 images when no separate set is given.
  bool stage2_reuse_data = false;

  void validate() const;
  std::vector<DistortionKind> kinds() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
/// Rejects unknown keys ("unknown key: train.X").
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Losses of one step, evaluated before the parameter update.
struct StepResult {
  double image = 0;
  double message = 0;
  double adversarial = 0;
  double total = 0;
  double discriminator = 0;
  std::string spec;
  std::uint64_t seed = 0;
};

/// Seeds of step `step` in `epoch` of `stage`.
std::uint64_t step_seed(std::uint64_t root, Stage stage, std::int64_t epoch, std::int64_t step);

/// Optimizers and the two step functions. The model is borrowed and must
/// outlive the trainer.
class Trainer {
 public:
  Trainer(WatermarkModel& model, TrainConfig cfg);
  ~Trainer();

  /// Encoder+decoder update on the stage-1 loss, then one discriminator
  /// update. Messages, noise spec and noise randomness derive from `seed`.
  StepResult step_stage1(const torch::Tensor& cover, std::uint64_t seed);
  /// The residual of (cover, M) is added to `cover_primed`; every loss term
  /// is computed on the primed pair. Throws ArgumentError on unpaired input
  /// and ConfigError if the model has not completed stage 1 (unless the
  /// config allows skipping it).
  StepResult step_stage2(const torch::Tensor& cover, const torch::Tensor& cover_primed, std::uint64_t seed);

  /// Losses of a step without updating anything.
  StepResult evaluate_step(const torch::Tensor& cover, const torch::Tensor* cover_primed, std::uint64_t seed);

  /// Fresh optimizer state (used when stage 2 starts).
  void reset_optimizers();
  /// Optimizer state as named tensors plus step counters.
  NamedTensors optimizer_state(nlohmann::json& counters) const;
  void load_optimizer_state(const Checkpoint& ckpt);

  const TrainConfig& config() const { return cfg_; }
  WatermarkModel& model() { return model_; }

 private:
  struct Optimizers;
  StepResult step(const torch::Tensor& cover, const torch::Tensor* cover_primed, std::uint64_t seed, bool update);

  WatermarkModel& model_;
  TrainConfig cfg_;
  std::vector<DistortionKind> kinds_;
  std::unique_ptr<Optimizers> opt_;
};

/// Training data. `stage2` may be empty when the config allows reuse.
struct TrainData {
  ImageSet stage1;
  ImageSet stage2;
  ImageSet validation;
};

struct EpochMetrics {
  std::string stage;
  std::int64_t epoch = 0;  // 1-based within the stage
  double image = 0, message = 0, adversarial = 0, total = 0, discriminator = 0;
  std::optional<double> val_message;
  std::optional<double> val_accuracy_latent;
  std::optional<double> val_accuracy_single_shot;
  std::optional<double> val_psnr;

  nlohmann::json to_json() const;
  static EpochMetrics from_json(const nlohmann::json& j);
};

struct RunOptions {
  /// Checkpoints (last.ckpt, stage1.ckpt, stage2.ckpt) and metrics.jsonl go
  /// here; nothing is written when empty.
  std::filesystem::path output_dir;
  /// Called after each epoch.
  std::function<void(const EpochMetrics&)> on_epoch;
  /// Stop after this many epochs in this call (for testing resume); < 0 = no
  /// limit.
  std::int64_t max_epochs = -1;
};

/// Runs stage 1 then stage 2 from `resume` (or a fresh model) and returns the
/// final checkpoint, optimizer state included. Deterministic given the
/// config and data.
Checkpoint run_training(const ArchConfig& arch, const TrainConfig& cfg, const TrainData& data,
                        const std::optional<Checkpoint>& resume, const RunOptions& options = {});

std::vector<EpochMetrics> read_metrics_log(const std::filesystem::path& path);

}  // namespace rgbmark
