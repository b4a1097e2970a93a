#pragma once

#include <optional>

#include <json.hpp>
#include <torch/torch.h>

#include "rgbmark/core/checkpoint.hpp"

namespace rgbmark {

struct LossWeights {
  /// SSIM weight inside the image loss.
  double alpha = 0.005;
  double image = 0.2;        // lambda_1
  double message = 1.0;      // lambda_2
  double adversarial = 0.001;  // lambda_3

  void validate() const;
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

void to_json(nlohmann::json& j, const LossWeights& w);
void from_json(const nlohmann::json& j, LossWeights& w);

/// Component losses and their weighted sum. Tensors are 0-dim and keep
/// their autograd history.
struct LossBreakdown {
  torch::Tensor image;
  torch::Tensor message;
  torch::Tensor adversarial;
  torch::Tensor total;
};

/// Mean single-scale SSIM over channels and positions, using an 11x11
/// Gaussian window (sigma 1.5) and C1 = 0.01^2, C2 = 0.03^2 for unit data
/// range. Window sums are renormalized at the borders, so local means of a
/// constant image are exact everywhere and images smaller than the window
/// are handled. Accepts (3,H,W) or (B,3,H,W).
torch::Tensor ssim(const torch::Tensor& a, const torch::Tensor& b);

/// MSE(cover, watermarked) + alpha * (1 - ssim).
torch::Tensor loss_image(const torch::Tensor& cover, const torch::Tensor& watermarked, double alpha);

/// mean((sigmoid(logits) - bits)^2).
torch::Tensor loss_message(const torch::Tensor& bits, const torch::Tensor& logits);

struct AdversarialLosses {
  /// -(log D(real) + log(1 - D(fake))), batch mean.
  torch::Tensor discriminator;
  /// -log D(fake), batch mean (non-saturating form).
  torch::Tensor generator;
};

/// Scores are clamped to [1e-7, 1 - 1e-7] before the logs.
AdversarialLosses loss_adversarial(const torch::Tensor& score_real, const torch::Tensor& score_fake);

inline constexpr double kScoreEpsilon = 1e-7;

/// Images and decoder/discriminator outputs of one step. In stage 2 the
/// primed pair (I_c', I_w') replaces (I_c, I_w) in every term, and the
/// logits and fake scores must come from the primed watermark image.
struct LossInputs {
  torch::Tensor cover;
  torch::Tensor watermarked;
  std::optional<torch::Tensor> cover_primed;
  std::optional<torch::Tensor> watermarked_primed;
  torch::Tensor bits;
  torch::Tensor logits;
  torch::Tensor fake_score;
};

/// Weighted total lambda1*L_I + lambda2*L_M + lambda3*L_A for the given
/// stage. Stage 2 without the primed pair is an ArgumentError.
LossBreakdown loss_total(const LossInputs& in, const LossWeights& weights, Stage stage);

/// Recombines fixed component values with `weights`.
LossBreakdown combine_losses(const torch::Tensor& image, const torch::Tensor& message,
                             const torch::Tensor& adversarial, const LossWeights& weights);

}  // namespace rgbmark
