#include "rgbmark/losses/losses.hpp"

#include <set>

#include "rgbmark/core/error.hpp"

namespace rgbmark {

namespace F = torch::nn::functional;

void LossWeights::validate() const {
  if (alpha < 0 || image < 0 || message < 0 || adversarial < 0) {
    throw ConfigError("loss weights must be non-negative");
  }
}

void to_json(nlohmann::json& j, const LossWeights& w) {
  j = nlohmann::json{{"alpha", w.alpha}, {"lambda_image", w.image}, {"lambda_message", w.message},
                     {"lambda_adversarial", w.adversarial}};
}

void from_json(const nlohmann::json& j, LossWeights& w) {
  static const std::set<std::string> kKeys = {"alpha", "lambda_image", "lambda_message", "lambda_adversarial"};
  for (const auto& [key, _] : j.items()) {
    if (!kKeys.contains(key)) throw ConfigError("unknown key: weights." + key);
  }
  if (j.contains("alpha")) j.at("alpha").get_to(w.alpha);
  if (j.contains("lambda_image")) j.at("lambda_image").get_to(w.image);
  if (j.contains("lambda_message")) j.at("lambda_message").get_to(w.message);
  if (j.contains("lambda_adversarial")) j.at("lambda_adversarial").get_to(w.adversarial);
}

namespace {

constexpr std::int64_t kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

torch::Tensor gaussian_1d(const torch::TensorOptions& opts) {
  auto g = torch::arange(kWindow, opts) - static_cast<double>(kWindow / 2);
  g = torch::exp(-(g * g) / (2 * kSigma * kSigma));
  return g / g.sum();
}

/// Separable depthwise Gaussian filter with zero padding; the caller divides
/// by the filtered ones-image to renormalize at the borders.
torch::Tensor filter(const torch::Tensor& x, const torch::Tensor& g) {
  const auto c = x.size(1);
  const auto r = kWindow / 2;
  auto y = F::conv2d(x, g.view({1, 1, 1, kWindow}).repeat({c, 1, 1, 1}),
                     F::Conv2dFuncOptions().padding(torch::IntArrayRef{0, r}).groups(c));
  return F::conv2d(y, g.view({1, 1, kWindow, 1}).repeat({c, 1, 1, 1}),
                   F::Conv2dFuncOptions().padding(torch::IntArrayRef{r, 0}).groups(c));
}

void check_same(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (!a.defined() || !b.defined() || a.sizes() != b.sizes()) {
    throw ArgumentError(std::string(what) + ": inputs must have the same shape");
  }
}

}  // namespace

torch::Tensor ssim(const torch::Tensor& a_in, const torch::Tensor& b_in) {
  check_same(a_in, b_in, "ssim");
  if (a_in.dim() != 3 && a_in.dim() != 4) throw ArgumentError("ssim: expected (3,H,W) or (B,3,H,W)");
  auto a = a_in.dim() == 3 ? a_in.unsqueeze(0) : a_in;
  auto b = b_in.dim() == 3 ? b_in.unsqueeze(0) : b_in;
  const auto g = gaussian_1d(a.options());
  const auto norm = filter(torch::ones({1, 1, a.size(2), a.size(3)}, a.options()), g);
  auto mean = [&](const torch::Tensor& x) { return filter(x, g) / norm; };
  auto mu_a = mean(a), mu_b = mean(b);
  auto var_a = mean(a * a) - mu_a * mu_a;
  auto var_b = mean(b * b) - mu_b * mu_b;
  auto cov = mean(a * b) - mu_a * mu_b;
  auto num = (2 * mu_a * mu_b + kC1) * (2 * cov + kC2);
  auto den = (mu_a * mu_a + mu_b * mu_b + kC1) * (var_a + var_b + kC2);
  return (num / den).mean();
}

torch::Tensor loss_image(const torch::Tensor& cover, const torch::Tensor& watermarked, double alpha) {
  check_same(cover, watermarked, "loss_image");
  return F::mse_loss(watermarked, cover) + alpha * (1.0 - ssim(cover, watermarked));
}

torch::Tensor loss_message(const torch::Tensor& bits, const torch::Tensor& logits) {
  check_same(bits, logits, "loss_message");
  return (torch::sigmoid(logits) - bits).pow(2).mean();
}

AdversarialLosses loss_adversarial(const torch::Tensor& score_real, const torch::Tensor& score_fake) {
  auto real = score_real.clamp(kScoreEpsilon, 1.0 - kScoreEpsilon);
  auto fake = score_fake.clamp(kScoreEpsilon, 1.0 - kScoreEpsilon);
  return {-(torch::log(real) + torch::log(1.0 - fake)).mean(), -torch::log(fake).mean()};
}

LossBreakdown combine_losses(const torch::Tensor& image, const torch::Tensor& message,
                             const torch::Tensor& adversarial, const LossWeights& weights) {
  weights.validate();
  return {image, message, adversarial,
          weights.image * image + weights.message * message + weights.adversarial * adversarial};
}

LossBreakdown loss_total(const LossInputs& in, const LossWeights& weights, Stage stage) {
  const torch::Tensor* cover = &in.cover;
  const torch::Tensor* watermarked = &in.watermarked;
  if (stage == Stage::kStage2) {
    if (!in.cover_primed || !in.watermarked_primed) {
      throw ArgumentError("stage-2 losses need the primed cover/watermark pair");
    }
    cover = &*in.cover_primed;
    watermarked = &*in.watermarked_primed;
  }
  auto li = loss_image(*cover, *watermarked, weights.alpha);
  auto lm = loss_message(in.bits, in.logits);
  auto la = -torch::log(in.fake_score.clamp(kScoreEpsilon, 1.0 - kScoreEpsilon)).mean();
  return combine_losses(li, lm, la, weights);
}

}  // namespace rgbmark
