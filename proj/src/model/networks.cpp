#include "rgbmark/model/networks.hpp"

#include "rgbmark/core/error.hpp"

namespace rgbmark {

namespace F = torch::nn::functional;

torch::Tensor message_to_planes(const torch::Tensor& bits, std::int64_t h, std::int64_t w) {
  if (bits.dim() != 2) throw ArgumentError("message_to_planes expects (B, L) bits");
  if (h < 1 || w < 1) throw ArgumentError("message_to_planes needs a positive spatial size");
  return (bits * 2 - 1).view({bits.size(0), bits.size(1), 1, 1}).expand({bits.size(0), bits.size(1), h, w});
}

EncoderImpl::EncoderImpl(const ArchConfig& cfg) : scales_(cfg.encoder_scales), cap_(cfg.perturbation_cap) {
  const std::int64_t l = cfg.message_length;
  auto ch = [&](std::int64_t k) { return cfg.base_channels << k; };
  for (std::int64_t k = 0; k < scales_; ++k) {
    const std::int64_t in = (k == 0 ? 3 : ch(k - 1)) + l;
    down_.push_back(register_module("down" + std::to_string(k), ConvBlock(in, ch(k))));
  }
  // up_[k] rebuilds scale k from scale k+1; message planes join again here.
  for (std::int64_t k = 0; k + 1 < scales_; ++k) {
    up_.push_back(register_module("up" + std::to_string(k), ConvBlock(ch(k + 1) + ch(k) + l, ch(k))));
  }
  head_ = register_module("head", torch::nn::Conv2d(torch::nn::Conv2dOptions(ch(0) + 3, 3, 1)));
  message_ = register_module("message", torch::nn::Linear(l, l * kMessageGrid * kMessageGrid));
}

torch::Tensor EncoderImpl::planes(const torch::Tensor& grid, std::int64_t h, std::int64_t w) const {
  return F::interpolate(grid, F::InterpolateFuncOptions()
                                  .size(std::vector<std::int64_t>{h, w})
                                  .mode(torch::kBilinear)
                                  .align_corners(false));
}

torch::Tensor EncoderImpl::forward(const torch::Tensor& cover, const torch::Tensor& bits) {
  const auto l = bits.size(1);
  auto grid = message_(bits * 2 - 1).view({bits.size(0), l, kMessageGrid, kMessageGrid});
  std::vector<torch::Tensor> skips;
  auto x = cover;
  for (std::int64_t k = 0; k < scales_; ++k) {
    if (k > 0) x = F::avg_pool2d(x, F::AvgPool2dFuncOptions(2));
    x = down_[static_cast<std::size_t>(k)](torch::cat({x, planes(grid, x.size(2), x.size(3))}, 1));
    skips.push_back(x);
  }
  for (std::int64_t k = scales_ - 2; k >= 0; --k) {
    const auto& skip = skips[static_cast<std::size_t>(k)];
    auto up = F::interpolate(x, F::InterpolateFuncOptions()
                                    .size(std::vector<std::int64_t>{skip.size(2), skip.size(3)})
                                    .mode(torch::kBilinear)
                                    .align_corners(false));
    x = up_[static_cast<std::size_t>(k)](
        torch::cat({up, skip, planes(grid, skip.size(2), skip.size(3))}, 1));
  }
  return cap_ * torch::tanh(head_(torch::cat({x, cover}, 1)));
}

DecoderImpl::DecoderImpl(const ArchConfig& cfg) : dim_(cfg.decoder_dim) {
  const std::int64_t half = std::max<std::int64_t>(8, cfg.decoder_dim / 2);
  stem_ = register_module(
      "stem", torch::nn::Sequential(ConvBlock(3, half, 1), ConvBlock(half, half, 2), ConvBlock(half, dim_, 2)));
  const std::int64_t gh = cfg.height / kDecoderStemStride;
  const std::int64_t gw = cfg.width / kDecoderStemStride;
  for (std::int64_t i = 0; i < cfg.decoder_blocks; ++i) {
    const std::int64_t shift = (i % 2 == 1) ? cfg.window_size / 2 : 0;
    blocks_.push_back(register_module("block" + std::to_string(i),
                                      SwinBlock(dim_, cfg.attention_heads, cfg.window_size, shift, gh, gw,
                                                cfg.mlp_ratio)));
  }
  norm_ = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim_})));
  head_ = register_module("head", torch::nn::Linear(dim_, cfg.message_length));
  gate_ = register_parameter("gate", torch::randn({1, gh * gw, dim_}));
}

torch::Tensor DecoderImpl::forward(const torch::Tensor& image) {
  auto x = stem_->forward(image);  // (B, C, h, w)
  x = x.flatten(2).transpose(1, 2);  // (B, h*w, C)
  for (auto& block : blocks_) x = block(x);
  return head_((norm_(x) * gate_).mean(1));
}

DiscriminatorImpl::DiscriminatorImpl(const ArchConfig& cfg) {
  const std::int64_t c = cfg.discriminator_channels;
  auto layer = [](std::int64_t in, std::int64_t out) {
    return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(2).padding(1));
  };
  features_ = register_module(
      "features", torch::nn::Sequential(layer(3, c), torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2)),
                                        layer(c, c), torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2)),
                                        layer(c, 2 * c), torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2)),
                                        layer(2 * c, 2 * c), torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.2))));
  head_ = register_module("head", torch::nn::Linear(2 * c, 1));
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& image) {
  return head_(features_->forward(image).mean({2, 3})).squeeze(1);
}

}  // namespace rgbmark
