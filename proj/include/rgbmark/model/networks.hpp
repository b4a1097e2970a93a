#pragma once

#include <vector>

#include <torch/torch.h>

#include "rgbmark/model/arch_config.hpp"
#include "rgbmark/model/layers.hpp"

namespace rgbmark {

/// Bits remapped 0 -> -1, 1 -> +1 and broadcast: (B, L) -> (B, L, h, w).
torch::Tensor message_to_planes(const torch::Tensor& bits, std::int64_t h, std::int64_t w);

/// Side of the coarse grid the message is projected onto before it is
/// resized into planes for each scale.
inline constexpr std::int64_t kMessageGrid = 8;

/// U-shaped encoder. The ±1 bits are mapped by a linear layer to L planes on
/// a kMessageGrid grid; these are resized and concatenated to the features at
/// every scale on the way down and on the way up. The head predicts a
/// residual bounded by cap * tanh.
class EncoderImpl : public torch::nn::Module {
 public:
  explicit EncoderImpl(const ArchConfig& cfg);
  /// Residual r with |r| <= cap, same shape as `cover`.
  torch::Tensor forward(const torch::Tensor& cover, const torch::Tensor& bits);

 private:
  std::int64_t scales_;
  double cap_;
  std::vector<ConvBlock> down_;
  std::vector<ConvBlock> up_;
  torch::nn::Conv2d head_{nullptr};
  torch::nn::Linear message_{nullptr};

  torch::Tensor planes(const torch::Tensor& grid, std::int64_t h, std::int64_t w) const;
};
TORCH_MODULE(Encoder);

/// Conv stem (stride 4), a stack of window-attention blocks alternating
/// plain and shifted windows, a learned per-token gain, global average
/// pooling and a linear head producing one logit per message bit.
class DecoderImpl : public torch::nn::Module {
 public:
  explicit DecoderImpl(const ArchConfig& cfg);
  torch::Tensor forward(const torch::Tensor& image);

 private:
  std::int64_t dim_;
  torch::nn::Sequential stem_{nullptr};
  std::vector<SwinBlock> blocks_;
  torch::nn::LayerNorm norm_{nullptr};
  torch::nn::Linear head_{nullptr};
  torch::Tensor gate_;
};
TORCH_MODULE(Decoder);

/// Four strided conv layers, global pooling, one logit.
class DiscriminatorImpl : public torch::nn::Module {
 public:
  explicit DiscriminatorImpl(const ArchConfig& cfg);
  /// Realness logit, shape (B,).
  torch::Tensor forward(const torch::Tensor& image);

 private:
  torch::nn::Sequential features_{nullptr};
  torch::nn::Linear head_{nullptr};
};
TORCH_MODULE(Discriminator);

}  // namespace rgbmark
