#pragma once

#include <cstdint>

#include <torch/torch.h>

namespace rgbmark {

/// conv3x3 -> GroupNorm -> LeakyReLU, twice.
class ConvBlockImpl : public torch::nn::Module {
 public:
  ConvBlockImpl(std::int64_t in_channels, std::int64_t out_channels, std::int64_t stride = 1);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
  torch::nn::GroupNorm norm1_{nullptr}, norm2_{nullptr};
};
TORCH_MODULE(ConvBlock);

/// Multi-head self-attention inside non-overlapping windows with a learned
/// relative position bias.
class WindowAttentionImpl : public torch::nn::Module {
 public:
  WindowAttentionImpl(std::int64_t dim, std::int64_t window, std::int64_t heads);
  /// x: (num_windows*B, window*window, dim). mask: (num_windows, N, N) of
  /// additive biases or undefined.
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& mask);

 private:
  std::int64_t dim_, window_, heads_;
  double scale_;
  torch::nn::Linear qkv_{nullptr}, proj_{nullptr};
  torch::Tensor bias_table_;
  torch::Tensor bias_index_;
};
TORCH_MODULE(WindowAttention);

/// Pre-norm transformer block over (B, H*W, C) tokens with (optionally
/// cyclically shifted) window attention.
class SwinBlockImpl : public torch::nn::Module {
 public:
  SwinBlockImpl(std::int64_t dim, std::int64_t heads, std::int64_t window, std::int64_t shift,
                std::int64_t grid_h, std::int64_t grid_w, std::int64_t mlp_ratio);
  torch::Tensor forward(const torch::Tensor& x);

  std::int64_t window() const { return window_; }
  std::int64_t shift() const { return shift_; }

 private:
  std::int64_t dim_, window_, shift_, grid_h_, grid_w_;
  torch::nn::LayerNorm norm1_{nullptr}, norm2_{nullptr};
  WindowAttention attn_{nullptr};
  torch::nn::Linear fc1_{nullptr}, fc2_{nullptr};
  torch::Tensor mask_;
};
TORCH_MODULE(SwinBlock);

/// (B, H, W, C) -> (B*nW, w*w, C)
torch::Tensor window_partition(const torch::Tensor& x, std::int64_t window);
/// Inverse of window_partition.
torch::Tensor window_reverse(const torch::Tensor& windows, std::int64_t window, std::int64_t h,
                             std::int64_t w);

}  // namespace rgbmark
