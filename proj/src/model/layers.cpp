#include "rgbmark/model/layers.hpp"

#include <cmath>

namespace rgbmark {

namespace F = torch::nn::functional;

namespace {

std::int64_t norm_groups(std::int64_t channels) {
  for (std::int64_t g : {8, 4, 2}) {
    if (channels % g == 0) return g;
  }
  return 1;
}

}  // namespace

ConvBlockImpl::ConvBlockImpl(std::int64_t in_channels, std::int64_t out_channels, std::int64_t stride) {
  conv1_ = register_module(
      "conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, out_channels, 3).stride(stride).padding(1)));
  norm1_ = register_module("norm1", torch::nn::GroupNorm(norm_groups(out_channels), out_channels));
  conv2_ = register_module(
      "conv2", torch::nn::Conv2d(torch::nn::Conv2dOptions(out_channels, out_channels, 3).padding(1)));
  norm2_ = register_module("norm2", torch::nn::GroupNorm(norm_groups(out_channels), out_channels));
}

torch::Tensor ConvBlockImpl::forward(const torch::Tensor& x) {
  auto y = F::leaky_relu(norm1_(conv1_(x)), F::LeakyReLUFuncOptions().negative_slope(0.2));
  return F::leaky_relu(norm2_(conv2_(y)), F::LeakyReLUFuncOptions().negative_slope(0.2));
}

WindowAttentionImpl::WindowAttentionImpl(std::int64_t dim, std::int64_t window, std::int64_t heads)
    : dim_(dim), window_(window), heads_(heads), scale_(1.0 / std::sqrt(static_cast<double>(dim / heads))) {
  qkv_ = register_module("qkv", torch::nn::Linear(dim, 3 * dim));
  proj_ = register_module("proj", torch::nn::Linear(dim, dim));
  const std::int64_t span = 2 * window - 1;
  bias_table_ = register_parameter("relative_position_bias_table", torch::zeros({span * span, heads}));

  // index[(i1,j1),(i2,j2)] = (i1-i2+w-1)*(2w-1) + (j1-j2+w-1). Kept as a plain
  // member: Module::to(dtype) would otherwise cast it to floating point.
  const std::int64_t n = window * window;
  bias_index_ = torch::empty({n * n}, torch::kInt64);
  auto* idx = bias_index_.data_ptr<std::int64_t>();
  for (std::int64_t a = 0; a < n; ++a) {
    for (std::int64_t b = 0; b < n; ++b) {
      const std::int64_t di = a / window - b / window + window - 1;
      const std::int64_t dj = a % window - b % window + window - 1;
      idx[a * n + b] = di * span + dj;
    }
  }
}

torch::Tensor WindowAttentionImpl::forward(const torch::Tensor& x, const torch::Tensor& mask) {
  const auto windows = x.size(0);
  const auto n = x.size(1);
  const auto head_dim = dim_ / heads_;
  auto qkv = qkv_(x).reshape({windows, n, 3, heads_, head_dim}).permute({2, 0, 3, 1, 4});
  auto q = qkv[0] * scale_;
  auto k = qkv[1];
  auto v = qkv[2];
  auto attn = q.matmul(k.transpose(-2, -1));
  auto bias = bias_table_.index_select(0, bias_index_).view({n, n, heads_}).permute({2, 0, 1}).contiguous();
  attn = attn + bias.unsqueeze(0);
  if (mask.defined()) {
    const auto nw = mask.size(0);
    attn = attn.view({windows / nw, nw, heads_, n, n}) + mask.to(attn.dtype()).unsqueeze(1).unsqueeze(0);
    attn = attn.view({windows, heads_, n, n});
  }
  attn = torch::softmax(attn, -1);
  auto out = attn.matmul(v).transpose(1, 2).reshape({windows, n, dim_});
  return proj_(out);
}

torch::Tensor window_partition(const torch::Tensor& x, std::int64_t window) {
  const auto b = x.size(0), h = x.size(1), w = x.size(2), c = x.size(3);
  return x.view({b, h / window, window, w / window, window, c})
      .permute({0, 1, 3, 2, 4, 5})
      .contiguous()
      .view({-1, window * window, c});
}

torch::Tensor window_reverse(const torch::Tensor& windows, std::int64_t window, std::int64_t h, std::int64_t w) {
  const auto c = windows.size(-1);
  const auto b = windows.size(0) / ((h / window) * (w / window));
  return windows.view({b, h / window, w / window, window, window, c})
      .permute({0, 1, 3, 2, 4, 5})
      .contiguous()
      .view({b, h, w, c});
}

SwinBlockImpl::SwinBlockImpl(std::int64_t dim, std::int64_t heads, std::int64_t window, std::int64_t shift,
                             std::int64_t grid_h, std::int64_t grid_w, std::int64_t mlp_ratio)
    : dim_(dim), window_(window), shift_(shift), grid_h_(grid_h), grid_w_(grid_w) {
  if (std::min(grid_h, grid_w) <= window_) {
    window_ = std::min(grid_h, grid_w);
    shift_ = 0;
  }
  norm1_ = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  attn_ = register_module("attn", WindowAttention(dim, window_, heads));
  norm2_ = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  fc1_ = register_module("fc1", torch::nn::Linear(dim, dim * mlp_ratio));
  fc2_ = register_module("fc2", torch::nn::Linear(dim * mlp_ratio, dim));

  if (shift_ > 0) {
    // Label the regions created by the cyclic shift and forbid attention
    // between tokens that were not adjacent before the roll.
    auto regions = torch::zeros({1, grid_h_, grid_w_, 1});
    const std::int64_t hb[4] = {0, grid_h_ - window_, grid_h_ - shift_, grid_h_};
    const std::int64_t wb[4] = {0, grid_w_ - window_, grid_w_ - shift_, grid_w_};
    float label = 0;
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        regions.slice(1, hb[i], hb[i + 1]).slice(2, wb[j], wb[j + 1]).fill_(label);
        label += 1;
      }
    }
    auto mw = window_partition(regions, window_).squeeze(-1);
    auto diff = mw.unsqueeze(1) - mw.unsqueeze(2);
    // exp(-1e4) underflows to exactly zero; a milder fill such as -100
    // leaves denormals that stall the following matmul on CPU.
    mask_ = torch::zeros_like(diff).masked_fill(diff != 0, -1e4);
  }
}

torch::Tensor SwinBlockImpl::forward(const torch::Tensor& x) {
  const auto b = x.size(0);
  auto shortcut = x;
  auto y = norm1_(x).view({b, grid_h_, grid_w_, dim_});
  if (shift_ > 0) y = torch::roll(y, {-shift_, -shift_}, {1, 2});
  auto windows = window_partition(y, window_);
  windows = attn_(windows, mask_);
  y = window_reverse(windows, window_, grid_h_, grid_w_);
  if (shift_ > 0) y = torch::roll(y, {shift_, shift_}, {1, 2});
  auto out = shortcut + y.reshape({b, grid_h_ * grid_w_, dim_});
  return out + fc2_(F::gelu(fc1_(norm2_(out))));
}

}  // namespace rgbmark
