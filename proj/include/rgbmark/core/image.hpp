#pragma once

#include <cstdint>
#include <filesystem>

#include <torch/torch.h>

namespace rgbmark {

// Images are float32 tensors of shape (3, H, W) with values in [0, 1];
// batches stack them as (B, 3, H, W).

struct ImageSize {
  std::int64_t height = 128;
  std::int64_t width = 128;

  friend bool operator==(const ImageSize&, const ImageSize&) = default;
};

/// Throws ArgumentError unless `img` is (3, H, W) floating point.
void check_image(const torch::Tensor& img, const char* what = "image");
/// Throws ArgumentError unless `batch` is (B, 3, H, W) floating point.
void check_batch(const torch::Tensor& batch, const char* what = "batch");

ImageSize size_of(const torch::Tensor& img_or_batch);

/// Reads an 8-bit image, replicating grayscale over channels, and returns
/// pixel/255. Non-matching aspect ratios are center-cropped before the
/// bilinear resize; an image already at `size` is returned byte-exact.
torch::Tensor load_image(const std::filesystem::path& path, ImageSize size);

/// Writes round-half-up(clamp(v, 0, 1) * 255). The codec follows the file
/// extension; PNG unless told otherwise.
void save_image(const torch::Tensor& img, const std::filesystem::path& path);

/// round-half-up(clamp(v, 0, 1) * 255) / 255 elementwise: the 8-bit storage
/// path. Works on single images and batches.
torch::Tensor quantize_roundtrip(const torch::Tensor& img);

/// (3, H, W) tensor to an interleaved RGB byte buffer, H*W*3 bytes.
std::vector<std::uint8_t> to_rgb_bytes(const torch::Tensor& img);
torch::Tensor from_rgb_bytes(const std::uint8_t* data, ImageSize size);

/// Bilinear resize of a single image or batch; no-op if already `size`.
torch::Tensor resize_to(const torch::Tensor& img_or_batch, ImageSize size);

}  // namespace rgbmark
