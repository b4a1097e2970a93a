#include "rgbmark/core/image.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "rgbmark/core/error.hpp"

namespace rgbmark {

namespace F = torch::nn::functional;

void check_image(const torch::Tensor& img, const char* what) {
  if (!img.defined() || img.dim() != 3 || img.size(0) != 3 || !img.is_floating_point()) {
    throw ArgumentError(std::string(what) + ": expected a floating (3, H, W) tensor");
  }
}

void check_batch(const torch::Tensor& batch, const char* what) {
  if (!batch.defined() || batch.dim() != 4 || batch.size(1) != 3 || !batch.is_floating_point()) {
    throw ArgumentError(std::string(what) + ": expected a floating (B, 3, H, W) tensor");
  }
}

ImageSize size_of(const torch::Tensor& t) {
  if (t.dim() < 2) throw ArgumentError("size_of: tensor has fewer than 2 dims");
  return {t.size(-2), t.size(-1)};
}

namespace {

cv::Mat center_crop_to_aspect(const cv::Mat& m, ImageSize size) {
  const double target = static_cast<double>(size.width) / static_cast<double>(size.height);
  const double actual = static_cast<double>(m.cols) / static_cast<double>(m.rows);
  if (std::abs(actual - target) < 1e-9) return m;
  int w = m.cols, h = m.rows;
  if (actual > target) {
    w = std::max(1, static_cast<int>(std::lround(h * target)));
  } else {
    h = std::max(1, static_cast<int>(std::lround(w / target)));
  }
  return m(cv::Rect((m.cols - w) / 2, (m.rows - h) / 2, w, h));
}

// Same rounding for files and for quantize_roundtrip.
inline std::uint8_t to_byte(float v) {
  const float c = std::min(1.0f, std::max(0.0f, v));
  return static_cast<std::uint8_t>(std::floor(c * 255.0f + 0.5f));
}

}  // namespace

torch::Tensor load_image(const std::filesystem::path& path, ImageSize size) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw IoError("cannot read image: " + path.string());
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  if (rgb.rows != size.height || rgb.cols != size.width) {
    cv::Mat cropped = center_crop_to_aspect(rgb, size);
    cv::Mat resized;
    cv::resize(cropped, resized, cv::Size(static_cast<int>(size.width), static_cast<int>(size.height)),
               0, 0, cv::INTER_LINEAR);
    rgb = resized;
  }
  if (!rgb.isContinuous()) rgb = rgb.clone();
  return from_rgb_bytes(rgb.ptr<std::uint8_t>(), size);
}

std::vector<std::uint8_t> to_rgb_bytes(const torch::Tensor& img) {
  check_image(img);
  const auto hwc = img.detach().to(torch::kCPU, torch::kFloat32).permute({1, 2, 0}).contiguous();
  const float* src = hwc.data_ptr<float>();
  std::vector<std::uint8_t> out(static_cast<std::size_t>(hwc.numel()));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = to_byte(src[i]);
  return out;
}

torch::Tensor from_rgb_bytes(const std::uint8_t* data, ImageSize size) {
  auto hwc = torch::from_blob(const_cast<std::uint8_t*>(data), {size.height, size.width, 3}, torch::kUInt8);
  return hwc.permute({2, 0, 1}).to(torch::kFloat32).div(255.0f).contiguous();
}

void save_image(const torch::Tensor& img, const std::filesystem::path& path) {
  check_image(img);
  const ImageSize size = size_of(img);
  auto bytes = to_rgb_bytes(img);
  cv::Mat rgb(static_cast<int>(size.height), static_cast<int>(size.width), CV_8UC3, bytes.data());
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  std::string target = path.string();
  if (!path.has_extension()) target += ".png";
  bool ok = false;
  try {
    ok = cv::imwrite(target, bgr);
  } catch (const cv::Exception& e) {
    throw IoError("cannot write image " + target + ": " + e.what());
  }
  if (!ok) throw IoError("cannot write image: " + target);
}

torch::Tensor quantize_roundtrip(const torch::Tensor& img) {
  return img.clamp(0.0, 1.0).mul(255.0).add(0.5).floor().div(255.0);
}

torch::Tensor resize_to(const torch::Tensor& t, ImageSize size) {
  if (size_of(t) == size) return t;
  const bool single = t.dim() == 3;
  auto batch = single ? t.unsqueeze(0) : t;
  auto out = F::interpolate(batch, F::InterpolateFuncOptions()
                                       .size(std::vector<int64_t>{size.height, size.width})
                                       .mode(torch::kBilinear)
                                       .align_corners(false));
  out = out.clamp(0.0, 1.0);
  return single ? out.squeeze(0) : out;
}

}  // namespace rgbmark
