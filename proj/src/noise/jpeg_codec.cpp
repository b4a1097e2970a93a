#include <vector>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "rgbmark/core/error.hpp"
#include "rgbmark/core/image.hpp"
#include "rgbmark/noise/distortion.hpp"

namespace rgbmark {

torch::Tensor jpeg_codec(const torch::Tensor& batch, int quality) {
  check_batch(batch, "jpeg_codec");
  if (quality < 1 || quality > 100) throw ArgumentError("JPEG quality must be in [1, 100]");
  torch::NoGradGuard no_grad;
  const ImageSize size = size_of(batch);
  auto out = torch::empty({batch.size(0), 3, size.height, size.width}, torch::kFloat32);
  const std::vector<int> params = {cv::IMWRITE_JPEG_QUALITY, quality};
  for (std::int64_t i = 0; i < batch.size(0); ++i) {
    auto bytes = to_rgb_bytes(batch[i]);
    cv::Mat rgb(static_cast<int>(size.height), static_cast<int>(size.width), CV_8UC3, bytes.data());
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    std::vector<unsigned char> encoded;
    if (!cv::imencode(".jpg", bgr, encoded, params)) throw IoError("JPEG encoding failed");
    cv::Mat decoded = cv::imdecode(encoded, cv::IMREAD_COLOR);
    cv::cvtColor(decoded, rgb, cv::COLOR_BGR2RGB);
    out[i].copy_(from_rgb_bytes(rgb.ptr<std::uint8_t>(), size));
  }
  return out.to(batch.dtype());
}

}  // namespace rgbmark
