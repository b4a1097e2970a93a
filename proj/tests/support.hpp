#pragma once

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>

#include <torch/torch.h>

#include "rgbmark/core/corpus.hpp"
#include "rgbmark/core/rng.hpp"
#include "rgbmark/model/arch_config.hpp"

namespace testing {

inline std::filesystem::path data_dir() { return RGBMARK_DATA_DIR; }

/// 16x16 model with 8-bit messages, small enough for exhaustive checks.
inline rgbmark::ArchConfig toy_arch() {
  rgbmark::ArchConfig c;
  c.height = c.width = 16;
  c.base_channels = 8;
  c.encoder_scales = 3;
  c.decoder_blocks = 2;
  c.decoder_dim = 16;
  c.attention_heads = 2;
  c.window_size = 4;
  c.discriminator_channels = 8;
  c.message_length = 8;
  return c;
}

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("rgbmark_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::vector<std::filesystem::path> photo_sources() {
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(data_dir() / "sources" / "photo")) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

/// `n` natural-image patches of the given size as a (n, 3, h, w) batch.
inline torch::Tensor natural_batch(std::int64_t n, std::int64_t h, std::int64_t w, std::uint64_t seed) {
  TempDir dir;
  rgbmark::build_patch_corpus(photo_sources(), dir.path(), n, {h, w}, seed);
  return rgbmark::load_corpus(rgbmark::Corpus::scan(dir.path()), {h, w}).images;
}

inline rgbmark::ImageSet natural_set(std::int64_t n, std::int64_t h, std::int64_t w, std::uint64_t seed) {
  TempDir dir;
  rgbmark::build_patch_corpus(photo_sources(), dir.path(), n, {h, w}, seed);
  auto set = rgbmark::load_corpus(rgbmark::Corpus::scan(dir.path()), {h, w});
  set.corpus_id = "natural" + std::to_string(seed) + ":" + std::to_string(n);
  return set;
}

inline torch::Tensor uniform(std::vector<std::int64_t> shape, std::uint64_t seed, double lo = 0.0, double hi = 1.0,
                             torch::ScalarType dtype = torch::kFloat32) {
  auto gen = rgbmark::make_generator(seed);
  return (torch::rand(shape, gen, torch::TensorOptions().dtype(torch::kFloat64)) * (hi - lo) + lo).to(dtype);
}

/// Relative error ||a - b|| / max(||a||, ||b||) between the autograd
/// gradient of scalar f at x and its central finite differences.
inline double gradient_error(const std::function<torch::Tensor(const torch::Tensor&)>& f, const torch::Tensor& x0,
                             double h = 1e-6) {
  auto x = x0.to(torch::kFloat64).detach().clone().requires_grad_(true);
  auto y = f(x);
  auto analytic = torch::autograd::grad({y}, {x})[0].detach().flatten();
  auto base = x0.to(torch::kFloat64).detach().clone().flatten();
  auto numeric = torch::empty_like(base);
  torch::NoGradGuard no_grad;
  auto shape = x0.sizes().vec();
  for (std::int64_t i = 0; i < base.numel(); ++i) {
    auto plus = base.clone();
    auto minus = base.clone();
    plus[i] += h;
    minus[i] -= h;
    numeric[i] = (f(plus.view(shape)).item<double>() - f(minus.view(shape)).item<double>()) / (2 * h);
  }
  const double denom = std::max({analytic.norm().item<double>(), numeric.norm().item<double>(), 1e-30});
  return (analytic - numeric).norm().item<double>() / denom;
}

}  // namespace testing
