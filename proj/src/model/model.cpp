#include "rgbmark/model/model.hpp"

#include <cmath>

#include "rgbmark/core/error.hpp"
#include "rgbmark/core/image.hpp"
#include "rgbmark/core/rng.hpp"

namespace rgbmark {

namespace {

void append_prefixed(NamedTensors& out, const torch::nn::Module& m, const std::string& prefix) {
  for (const auto& item : m.named_parameters(true)) out.emplace_back(prefix + item.key(), item.value());
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Conv weights: He normal. Linear weights and relative position biases:
// N(0, 0.02), except the message projection, which gets unit-variance
// planes. Norm gains 1, all biases 0. The encoder head starts small so
// the first residuals are far below the cap.
void initialize(NamedTensors& params, std::uint64_t seed) {
  torch::NoGradGuard no_grad;
  auto gen = make_generator(seed);
  for (auto& [name, p] : params) {
    const bool is_weight = ends_with(name, "weight");
    if (ends_with(name, "bias")) {
      p.zero_();
    } else if (is_weight && p.dim() == 1) {
      p.fill_(1.0);
    } else if (is_weight && p.dim() == 4) {
      const double fan_in = static_cast<double>(p.size(1) * p.size(2) * p.size(3));
      double std = std::sqrt(2.0 / fan_in);
      if (name == "encoder.head.weight") std *= 0.1;
      p.copy_(torch::randn(p.sizes(), gen, p.options()) * std);
    } else if (name == "decoder.gate") {
      p.copy_(torch::randn(p.sizes(), gen, p.options()));
    } else if (name == "encoder.message.weight") {
      p.copy_(torch::randn(p.sizes(), gen, p.options()) / std::sqrt(static_cast<double>(p.size(1))));
    } else {
      p.copy_(torch::randn(p.sizes(), gen, p.options()) * 0.02);
    }
  }
}

}  // namespace

WatermarkModel::WatermarkModel(const ArchConfig& cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed) {
  cfg_.validate();
  encoder_ = Encoder(cfg_);
  decoder_ = Decoder(cfg_);
  discriminator_ = Discriminator(cfg_);
  auto params = named_parameters();
  initialize(params, seed);
}

WatermarkModel WatermarkModel::clone() const {
  WatermarkModel copy = from_checkpoint(to_checkpoint());
  copy.to(dtype_);
  return copy;
}

void WatermarkModel::check_input(const torch::Tensor& images, const char* what) const {
  check_batch(images, what);
  if (images.size(2) != cfg_.height || images.size(3) != cfg_.width) {
    throw ArgumentError(std::string(what) + ": expected " + std::to_string(cfg_.height) + "x" +
                        std::to_string(cfg_.width) + " images, got " + std::to_string(images.size(2)) + "x" +
                        std::to_string(images.size(3)));
  }
}

torch::Tensor WatermarkModel::residual(const torch::Tensor& cover, const torch::Tensor& bits) {
  check_input(cover, "encode");
  if (bits.dim() != 2 || bits.size(0) != cover.size(0) || bits.size(1) != cfg_.message_length) {
    throw ArgumentError("encode: message batch must be (B, " + std::to_string(cfg_.message_length) + ")");
  }
  return encoder_(cover.to(dtype_), bits.to(dtype_));
}

torch::Tensor WatermarkModel::encode(const torch::Tensor& cover, const torch::Tensor& bits) {
  return (cover.to(dtype_) + residual(cover, bits)).clamp(0.0, 1.0);
}

torch::Tensor WatermarkModel::decode(const torch::Tensor& image) {
  check_input(image, "decode");
  return decoder_(image.to(dtype_));
}

torch::Tensor WatermarkModel::discriminate(const torch::Tensor& image) {
  check_input(image, "discriminate");
  return torch::sigmoid(discriminator_(image.to(dtype_)));
}

void WatermarkModel::train(bool on) {
  encoder_->train(on);
  decoder_->train(on);
  discriminator_->train(on);
}

void WatermarkModel::to(torch::ScalarType dtype) {
  encoder_->to(dtype);
  decoder_->to(dtype);
  discriminator_->to(dtype);
  dtype_ = dtype;
}

NamedTensors WatermarkModel::named_parameters() const {
  NamedTensors out;
  append_prefixed(out, *encoder_, "encoder.");
  append_prefixed(out, *decoder_, "decoder.");
  append_prefixed(out, *discriminator_, "discriminator.");
  return out;
}

std::vector<torch::Tensor> WatermarkModel::generator_parameters() const {
  auto p = encoder_->parameters();
  auto d = decoder_->parameters();
  p.insert(p.end(), d.begin(), d.end());
  return p;
}

std::vector<torch::Tensor> WatermarkModel::discriminator_parameters() const {
  return discriminator_->parameters();
}

std::string WatermarkModel::fingerprint() const { return rgbmark::fingerprint(named_parameters()); }

Checkpoint WatermarkModel::to_checkpoint() const {
  Checkpoint c;
  c.arch = cfg_;
  c.stage = stage_;
  c.stage1_skipped = stage1_skipped_;
  c.seed = seed_;
  for (const auto& [name, p] : named_parameters()) c.tensors.emplace_back(name, p.detach().clone());
  return c;
}

void WatermarkModel::load_parameters(const Checkpoint& ckpt) {
  torch::NoGradGuard no_grad;
  auto params = named_parameters();
  for (auto& [name, p] : params) {
    const torch::Tensor* stored = ckpt.find(name);
    if (stored == nullptr) throw ConfigError("checkpoint is missing parameter " + name);
    if (stored->sizes() != p.sizes()) {
      throw ConfigError("parameter " + name + " has shape " + c10::str(stored->sizes()) + " in checkpoint, expected " +
                        c10::str(p.sizes()));
    }
    p.copy_(stored->to(p.dtype()));
  }
}

WatermarkModel WatermarkModel::from_checkpoint(const Checkpoint& ckpt) {
  ArchConfig cfg;
  try {
    cfg = ckpt.arch.get<ArchConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad architecture in checkpoint: ") + e.what());
  }
  WatermarkModel m(cfg, ckpt.seed);
  m.load_parameters(ckpt);
  m.stage_ = ckpt.stage;
  m.stage1_skipped_ = ckpt.stage1_skipped;
  return m;
}

WatermarkModel WatermarkModel::load(const std::filesystem::path& path) {
  return from_checkpoint(load_checkpoint(path));
}

}  // namespace rgbmark
