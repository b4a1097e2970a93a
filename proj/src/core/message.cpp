#include "rgbmark/core/message.hpp"

#include <algorithm>
#include <cctype>

#include "rgbmark/core/error.hpp"
#include "rgbmark/core/rng.hpp"

namespace rgbmark {

Message::Message(std::vector<std::uint8_t> bits) : bits_(std::move(bits)) {
  for (auto b : bits_) {
    if (b > 1) throw ArgumentError("message bits must be 0 or 1");
  }
}

std::string Message::to_hex() const {
  if (bits_.size() % 4 != 0) throw ArgumentError("hex form needs a length divisible by 4");
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bits_.size() / 4);
  for (std::size_t i = 0; i < bits_.size(); i += 4) {
    const int v = bits_[i] << 3 | bits_[i + 1] << 2 | bits_[i + 2] << 1 | bits_[i + 3];
    out.push_back(kDigits[v]);
  }
  return out;
}

std::string Message::to_bit_string() const {
  std::string out;
  out.reserve(bits_.size());
  for (auto b : bits_) out.push_back(b ? '1' : '0');
  return out;
}

Message Message::from_hex(std::string_view hex) {
  std::vector<std::uint8_t> bits;
  bits.reserve(hex.size() * 4);
  for (char c : hex) {
    int v = 0;
    if (c >= '0' && c <= '9') {
      v = c - '0';
    } else if (c >= 'a' && c <= 'f') {
      v = c - 'a' + 10;
    } else if (c >= 'A' && c <= 'F') {
      v = c - 'A' + 10;
    } else {
      throw ArgumentError(std::string("invalid hex digit '") + c + "'");
    }
    for (int k = 3; k >= 0; --k) bits.push_back(static_cast<std::uint8_t>((v >> k) & 1));
  }
  return Message(std::move(bits));
}

Message Message::from_bit_string(std::string_view text) {
  std::vector<std::uint8_t> bits;
  bits.reserve(text.size());
  for (char c : text) {
    if (c != '0' && c != '1') throw ArgumentError(std::string("invalid bit '") + c + "'");
    bits.push_back(static_cast<std::uint8_t>(c - '0'));
  }
  return Message(std::move(bits));
}

Message Message::parse(std::string_view text, std::int64_t length) {
  const bool only_bits =
      std::all_of(text.begin(), text.end(), [](char c) { return c == '0' || c == '1'; });
  Message m = (only_bits && static_cast<std::int64_t>(text.size()) == length) ? from_bit_string(text)
                                                                            : from_hex(text);
  if (m.size() != length) {
    throw ArgumentError("message has " + std::to_string(m.size()) + " bits, expected " +
                        std::to_string(length));
  }
  return m;
}

torch::Tensor Message::to_tensor(torch::ScalarType dtype) const {
  auto t = torch::empty({size()}, torch::kFloat32);
  auto* p = t.data_ptr<float>();
  for (std::size_t i = 0; i < bits_.size(); ++i) p[i] = bits_[i];
  return t.to(dtype);
}

Message Message::from_logits(const torch::Tensor& logits) {
  if (logits.dim() != 1) throw ArgumentError("from_logits expects a 1-D tensor");
  auto hard = logits.detach().gt(0).to(torch::kCPU, torch::kUInt8).contiguous();
  const auto* p = hard.data_ptr<std::uint8_t>();
  return Message(std::vector<std::uint8_t>(p, p + hard.numel()));
}

Message random_message(std::int64_t length, std::uint64_t seed) {
  if (length <= 0) throw ArgumentError("message length must be positive");
  Rng rng(mix64(seed));
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(length));
  for (auto& b : bits) b = rng.bit() ? 1 : 0;
  return Message(std::move(bits));
}

torch::Tensor random_message_batch(std::int64_t batch, std::int64_t length, std::uint64_t seed) {
  if (batch <= 0) throw ArgumentError("batch must be positive");
  auto out = torch::empty({batch, length}, torch::kFloat32);
  for (std::int64_t i = 0; i < batch; ++i) {
    out[i].copy_(random_message(length, derive_seed(seed, {static_cast<std::uint64_t>(i)})).to_tensor());
  }
  return out;
}

}  // namespace rgbmark
