#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <torch/torch.h>

namespace rgbmark {

/// Binary watermark payload. Bits are exactly 0 or 1.
class Message {
 public:
  Message() = default;
  explicit Message(std::vector<std::uint8_t> bits);

  std::int64_t size() const { return static_cast<std::int64_t>(bits_.size()); }
  const std::vector<std::uint8_t>& bits() const { return bits_; }
  std::uint8_t operator[](std::size_t i) const { return bits_[i]; }

  /// L/4 hex digits, most significant bit of each nibble first. Requires
  /// size() % 4 == 0.
  std::string to_hex() const;
  std::string to_bit_string() const;
  static Message from_hex(std::string_view hex);
  static Message from_bit_string(std::string_view bits);
  /// Accepts either form; a string of only 0/1 with the expected length is
  /// read as bits.
  static Message parse(std::string_view text, std::int64_t length);

  /// (L,) float tensor of 0/1 values.
  torch::Tensor to_tensor(torch::ScalarType dtype = torch::kFloat32) const;
  /// Hard decision sigmoid(logit) > 0.5, i.e. logit > 0.
  static Message from_logits(const torch::Tensor& logits);

  friend bool operator==(const Message&, const Message&) = default;

 private:
  std::vector<std::uint8_t> bits_;
};

/// i.i.d. uniform bits, a pure function of (length, seed).
Message random_message(std::int64_t length, std::uint64_t seed);

/// (batch, length) float tensor of random bits; row i equals
/// random_message(length, derive_seed(seed, {i})).
torch::Tensor random_message_batch(std::int64_t batch, std::int64_t length, std::uint64_t seed);

}  // namespace rgbmark
