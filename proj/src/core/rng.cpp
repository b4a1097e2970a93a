#include "rgbmark/core/rng.hpp"

#include <ATen/CPUGeneratorImpl.h>

namespace rgbmark {

at::Generator make_generator(std::uint64_t seed) {
  return at::make_generator<at::CPUGeneratorImpl>(seed);
}

}  // namespace rgbmark
