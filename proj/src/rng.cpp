// SPDX-License-Identifier: Apache-2.0
#include "sattn/rng.hpp"

namespace sattn {
namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
}

std::uint64_t mix64(std::uint64_t x) noexcept {
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ULL;
  x ^= x >> 27;
  x *= 0x94D049BB133111EBULL;
  x ^= x >> 31;
  return x;
}

RandomStream::result_type RandomStream::operator()() noexcept {
  ++counter_;
  return mix64(key_ + counter_ * kGolden);
}

double RandomStream::uniform() noexcept {
  return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
}

std::uint64_t derive_key(std::uint64_t seed, std::initializer_list<std::uint64_t> labels) noexcept {
  std::uint64_t h = mix64(seed ^ 0x6A09E667F3BCC909ULL);
  for (std::uint64_t label : labels) {
    h = mix64(h + kGolden + mix64(label + 0x3C6EF372FE94F82BULL));
  }
  return h;
}

RandomStream RandomStream::substream(std::initializer_list<std::uint64_t> labels) const noexcept {
  return RandomStream(derive_key(key_, labels));
}

}  // namespace sattn
