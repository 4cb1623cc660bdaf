// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <initializer_list>
#include <limits>

namespace sattn {

/// Counter-based random stream.
///
/// Output i is a SplitMix64 finalizer applied to `key + (i + 1) * golden`, so
/// a stream is fully described by its 64-bit key and position. Substreams are
/// derived by hashing a parent key together with integer labels; draws from a
/// substream never depend on how many values other substreams consumed, which
/// keeps parallel Monte Carlo reproducible regardless of scheduling.
///
/// Satisfies UniformRandomBitGenerator so it plugs into <random>
/// distributions.
class RandomStream {
 public:
  using result_type = std::uint64_t;

  explicit RandomStream(std::uint64_t key = 0) noexcept : key_(key) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept;

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() noexcept;

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t position() const noexcept { return counter_; }

  /// Child stream keyed by this stream's key and the given labels. Does not
  /// advance this stream.
  RandomStream substream(std::initializer_list<std::uint64_t> labels) const noexcept;

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x) noexcept;

/// Hash of a seed and a label path; the key of `RandomStream(seed).substream(labels)`.
std::uint64_t derive_key(std::uint64_t seed, std::initializer_list<std::uint64_t> labels) noexcept;

inline RandomStream make_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> labels) noexcept {
  return RandomStream(derive_key(seed, labels));
}

// Domain tags keep substreams of different consumers apart.
namespace stream_tag {
inline constexpr std::uint64_t kAttention = 0x5341'0001;
inline constexpr std::uint64_t kEncoderInit = 0x5341'0002;
inline constexpr std::uint64_t kBatch = 0x5341'0003;
inline constexpr std::uint64_t kDropout = 0x5341'0004;
inline constexpr std::uint64_t kSwagSgd = 0x5341'0005;
inline constexpr std::uint64_t kSwagSample = 0x5341'0006;
inline constexpr std::uint64_t kBootstrap = 0x5341'0007;
inline constexpr std::uint64_t kData = 0x5341'0008;
inline constexpr std::uint64_t kSplit = 0x5341'0009;
inline constexpr std::uint64_t kBayesOpt = 0x5341'000a;
inline constexpr std::uint64_t kEnsemble = 0x5341'000b;
}  // namespace stream_tag

}  // namespace sattn
