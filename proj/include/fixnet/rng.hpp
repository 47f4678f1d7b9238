// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string_view>

namespace fixnet::fxp {

/// Key for one uniform draw. The generator is counter-based: the draw is a
/// pure function of the key, so results do not depend on evaluation order,
/// thread count, or how many draws happened before.
struct RngKey {
  uint64_t seed = 0;   // experiment seed
  uint64_t tag = 0;    // hashed stream name, e.g. a tensor tag
  uint64_t index = 0;  // flat element index within the stream
  uint64_t step = 0;   // global step counter
};

struct U128Bits {
  uint64_t hi = 0, lo = 0;
};

/// A uniform draw with explicit resolution: value / 2^bits in [0, 1).
/// Keyed draws carry 128 bits; injected hardware streams carry fewer.
struct Draw {
  U128Bits value;
  int bits = 128;
};

namespace detail {
// SplitMix64 finalizer (Stafford mix13). Passes BigCrush as the output
// stage of a 64-bit counter sequence.
constexpr uint64_t mix64(uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
constexpr uint64_t kGamma = 0x9e3779b97f4a7c15ULL;
}  // namespace detail

/// FNV-1a hash for stream tags.
constexpr uint64_t hash_tag(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// 128 uniform bits as a pure function of the key: the key fields are folded
/// through successive SplitMix64 stages.
constexpr U128Bits keyed_bits(const RngKey& k) {
  using detail::kGamma;
  using detail::mix64;
  uint64_t h = mix64(k.seed + kGamma);
  h = mix64(h ^ (k.tag + 2 * kGamma));
  h = mix64(h ^ (k.index + 3 * kGamma));
  h = mix64(h ^ (k.step + 5 * kGamma));
  return U128Bits{mix64(h + kGamma), mix64(h + 2 * kGamma)};
}

constexpr Draw keyed_draw(const RngKey& k) { return Draw{keyed_bits(k), 128}; }

/// Single uniform uint64, for plumbing that needs raw bits (shuffles, noise).
constexpr uint64_t keyed_u64(const RngKey& k) { return keyed_bits(k).lo; }

/// Sequential splittable generator for places where a stream (not a counter)
/// is the natural shape: dataset synthesis, shuffles.
class SplitMix64 {
 public:
  explicit SplitMix64(uint64_t seed) : state_(seed) {}
  uint64_t next() {
    state_ += detail::kGamma;
    return detail::mix64(state_);
  }
  /// Uniform in [0, bound) without modulo bias (Lemire's method).
  uint64_t next_below(uint64_t bound) {
    unsigned __int128 m = static_cast<unsigned __int128>(next()) * bound;
    return static_cast<uint64_t>(m >> 64);
  }
  double next_double() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

 private:
  uint64_t state_;
};

}  // namespace fixnet::fxp
