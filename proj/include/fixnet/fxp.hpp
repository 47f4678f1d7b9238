// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cstdint>
#include <stdexcept>
#include <string>

#include "fixnet/rational.hpp"
#include "fixnet/rng.hpp"

namespace fixnet::fxp {

class FormatError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A <IL,FL> fixed-point word format. IL integer bits (sign included), FL
/// fractional bits, word length WL = IL + FL. Resolution eps = 2^-FL, range
/// [-2^(IL-1), 2^(IL-1) - 2^-FL].
struct FxFormat {
  int il = 1;
  int fl = 0;

  int wl() const { return il + fl; }

  static FxFormat make(int il, int fl) {
    if (il < 1) throw FormatError("FxFormat: il must be >= 1 (sign bit lives in the integer part)");
    if (fl < 0) throw FormatError("FxFormat: fl must be >= 0");
    if (il + fl < 2) throw FormatError("FxFormat: wl must be >= 2");
    if (il + fl > 62) throw FormatError("FxFormat: wl > 62 unsupported");
    return FxFormat{il, fl};
  }

  Rational epsilon() const { return Rational::pow2(-fl); }
  Rational lower() const { return -Rational::pow2(il - 1); }
  Rational upper() const { return Rational::pow2(il - 1) - Rational::pow2(-fl); }

  int64_t min_mantissa() const { return -(int64_t(1) << (wl() - 1)); }
  int64_t max_mantissa() const { return (int64_t(1) << (wl() - 1)) - 1; }

  bool operator==(const FxFormat& o) const { return il == o.il && fl == o.fl; }
  bool operator!=(const FxFormat& o) const { return !(*this == o); }

  std::string str() const { return "<" + std::to_string(il) + "," + std::to_string(fl) + ">"; }
};

/// One fixed-point value: value = mantissa * 2^-fl.
struct FxScalar {
  int64_t mantissa = 0;
  FxFormat format;

  Rational to_real() const { return Rational(mantissa, 1) * Rational::pow2(-format.fl); }
  double to_double() const { return std::ldexp(static_cast<double>(mantissa), -format.fl); }

  bool operator==(const FxScalar& o) const { return mantissa == o.mantissa && format == o.format; }
};

enum class RoundingMode { Nearest, Stochastic };

inline const char* to_string(RoundingMode m) {
  return m == RoundingMode::Nearest ? "nearest" : "stochastic";
}

// ---------------------------------------------------------------------------
// Rounding on the eps-grid (exact rational path)
// ---------------------------------------------------------------------------

/// Largest integer multiple of eps = 2^-fl that is <= x. Floor toward -inf,
/// so the residue (x - floor)/eps is always in [0, 1).
Rational floor_to_grid(const Rational& x, FxFormat f);

/// Deterministic round to the nearest grid point; the exact midpoint goes
/// down (x <= floor + eps/2 selects floor).
Rational round_nearest(const Rational& x, FxFormat f);

/// Randomized rounding: up with probability exactly (x - floor)/eps.
Rational round_stochastic(const Rational& x, FxFormat f, Draw d);

/// Saturating conversion: clip to the format range first, else round with
/// the named mode. Total over all rationals.
FxScalar convert(const Rational& x, FxFormat f, RoundingMode mode, Draw d);
inline FxScalar convert(const Rational& x, FxFormat f, RoundingMode mode, const RngKey& key) {
  return convert(x, f, mode, keyed_draw(key));
}
/// Nearest-mode conversions never consult the draw.
inline FxScalar convert(const Rational& x, FxFormat f) { return convert(x, f, RoundingMode::Nearest, Draw{}); }

inline Rational to_real(const FxScalar& s) { return s.to_real(); }
inline FxScalar from_real(double x, FxFormat f, RoundingMode mode, Draw d) {
  return convert(Rational::from_double(x), f, mode, d);
}
inline FxScalar from_real(double x, FxFormat f, RoundingMode mode, const RngKey& key) {
  return convert(Rational::from_double(x), f, mode, keyed_draw(key));
}

// ---------------------------------------------------------------------------
// Dyadic fast path
// ---------------------------------------------------------------------------

/// Quantize num/2^k into format f; the workhorse behind every tensor-level
/// Convert. Semantics are identical to convert() on the rational num/2^k;
/// the equivalence is pinned by tests against the rational path.
/// Requires |num| < 2^120 and 0 <= k <= 120.
int64_t convert_dyadic(__int128 num, int k, FxFormat f, RoundingMode mode, Draw d);

/// Quantize num/den for positive den (not necessarily a power of two).
/// Requires |num| < 2^120, 0 < den < 2^63.
int64_t convert_fraction(__int128 num, int64_t den, FxFormat f, RoundingMode mode, Draw d);

// ---------------------------------------------------------------------------
// Dyadic coefficients for hyperparameters
// ---------------------------------------------------------------------------

/// A signed dyadic coefficient num * 2^-shift. Hyperparameters (learning
/// rate, momentum, decay, 1/minibatch) are snapped onto this grid at config
/// resolution so that every downstream probability stays exactly computable
/// in bounded integer arithmetic.
struct Dyadic {
  int64_t num = 0;
  int shift = 0;

  static constexpr int kDefaultBits = 30;

  static Dyadic from_double(double x, int bits = kDefaultBits);
  static Dyadic from_rational(const Rational& x, int bits = kDefaultBits);
  static Dyadic one() { return Dyadic{1, 0}; }

  double to_double() const { return std::ldexp(static_cast<double>(num), -shift); }
  Rational to_rational() const { return Rational(num, 1) * Rational::pow2(-shift); }
  bool is_zero() const { return num == 0; }
};

// ---------------------------------------------------------------------------
// Rounding-event instrumentation
// ---------------------------------------------------------------------------

/// Counts convert events (every per-element quantization) when enabled.
/// Used by tests that pin "exactly one rounding event per output element".
void set_rounding_counter_enabled(bool enabled);
uint64_t rounding_event_count();
void reset_rounding_event_count();

namespace detail {
extern std::atomic<bool> g_count_roundings;
extern std::atomic<uint64_t> g_rounding_events;
inline void tick_rounding() {
  if (g_count_roundings.load(std::memory_order_relaxed))
    g_rounding_events.fetch_add(1, std::memory_order_relaxed);
}
}  // namespace detail

}  // namespace fixnet::fxp
