// SPDX-License-Identifier: Apache-2.0
#include "fixnet/fxp.hpp"

#include <cassert>

namespace fixnet::fxp {

namespace detail {
std::atomic<bool> g_count_roundings{false};
std::atomic<uint64_t> g_rounding_events{0};
}  // namespace detail

void set_rounding_counter_enabled(bool enabled) { detail::g_count_roundings.store(enabled); }
uint64_t rounding_event_count() { return detail::g_rounding_events.load(); }
void reset_rounding_event_count() { detail::g_rounding_events.store(0); }

// ---------------------------------------------------------------------------
// Exact rational path
// ---------------------------------------------------------------------------

Rational floor_to_grid(const Rational& x, FxFormat f) {
  BigInt idx = (x * Rational::pow2(f.fl)).floor();
  return Rational(idx, 1) * Rational::pow2(-f.fl);
}

// Residue (x - floor)/eps in [0, 1).
static Rational grid_residue(const Rational& x, FxFormat f) {
  Rational t = x * Rational::pow2(f.fl);
  return t - Rational(t.floor(), 1);
}

Rational round_nearest(const Rational& x, FxFormat f) {
  Rational fl = floor_to_grid(x, f);
  Rational res = grid_residue(x, f);
  // x <= floor + eps/2 selects floor: the exact midpoint rounds down.
  if (res <= Rational(1, 2)) return fl;
  return fl + f.epsilon();
}

static bool draw_less_than(const Draw& d, const Rational& p) {
  // d.value / 2^d.bits < p, exactly.
  BigInt v = (BigInt(d.value.hi) << 64) | BigInt(d.value.lo);
  if (d.bits < 128) v &= (BigInt(1) << d.bits) - 1;
  return v * p.den() < p.num() * (BigInt(1) << d.bits);
}

Rational round_stochastic(const Rational& x, FxFormat f, Draw d) {
  Rational fl = floor_to_grid(x, f);
  Rational res = grid_residue(x, f);
  if (res.is_zero()) return fl;  // representable value: P(up) = 0
  if (draw_less_than(d, res)) return fl + f.epsilon();
  return fl;
}

FxScalar convert(const Rational& x, FxFormat f, RoundingMode mode, Draw d) {
  detail::tick_rounding();
  // Saturation is checked before rounding.
  if (x <= f.lower()) return FxScalar{f.min_mantissa(), f};
  if (x >= f.upper()) return FxScalar{f.max_mantissa(), f};
  Rational r = (mode == RoundingMode::Nearest) ? round_nearest(x, f) : round_stochastic(x, f, d);
  BigInt m = (r * Rational::pow2(f.fl)).floor();  // exact: r is on the grid
  int64_t mant = m.convert_to<int64_t>();
  assert(mant >= f.min_mantissa() && mant <= f.max_mantissa());
  return FxScalar{mant, f};
}

// ---------------------------------------------------------------------------
// Dyadic fast path
// ---------------------------------------------------------------------------

namespace {

using I128 = __int128;
using U128 = unsigned __int128;

constexpr U128 u128_of(const U128Bits& b) { return (U128(b.hi) << 64) | b.lo; }

// d.value/2^d.bits < residue/2^shift, exactly. residue in [0, 2^shift).
bool draw_below_dyadic(const Draw& d, U128 residue, int shift) {
  U128 v = u128_of(d.value);
  if (d.bits < 128) v &= (U128(1) << d.bits) - 1;
  if (d.bits >= shift) {
    // v/2^b < r/2^s  <=>  v >> (b-s) < r   (low bits cannot push v over)
    return (v >> (d.bits - shift)) < residue;
  }
  int t = shift - d.bits;  // v * 2^t < r
  U128 q = residue >> t;
  if (v != q) return v < q;
  return (residue & ((U128(1) << t) - 1)) != 0;
}

}  // namespace

int64_t convert_dyadic(I128 num, int k, FxFormat f, RoundingMode mode, Draw d) {
  detail::tick_rounding();
  assert(k >= 0 && k <= 120);

  const int64_t min_m = f.min_mantissa();
  const int64_t max_m = f.max_mantissa();

  if (k <= f.fl) {
    // The target grid is at least as fine as the carrier: exact rescale.
    int up = f.fl - k;
    if (up > 0 && (num > (I128(max_m) >> up) || num < (I128(min_m) >> up))) {
      // Shifted value would leave the format range (or overflow i128).
      return num > 0 ? max_m : min_m;
    }
    I128 m = num << up;
    if (m <= I128(min_m)) return min_m;
    if (m >= I128(max_m)) return max_m;
    return static_cast<int64_t>(m);
  }

  const int shift = k - f.fl;

  // Saturation first, on the carrier grid. Bounds that would not fit i128
  // cannot be reached by |num| < 2^120.
  if (f.wl() - 1 + shift < 126) {
    if (num <= (I128(min_m) << shift)) return min_m;
    if (num >= (I128(max_m) << shift)) return max_m;
  }

  I128 floor_m = num >> shift;  // arithmetic shift: floor toward -inf
  U128 residue = static_cast<U128>(num - (floor_m << shift));

  bool up = false;
  if (residue != 0) {
    if (mode == RoundingMode::Nearest) {
      up = residue > (U128(1) << (shift - 1));  // midpoint stays down
    } else {
      up = draw_below_dyadic(d, residue, shift);
    }
  }
  int64_t m = static_cast<int64_t>(floor_m) + (up ? 1 : 0);
  assert(m >= min_m && m <= max_m);
  return m;
}

int64_t convert_fraction(I128 num, int64_t den, FxFormat f, RoundingMode mode, Draw d) {
  assert(den > 0);
  if ((den & (den - 1)) == 0) {
    int k = 0;
    while ((int64_t(1) << k) != den) ++k;
    return convert_dyadic(num, k, f, mode, d);
  }
  detail::tick_rounding();

  I128 t = num << f.fl;  // caller guarantees |num| < 2^(126-fl)
  const int64_t min_m = f.min_mantissa();
  const int64_t max_m = f.max_mantissa();

  // x <= lower  <=>  num*2^fl <= min_m*den
  if (t <= I128(min_m) * den) return min_m;
  if (t >= I128(max_m) * den) return max_m;

  I128 floor_m = t / den;
  if (t < 0 && floor_m * den != t) --floor_m;
  I128 residue = t - floor_m * den;  // in [0, den)

  bool up = false;
  if (residue != 0) {
    if (mode == RoundingMode::Nearest) {
      up = 2 * residue > den;
    } else {
      // Exact comparison via big integers; this path is not hot.
      BigInt v = (BigInt(d.value.hi) << 64) | BigInt(d.value.lo);
      if (d.bits < 128) v &= (BigInt(1) << d.bits) - 1;
      up = v * den < BigInt(static_cast<int64_t>(residue)) * (BigInt(1) << d.bits);
    }
  }
  int64_t m = static_cast<int64_t>(floor_m) + (up ? 1 : 0);
  assert(m >= min_m && m <= max_m);
  return m;
}

// ---------------------------------------------------------------------------
// Dyadic coefficients
// ---------------------------------------------------------------------------

Dyadic Dyadic::from_double(double x, int bits) {
  if (!std::isfinite(x) || std::abs(x) >= 4294967296.0)
    throw std::invalid_argument("Dyadic::from_double: value out of range");
  auto num = static_cast<int64_t>(std::llround(std::ldexp(x, bits)));
  Dyadic v{num, bits};
  while (v.num != 0 && (v.num & 1) == 0 && v.shift > 0) {
    v.num >>= 1;
    --v.shift;
  }
  return v;
}

Dyadic Dyadic::from_rational(const Rational& x, int bits) {
  Rational scaled = x * Rational::pow2(bits) + Rational(1, 2);
  BigInt n = scaled.floor();
  Dyadic v{n.convert_to<int64_t>(), bits};
  while (v.num != 0 && (v.num & 1) == 0 && v.shift > 0) {
    v.num >>= 1;
    --v.shift;
  }
  return v;
}

}  // namespace fixnet::fxp
