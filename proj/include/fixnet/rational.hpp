// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <boost/multiprecision/cpp_int.hpp>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace fixnet::fxp {

using BigInt = boost::multiprecision::cpp_int;

/// Exact rational number. Always normalized: den > 0, gcd(|num|, den) == 1.
/// Used as the value carrier for everything that has not yet been rounded to
/// a fixed-point grid; no binary floating point is involved at any point.
class Rational {
 public:
  Rational() : num_(0), den_(1) {}
  Rational(long long n) : num_(n), den_(1) {}  // NOLINT(google-explicit-constructor)
  Rational(BigInt num, BigInt den) : num_(std::move(num)), den_(std::move(den)) { normalize(); }

  /// Exact conversion: every finite double is a dyadic rational.
  static Rational from_double(double x) {
    if (!std::isfinite(x)) throw std::invalid_argument("Rational::from_double: non-finite input");
    if (x == 0.0) return Rational();
    int exp = 0;
    double m = std::frexp(x, &exp);  // x = m * 2^exp, |m| in [0.5, 1)
    auto scaled = static_cast<long long>(std::ldexp(m, 53));
    return Rational(BigInt(scaled), BigInt(1)) * pow2(exp - 53);
  }

  /// Exact decimal parse, e.g. "0.0005" -> 1/2000. Accepts sign, optional
  /// fraction part, optional exponent ("1e-3").
  static Rational from_decimal(std::string_view s);

  /// 2^e for any integer e.
  static Rational pow2(int e) {
    if (e >= 0) return Rational(BigInt(1) << e, 1);
    return Rational(1, BigInt(1) << -e);
  }

  const BigInt& num() const { return num_; }
  const BigInt& den() const { return den_; }

  bool is_zero() const { return num_ == 0; }
  bool is_negative() const { return num_ < 0; }
  bool is_integer() const { return den_ == 1; }

  /// Nearest double (via long-division to 64 significant bits).
  double to_double() const;

  /// floor(value): largest integer <= value.
  BigInt floor() const {
    BigInt q = num_ / den_;
    if (num_ < 0 && q * den_ != num_) --q;
    return q;
  }

  Rational operator-() const { return Rational(-num_, den_, NoNorm{}); }
  Rational operator+(const Rational& o) const { return Rational(num_ * o.den_ + o.num_ * den_, den_ * o.den_); }
  Rational operator-(const Rational& o) const { return Rational(num_ * o.den_ - o.num_ * den_, den_ * o.den_); }
  Rational operator*(const Rational& o) const { return Rational(num_ * o.num_, den_ * o.den_); }
  Rational operator/(const Rational& o) const {
    if (o.num_ == 0) throw std::domain_error("Rational: division by zero");
    return Rational(num_ * o.den_, den_ * o.num_);
  }

  bool operator==(const Rational& o) const { return num_ == o.num_ && den_ == o.den_; }
  bool operator!=(const Rational& o) const { return !(*this == o); }
  bool operator<(const Rational& o) const { return num_ * o.den_ < o.num_ * den_; }
  bool operator<=(const Rational& o) const { return num_ * o.den_ <= o.num_ * den_; }
  bool operator>(const Rational& o) const { return o < *this; }
  bool operator>=(const Rational& o) const { return o <= *this; }

  std::string str() const;

 private:
  struct NoNorm {};
  Rational(BigInt num, BigInt den, NoNorm) : num_(std::move(num)), den_(std::move(den)) {}

  void normalize() {
    if (den_ == 0) throw std::domain_error("Rational: zero denominator");
    if (den_ < 0) { num_ = -num_; den_ = -den_; }
    BigInt g = boost::multiprecision::gcd(num_ < 0 ? BigInt(-num_) : num_, den_);
    if (g > 1) { num_ /= g; den_ /= g; }
  }

  BigInt num_, den_;
};

}  // namespace fixnet::fxp
