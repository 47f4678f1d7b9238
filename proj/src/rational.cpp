// SPDX-License-Identifier: Apache-2.0
#include "fixnet/rational.hpp"

#include <cctype>

namespace fixnet::fxp {

Rational Rational::from_decimal(std::string_view s) {
  size_t i = 0;
  auto fail = [&](const char* why) {
    throw std::invalid_argument("Rational::from_decimal(\"" + std::string(s) + "\"): " + why);
  };
  if (s.empty()) fail("empty string");

  bool neg = false;
  if (s[i] == '+' || s[i] == '-') neg = (s[i++] == '-');

  BigInt mantissa = 0;
  int frac_digits = 0;
  bool any_digit = false, seen_dot = false;
  for (; i < s.size() && (std::isdigit(static_cast<unsigned char>(s[i])) || s[i] == '.'); ++i) {
    if (s[i] == '.') {
      if (seen_dot) fail("two decimal points");
      seen_dot = true;
      continue;
    }
    mantissa = mantissa * 10 + (s[i] - '0');
    if (seen_dot) ++frac_digits;
    any_digit = true;
  }
  if (!any_digit) fail("no digits");

  long exp10 = -frac_digits;
  if (i < s.size() && (s[i] == 'e' || s[i] == 'E')) {
    ++i;
    bool eneg = false;
    if (i < s.size() && (s[i] == '+' || s[i] == '-')) eneg = (s[i++] == '-');
    if (i >= s.size()) fail("empty exponent");
    long e = 0;
    for (; i < s.size() && std::isdigit(static_cast<unsigned char>(s[i])); ++i) e = e * 10 + (s[i] - '0');
    exp10 += eneg ? -e : e;
  }
  if (i != s.size()) fail("trailing characters");

  if (neg) mantissa = -mantissa;
  BigInt num = mantissa, den = 1;
  if (exp10 >= 0) {
    for (long j = 0; j < exp10; ++j) num *= 10;
  } else {
    for (long j = 0; j < -exp10; ++j) den *= 10;
  }
  return Rational(std::move(num), std::move(den));
}

double Rational::to_double() const {
  if (num_ == 0) return 0.0;
  // Scale so the quotient carries >= 64 significant bits, divide, then undo.
  BigInt a = num_ < 0 ? BigInt(-num_) : num_;
  long na = static_cast<long>(boost::multiprecision::msb(a)) + 1;
  long nb = static_cast<long>(boost::multiprecision::msb(den_)) + 1;
  long shift = 64 - (na - nb);
  BigInt q;
  if (shift >= 0)
    q = (a << shift) / den_;
  else
    q = a / (den_ << -shift);
  double d = std::ldexp(q.convert_to<double>(), static_cast<int>(-shift));
  return num_ < 0 ? -d : d;
}

std::string Rational::str() const {
  std::string s = num_.str();
  if (den_ != 1) s += "/" + den_.str();
  return s;
}

}  // namespace fixnet::fxp
