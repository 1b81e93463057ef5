#include "phs/rational.hpp"

#include <limits>
#include <numeric>

namespace phs {

namespace {

using int128 = __int128;

bool fits64(int128 v) {
  return v >= int128(std::numeric_limits<long long>::min()) &&
         v <= int128(std::numeric_limits<long long>::max());
}

std::optional<Rational> from128(int128 num, int128 den) {
  if (den == 0) return std::nullopt;
  if (den < 0) {
    num = -num;
    den = -den;
  }
  int128 a = num < 0 ? -num : num;
  int128 b = den;
  while (b != 0) {
    int128 t = a % b;
    a = b;
    b = t;
  }
  if (a != 0) {
    num /= a;
    den /= a;
  }
  if (!fits64(num) || !fits64(den)) return std::nullopt;
  return Rational::make(static_cast<long long>(num), static_cast<long long>(den));
}

}  // namespace

std::optional<Rational> Rational::make(long long num, long long den) {
  if (den == 0) return std::nullopt;
  if (num == std::numeric_limits<long long>::min() ||
      den == std::numeric_limits<long long>::min()) {
    // Cannot safely take absolute values; route through 128-bit reduce.
    if (!(num == std::numeric_limits<long long>::min() &&
          den == std::numeric_limits<long long>::min()))
      return from128(int128(num), int128(den));
    return Rational{1};
  }
  long long g = std::gcd(num < 0 ? -num : num, den < 0 ? -den : den);
  if (g == 0) g = 1;
  num /= g;
  den /= g;
  if (den < 0) {
    num = -num;
    den = -den;
  }
  Rational r;
  r.num_ = num;
  r.den_ = den;
  return r;
}

double Rational::to_double() const {
  return static_cast<double>(num_) / static_cast<double>(den_);
}

std::string Rational::str() const {
  if (den_ == 1) return std::to_string(num_);
  return std::to_string(num_) + "/" + std::to_string(den_);
}

std::optional<Rational> Rational::add(const Rational& a, const Rational& b) {
  return from128(int128(a.num_) * b.den_ + int128(b.num_) * a.den_,
                 int128(a.den_) * b.den_);
}

std::optional<Rational> Rational::sub(const Rational& a, const Rational& b) {
  return from128(int128(a.num_) * b.den_ - int128(b.num_) * a.den_,
                 int128(a.den_) * b.den_);
}

std::optional<Rational> Rational::mul(const Rational& a, const Rational& b) {
  return from128(int128(a.num_) * b.num_, int128(a.den_) * b.den_);
}

std::optional<Rational> Rational::div(const Rational& a, const Rational& b) {
  if (b.num_ == 0) return std::nullopt;
  return from128(int128(a.num_) * b.den_, int128(a.den_) * b.num_);
}

std::optional<Rational> Rational::pow(const Rational& a, long long e) {
  if (e == 0) return Rational{1};
  bool invert = e < 0;
  if (invert && a.num_ == 0) return std::nullopt;
  unsigned long long n = invert ? static_cast<unsigned long long>(-(e + 1)) + 1
                                : static_cast<unsigned long long>(e);
  Rational base = a;
  Rational acc{1};
  while (n > 0) {
    if (n & 1) {
      auto m = mul(acc, base);
      if (!m) return std::nullopt;
      acc = *m;
    }
    n >>= 1;
    if (n > 0) {
      auto s = mul(base, base);
      if (!s) return std::nullopt;
      base = *s;
    }
  }
  if (invert) return div(Rational{1}, acc);
  return acc;
}

std::optional<Rational> Rational::negated() const {
  return from128(-int128(num_), int128(den_));
}

int Rational::compare(const Rational& o) const {
  int128 lhs = int128(num_) * o.den_;
  int128 rhs = int128(o.num_) * den_;
  if (lhs < rhs) return -1;
  if (lhs > rhs) return 1;
  return 0;
}

}  // namespace phs
