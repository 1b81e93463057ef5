#pragma once

#include <cstdint>
#include <optional>
#include <string>

namespace phs {

// Exact rational arithmetic over 64-bit integers, always kept normalized
// (gcd(|num|, den) == 1, den > 0). Any operation whose result would not fit
// in 64 bits returns std::nullopt so callers can degrade to floating point
// instead of silently wrapping.
class Rational {
 public:
  constexpr Rational() = default;
  constexpr Rational(long long n) : num_(n) {}

  // Fails on den == 0 or when the normalized pair does not fit.
  static std::optional<Rational> make(long long num, long long den);

  long long num() const { return num_; }
  long long den() const { return den_; }

  bool is_integer() const { return den_ == 1; }
  bool is_zero() const { return num_ == 0; }
  bool is_one() const { return num_ == 1 && den_ == 1; }
  bool negative() const { return num_ < 0; }

  double to_double() const;
  std::string str() const;  // "3", "-3", "3/4"

  static std::optional<Rational> add(const Rational& a, const Rational& b);
  static std::optional<Rational> sub(const Rational& a, const Rational& b);
  static std::optional<Rational> mul(const Rational& a, const Rational& b);
  static std::optional<Rational> div(const Rational& a, const Rational& b);
  // a^e for integer e (negative e inverts; 0^negative fails).
  static std::optional<Rational> pow(const Rational& a, long long e);

  std::optional<Rational> negated() const;

  // Exact three-way comparison (cross multiplication in 128 bits).
  int compare(const Rational& o) const;
  bool operator==(const Rational& o) const = default;

 private:
  long long num_ = 0;
  long long den_ = 1;
};

}  // namespace phs
