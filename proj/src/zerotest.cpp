#include <map>
#include <optional>
#include <string>
#include <vector>

#include "phs/expr.hpp"

// Zero proof by rewriting to an expanded common-denominator form.
//
// The display canonical form deliberately keeps products over sums
// unexpanded, so identities like p_hat.v - L == 0 for L = m*sqrt(-v0^2+v1^2)
// do not cancel term-by-term. This pass converts an expression to num/den
// where both sides are multivariate polynomials over "atoms":
//
//   - variables (exponent-1 atoms),
//   - q-th roots A = base^(1/q); when the base itself converts to a
//     polynomial, the relation A^q = base is applied during multiplication,
//   - opaque transcendental calls sin/cos/exp/log(arg), keyed by the
//     canonical text of the argument.
//
// The expression is zero wherever it is defined iff the numerator polynomial
// cancels to nothing. Coefficients are exact rationals when possible, so an
// empty numerator is a proof; a nonempty one proves nothing (relations like
// sin^2+cos^2 = 1 are not modelled) and callers fall back to numeric
// sampling. All growth is capped; hitting a cap returns "no proof".

namespace phs {

namespace {

constexpr size_t kMaxTerms = 4096;

// atom index -> positive exponent
using Monomial = std::map<int, int>;

struct Poly {
  // empty map == zero polynomial
  std::map<Monomial, Number> terms;

  static Poly constant(const Number& c) {
    Poly p;
    if (!c.is_zero()) p.terms.emplace(Monomial{}, c);
    return p;
  }
  static Poly one() { return constant(Number::of(1LL)); }
  bool is_zero() const { return terms.empty(); }
  bool is_constant() const {
    return terms.empty() || (terms.size() == 1 && terms.begin()->first.empty());
  }
};

struct Atom {
  std::string key;
  int root = 1;                    // atom == some base^(1/root)
  std::optional<Poly> base_poly;   // engaged when the relation A^root = base is usable
};

struct AtomTable {
  std::vector<Atom> atoms;
  std::map<std::string, int> index;

  int intern(const std::string& key, int root, std::optional<Poly> base_poly) {
    auto it = index.find(key);
    if (it != index.end()) return it->second;
    int id = static_cast<int>(atoms.size());
    atoms.push_back({key, root, std::move(base_poly)});
    index.emplace(key, id);
    return id;
  }
};

struct Frac {
  Poly num, den;
};

std::optional<Poly> poly_mul(const Poly& a, const Poly& b, AtomTable& tbl);

std::optional<Poly> poly_pow(const Poly& a, long long e, AtomTable& tbl) {
  if (e < 0 || e > 64) return std::nullopt;
  Poly acc = Poly::one();
  for (long long i = 0; i < e; ++i) {
    auto m = poly_mul(acc, a, tbl);
    if (!m) return std::nullopt;
    acc = *m;
  }
  return acc;
}

void poly_accumulate(Poly& p, const Monomial& m, const Number& c) {
  auto it = p.terms.find(m);
  if (it == p.terms.end()) {
    if (!c.is_zero()) p.terms.emplace(m, c);
    return;
  }
  it->second = Number::add(it->second, c);
  if (it->second.is_zero()) p.terms.erase(it);
}

std::optional<Poly> poly_add(const Poly& a, const Poly& b) {
  Poly out = a;
  for (const auto& [m, c] : b.terms) poly_accumulate(out, m, c);
  if (out.terms.size() > kMaxTerms) return std::nullopt;
  return out;
}

// Applies A^root -> base_poly relations until every reducible atom's
// exponent is below its root. Produces a polynomial (the expansion of the
// reduced bases can fan out into many monomials).
std::optional<Poly> reduce_monomial(Monomial m, const Number& c, AtomTable& tbl) {
  for (auto it = m.begin(); it != m.end(); ++it) {
    const Atom& atom = tbl.atoms[it->first];
    if (atom.root > 1 && atom.base_poly && it->second >= atom.root) {
      int k = it->second / atom.root;
      int rem = it->second % atom.root;
      if (rem == 0)
        m.erase(it);
      else
        it->second = rem;
      auto expanded = poly_pow(*atom.base_poly, k, tbl);
      if (!expanded) return std::nullopt;
      Poly rest;
      rest.terms.emplace(std::move(m), c);
      return poly_mul(rest, *expanded, tbl);
    }
  }
  Poly out;
  out.terms.emplace(std::move(m), c);
  return out;
}

std::optional<Poly> poly_mul(const Poly& a, const Poly& b, AtomTable& tbl) {
  Poly out;
  for (const auto& [ma, ca] : a.terms) {
    for (const auto& [mb, cb] : b.terms) {
      Monomial m = ma;
      for (const auto& [atom, e] : mb) m[atom] += e;
      auto reduced = reduce_monomial(std::move(m), Number::mul(ca, cb), tbl);
      if (!reduced) return std::nullopt;
      for (const auto& [mr, cr] : reduced->terms) poly_accumulate(out, mr, cr);
      if (out.terms.size() > kMaxTerms) return std::nullopt;
    }
  }
  return out;
}

std::optional<Frac> frac_mul(const Frac& a, const Frac& b, AtomTable& tbl) {
  auto n = poly_mul(a.num, b.num, tbl);
  auto d = poly_mul(a.den, b.den, tbl);
  if (!n || !d) return std::nullopt;
  return Frac{*n, *d};
}

std::optional<Frac> frac_add(const Frac& a, const Frac& b, AtomTable& tbl) {
  auto ad = poly_mul(a.num, b.den, tbl);
  auto bc = poly_mul(b.num, a.den, tbl);
  auto dd = poly_mul(a.den, b.den, tbl);
  if (!ad || !bc || !dd) return std::nullopt;
  auto n = poly_add(*ad, *bc);
  if (!n) return std::nullopt;
  return Frac{*n, *dd};
}

std::optional<Frac> frac_int_pow(const Frac& a, long long e, AtomTable& tbl) {
  if (e >= 0) {
    auto n = poly_pow(a.num, e, tbl);
    auto d = poly_pow(a.den, e, tbl);
    if (!n || !d) return std::nullopt;
    return Frac{*n, *d};
  }
  if (a.num.is_zero()) return std::nullopt;  // division by an identically-zero subterm
  auto n = poly_pow(a.den, -e, tbl);
  auto d = poly_pow(a.num, -e, tbl);
  if (!n || !d) return std::nullopt;
  return Frac{*n, *d};
}

std::optional<Frac> convert(const Expr& e, AtomTable& tbl);

// base^(num/den) with den > 1: introduce (or reuse) the root atom.
std::optional<Frac> root_power(const Expr& base, const Rational& r, AtomTable& tbl) {
  std::string key = base.str() + "#" + std::to_string(r.den());
  std::optional<Poly> base_poly;
  auto cb = convert(base, tbl);
  if (cb) {
    if (cb->den.is_constant() && !cb->den.is_zero()) {
      Number d = cb->den.terms.empty() ? Number::of(1LL) : cb->den.terms.begin()->second;
      auto inv = Number::pow(d, Rational{-1});
      if (inv) {
        Poly scaled;
        for (const auto& [m, c] : cb->num.terms) scaled.terms.emplace(m, Number::mul(c, *inv));
        base_poly = std::move(scaled);
      }
    }
  }
  int idx = tbl.intern(key, static_cast<int>(r.den()), std::move(base_poly));
  Poly atom;
  Monomial m;
  m[idx] = static_cast<int>(r.num() < 0 ? -r.num() : r.num());
  atom.terms.emplace(std::move(m), Number::of(1LL));
  // Exponents at or above the root reduce immediately.
  auto reduced = reduce_monomial(atom.terms.begin()->first, Number::of(1LL), tbl);
  if (!reduced) return std::nullopt;
  if (r.num() >= 0) return Frac{*reduced, Poly::one()};
  return Frac{Poly::one(), *reduced};
}

std::optional<Frac> convert(const Expr& e, AtomTable& tbl) {
  switch (e.kind()) {
    case ExprKind::constant:
      return Frac{Poly::constant(e.value()), Poly::one()};
    case ExprKind::variable: {
      int idx = tbl.intern("v:" + e.var().name, 1, std::nullopt);
      Poly p;
      Monomial m;
      m[idx] = 1;
      p.terms.emplace(std::move(m), Number::of(1LL));
      return Frac{p, Poly::one()};
    }
    case ExprKind::sum: {
      Frac acc{Poly::constant(Number::of(0LL)), Poly::one()};
      for (const auto& a : e.args()) {
        auto f = convert(a, tbl);
        if (!f) return std::nullopt;
        auto s = frac_add(acc, *f, tbl);
        if (!s) return std::nullopt;
        acc = *s;
      }
      return acc;
    }
    case ExprKind::product: {
      Frac acc{Poly::one(), Poly::one()};
      for (const auto& a : e.args()) {
        auto f = convert(a, tbl);
        if (!f) return std::nullopt;
        auto p = frac_mul(acc, *f, tbl);
        if (!p) return std::nullopt;
        acc = *p;
      }
      return acc;
    }
    case ExprKind::power: {
      const Rational& r = e.exponent();
      if (r.is_integer()) {
        auto f = convert(e.base(), tbl);
        if (!f) return std::nullopt;
        return frac_int_pow(*f, r.num(), tbl);
      }
      if (r.den() > 16) return std::nullopt;
      return root_power(e.base(), r, tbl);
    }
    case ExprKind::sqrt_fn:
      return root_power(e.base(), *Rational::make(1, 2), tbl);
    case ExprKind::sin_fn:
    case ExprKind::cos_fn:
    case ExprKind::exp_fn:
    case ExprKind::log_fn: {
      const char* name = e.kind() == ExprKind::sin_fn   ? "sin"
                         : e.kind() == ExprKind::cos_fn ? "cos"
                         : e.kind() == ExprKind::exp_fn ? "exp"
                                                        : "log";
      int idx = tbl.intern(std::string(name) + "(" + e.base().str() + ")", 1, std::nullopt);
      Poly p;
      Monomial m;
      m[idx] = 1;
      p.terms.emplace(std::move(m), Number::of(1LL));
      return Frac{p, Poly::one()};
    }
  }
  return std::nullopt;
}

}  // namespace

bool is_symbolically_zero(const Expr& e) {
  if (e.is_zero()) return true;
  if (e.is_constant()) return false;
  AtomTable tbl;
  auto f = convert(e, tbl);
  if (!f) return false;
  if (f->den.is_zero()) return false;  // nowhere defined; no zero claim
  return f->num.is_zero();
}

}  // namespace phs
