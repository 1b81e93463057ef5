#include "phs/expr.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <utility>

namespace phs {

// ---------------------------------------------------------------------------
// VarKind / Binding
// ---------------------------------------------------------------------------

std::string to_string(VarKind k) {
  switch (k) {
    case VarKind::state: return "state";
    case VarKind::input: return "input";
    case VarKind::multiplier: return "multiplier";
    case VarKind::parameter: return "parameter";
  }
  return "?";
}

void Binding::set(const std::string& name, double value) {
  for (auto& [n, v] : entries_) {
    if (n == name) {
      v = value;
      return;
    }
  }
  entries_.emplace_back(name, value);
}

bool Binding::has(const std::string& name) const {
  return find(name).has_value();
}

std::optional<double> Binding::find(const std::string& name) const {
  for (const auto& [n, v] : entries_)
    if (n == name) return v;
  return std::nullopt;
}

void Binding::merge(const Binding& other) {
  for (const auto& [n, v] : other.entries_) set(n, v);
}

// ---------------------------------------------------------------------------
// Number
// ---------------------------------------------------------------------------

Number Number::of(const Rational& r) {
  Number n;
  n.exact_ = true;
  n.rat_ = r;
  return n;
}

Number Number::of(double d) {
  Number n;
  n.exact_ = false;
  n.rat_ = Rational{0};
  n.dbl_ = (d == 0.0) ? 0.0 : d;  // normalize -0.0
  return n;
}

std::string Number::str() const {
  if (exact_) return rat_.str();
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, dbl_);
  return std::string(buf, res.ptr);
}

Number Number::add(const Number& a, const Number& b) {
  if (a.exact_ && b.exact_) {
    if (auto r = Rational::add(a.rat_, b.rat_)) return of(*r);
  }
  return of(a.value() + b.value());
}

Number Number::mul(const Number& a, const Number& b) {
  if (a.exact_ && b.exact_) {
    if (auto r = Rational::mul(a.rat_, b.rat_)) return of(*r);
  }
  return of(a.value() * b.value());
}

Number Number::negated() const {
  if (exact_) {
    if (auto r = rat_.negated()) return of(*r);
  }
  return of(-value());
}

namespace {

// Integer q-th root if it exists exactly.
std::optional<long long> exact_root(long long v, long long q) {
  if (v < 0) return std::nullopt;
  if (v <= 1) return v;
  long long guess = static_cast<long long>(std::llround(std::pow(double(v), 1.0 / double(q))));
  for (long long r = std::max(0LL, guess - 2); r <= guess + 2; ++r) {
    auto p = Rational::pow(Rational{r}, q);
    if (p && p->is_integer() && p->num() == v) return r;
  }
  return std::nullopt;
}

}  // namespace

std::optional<Number> Number::pow(const Number& a, const Rational& e) {
  if (e.is_zero()) return of(Rational{1});
  if (a.exact_) {
    if (e.is_integer()) {
      if (a.rat_.is_zero() && e.negative()) return std::nullopt;
      if (auto r = Rational::pow(a.rat_, e.num())) return of(*r);
      double d = std::pow(a.rat_.to_double(), double(e.num()));
      if (!std::isfinite(d)) return std::nullopt;
      return of(d);
    }
    if (a.rat_.negative()) return std::nullopt;
    if (a.rat_.is_zero()) return e.negative() ? std::nullopt : std::optional<Number>(of(Rational{0}));
    // Try an exact q-th root of both numerator and denominator.
    auto rn = exact_root(a.rat_.num(), e.den());
    auto rd = exact_root(a.rat_.den(), e.den());
    if (rn && rd) {
      if (auto root = Rational::make(*rn, *rd)) {
        if (auto r = Rational::pow(*root, e.num())) return of(*r);
      }
    }
    double d = std::pow(a.rat_.to_double(), e.to_double());
    if (!std::isfinite(d)) return std::nullopt;
    return of(d);
  }
  if (a.dbl_ < 0.0 && !e.is_integer()) return std::nullopt;
  if (a.dbl_ == 0.0 && e.negative()) return std::nullopt;
  double d = std::pow(a.dbl_, e.to_double());
  if (!std::isfinite(d)) return std::nullopt;
  return of(d);
}

int Number::compare(const Number& o) const {
  if (exact_ && o.exact_) {
    int c = rat_.compare(o.rat_);
    if (c != 0) return c;
    return 0;
  }
  double a = value(), b = o.value();
  if (a < b) return -1;
  if (a > b) return 1;
  // Equal values: exact sorts before inexact for a stable total order.
  if (exact_ != o.exact_) return exact_ ? -1 : 1;
  return 0;
}

bool Number::same(const Number& o) const {
  if (exact_ != o.exact_) return false;
  return exact_ ? rat_ == o.rat_ : dbl_ == o.dbl_;
}

// ---------------------------------------------------------------------------
// Expr nodes
// ---------------------------------------------------------------------------

struct ExprNode {
  ExprKind kind;
  Number value{};
  VarId var{};
  Rational exponent{1};
  std::vector<Expr> args{};
};

namespace {

Expr raw_node(ExprNode n) { return Expr(std::make_shared<const ExprNode>(std::move(n))); }

Expr raw_constant(const Number& v) {
  ExprNode n;
  n.kind = ExprKind::constant;
  n.value = v;
  return raw_node(std::move(n));
}

Expr raw_power(Expr base, const Rational& e) {
  ExprNode n;
  n.kind = ExprKind::power;
  n.exponent = e;
  n.args = {std::move(base)};
  return raw_node(std::move(n));
}

Expr raw_fn(ExprKind k, Expr arg) {
  ExprNode n;
  n.kind = k;
  n.args = {std::move(arg)};
  return raw_node(std::move(n));
}

Expr raw_nary(ExprKind k, std::vector<Expr> args) {
  ExprNode n;
  n.kind = k;
  n.args = std::move(args);
  return raw_node(std::move(n));
}

const std::shared_ptr<const ExprNode>& zero_node() {
  static const std::shared_ptr<const ExprNode> z = [] {
    auto n = std::make_shared<ExprNode>();
    n->kind = ExprKind::constant;
    n->value = Number::of(Rational{0});
    return std::shared_ptr<const ExprNode>(n);
  }();
  return z;
}

int kind_rank(ExprKind k) {
  switch (k) {
    case ExprKind::constant: return 0;
    case ExprKind::variable: return 1;
    case ExprKind::power: return 2;
    case ExprKind::sqrt_fn: return 3;
    case ExprKind::sin_fn: return 4;
    case ExprKind::cos_fn: return 5;
    case ExprKind::exp_fn: return 6;
    case ExprKind::log_fn: return 7;
    case ExprKind::product: return 8;
    case ExprKind::sum: return 9;
  }
  return 10;
}

}  // namespace

Expr::Expr() : n_(zero_node()) {}
Expr::Expr(std::shared_ptr<const ExprNode> n) : n_(std::move(n)) {}

ExprKind Expr::kind() const { return n_->kind; }
const Number& Expr::value() const { return n_->value; }
const VarId& Expr::var() const { return n_->var; }
const Rational& Expr::exponent() const { return n_->exponent; }
const std::vector<Expr>& Expr::args() const { return n_->args; }
const Expr& Expr::base() const { return n_->args.front(); }

bool Expr::is_zero() const { return is_constant() && n_->value.is_zero(); }
bool Expr::is_one() const { return is_constant() && n_->value.is_one(); }

Expr Expr::constant(long long n) { return raw_constant(Number::of(n)); }
Expr Expr::constant(const Rational& r) { return raw_constant(Number::of(r)); }
Expr Expr::constant(double d) { return raw_constant(Number::of(d)); }
Expr Expr::constant(const Number& n) { return raw_constant(n); }

Expr Expr::variable(const VarId& v) {
  ExprNode n;
  n.kind = ExprKind::variable;
  n.var = v;
  return raw_node(std::move(n));
}

int Expr::compare(const Expr& a, const Expr& b) {
  if (a.n_ == b.n_) return 0;
  int ra = kind_rank(a.kind()), rb = kind_rank(b.kind());
  if (ra != rb) return ra < rb ? -1 : 1;
  switch (a.kind()) {
    case ExprKind::constant:
      return a.value().compare(b.value());
    case ExprKind::variable:
      return a.var().name.compare(b.var().name) < 0   ? -1
             : a.var().name.compare(b.var().name) > 0 ? 1
                                                      : 0;
    case ExprKind::power: {
      int c = compare(a.base(), b.base());
      if (c != 0) return c;
      return a.exponent().compare(b.exponent());
    }
    case ExprKind::sqrt_fn:
    case ExprKind::sin_fn:
    case ExprKind::cos_fn:
    case ExprKind::exp_fn:
    case ExprKind::log_fn:
      return compare(a.base(), b.base());
    case ExprKind::product:
    case ExprKind::sum: {
      const auto& xa = a.args();
      const auto& xb = b.args();
      size_t n = std::min(xa.size(), xb.size());
      for (size_t i = 0; i < n; ++i) {
        int c = compare(xa[i], xb[i]);
        if (c != 0) return c;
      }
      if (xa.size() != xb.size()) return xa.size() < xb.size() ? -1 : 1;
      return 0;
    }
  }
  return 0;
}

namespace {

struct ExprLess {
  bool operator()(const Expr& a, const Expr& b) const { return Expr::compare(a, b) < 0; }
};

// --- canonical constructors -------------------------------------------------

// A product factor seen as base^exponent.
struct FactorPart {
  Expr base;
  Rational exp;
};

FactorPart decompose_factor(const Expr& f) {
  if (f.kind() == ExprKind::power) {
    const Expr& b = f.base();
    if (b.kind() == ExprKind::sqrt_fn) {
      if (auto half = Rational::mul(f.exponent(), *Rational::make(1, 2)))
        return {b.base(), *half};
    }
    return {b, f.exponent()};
  }
  if (f.kind() == ExprKind::sqrt_fn) return {f.base(), *Rational::make(1, 2)};
  return {f, Rational{1}};
}

// Renders base^e as one or two canonical atoms. Half-integer exponents keep
// the sqrt node visible: u^(j+1/2) -> u^j * sqrt(u) for positive exponents,
// u^(-j-1/2) -> sqrt(u)^(-2j-1) so the printer can put it in a denominator.
void emit_power_atoms(const Expr& base, const Rational& e, std::vector<Expr>& out) {
  if (e.is_zero()) return;
  if (e.is_integer()) {
    if (e.is_one())
      out.push_back(base);
    else
      out.push_back(raw_power(base, e));
    return;
  }
  if (e.den() == 2) {
    long long j = (e.num() - 1) / 2;  // e = j + 1/2 with num odd
    if (e.num() > 0) {
      if (j >= 1) out.push_back(raw_power(base, Rational{j}));
      out.push_back(raw_fn(ExprKind::sqrt_fn, base));
    } else {
      out.push_back(raw_power(raw_fn(ExprKind::sqrt_fn, base), Rational{e.num()}));
    }
    return;
  }
  out.push_back(raw_power(base, e));
}

Expr make_product_from_atoms(const Number& coeff, std::vector<Expr> atoms) {
  if (coeff.is_zero()) return Expr::constant(coeff);
  std::sort(atoms.begin(), atoms.end(), ExprLess{});
  if (atoms.empty()) return Expr::constant(coeff);
  if (coeff.is_one()) {
    if (atoms.size() == 1) return atoms.front();
    return raw_nary(ExprKind::product, std::move(atoms));
  }
  std::vector<Expr> args;
  args.reserve(atoms.size() + 1);
  args.push_back(raw_constant(coeff));
  for (auto& a : atoms) args.push_back(std::move(a));
  return raw_nary(ExprKind::product, std::move(args));
}

// Splits a canonical term into (numeric coefficient, coefficient-free key).
std::pair<Number, Expr> split_coefficient(const Expr& term) {
  if (term.kind() == ExprKind::constant) return {term.value(), Expr::constant(1LL)};
  if (term.kind() == ExprKind::product && term.args().front().kind() == ExprKind::constant) {
    const auto& args = term.args();
    Number c = args.front().value();
    if (args.size() == 2) return {c, args[1]};
    std::vector<Expr> rest(args.begin() + 1, args.end());
    return {c, raw_nary(ExprKind::product, std::move(rest))};
  }
  return {Number::of(1LL), term};
}

Expr canon_product(std::vector<Expr> factors);
Expr canon_power(const Expr& base, const Rational& e);

Expr canon_sum(std::vector<Expr> terms) {
  Number const_acc = Number::of(0LL);
  std::map<Expr, Number, ExprLess> by_key;
  std::vector<Expr> queue = std::move(terms);
  for (size_t i = 0; i < queue.size(); ++i) {
    const Expr t = queue[i];
    if (t.kind() == ExprKind::sum) {
      for (const auto& a : t.args()) queue.push_back(a);
      continue;
    }
    if (t.kind() == ExprKind::constant) {
      const_acc = Number::add(const_acc, t.value());
      continue;
    }
    auto [c, key] = split_coefficient(t);
    auto it = by_key.find(key);
    if (it == by_key.end())
      by_key.emplace(key, c);
    else
      it->second = Number::add(it->second, c);
  }
  std::vector<Expr> out;
  if (!const_acc.is_zero()) out.push_back(raw_constant(const_acc));
  for (const auto& [key, c] : by_key) {
    if (c.is_zero()) continue;
    if (c.is_one()) {
      out.push_back(key);
    } else if (key.kind() == ExprKind::product) {
      std::vector<Expr> atoms = key.args();
      out.push_back(make_product_from_atoms(c, std::move(atoms)));
    } else {
      out.push_back(make_product_from_atoms(c, {key}));
    }
  }
  if (out.empty()) return Expr::constant(0LL);
  if (out.size() == 1) return out.front();
  return raw_nary(ExprKind::sum, std::move(out));
}

Expr canon_product(std::vector<Expr> factors) {
  Number coeff = Number::of(1LL);
  // Ordered so the rebuilt factor list is deterministic.
  std::map<Expr, Rational, ExprLess> powers;
  std::vector<Expr> queue = std::move(factors);
  bool saw_zero = false;
  for (size_t i = 0; i < queue.size(); ++i) {
    const Expr f = queue[i];
    if (f.kind() == ExprKind::product) {
      for (const auto& a : f.args()) queue.push_back(a);
      continue;
    }
    if (f.kind() == ExprKind::constant) {
      if (f.value().is_zero()) saw_zero = true;
      coeff = Number::mul(coeff, f.value());
      continue;
    }
    auto [base, e] = decompose_factor(f);
    auto it = powers.find(base);
    if (it == powers.end()) {
      powers.emplace(base, e);
    } else {
      if (auto merged = Rational::add(it->second, e)) {
        it->second = *merged;
      } else {
        // Exponent overflow: keep the factor as a separate atom keyed by the
        // undecomposed expression (loses merging, stays correct).
        powers.emplace(f, Rational{1});
      }
    }
  }
  if (saw_zero || coeff.is_zero()) return Expr::constant(0LL);
  std::vector<Expr> atoms;
  for (const auto& [base, e] : powers) {
    if (e.is_zero()) continue;
    if (base.kind() == ExprKind::constant) {
      // Constant bases re-fold (can appear via power merging).
      if (auto n = Number::pow(base.value(), e)) {
        coeff = Number::mul(coeff, *n);
        continue;
      }
    }
    emit_power_atoms(base, e, atoms);
  }
  return make_product_from_atoms(coeff, std::move(atoms));
}

Expr canon_power(const Expr& base, const Rational& e) {
  if (e.is_zero()) return Expr::constant(1LL);
  if (e.is_one()) return base;
  switch (base.kind()) {
    case ExprKind::constant:
      if (auto n = Number::pow(base.value(), e)) return raw_constant(*n);
      break;  // e.g. sqrt of a negative constant: keep symbolic
    case ExprKind::product: {
      if (e.is_integer()) {
        std::vector<Expr> parts;
        parts.reserve(base.args().size());
        for (const auto& f : base.args()) parts.push_back(canon_power(f, e));
        return canon_product(std::move(parts));
      }
      break;
    }
    case ExprKind::power: {
      // (x^a)^b merges when b is an integer, or when a is fractional (then
      // the inner power already pins the domain to nonnegative bases).
      // An even integer a with fractional b must not merge: sqrt(x^2) != x.
      const Rational& a = base.exponent();
      if (e.is_integer() || !a.is_integer()) {
        if (auto merged = Rational::mul(a, e)) return canon_power(base.base(), *merged);
      }
      break;
    }
    case ExprKind::sqrt_fn: {
      if (auto merged = Rational::mul(e, *Rational::make(1, 2)))
        return canon_power(base.base(), *merged);
      break;
    }
    default:
      break;
  }
  std::vector<Expr> atoms;
  emit_power_atoms(base, e, atoms);
  return make_product_from_atoms(Number::of(1LL), std::move(atoms));
}

Expr canon_fn(ExprKind k, const Expr& arg) {
  if (k == ExprKind::sqrt_fn) return canon_power(arg, *Rational::make(1, 2));
  if (arg.is_constant()) {
    const Number& v = arg.value();
    switch (k) {
      case ExprKind::sin_fn:
        if (v.is_zero()) return Expr::constant(0LL);
        return Expr::constant(std::sin(v.value()));
      case ExprKind::cos_fn:
        if (v.is_zero()) return Expr::constant(1LL);
        return Expr::constant(std::cos(v.value()));
      case ExprKind::exp_fn:
        if (v.is_zero()) return Expr::constant(1LL);
        return Expr::constant(std::exp(v.value()));
      case ExprKind::log_fn:
        if (v.is_one()) return Expr::constant(0LL);
        if (v.value() > 0.0) return Expr::constant(std::log(v.value()));
        break;  // log of a nonpositive constant stays symbolic; evaluate reports it
      default:
        break;
    }
  }
  return raw_fn(k, arg);
}

}  // namespace

Expr sum_of(std::vector<Expr> terms) { return canon_sum(std::move(terms)); }
Expr product_of(std::vector<Expr> factors) { return canon_product(std::move(factors)); }
Expr pow(const Expr& base, const Rational& e) { return canon_power(base, e); }
Expr sqrt(const Expr& x) { return canon_fn(ExprKind::sqrt_fn, x); }
Expr sin(const Expr& x) { return canon_fn(ExprKind::sin_fn, x); }
Expr cos(const Expr& x) { return canon_fn(ExprKind::cos_fn, x); }
Expr exp(const Expr& x) { return canon_fn(ExprKind::exp_fn, x); }
Expr log(const Expr& x) { return canon_fn(ExprKind::log_fn, x); }

Expr operator+(const Expr& a, const Expr& b) { return canon_sum({a, b}); }
Expr operator-(const Expr& a, const Expr& b) {
  return canon_sum({a, canon_product({Expr::constant(-1LL), b})});
}
Expr operator*(const Expr& a, const Expr& b) { return canon_product({a, b}); }
Expr operator/(const Expr& a, const Expr& b) {
  return canon_product({a, canon_power(b, Rational{-1})});
}
Expr Expr::operator-() const { return canon_product({Expr::constant(-1LL), *this}); }

// ---------------------------------------------------------------------------
// Printing
// ---------------------------------------------------------------------------

namespace {

// Precedence contexts, loosest to tightest.
enum Prec { P_SUM = 0, P_PROD = 1, P_FACTOR = 2, P_ATOM = 3 };

std::string print(const Expr& e, Prec ctx);

std::string print_constant(const Number& v, Prec ctx) {
  std::string s = v.str();
  bool needs_parens = (v.negative() || (v.exact() && !v.rat().is_integer())) && ctx >= P_PROD;
  if (needs_parens) return "(" + s + ")";
  return s;
}

std::string exponent_str(const Rational& e) {
  if (e.is_integer() && !e.negative()) return std::to_string(e.num());
  return "(" + e.str() + ")";
}

// Product body from explicit parts; the sign is reported separately so sums
// can fold it into the +/- joiners.
struct ProductBody {
  bool negative = false;
  std::string text;
};

ProductBody print_product_parts(const Number& coeff, const std::vector<Expr>& factors) {
  ProductBody out;
  std::vector<std::string> num_parts, den_parts;
  for (const auto& f : factors) {
    if (f.kind() == ExprKind::power && f.exponent().negative()) {
      Rational pos = *f.exponent().negated();
      if (pos.is_one())
        den_parts.push_back(print(f.base(), P_FACTOR));
      else
        den_parts.push_back(print(f.base(), P_ATOM) + "^" + exponent_str(pos));
    } else {
      num_parts.push_back(print(f, P_FACTOR));
    }
  }
  Number c = coeff;
  if (c.negative()) {
    out.negative = true;
    c = c.negated();
  }
  if (c.exact()) {
    if (!c.rat().is_one() || num_parts.empty()) {
      if (c.rat().num() != 1 || num_parts.empty())
        num_parts.insert(num_parts.begin(), std::to_string(c.rat().num()));
      if (c.rat().den() != 1)
        den_parts.insert(den_parts.begin(), std::to_string(c.rat().den()));
    }
  } else if (!c.is_one() || num_parts.empty()) {
    num_parts.insert(num_parts.begin(), c.str());
  }
  if (num_parts.empty()) num_parts.push_back("1");
  std::string s;
  for (size_t i = 0; i < num_parts.size(); ++i) {
    if (i) s += "*";
    s += num_parts[i];
  }
  if (!den_parts.empty()) {
    if (den_parts.size() == 1) {
      s += "/" + den_parts[0];
    } else {
      s += "/(";
      for (size_t i = 0; i < den_parts.size(); ++i) {
        if (i) s += "*";
        s += den_parts[i];
      }
      s += ")";
    }
  }
  out.text = std::move(s);
  return out;
}

ProductBody term_body(const Expr& t) {
  switch (t.kind()) {
    case ExprKind::constant: {
      ProductBody b;
      Number v = t.value();
      if (v.negative()) {
        b.negative = true;
        v = v.negated();
      }
      b.text = v.str();
      return b;
    }
    case ExprKind::product: {
      auto [c, key] = split_coefficient(t);
      std::vector<Expr> factors = key.kind() == ExprKind::product ? key.args() : std::vector<Expr>{key};
      return print_product_parts(c, factors);
    }
    case ExprKind::power:
      if (t.exponent().negative()) return print_product_parts(Number::of(1LL), {t});
      [[fallthrough]];
    default: {
      ProductBody b;
      b.text = print(t, P_PROD);
      return b;
    }
  }
}

std::string print(const Expr& e, Prec ctx) {
  switch (e.kind()) {
    case ExprKind::constant:
      return print_constant(e.value(), ctx);
    case ExprKind::variable:
      return e.var().name;
    case ExprKind::sum: {
      // Tree order is canonical (constant first); display reads better with
      // the constant moved last.
      std::vector<Expr> terms = e.args();
      if (terms.front().kind() == ExprKind::constant) {
        std::rotate(terms.begin(), terms.begin() + 1, terms.end());
      }
      std::string s;
      for (size_t i = 0; i < terms.size(); ++i) {
        ProductBody b = term_body(terms[i]);
        if (i == 0)
          s += (b.negative ? "-" : "") + b.text;
        else
          s += (b.negative ? " - " : " + ") + b.text;
      }
      if (ctx > P_SUM) return "(" + s + ")";
      return s;
    }
    case ExprKind::product: {
      auto [c, key] = split_coefficient(e);
      std::vector<Expr> factors = key.kind() == ExprKind::product ? key.args() : std::vector<Expr>{key};
      ProductBody b = print_product_parts(c, factors);
      std::string s = (b.negative ? "-" : "") + b.text;
      if (b.negative && ctx > P_SUM) return "(" + s + ")";
      return s;
    }
    case ExprKind::power: {
      if (e.exponent().negative()) {
        ProductBody b = print_product_parts(Number::of(1LL), {e});
        return b.text;  // renders as 1/base^k
      }
      std::string s = print(e.base(), P_ATOM) + "^" + exponent_str(e.exponent());
      if (ctx >= P_ATOM) return "(" + s + ")";
      return s;
    }
    case ExprKind::sqrt_fn:
      return "sqrt(" + print(e.base(), P_SUM) + ")";
    case ExprKind::sin_fn:
      return "sin(" + print(e.base(), P_SUM) + ")";
    case ExprKind::cos_fn:
      return "cos(" + print(e.base(), P_SUM) + ")";
    case ExprKind::exp_fn:
      return "exp(" + print(e.base(), P_SUM) + ")";
    case ExprKind::log_fn:
      return "log(" + print(e.base(), P_SUM) + ")";
  }
  return "?";
}

}  // namespace

std::string Expr::str() const { return print(*this, P_SUM); }

// ---------------------------------------------------------------------------
// simplify / differentiate / evaluate / substitute / free_vars
// ---------------------------------------------------------------------------

Expr simplify(const Expr& e) {
  switch (e.kind()) {
    case ExprKind::constant:
    case ExprKind::variable:
      return e;
    case ExprKind::sum: {
      std::vector<Expr> parts;
      parts.reserve(e.args().size());
      for (const auto& a : e.args()) parts.push_back(simplify(a));
      return canon_sum(std::move(parts));
    }
    case ExprKind::product: {
      std::vector<Expr> parts;
      parts.reserve(e.args().size());
      for (const auto& a : e.args()) parts.push_back(simplify(a));
      return canon_product(std::move(parts));
    }
    case ExprKind::power:
      return canon_power(simplify(e.base()), e.exponent());
    default:
      return canon_fn(e.kind(), simplify(e.base()));
  }
}

Expr differentiate(const Expr& e, const VarId& v) {
  switch (e.kind()) {
    case ExprKind::constant:
      return Expr::constant(0LL);
    case ExprKind::variable:
      return e.var().name == v.name ? Expr::constant(1LL) : Expr::constant(0LL);
    case ExprKind::sum: {
      std::vector<Expr> parts;
      for (const auto& a : e.args()) parts.push_back(differentiate(a, v));
      return canon_sum(std::move(parts));
    }
    case ExprKind::product: {
      std::vector<Expr> terms;
      const auto& args = e.args();
      for (size_t i = 0; i < args.size(); ++i) {
        Expr di = differentiate(args[i], v);
        if (di.is_zero()) continue;
        std::vector<Expr> prod;
        prod.reserve(args.size());
        prod.push_back(std::move(di));
        for (size_t j = 0; j < args.size(); ++j)
          if (j != i) prod.push_back(args[j]);
        terms.push_back(canon_product(std::move(prod)));
      }
      return canon_sum(std::move(terms));
    }
    case ExprKind::power: {
      const Rational& r = e.exponent();
      Expr db = differentiate(e.base(), v);
      if (db.is_zero()) return Expr::constant(0LL);
      auto rm1 = Rational::sub(r, Rational{1});
      if (!rm1) return Expr::constant(0LL);  // unreachable for sane exponents
      return canon_product({Expr::constant(r), canon_power(e.base(), *rm1), db});
    }
    case ExprKind::sqrt_fn: {
      Expr db = differentiate(e.base(), v);
      if (db.is_zero()) return Expr::constant(0LL);
      return canon_product({Expr::constant(*Rational::make(1, 2)),
                            canon_power(e.base(), *Rational::make(-1, 2)), db});
    }
    case ExprKind::sin_fn: {
      Expr db = differentiate(e.base(), v);
      if (db.is_zero()) return Expr::constant(0LL);
      return canon_product({canon_fn(ExprKind::cos_fn, e.base()), db});
    }
    case ExprKind::cos_fn: {
      Expr db = differentiate(e.base(), v);
      if (db.is_zero()) return Expr::constant(0LL);
      return canon_product({Expr::constant(-1LL), canon_fn(ExprKind::sin_fn, e.base()), db});
    }
    case ExprKind::exp_fn: {
      Expr db = differentiate(e.base(), v);
      if (db.is_zero()) return Expr::constant(0LL);
      return canon_product({canon_fn(ExprKind::exp_fn, e.base()), db});
    }
    case ExprKind::log_fn: {
      Expr db = differentiate(e.base(), v);
      if (db.is_zero()) return Expr::constant(0LL);
      return canon_product({canon_power(e.base(), Rational{-1}), db});
    }
  }
  return Expr::constant(0LL);
}

namespace {

double pow_integer(double b, long long e, const Expr& where) {
  if (e < 0) {
    if (b == 0.0) throw DomainError("zero raised to a negative power in: " + where.str());
    return 1.0 / pow_integer(b, -e, where);
  }
  double acc = 1.0, base = b;
  unsigned long long n = static_cast<unsigned long long>(e);
  while (n > 0) {
    if (n & 1) acc *= base;
    base *= base;
    n >>= 1;
  }
  return acc;
}

}  // namespace

double evaluate(const Expr& e, const Binding& b) {
  switch (e.kind()) {
    case ExprKind::constant:
      return e.value().value();
    case ExprKind::variable: {
      auto v = b.find(e.var().name);
      if (!v) throw EvalError("no value bound for variable '" + e.var().name + "'");
      return *v;
    }
    case ExprKind::sum: {
      double s = 0.0;
      for (const auto& a : e.args()) s += evaluate(a, b);
      return s;
    }
    case ExprKind::product: {
      double p = 1.0;
      for (const auto& a : e.args()) p *= evaluate(a, b);
      return p;
    }
    case ExprKind::power: {
      double base = evaluate(e.base(), b);
      const Rational& r = e.exponent();
      if (r.is_integer()) return pow_integer(base, r.num(), e);
      if (base < 0.0)
        throw DomainError("fractional power of a negative base in: " + e.str());
      if (base == 0.0 && r.negative())
        throw DomainError("zero raised to a negative power in: " + e.str());
      return std::pow(base, r.to_double());
    }
    case ExprKind::sqrt_fn: {
      double x = evaluate(e.base(), b);
      if (x < 0.0) throw DomainError("square root of a negative value in: " + e.str());
      return std::sqrt(x);
    }
    case ExprKind::sin_fn:
      return std::sin(evaluate(e.base(), b));
    case ExprKind::cos_fn:
      return std::cos(evaluate(e.base(), b));
    case ExprKind::exp_fn:
      return std::exp(evaluate(e.base(), b));
    case ExprKind::log_fn: {
      double x = evaluate(e.base(), b);
      if (x <= 0.0) throw DomainError("log of a nonpositive value in: " + e.str());
      return std::log(x);
    }
  }
  throw EvalError("unhandled expression kind");
}

namespace {

void collect_vars(const Expr& e, std::set<VarId>& out) {
  if (e.kind() == ExprKind::variable) {
    out.insert(e.var());
    return;
  }
  for (const auto& a : e.args()) collect_vars(a, out);
}

Expr substitute_once(const Expr& e, const std::map<std::string, Expr>& repl) {
  switch (e.kind()) {
    case ExprKind::constant:
      return e;
    case ExprKind::variable: {
      auto it = repl.find(e.var().name);
      return it == repl.end() ? e : it->second;
    }
    case ExprKind::sum: {
      std::vector<Expr> parts;
      parts.reserve(e.args().size());
      for (const auto& a : e.args()) parts.push_back(substitute_once(a, repl));
      return canon_sum(std::move(parts));
    }
    case ExprKind::product: {
      std::vector<Expr> parts;
      parts.reserve(e.args().size());
      for (const auto& a : e.args()) parts.push_back(substitute_once(a, repl));
      return canon_product(std::move(parts));
    }
    case ExprKind::power:
      return canon_power(substitute_once(e.base(), repl), e.exponent());
    default:
      return canon_fn(e.kind(), substitute_once(e.base(), repl));
  }
}

}  // namespace

std::set<VarId> free_vars(const Expr& e) {
  std::set<VarId> out;
  collect_vars(e, out);
  return out;
}

bool depends_on(const Expr& e, const std::string& name) {
  if (e.kind() == ExprKind::variable) return e.var().name == name;
  for (const auto& a : e.args())
    if (depends_on(a, name)) return true;
  return false;
}

Expr substitute(const Expr& e, const std::map<std::string, Expr>& repl) {
  // Reject any cycle in the replacement graph restricted to the keys,
  // including self-reference: substitution here is simultaneous, and a
  // cyclic map almost always signals a modelling mistake.
  for (const auto& [key, _] : repl) {
    std::vector<std::string> stack = {key};
    std::set<std::string> seen;
    while (!stack.empty()) {
      std::string cur = stack.back();
      stack.pop_back();
      auto it = repl.find(cur);
      if (it == repl.end()) continue;
      for (const auto& v : free_vars(it->second)) {
        if (v.name == key)
          throw SubstitutionCycleError("substitution cycle through '" + key + "'");
        if (seen.insert(v.name).second) stack.push_back(v.name);
      }
    }
  }
  return substitute_once(e, repl);
}

// ---------------------------------------------------------------------------
// ParseError
// ---------------------------------------------------------------------------

ParseError::ParseError(const std::string& msg, int line_, int col_)
    : std::runtime_error("line " + std::to_string(line_) + ", col " + std::to_string(col_) +
                         ": " + msg),
      line(line_),
      col(col_) {}

}  // namespace phs
