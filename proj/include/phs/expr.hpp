#pragma once

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "phs/rational.hpp"

namespace phs {

// ---------------------------------------------------------------------------
// Variables and bindings
// ---------------------------------------------------------------------------

enum class VarKind { state, input, multiplier, parameter };

std::string to_string(VarKind k);

// A declared variable. Names are unique across kinds within one system
// description, so identity and ordering go by name alone; kind and index
// carry the role and the position within that role.
struct VarId {
  std::string name;
  VarKind kind = VarKind::state;
  int index = 0;

  friend bool operator==(const VarId& a, const VarId& b) { return a.name == b.name; }
  friend bool operator!=(const VarId& a, const VarId& b) { return a.name != b.name; }
  friend bool operator<(const VarId& a, const VarId& b) { return a.name < b.name; }
};

// Assignment of numeric values to variable names. Backed by a flat vector:
// systems here have a handful of variables, so linear lookup beats hashing.
class Binding {
 public:
  void set(const std::string& name, double value);
  void set(const VarId& v, double value) { set(v.name, value); }
  bool has(const std::string& name) const;
  std::optional<double> find(const std::string& name) const;
  // Entries of `other` override entries of `this`.
  void merge(const Binding& other);
  const std::vector<std::pair<std::string, double>>& entries() const { return entries_; }
  bool empty() const { return entries_.empty(); }

 private:
  std::vector<std::pair<std::string, double>> entries_;
};

// ---------------------------------------------------------------------------
// Numbers: exact rationals with a floating-point escape hatch
// ---------------------------------------------------------------------------

class Number {
 public:
  Number() : exact_(true), rat_(0) {}
  static Number of(const Rational& r);
  static Number of(long long n) { return of(Rational{n}); }
  static Number of(double d);

  bool exact() const { return exact_; }
  const Rational& rat() const { return rat_; }  // valid only when exact()
  double value() const { return exact_ ? rat_.to_double() : dbl_; }

  bool is_zero() const { return exact_ ? rat_.is_zero() : dbl_ == 0.0; }
  bool is_one() const { return exact_ ? rat_.is_one() : dbl_ == 1.0; }
  bool negative() const { return exact_ ? rat_.negative() : dbl_ < 0.0; }

  std::string str() const;

  static Number add(const Number& a, const Number& b);
  static Number mul(const Number& a, const Number& b);
  Number negated() const;
  // Returns nullopt when the power is not defined over the reals
  // (negative base with fractional exponent, zero with negative exponent).
  static std::optional<Number> pow(const Number& a, const Rational& e);

  int compare(const Number& o) const;
  bool same(const Number& o) const;  // structural: exactness matters

 private:
  bool exact_;
  Rational rat_;
  double dbl_ = 0.0;
};

// ---------------------------------------------------------------------------
// Expressions
// ---------------------------------------------------------------------------

enum class ExprKind {
  constant,
  variable,
  sum,      // n-ary, args sorted, like terms collected
  product,  // n-ary, args sorted, powers of a common base merged
  power,    // base^exponent with rational exponent
  sqrt_fn,
  sin_fn,
  cos_fn,
  exp_fn,
  log_fn,
};

struct ExprNode;

// Immutable expression handle. All construction paths canonicalize, so two
// mathematically-identical-by-rewriting trees built through this interface
// compare equal whenever the rule set reaches the common form.
class Expr {
 public:
  Expr();  // the constant 0

  static Expr constant(long long n);
  static Expr constant(int n) { return constant(static_cast<long long>(n)); }
  static Expr constant(const Rational& r);
  static Expr constant(double d);
  static Expr constant(const Number& n);
  static Expr variable(const VarId& v);

  ExprKind kind() const;
  const Number& value() const;       // kind == constant
  const VarId& var() const;          // kind == variable
  const Rational& exponent() const;  // kind == power
  const std::vector<Expr>& args() const;
  const Expr& base() const;  // power base, or the unary function argument

  bool is_constant() const { return kind() == ExprKind::constant; }
  bool is_zero() const;
  bool is_one() const;

  std::string str() const;

  static int compare(const Expr& a, const Expr& b);
  friend bool operator==(const Expr& a, const Expr& b) { return compare(a, b) == 0; }
  friend bool operator!=(const Expr& a, const Expr& b) { return compare(a, b) != 0; }

  friend Expr operator+(const Expr& a, const Expr& b);
  friend Expr operator-(const Expr& a, const Expr& b);
  friend Expr operator*(const Expr& a, const Expr& b);
  friend Expr operator/(const Expr& a, const Expr& b);
  Expr operator-() const;

  // Low-level access for the implementation; not for general use.
  explicit Expr(std::shared_ptr<const ExprNode> n);
  const std::shared_ptr<const ExprNode>& node() const { return n_; }

 private:
  std::shared_ptr<const ExprNode> n_;
};

// N-ary canonical constructors.
Expr sum_of(std::vector<Expr> terms);
Expr product_of(std::vector<Expr> factors);
Expr pow(const Expr& base, const Rational& e);
Expr sqrt(const Expr& x);
Expr sin(const Expr& x);
Expr cos(const Expr& x);
Expr exp(const Expr& x);
Expr log(const Expr& x);

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& msg, int line, int col);
  int line;
  int col;
};

class EvalError : public std::runtime_error {
 public:
  explicit EvalError(const std::string& msg) : std::runtime_error(msg) {}
};

// Function evaluated outside its real domain; the message names the subterm.
class DomainError : public EvalError {
 public:
  explicit DomainError(const std::string& msg) : EvalError(msg) {}
};

class SubstitutionCycleError : public std::runtime_error {
 public:
  explicit SubstitutionCycleError(const std::string& msg) : std::runtime_error(msg) {}
};

// ---------------------------------------------------------------------------
// Core operations
// ---------------------------------------------------------------------------

// Text -> canonical Expr. Only declared identifiers may appear; errors carry
// 1-based line/column positions.
Expr parse_expr(const std::string& text, const std::vector<VarId>& declared);

// Re-runs canonicalization. Trees built through this interface are already
// canonical, so this is the identity on them; kept as the explicit contract
// point (evaluate(simplify(f)) == evaluate(f)).
Expr simplify(const Expr& e);

// Exact partial derivative with respect to one variable.
Expr differentiate(const Expr& e, const VarId& v);

// Numeric evaluation. Throws EvalError on a missing binding and DomainError
// (naming the offending subterm) on sqrt/log/fractional-power domain faults.
double evaluate(const Expr& e, const Binding& b);

// Simultaneous substitution: replacements are not re-substituted. Throws
// SubstitutionCycleError when any replacement graph cycle (including
// self-reference) is detected among the keys.
Expr substitute(const Expr& e, const std::map<std::string, Expr>& repl);

std::set<VarId> free_vars(const Expr& e);
bool depends_on(const Expr& e, const std::string& name);

// Zero proof on an expanded common-denominator form with exact coefficients.
// true means e is identically zero wherever it is defined; false means the
// proof failed (e may still vanish; callers fall back to numeric sampling).
bool is_symbolically_zero(const Expr& e);

}  // namespace phs
