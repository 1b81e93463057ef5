#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "phs/expr.hpp"

using namespace phs;

namespace {

std::vector<VarId> decls(std::initializer_list<const char*> names) {
  std::vector<VarId> out;
  int i = 0;
  for (const char* n : names) out.push_back({n, VarKind::state, i++});
  return out;
}

const std::vector<VarId> kVars =
    decls({"q", "p", "x", "y", "q0", "q1", "p0", "p1", "v0", "v1", "m", "lam", "u", "a", "b"});

Expr P(const std::string& s) { return parse_expr(s, kVars); }

VarId V(const std::string& name) {
  for (const auto& v : kVars)
    if (v.name == name) return v;
  return {name, VarKind::state, 0};
}

// Deterministic uniform double in [lo, hi): mt19937_64 bits mapped directly
// so results are identical across platforms.
double uniform(std::mt19937_64& rng, double lo, double hi) {
  double u = double(rng() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

}  // namespace

TEST_CASE("parse: grammar, precedence, canonical structure") {
  CHECK(P("q + p") == P("p + q"));
  CHECK(P("(q + p) + x") == P("q + (p + x)"));
  CHECK(P("q*p") == P("p*q"));
  CHECK(P("2*q^3") == pow(P("q"), Rational{3}) * Expr::constant(2));

  // Unary minus binds weaker than ^: -p0^2 is -(p0^2).
  Binding b;
  b.set("p0", 2.0);
  CHECK(evaluate(P("-p0^2"), b) == doctest::Approx(-4.0));
  CHECK(P("-p0^2") == -pow(P("p0"), Rational{2}));

  // The mass-shell constraint reads as written.
  Expr phi = P("-p0^2 + p1^2 - m^2");
  Expr by_hand = -pow(P("p0"), Rational{2}) + pow(P("p1"), Rational{2}) - pow(P("m"), Rational{2});
  CHECK(phi == by_hand);

  CHECK(P("q^(1/2)") == sqrt(P("q")));
  CHECK(P("q^(1/2)").str() == "sqrt(q)");
  CHECK(P("q^(-2)").str() == "1/q^2");
  CHECK(P("q/p/x") == P("q/(p*x)"));
  CHECK(P("1/2").str() == "1/2");
  CHECK(P("2e-3") == Expr::constant(0.002));
}

TEST_CASE("parse: errors carry positions") {
  CHECK_THROWS_AS(P("2 +* q"), ParseError);
  CHECK_THROWS_AS(P("q^2.5"), ParseError);
  CHECK_THROWS_AS(P("(q + p"), ParseError);
  CHECK_THROWS_AS(P("2 q"), ParseError);
  CHECK_THROWS_AS(P("nope + 1"), ParseError);
  CHECK_THROWS_AS(P("sin + 1"), ParseError);
  CHECK_THROWS_AS(P("1.2.3"), ParseError);
  CHECK_THROWS_AS(P(""), ParseError);

  try {
    P("q +\n* p");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line == 2);
    CHECK(e.col == 1);
  }
  try {
    P("q + zz");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line == 1);
    CHECK(e.col == 5);
  }
}

TEST_CASE("print: canonical text and fixed point under reparsing") {
  Expr two_x_over_3y2 =
      Expr::constant(2) * P("x") / (Expr::constant(3) * pow(P("y"), Rational{2}));
  CHECK(two_x_over_3y2.str() == "2*x/(3*y^2)");

  const char* samples[] = {
      "q^2 + p^2",
      "lam*(-p0^2 + p1^2 - m^2)",
      "m*sqrt(-v0^2 + v1^2)",
      "1/x^2",
      "x^(1/4)",
      "2*x/(3*y^2)",
      "sin(q)*cos(p) - exp(x)/log(y)",
      "sqrt(q^2)",
      "q - 1/x",
      "0.5*q + 1e-06*p",
      "x*sqrt(x)",
      "-q - p",
      "(q + p)^2",
      "1/(q + p)",
      "q^2 - 1",
  };
  for (const char* s : samples) {
    CAPTURE(s);
    std::string once = P(s).str();
    std::string twice = parse_expr(once, kVars).str();
    CHECK(once == twice);
    CHECK(P(s) == parse_expr(once, kVars));
  }
}

TEST_CASE("canonicalization: identities and folding") {
  CHECK((P("q") + Expr::constant(0)) == P("q"));
  CHECK((P("q") * Expr::constant(1)) == P("q"));
  CHECK((P("q") * Expr::constant(0)).is_zero());
  CHECK(pow(P("q"), Rational{0}).is_one());
  CHECK(P("q + q") == P("2*q"));
  CHECK(P("2*q - q") == P("q"));
  CHECK(P("q - q").is_zero());
  CHECK(P("q*q") == pow(P("q"), Rational{2}));
  CHECK(P("q/q").is_one());
  CHECK(P("sqrt(u)*sqrt(u)") == P("u"));
  CHECK(P("2 + 3") == Expr::constant(5));
  CHECK(P("2^(-2)") == Expr::constant(*Rational::make(1, 4)));
  CHECK(P("sqrt(4)") == Expr::constant(2));
  CHECK(P("sqrt(9/4)") == Expr::constant(*Rational::make(3, 2)));
  CHECK(P("sin(0)").is_zero());
  CHECK(P("cos(0)").is_one());
  CHECK(P("exp(0)").is_one());
  CHECK(P("log(1)").is_zero());

  // sqrt(2) folds to a floating constant; sqrt(x^2) must stay symbolic.
  CHECK(P("sqrt(2)").is_constant());
  CHECK(P("sqrt(2)").value().value() == doctest::Approx(std::sqrt(2.0)));
  CHECK(P("sqrt(q^2)").kind() == ExprKind::sqrt_fn);

  // (x^(1/2))^3 = x*sqrt(x); fractional inner exponents merge.
  CHECK(pow(P("q^(1/2)"), Rational{3}) == P("q*sqrt(q)"));
  CHECK(pow(P("q^(1/2)"), Rational{2}) == P("q"));

  // Exact arithmetic overflows degrade to floating point, not wraparound.
  Expr big = pow(Expr::constant(2), Rational{200});
  REQUIRE(big.is_constant());
  CHECK(!big.value().exact());
  CHECK(big.value().value() == doctest::Approx(std::pow(2.0, 200.0)));

  // Half-integer powers of sums keep the sqrt visible.
  CHECK(P("(q + p)^(3/2)") == P("(q + p)*sqrt(q + p)"));
}

TEST_CASE("simplify is the identity on canonical trees and preserves values") {
  const char* samples[] = {
      "q^2 + 2*q*p + p^2",
      "m*sqrt(-v0^2 + v1^2)",
      "sin(q)^2 + cos(q)^2",
      "exp(q)*log(p) - q/p",
      "(q + p)^3/(q - p)",
  };
  std::mt19937_64 rng(7);
  for (const char* s : samples) {
    CAPTURE(s);
    Expr e = P(s);
    CHECK(simplify(e) == e);
    for (int i = 0; i < 20; ++i) {
      Binding b;
      b.set("q", uniform(rng, 0.2, 1.5));
      b.set("p", uniform(rng, 2.0, 3.0));
      b.set("m", 1.25);
      b.set("v0", uniform(rng, -0.4, 0.4));
      b.set("v1", uniform(rng, 0.8, 1.4));
      CHECK(evaluate(simplify(e), b) == doctest::Approx(evaluate(e, b)).epsilon(1e-12));
    }
  }
}

TEST_CASE("differentiate: structural oracles") {
  CHECK(differentiate(P("q^2 + p^2"), V("q")) == P("2*q"));
  CHECK(differentiate(P("q^2 + p^2"), V("x")).is_zero());

  // d/dv1 of m*sqrt(-v0^2+v1^2): the relativistic momentum component.
  Expr dL = differentiate(P("m*sqrt(-v0^2 + v1^2)"), V("v1"));
  CHECK(dL == P("m*v1/sqrt(-v0^2 + v1^2)"));

  CHECK(differentiate(P("sin(q^2)"), V("q")) == P("2*q*cos(q^2)"));
  CHECK(differentiate(P("exp(2*q)"), V("q")) == P("2*exp(2*q)"));
  CHECK(differentiate(P("log(q)"), V("q")) == P("1/q"));
  CHECK(differentiate(P("q*p"), V("q")) == P("p"));
  CHECK(differentiate(P("1/q"), V("q")) == P("-1/q^2"));
}

TEST_CASE("differentiate: central finite-difference cross-check") {
  const char* samples[] = {
      "q^3 - 2*q*p + p^2",
      "m*sqrt(-v0^2 + v1^2)",
      "sin(q)*cos(p)",
      "exp(q*p)",
      "log(q^2 + 1)",
      "q^(1/2) + q^(-2)",
      "(q + p)^3",
      "u*q^2/(p + 2)",
  };
  const char* wrt[] = {"q", "p", "v0", "v1", "u"};
  std::mt19937_64 rng(11);
  const double h = 1e-6;
  for (const char* s : samples) {
    Expr e = P(s);
    for (const char* vn : wrt) {
      if (!depends_on(e, vn)) continue;
      Expr de = differentiate(e, V(vn));
      for (int i = 0; i < 100; ++i) {
        Binding b;
        b.set("q", uniform(rng, 0.3, 1.6));
        b.set("p", uniform(rng, 0.3, 1.6));
        b.set("u", uniform(rng, 0.3, 1.6));
        b.set("m", 1.1);
        b.set("v0", uniform(rng, -0.4, 0.4));
        b.set("v1", uniform(rng, 0.8, 1.4));
        double x0 = b.find(vn).value();
        Binding bp = b, bm = b;
        bp.set(vn, x0 + h);
        bm.set(vn, x0 - h);
        double fd = (evaluate(e, bp) - evaluate(e, bm)) / (2 * h);
        double sym = evaluate(de, b);
        CAPTURE(s);
        CAPTURE(vn);
        CHECK(std::abs(sym - fd) <= 1e-6 * (1.0 + std::abs(sym)));
      }
    }
  }
}

TEST_CASE("evaluate: values and domain errors") {
  Binding b;
  b.set("q", 3.0);
  b.set("p", 4.0);
  CHECK(evaluate(P("q^2 + p^2"), b) == 25.0);
  CHECK_THROWS_AS(evaluate(P("x"), b), EvalError);
  b.set("x", -1.0);
  CHECK_THROWS_AS(evaluate(P("sqrt(x)"), b), DomainError);
  CHECK_THROWS_AS(evaluate(P("log(x)"), b), DomainError);
  CHECK_THROWS_AS(evaluate(P("x^(1/2)"), b), DomainError);
  b.set("x", 0.0);
  CHECK_THROWS_AS(evaluate(P("x^(-1)"), b), DomainError);
  CHECK_THROWS_AS(evaluate(P("log(x)"), b), DomainError);

  // The offending subterm is named.
  b.set("x", -2.0);
  try {
    evaluate(P("q + sqrt(x)"), b);
    FAIL("expected DomainError");
  } catch (const DomainError& e) {
    CHECK(std::string(e.what()).find("sqrt(x)") != std::string::npos);
  }
}

TEST_CASE("substitute: simultaneous, cycle-checked") {
  // Replacements are not re-substituted: x -> y introduces a y that stays,
  // even though y itself is also being replaced. Not a cycle (y never maps
  // back into x).
  std::map<std::string, Expr> m1{{"x", P("y")}, {"y", Expr::constant(3)}};
  CHECK(substitute(P("x + y"), m1) == P("y + 3"));
  std::map<std::string, Expr> swap{{"x", P("y")}, {"y", P("x")}};
  CHECK_THROWS_AS(substitute(P("x + y"), swap), SubstitutionCycleError);
  std::map<std::string, Expr> self{{"x", P("x + 1")}};
  CHECK_THROWS_AS(substitute(P("x"), self), SubstitutionCycleError);

  std::map<std::string, Expr> ok{{"lam", P("q + p")}};
  CHECK(substitute(P("lam*(-p0^2 + p1^2 - m^2)"), ok) ==
        P("(q + p)*(-p0^2 + p1^2 - m^2)"));

  std::map<std::string, Expr> zero{{"lam", Expr::constant(0)}};
  CHECK(substitute(P("q^2 + lam*p"), zero) == P("q^2"));
}

TEST_CASE("free_vars") {
  auto fv = free_vars(P("lam*(-p0^2 + p1^2 - m^2)"));
  CHECK(fv.size() == 4);
  CHECK(fv.count(V("lam")) == 1);
  CHECK(fv.count(V("m")) == 1);
  CHECK(fv.count(V("p0")) == 1);
  CHECK(fv.count(V("p1")) == 1);
  CHECK(free_vars(Expr::constant(5)).empty());
}

TEST_CASE("is_symbolically_zero: expanded zero proofs") {
  // Legendre energy of the square-root Lagrangian: p_hat.v - L == 0.
  Expr L = P("m*sqrt(-v0^2 + v1^2)");
  Expr E = differentiate(L, V("v0")) * P("v0") + differentiate(L, V("v1")) * P("v1") - L;
  CHECK(!E.is_zero());  // the display form does not collapse on its own
  CHECK(is_symbolically_zero(E));

  CHECK(is_symbolically_zero(P("(q + p)^2 - q^2 - 2*q*p - p^2")));
  CHECK(is_symbolically_zero(P("(q + p)^2 - (q - p)^2 - 4*q*p")));
  CHECK(is_symbolically_zero(P("q/(q + p) + p/(q + p) - 1")));
  CHECK(is_symbolically_zero(P("sqrt(q + p)*sqrt(q + p) - q - p")));

  CHECK(!is_symbolically_zero(P("q + p")));
  CHECK(!is_symbolically_zero(Expr::constant(2)));
  // True identity the polynomial model cannot see; callers go numeric.
  CHECK(!is_symbolically_zero(P("sin(q)^2 + cos(q)^2 - 1")));
}

TEST_CASE("substitute then simplify reproduces collapsed Hamiltonians") {
  // H' = p^2/2 + lam*q with the determined value lam = 0 collapses to p^2/2.
  std::map<std::string, Expr> det{{"lam", Expr::constant(0)}};
  CHECK(substitute(P("p^2/2 + lam*q"), det) == P("p^2/2"));
}
