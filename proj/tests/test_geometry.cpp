#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "phs/geometry.hpp"

using namespace phs;

namespace {

VarId st(const char* n, int i = 0) { return {n, VarKind::state, i}; }
VarId in(const char* n, int i = 0) { return {n, VarKind::input, i}; }
VarId mu(const char* n, int i = 0) { return {n, VarKind::multiplier, i}; }
VarId pa(const char* n, int i = 0) { return {n, VarKind::parameter, i}; }

Expr parse_with(const std::string& s, const std::vector<VarId>& vars) {
  return parse_expr(s, vars);
}

Binding bind(std::initializer_list<std::pair<const char*, double>> vals) {
  Binding b;
  for (const auto& [n, v] : vals) b.set(n, v);
  return b;
}

// Electromagnetically-coupled point particle on a 1+1 metric diag(-1, 1):
// K = lam * (-(p0 - e*A0)^2 + (p1 - e*A1)^2 - m^2), potentials as inputs.
MorseFamily em_family() {
  std::vector<VarId> vars = {st("q0", 0), st("q1", 1), st("p0", 2), st("p1", 3),
                             in("A0", 0), in("A1", 1),  mu("lam", 0),
                             pa("e"),     pa("m")};
  Expr K = parse_with("lam*(-(p0 - e*A0)^2 + (p1 - e*A1)^2 - m^2)", vars);
  return MorseFamily::make({st("q0", 0), st("q1", 1), st("p0", 2), st("p1", 3)},
                           {in("A0", 0), in("A1", 1)}, {mu("lam", 0)}, K);
}

}  // namespace

TEST_CASE("transversal family: coenergy is the exact gradient, graph is single-valued") {
  std::vector<VarId> vars = {st("q", 0), st("p", 1)};
  MorseFamily f = MorseFamily::make(vars, {}, {}, parse_with("(q^2 + p^2)/2", vars));
  CHECK(f.n() == 2);
  CHECK(f.m() == 0);
  CHECK(f.k() == 0);

  auto s = coenergy(f, bind({{"q", 0.3}, {"p", -1.7}}));
  CHECK(s.e[0] == 0.3);
  CHECK(s.e[1] == -1.7);
  CHECK(s.residual.empty());
  CHECK(critical_residual(f, bind({{"q", 1.0}, {"p", 2.0}})).empty());

  // x -> (x, e(x)) is injective on any sampled point set.
  SampleBox box;
  auto pts = sample_on_shell(f, box, {}, 8, 0);
  REQUIRE(pts.size() == 8);
  for (size_t i = 0; i < pts.size(); ++i)
    for (size_t j = i + 1; j < pts.size(); ++j) {
      bool same = pts[i].find("q") == pts[j].find("q") && pts[i].find("p") == pts[j].find("p");
      CHECK(!same);
    }

  CHECK(tilde_H(f) == f.K);
}

TEST_CASE("fiber family K = lam*x: rank passes, submanifold is multi-valued over x") {
  std::vector<VarId> vars = {st("x", 0), mu("lam", 0)};
  MorseFamily f = MorseFamily::make({st("x", 0)}, {}, {mu("lam", 0)},
                                    parse_with("lam*x", vars));
  SampleBox box;
  auto pts = sample_on_shell(f, box, {}, 8, 0);
  REQUIRE(pts.size() == 8);

  // Newton lands exactly on x = 0 while lam keeps its seed value: the same
  // base point carries many coenergies (e = dK/dx = lam).
  for (const auto& p : pts) CHECK(std::abs(p.find("x").value()) <= 1e-10);
  bool distinct_lam = false;
  for (size_t i = 1; i < pts.size(); ++i)
    if (pts[i].find("lam") != pts[0].find("lam")) distinct_lam = true;
  CHECK(distinct_lam);

  auto rep = check_morse_rank(f, pts);
  CHECK(rep.pass);
  CHECK(rep.required_rank == 1);
  for (const auto& rp : rep.points) {
    CHECK(rp.rank == 1);
    CHECK(rp.singular_values[0] == doctest::Approx(1.0));
  }
}

TEST_CASE("degenerate family K = lam^3 fails the rank condition at lam = 0") {
  std::vector<VarId> vars = {st("x", 0), mu("lam", 0)};
  MorseFamily f = MorseFamily::make({st("x", 0)}, {}, {mu("lam", 0)},
                                    parse_with("lam^3", vars));
  std::vector<Binding> pts = {bind({{"x", 0.7}, {"lam", 0.0}})};
  auto rep = check_morse_rank(f, pts);
  CHECK(!rep.pass);
  CHECK(rep.points[0].rank == 0);
  CHECK(rep.points[0].singular_values[0] == 0.0);

  // K = lam^2 passes at the same point: the lambda-lambda block saves it.
  MorseFamily g = MorseFamily::make({st("x", 0)}, {}, {mu("lam", 0)},
                                    parse_with("lam^2", vars));
  auto rep2 = check_morse_rank(g, pts);
  CHECK(rep2.pass);
  CHECK(rep2.points[0].singular_values[0] == doctest::Approx(2.0));
}

TEST_CASE("rank checks reject off-shell points") {
  std::vector<VarId> vars = {st("x", 0), mu("lam", 0)};
  MorseFamily f = MorseFamily::make({st("x", 0)}, {}, {mu("lam", 0)},
                                    parse_with("lam*x", vars));
  std::vector<Binding> pts = {bind({{"x", 0.5}, {"lam", 1.0}})};
  CHECK_THROWS_AS(check_morse_rank(f, pts), RankCheckError);
}

TEST_CASE("restricted rank: duplicated inputs fail, independent inputs pass") {
  std::vector<VarId> vars = {st("q", 0), st("p", 1), in("u1", 0), in("u2", 1)};
  MorseFamily dup = MorseFamily::make({st("q", 0), st("p", 1)}, {in("u1", 0), in("u2", 1)}, {},
                                      parse_with("p^2/2 + u1*q + u2*q", vars));
  std::vector<Binding> pts = {bind({{"q", 0.2}, {"p", 0.4}, {"u1", 0.1}, {"u2", -0.3}})};
  auto rep = check_restricted_rank(dup, pts);
  CHECK(!rep.pass);
  CHECK(rep.points[0].rank == 1);
  CHECK(rep.required_rank == 2);

  std::vector<VarId> vars2 = {st("q", 0), st("p", 1), in("u", 0)};
  MorseFamily ok = MorseFamily::make({st("q", 0), st("p", 1)}, {in("u", 0)}, {},
                                     parse_with("(q^2 + p^2)/2 + u*q", vars2));
  auto rep2 = check_restricted_rank(ok, {bind({{"q", 0.2}, {"p", 0.4}, {"u", 0.5}})});
  CHECK(rep2.pass);
  CHECK(rep2.points[0].singular_values[0] == doctest::Approx(1.0));
}

TEST_CASE("charged-particle family: frozen matrix oracles at an exact shell point") {
  MorseFamily f = em_family();
  Binding params = bind({{"e", 1.0}, {"m", 1.0}});

  // Exact point: p = (0,1), A = (0,0) gives -(0)^2 + (1)^2 - 1 = 0.
  Binding pt = params;
  pt.merge(bind({{"q0", 0.3}, {"q1", -0.2}, {"p0", 0.0}, {"p1", 1.0},
                 {"A0", 0.0}, {"A1", 0.0}, {"lam", 0.5}}));

  auto s = coenergy(f, pt);
  CHECK(s.residual[0] == doctest::Approx(0.0));
  CHECK(s.e[0] == 0.0);                       // dK/dq0
  CHECK(s.e[1] == 0.0);                       // dK/dq1
  CHECK(s.e[2] == doctest::Approx(0.0));      // -2 lam (p0 - e A0)
  CHECK(s.e[3] == doctest::Approx(1.0));      // +2 lam (p1 - e A1)
  CHECK(s.eps[0] == doctest::Approx(0.0));    // 2 lam e (p0 - e A0)
  CHECK(s.eps[1] == doctest::Approx(-1.0));   // -2 lam e (p1 - e A1)

  // Hand-derived rows: full matrix [0 0 0 2 0 -2 0] has sigma = 2*sqrt(2);
  // restricted matrix {[0 0 1 0 -1 0], [0 0 0 -1 0 1]} has both sigma sqrt(2).
  auto morse = check_morse_rank(f, {pt});
  CHECK(morse.pass);
  CHECK(morse.points[0].singular_values[0] == doctest::Approx(2.0 * std::sqrt(2.0)));

  auto restr = check_restricted_rank(f, {pt});
  CHECK(restr.pass);
  CHECK(restr.points[0].rank == 2);
  CHECK(restr.points[0].singular_values[0] == doctest::Approx(std::sqrt(2.0)));
  CHECK(restr.points[0].singular_values[1] == doctest::Approx(std::sqrt(2.0)));
}

TEST_CASE("charged-particle family: sampled shell points pass both conditions deterministically") {
  MorseFamily f = em_family();
  Binding params = bind({{"e", 1.0}, {"m", 1.0}});
  SampleBox box;
  box.set("p1", 0.8, 1.6);
  box.set("A0", -0.3, 0.3);
  box.set("A1", -0.3, 0.3);
  box.set("lam", 0.2, 1.0);

  auto pts = sample_on_shell(f, box, params, 8, 0);
  REQUIRE(pts.size() == 8);
  for (const auto& p : pts)
    CHECK(std::abs(critical_residual(f, p)[0]) <= 1e-10);

  auto morse = check_morse_rank(f, pts);
  auto restr = check_restricted_rank(f, pts);
  CHECK(morse.pass);
  CHECK(restr.pass);

  // Same seed, same points, same report, bit for bit.
  auto pts2 = sample_on_shell(f, box, params, 8, 0);
  REQUIRE(pts2.size() == pts.size());
  for (size_t i = 0; i < pts.size(); ++i) {
    for (const auto& [name, val] : pts[i].entries())
      CHECK(pts2[i].find(name).value() == val);
  }
  auto morse2 = check_morse_rank(f, pts2);
  CHECK(morse.to_json_string() == morse2.to_json_string());

  // A different seed still passes but lands elsewhere.
  auto pts3 = sample_on_shell(f, box, params, 8, 1);
  CHECK(check_morse_rank(f, pts3).pass);

  // Parallel evaluation must not change anything.
  auto morse4 = check_morse_rank(f, pts, 1e-9, 1e-10, 4);
  CHECK(morse4.to_json_string() == morse.to_json_string());
}

TEST_CASE("tilde_H subtracts the port pairing and drops vanished inputs") {
  // Linear coupling, already collected: K = p^2/2 + u*q.
  std::vector<VarId> v1 = {st("q", 0), st("p", 1), in("u", 0)};
  MorseFamily lin = MorseFamily::make({st("q", 0), st("p", 1)}, {in("u", 0)}, {},
                                      parse_with("(q^2 + p^2)/2 + u*q", v1));
  CHECK(tilde_H(lin) == parse_with("(q^2 + p^2)/2", v1));

  // Linear coupling spread over two terms: needs the symbolic zero test.
  std::vector<VarId> v2 = {st("q0", 0), st("q1", 1), st("p", 2), in("u", 0)};
  MorseFamily spread = MorseFamily::make({st("q0", 0), st("q1", 1), st("p", 2)}, {in("u", 0)}, {},
                                         parse_with("p^2/2 + u*q0 + u*q1", v2));
  Expr t = tilde_H(spread);
  CHECK(t == parse_with("p^2/2", v2));
  CHECK(!depends_on(t, "u"));

  // Genuinely nonlinear input dependence stays.
  MorseFamily nonlin = MorseFamily::make({st("q", 0), st("p", 1)}, {in("u", 0)}, {},
                                         parse_with("p^2/2 + u^2*q", v1));
  CHECK(tilde_H(nonlin) == parse_with("p^2/2 - u^2*q", v1));
}

TEST_CASE("reports render as a table and as JSON") {
  std::vector<VarId> vars = {st("x", 0), mu("lam", 0)};
  MorseFamily f = MorseFamily::make({st("x", 0)}, {}, {mu("lam", 0)},
                                    parse_with("lam*x", vars));
  auto rep = check_morse_rank(f, {bind({{"x", 0.0}, {"lam", 0.25}})});
  std::string tbl = rep.table();
  CHECK(tbl.find("PASS") != std::string::npos);
  CHECK(tbl.find("required rank 1") != std::string::npos);
  std::string js = rep.to_json_string();
  CHECK(js.find("\"pass\": true") != std::string::npos);
  CHECK(js.find("\"lam\": 0.25") != std::string::npos);
}
