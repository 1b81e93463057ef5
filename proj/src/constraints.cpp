#include "phs/constraints.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <set>
#include <sstream>
#include <utility>

#include <nlohmann/json.hpp>

namespace phs {

namespace {

double uniform01(std::mt19937_64& rng) { return (rng() >> 11) * 0x1.0p-53; }

int numeric_rank(const Eigen::MatrixXd& M, double tol) {
  if (M.rows() == 0 || M.cols() == 0) return 0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(M);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0 || sv(0) == 0.0) return 0;
  int r = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv(i) > tol * sv(0)) ++r;
  return r;
}

std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

Rational q_div(const Rational& a, const Rational& b) {
  auto r = Rational::div(a, b);
  if (!r) throw AlgorithmError("rational overflow while eliminating multipliers");
  return *r;
}

Rational q_sub_mul(const Rational& a, const Rational& f, const Rational& b) {
  auto fb = Rational::mul(f, b);
  auto r = fb ? Rational::sub(a, *fb) : std::nullopt;
  if (!r) throw AlgorithmError("rational overflow while eliminating multipliers");
  return *r;
}

}  // namespace

// ---------------------------------------------------------------------------
// Legendre transform
// ---------------------------------------------------------------------------

LegendreReport legendre(const LagrangianSpec& spec, const std::vector<Expr>& primary,
                        const std::vector<VarId>& p_vars, const LegendreOptions& opt) {
  const size_t d = spec.q_vars.size();
  if (d == 0) throw LegendreError("a Lagrangian needs at least one position variable");
  if (spec.v_vars.size() != d)
    throw LegendreError("position and velocity lists differ in length");
  if (p_vars.size() != d) throw LegendreError("momentum list must pair with the positions");

  for (const auto& phi : primary)
    for (const auto& fv : free_vars(phi))
      for (const auto& vv : spec.v_vars)
        if (fv.name == vv.name)
          throw LegendreError("constraint `" + phi.str() + "` mentions the velocity " + vv.name +
                              "; phase-space constraints use positions and momenta only");

  LegendreReport rep;
  for (size_t i = 0; i < d; ++i) rep.p_hat.push_back(differentiate(spec.L, spec.v_vars[i]));
  rep.W.assign(d, std::vector<Expr>(d, Expr::constant(0)));
  for (size_t i = 0; i < d; ++i)
    for (size_t j = 0; j < d; ++j) rep.W[i][j] = differentiate(rep.p_hat[i], spec.v_vars[j]);

  Expr E = -spec.L;
  for (size_t i = 0; i < d; ++i) E = E + rep.p_hat[i] * Expr::variable(spec.v_vars[i]);
  rep.E_is_zero = E.is_zero() || is_symbolically_zero(E);
  rep.E = rep.E_is_zero ? Expr::constant(0) : E;

  // Admissible points: uniform draws where L and all its derivatives evaluate.
  std::vector<VarId> coords = spec.q_vars;
  coords.insert(coords.end(), spec.v_vars.begin(), spec.v_vars.end());
  coords.insert(coords.end(), opt.extra_vars.begin(), opt.extra_vars.end());
  std::mt19937_64 rng(opt.seed);
  const int want = std::max(opt.samples, 1);
  const int max_attempts = 40 * want;
  for (int attempt = 0; attempt < max_attempts && (int)rep.samples.size() < want; ++attempt) {
    Binding b = opt.params;
    for (const auto& c : coords) {
      auto [lo, hi] = opt.box.box_for(c.name);
      b.set(c.name, lo + (hi - lo) * uniform01(rng));
    }
    try {
      (void)evaluate(spec.L, b);
      for (const auto& e : rep.p_hat) (void)evaluate(e, b);
      for (const auto& row : rep.W)
        for (const auto& e : row) (void)evaluate(e, b);
    } catch (const EvalError&) {
      continue;
    }
    rep.samples.push_back(std::move(b));
  }
  if ((int)rep.samples.size() < want)
    throw LegendreError("found only " + std::to_string(rep.samples.size()) + " of " +
                        std::to_string(want) +
                        " admissible sample points; widen the box or check the Lagrangian's domain");

  // Mixed partials must agree; exact differentiation makes the numeric tier
  // unreachable in practice, but it keeps the check honest for forms the
  // canonicalizer cannot identify.
  for (size_t i = 0; i < d; ++i)
    for (size_t j = i + 1; j < d; ++j) {
      if (rep.W[i][j] == rep.W[j][i]) continue;
      Expr diff = rep.W[i][j] - rep.W[j][i];
      if (is_symbolically_zero(diff)) continue;
      for (const auto& s : rep.samples)
        if (std::abs(evaluate(diff, s)) > 1e-8 * (1.0 + std::abs(evaluate(rep.W[i][j], s))))
          throw LegendreError("velocity Hessian is not symmetric in " + spec.v_vars[i].name +
                              ", " + spec.v_vars[j].name);
    }

  int rank0 = -1;
  for (const auto& s : rep.samples) {
    Eigen::MatrixXd M(d, d);
    for (size_t i = 0; i < d; ++i)
      for (size_t j = 0; j < d; ++j) M(i, j) = evaluate(rep.W[i][j], s);
    int r = numeric_rank(M, opt.tol_rank);
    if (rank0 < 0)
      rank0 = r;
    else if (r != rank0)
      throw LegendreError("velocity Hessian rank is not constant on the sampling box (saw " +
                          std::to_string(rank0) + " and " + std::to_string(r) +
                          "); restrict the box to one stratum");
  }
  rep.rank_W = rank0;
  rep.N = (int)d - rank0;

  for (const auto& phi : primary) {
    double worst = 0;
    for (const auto& s : rep.samples) {
      Binding b = s;
      for (size_t i = 0; i < d; ++i) b.set(p_vars[i], evaluate(rep.p_hat[i], s));
      worst = std::max(worst, std::abs(evaluate(phi, b)));
    }
    rep.phi_residuals.push_back(worst);
    if (worst > opt.tol_surface)
      throw LegendreError("candidate constraint `" + phi.str() +
                          "` does not vanish on the image of the momentum map (max |phi| = " +
                          fmt_g(worst) + ")");
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Poisson brackets and on-surface vanishing
// ---------------------------------------------------------------------------

Expr poisson_bracket(const Expr& f, const Expr& g, const std::vector<VarId>& q_vars,
                     const std::vector<VarId>& p_vars) {
  if (q_vars.size() != p_vars.size())
    throw std::invalid_argument("poisson_bracket: positions and momenta must pair up");
  Expr acc = Expr::constant(0);
  for (size_t i = 0; i < q_vars.size(); ++i)
    acc = acc + differentiate(f, q_vars[i]) * differentiate(g, p_vars[i]) -
          differentiate(f, p_vars[i]) * differentiate(g, q_vars[i]);
  return acc;
}

VanishReport vanishes_on_surface(const Expr& f, const std::vector<Binding>& points, double tol,
                                 int min_points) {
  VanishReport r;
  if (f.is_zero() || is_symbolically_zero(f)) {
    r.vanishes = true;
    r.symbolic = true;
    return r;
  }

  std::vector<const Binding*> distinct;
  for (const auto& b : points) {
    bool dup = false;
    for (const auto* dp : distinct) {
      double dist = 0;
      for (const auto& [name, val] : b.entries()) {
        auto other = dp->find(name);
        if (other) dist = std::max(dist, std::abs(val - *other));
      }
      if (dist <= 1e-9) {
        dup = true;
        break;
      }
    }
    if (!dup) distinct.push_back(&b);
  }
  r.points_used = (int)distinct.size();
  // Coincident samples collapse; many samples all landing on one point means
  // the surface itself is (locally) a point, which is still conclusive.
  const bool single_point_surface = r.points_used == 1 && (int)points.size() >= min_points;
  if (r.points_used < min_points && !single_point_surface)
    throw InconclusiveError("cannot decide whether `" + f.str() + "` vanishes: only " +
                            std::to_string(r.points_used) + " of " + std::to_string(min_points) +
                            " distinct on-surface points available");
  try {
    for (const auto* b : distinct) r.max_abs = std::max(r.max_abs, std::abs(evaluate(f, *b)));
  } catch (const EvalError& e) {
    throw InconclusiveError("cannot decide whether `" + f.str() +
                            "` vanishes: " + std::string(e.what()));
  }
  r.vanishes = r.max_abs <= tol;
  return r;
}

// ---------------------------------------------------------------------------
// Dirac-Bergmann stabilization
// ---------------------------------------------------------------------------

namespace {

enum class ZKind { zero, vanishes, nonzero_const, nonvanishing };

bool settled_zero(ZKind z) { return z == ZKind::zero || z == ZKind::vanishes; }

}  // namespace

ConstraintSystem dirac_bergmann(const Expr& H, const std::vector<Expr>& primary,
                                const std::vector<VarId>& q_vars,
                                const std::vector<VarId>& p_vars,
                                const DiracBergmannOptions& opt) {
  if (q_vars.size() != p_vars.size())
    throw AlgorithmError("positions and momenta must pair up");

  ConstraintSystem cs;
  cs.q_vars = q_vars;
  cs.p_vars = p_vars;
  cs.H = simplify(H);

  const size_t P = primary.size();

  {
    std::set<std::string> taken;
    for (const auto& v : q_vars) taken.insert(v.name);
    for (const auto& v : p_vars) taken.insert(v.name);
    for (const auto& v : opt.extra_vars) taken.insert(v.name);
    for (const auto& kv : opt.params.entries()) taken.insert(kv.first);
    for (size_t i = 0; i < P; ++i) {
      VarId mv;
      if (i < opt.multiplier_names.size()) {
        mv = opt.multiplier_names[i];
        mv.kind = VarKind::multiplier;
      } else {
        mv = VarId{"lam_" + std::to_string(i + 1), VarKind::multiplier, 0};
      }
      mv.index = (int)i;
      if (!taken.insert(mv.name).second)
        throw AlgorithmError("multiplier name " + mv.name +
                             " collides with another symbol; declare distinct multiplier names");
      cs.multipliers.push_back({mv, MultiplierState::free_gauge, Expr::constant(0)});
    }
    for (const auto& fv : free_vars(cs.H))
      for (const auto& me : cs.multipliers)
        if (fv.name == me.var.name)
          throw AlgorithmError("the Hamiltonian already mentions the multiplier " + fv.name +
                               "; pass the multiplier-free part only");
  }

  std::vector<Expr> phis;
  for (const auto& phi : primary) {
    Expr c = simplify(phi);
    if (c.is_zero()) throw AlgorithmError("a primary constraint is identically zero");
    cs.constraints.push_back({c, Generation::primary, ConstraintClass::first});
    phis.push_back(c);
  }

  enum class MS { undet, det, numeric };
  std::vector<MS> mstate(P, MS::undet);
  std::vector<Expr> mvalue(P, Expr::constant(0));

  std::vector<VarId> coords = q_vars;
  coords.insert(coords.end(), p_vars.begin(), p_vars.end());
  coords.insert(coords.end(), opt.extra_vars.begin(), opt.extra_vars.end());

  std::mt19937_64 rng(opt.seed);
  std::vector<Binding> surf;
  bool surf_valid = false;
  auto surface = [&]() -> const std::vector<Binding>& {
    if (!surf_valid) {
      try {
        surf = newton_sample(phis, coords, opt.box, opt.params, opt.min_points, rng,
                             opt.tol_sample, 50);
      } catch (const SamplingError& e) {
        throw InconclusiveError(std::string("cannot sample the constraint surface: ") + e.what());
      }
      surf_valid = true;
    }
    return surf;
  };

  auto classify = [&](const Expr& f) -> ZKind {
    if (f.is_zero()) return ZKind::zero;
    if (f.is_constant()) return ZKind::nonzero_const;
    if (is_symbolically_zero(f)) return ZKind::zero;
    VanishReport vr = vanishes_on_surface(f, surface(), opt.tol_surface, opt.min_points);
    return vr.vanishes ? ZKind::vanishes : ZKind::nonvanishing;
  };

  auto cname = [](size_t j) { return "phi_" + std::to_string(j + 1); };

  std::set<int> num_rows, num_cols;

  bool converged = false;
  for (int pass = 1; pass <= opt.max_iter && !converged; ++pass) {
    bool changed = false;

    Expr H_work = cs.H;
    for (size_t i = 0; i < P; ++i)
      if (mstate[i] == MS::det) H_work = H_work + mvalue[i] * phis[i];

    // One bracket-classification sweep per pass: entry (j, m) covers the
    // coupling of constraint j to the multiplier of primary m. Determined
    // multipliers are substituted into H_work and carry no coupling.
    struct Coupling {
      Expr bracket;
      bool exact_const = false;
      Rational coeff{0};
    };
    std::vector<std::map<size_t, Coupling>> couplings(phis.size());
    for (size_t j = 0; j < phis.size(); ++j) {
      if (num_rows.count((int)j)) continue;
      for (size_t m = 0; m < P; ++m) {
        if (mstate[m] == MS::det) continue;
        Expr b = poisson_bracket(phis[j], phis[m], q_vars, p_vars);
        ZKind z = classify(b);
        if (settled_zero(z)) continue;
        Coupling cp{b, false, Rational{0}};
        if (z == ZKind::nonzero_const && b.value().exact()) {
          cp.exact_const = true;
          cp.coeff = b.value().rat();
        }
        couplings[j].emplace(m, std::move(cp));
      }
    }

    // Close the runtime block: a row touching a runtime multiplier joins it,
    // a joined row drags every multiplier it touches along, and non-constant
    // coefficients start the block in the first place.
    auto join_row = [&](size_t j, const std::string& why) {
      if (!num_rows.insert((int)j).second) return;
      changed = true;
      cs.iterations.push_back({pass, cname(j), "joined-numeric-block", why});
    };
    auto join_col = [&](size_t m, const std::string& why) {
      if (!num_cols.insert((int)m).second) return;
      mstate[m] = MS::numeric;
      changed = true;
      cs.iterations.push_back({pass, cs.multipliers[m].var.name, "joined-numeric-block", why});
    };
    for (size_t j = 0; j < phis.size(); ++j) {
      if (num_rows.count((int)j)) continue;
      for (const auto& [m, cp] : couplings[j])
        if (!cp.exact_const) {
          join_row(j, "bracket with " + cname(m) + "'s multiplier is not constant");
          join_col(m, "determined at runtime from {" + cname(j) + ", " + cname(m) +
                          "} = " + cp.bracket.str());
        }
    }
    for (bool grew = true; grew;) {
      grew = false;
      for (size_t j = 0; j < phis.size(); ++j) {
        if (num_rows.count((int)j)) continue;
        bool touches = false;
        for (const auto& [m, cp] : couplings[j])
          if (num_cols.count((int)m)) {
            touches = true;
            break;
          }
        if (!touches) continue;
        join_row(j, "couples to a runtime-determined multiplier");
        for (const auto& [m, cp] : couplings[j])
          join_col(m, "coupled through " + cname(j));
        grew = true;
      }
    }

    std::vector<size_t> undet_cols;
    for (size_t i = 0; i < P; ++i)
      if (mstate[i] == MS::undet) undet_cols.push_back(i);

    struct SymRow {
      size_t row;
      std::vector<Rational> a;
      Expr rhs;
    };
    std::vector<SymRow> sym_rows;
    std::vector<Expr> pending;

    auto propose_secondary = [&](const Expr& cand, const std::string& origin, int p) {
      for (const auto& pnd : pending)
        if (pnd == cand) return;
      pending.push_back(cand);
      cs.iterations.push_back({p, cname(phis.size() + pending.size() - 1), "secondary-added",
                               cand.str() + " from " + origin});
      changed = true;
    };

    for (size_t j = 0; j < phis.size(); ++j) {
      if (num_rows.count((int)j)) continue;

      Expr aj = poisson_bracket(phis[j], H_work, q_vars, p_vars);

      if (couplings[j].empty()) {
        ZKind za = classify(aj);
        if (settled_zero(za)) {
          cs.iterations.push_back({pass, cname(j), "consistency-satisfied",
                                   "{" + cname(j) + ", H} vanishes on the surface"});
        } else if (za == ZKind::nonzero_const) {
          throw InconsistentSystemError("consistency of " + cname(j) +
                                        " forces the nonzero constant " + aj.str() +
                                        " to vanish; the equations of motion have no solutions");
        } else {
          propose_secondary(aj, "the consistency of " + cname(j), pass);
        }
      } else {
        // Every remaining coupling is an exact constant over an undetermined
        // multiplier, by the closure above.
        std::vector<Rational> row_coeff(undet_cols.size(), Rational{0});
        for (size_t c = 0; c < undet_cols.size(); ++c) {
          auto it = couplings[j].find(undet_cols[c]);
          if (it != couplings[j].end()) row_coeff[c] = it->second.coeff;
        }
        sym_rows.push_back({j, std::move(row_coeff), -aj});
      }
    }

    if (!sym_rows.empty()) {
      const size_t C = undet_cols.size();
      size_t r = 0;
      std::vector<int> pivot_col;
      for (size_t c = 0; c < C && r < sym_rows.size(); ++c) {
        size_t piv = r;
        while (piv < sym_rows.size() && sym_rows[piv].a[c].is_zero()) ++piv;
        if (piv == sym_rows.size()) continue;
        std::swap(sym_rows[r], sym_rows[piv]);
        Rational dgn = sym_rows[r].a[c];
        for (auto& x : sym_rows[r].a) x = q_div(x, dgn);
        sym_rows[r].rhs = sym_rows[r].rhs * Expr::constant(q_div(Rational{1}, dgn));
        for (size_t rr = 0; rr < sym_rows.size(); ++rr) {
          if (rr == r) continue;
          Rational f = sym_rows[rr].a[c];
          if (f.is_zero()) continue;
          for (size_t cc = 0; cc < C; ++cc)
            sym_rows[rr].a[cc] = q_sub_mul(sym_rows[rr].a[cc], f, sym_rows[r].a[cc]);
          sym_rows[rr].rhs = sym_rows[rr].rhs - Expr::constant(f) * sym_rows[r].rhs;
        }
        pivot_col.push_back((int)c);
        ++r;
      }

      for (size_t rr = 0; rr < sym_rows.size(); ++rr) {
        if (rr < r) {
          size_t c = (size_t)pivot_col[rr];
          size_t m = undet_cols[c];
          bool coupled = false;
          for (size_t cc = 0; cc < C; ++cc)
            if (cc != c && !sym_rows[rr].a[cc].is_zero()) {
              coupled = true;
              break;
            }
          if (coupled) {
            // Underdetermined coupling between multipliers: leave the whole
            // row to the runtime solve instead of inventing a dependency of
            // one multiplier on another.
            join_row(sym_rows[rr].row, "multiplier coupling without a unique exact solution");
            for (size_t cc = 0; cc < C; ++cc)
              if (!sym_rows[rr].a[cc].is_zero())
                join_col(undet_cols[cc], "coupled through " + cname(sym_rows[rr].row));
            continue;
          }
          Expr val = simplify(sym_rows[rr].rhs);
          if (!(mstate[m] == MS::det && mvalue[m] == val)) {
            mstate[m] = MS::det;
            mvalue[m] = val;
            changed = true;
            cs.iterations.push_back({pass, cs.multipliers[m].var.name, "multiplier-determined",
                                     cs.multipliers[m].var.name + " = " + val.str()});
          }
        } else {
          Expr res = simplify(sym_rows[rr].rhs);
          ZKind z = classify(res);
          if (settled_zero(z)) continue;
          if (z == ZKind::nonzero_const)
            throw InconsistentSystemError(
                "after eliminating multipliers, the constant " + res.str() +
                " must vanish; the equations of motion have no solutions");
          propose_secondary(res, "multiplier elimination", pass);
        }
      }
    }

    for (auto& cand : pending) {
      phis.push_back(cand);
      cs.constraints.push_back({cand, Generation::secondary, ConstraintClass::first});
      surf_valid = false;
    }

    if (!changed) {
      converged = true;
      cs.iterations.push_back({pass, "-", "converged", "a full pass added nothing"});
    }
  }
  if (!converged)
    throw AlgorithmError("constraint stabilization did not reach a fixed point within " +
                         std::to_string(opt.max_iter) + " passes");

  for (size_t i = 0; i < phis.size(); ++i) {
    bool first = true;
    for (size_t j = 0; j < phis.size() && first; ++j) {
      if (j == i) continue;
      if (!settled_zero(classify(poisson_bracket(phis[i], phis[j], q_vars, p_vars))))
        first = false;
    }
    cs.constraints[i].cls = first ? ConstraintClass::first : ConstraintClass::second;
  }

  Expr H_total = cs.H;
  for (size_t i = 0; i < P; ++i) {
    auto& me = cs.multipliers[i];
    switch (mstate[i]) {
      case MS::det:
        me.state = MultiplierState::determined;
        me.value = mvalue[i];
        H_total = H_total + mvalue[i] * phis[i];
        break;
      case MS::numeric:
        me.state = MultiplierState::determined_numeric;
        H_total = H_total + Expr::variable(me.var) * phis[i];
        break;
      case MS::undet:
        me.state = MultiplierState::free_gauge;
        H_total = H_total + Expr::variable(me.var) * phis[i];
        break;
    }
  }
  cs.H_total = H_total;

  if (!num_rows.empty() || !num_cols.empty()) {
    if (num_rows.size() != num_cols.size())
      throw AlgorithmError("runtime multiplier solve is not square: " +
                           std::to_string(num_rows.size()) + " conditions for " +
                           std::to_string(num_cols.size()) + " multipliers");
    Expr H_work = cs.H;
    for (size_t i = 0; i < P; ++i)
      if (mstate[i] == MS::det) H_work = H_work + mvalue[i] * phis[i];
    NumericSolveSpec ns;
    ns.rows.assign(num_rows.begin(), num_rows.end());
    ns.cols.assign(num_cols.begin(), num_cols.end());
    for (int j : ns.rows) {
      for (size_t m = 0; m < P; ++m)
        if (mstate[m] == MS::undet &&
            !settled_zero(classify(poisson_bracket(phis[j], phis[m], q_vars, p_vars))))
          throw AlgorithmError("constraint " + cname((size_t)j) +
                               " couples both a free multiplier (" + cs.multipliers[m].var.name +
                               ") and a runtime-determined one; not supported");
      std::vector<Expr> row;
      for (int m : ns.cols)
        row.push_back(poisson_bracket(phis[(size_t)j], phis[(size_t)m], q_vars, p_vars));
      ns.bracket.push_back(std::move(row));
      ns.rhs.push_back(simplify(-poisson_bracket(phis[(size_t)j], H_work, q_vars, p_vars)));
    }
    cs.numeric = std::move(ns);
  }

  return cs;
}

// ---------------------------------------------------------------------------
// Reduction to a checked family
// ---------------------------------------------------------------------------

ConstrainedIO assemble_constrained_io(const Expr& H, const std::vector<Expr>& primary,
                                      const std::vector<VarId>& q_vars,
                                      const std::vector<VarId>& p_vars,
                                      const std::vector<VarId>& inputs,
                                      const DiracBergmannOptions& opt) {
  ConstrainedIO out;
  out.cs = dirac_bergmann(H, primary, q_vars, p_vars, opt);

  std::vector<VarId> states;
  int idx = 0;
  for (const auto& v : q_vars) states.push_back({v.name, VarKind::state, idx++});
  for (const auto& v : p_vars) states.push_back({v.name, VarKind::state, idx++});
  std::vector<VarId> ports;
  idx = 0;
  for (const auto& v : inputs) ports.push_back({v.name, VarKind::input, idx++});
  std::vector<VarId> lams;
  idx = 0;
  for (const auto& me : out.cs.multipliers)
    if (me.state != MultiplierState::determined)
      lams.push_back({me.var.name, VarKind::multiplier, idx++});

  out.family =
      MorseFamily::make(std::move(states), std::move(ports), std::move(lams), out.cs.H_total);
  return out;
}

// ---------------------------------------------------------------------------
// Reporting
// ---------------------------------------------------------------------------

std::vector<VarId> ConstraintSystem::free_multipliers() const {
  std::vector<VarId> out;
  for (const auto& m : multipliers)
    if (m.state == MultiplierState::free_gauge) out.push_back(m.var);
  return out;
}

std::string ConstraintSystem::table() const {
  std::ostringstream os;
  os << "constraints\n";
  for (size_t i = 0; i < constraints.size(); ++i) {
    const auto& c = constraints[i];
    os << "  phi_" << (i + 1) << "  "
       << (c.generation == Generation::primary ? "primary  " : "secondary") << "  "
       << (c.cls == ConstraintClass::first ? "first " : "second") << "  " << c.phi.str() << "\n";
  }
  if (multipliers.empty()) {
    os << "multipliers: none\n";
  } else {
    os << "multipliers\n";
    for (const auto& m : multipliers) {
      os << "  " << m.var.name << "  ";
      switch (m.state) {
        case MultiplierState::free_gauge:
          os << "free (gauge)";
          break;
        case MultiplierState::determined:
          os << "determined: " << m.var.name << " = " << m.value.str();
          break;
        case MultiplierState::determined_numeric:
          os << "determined at runtime";
          break;
      }
      os << "\n";
    }
  }
  os << "H_total = " << H_total.str() << "\n";
  if (numeric)
    os << "runtime multiplier solve over " << numeric->rows.size() << " condition(s)\n";
  os << "log\n";
  for (const auto& ev : iterations)
    os << "  pass " << ev.pass << ": " << ev.subject << " " << ev.action
       << (ev.detail.empty() ? "" : " (" + ev.detail + ")") << "\n";
  return os.str();
}

std::string ConstraintSystem::to_json_string() const {
  nlohmann::json j;
  j["H"] = H.str();
  j["H_total"] = H_total.str();
  auto cons = nlohmann::json::array();
  for (const auto& c : constraints)
    cons.push_back({{"phi", c.phi.str()},
                    {"generation", c.generation == Generation::primary ? "primary" : "secondary"},
                    {"class", c.cls == ConstraintClass::first ? "first" : "second"}});
  j["constraints"] = cons;
  auto mults = nlohmann::json::array();
  for (const auto& m : multipliers) {
    nlohmann::json e{{"name", m.var.name}};
    switch (m.state) {
      case MultiplierState::free_gauge:
        e["state"] = "free";
        break;
      case MultiplierState::determined:
        e["state"] = "determined";
        e["value"] = m.value.str();
        break;
      case MultiplierState::determined_numeric:
        e["state"] = "determined_numeric";
        break;
    }
    mults.push_back(e);
  }
  j["multipliers"] = mults;
  if (numeric) {
    nlohmann::json ns;
    ns["rows"] = numeric->rows;
    ns["cols"] = numeric->cols;
    auto br = nlohmann::json::array();
    for (const auto& row : numeric->bracket) {
      auto r = nlohmann::json::array();
      for (const auto& e : row) r.push_back(e.str());
      br.push_back(r);
    }
    ns["bracket"] = br;
    auto rh = nlohmann::json::array();
    for (const auto& e : numeric->rhs) rh.push_back(e.str());
    ns["rhs"] = rh;
    j["numeric_solve"] = ns;
  } else {
    j["numeric_solve"] = nullptr;
  }
  auto iters = nlohmann::json::array();
  for (const auto& ev : iterations)
    iters.push_back({{"pass", ev.pass},
                     {"subject", ev.subject},
                     {"action", ev.action},
                     {"detail", ev.detail}});
  j["iterations"] = iters;
  return j.dump(2);
}

}  // namespace phs
