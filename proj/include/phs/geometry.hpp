#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <vector>

#include "phs/expr.hpp"

namespace phs {

// A parameterized generating function K(x, nu, lambda): states x, input
// ports nu, auxiliary parameters lambda. Its critical set {dK/dlambda = 0}
// generates a (port-)Lagrangian submanifold via e = dK/dx, eps = dK/dnu.
struct MorseFamily {
  std::vector<VarId> state_vars;  // x, n >= 1
  std::vector<VarId> port_vars;   // nu, m >= 0
  std::vector<VarId> param_vars;  // lambda, k >= 0
  Expr K;

  // First derivatives, precomputed at construction.
  std::vector<Expr> dK_dx, dK_dnu, dK_dlam;

  // Validates n >= 1, name uniqueness, and that free_vars(K) only uses
  // declared variables (or parameter-kind symbols bound at evaluation time).
  static MorseFamily make(std::vector<VarId> states, std::vector<VarId> ports,
                          std::vector<VarId> params, Expr K);

  size_t n() const { return state_vars.size(); }
  size_t m() const { return port_vars.size(); }
  size_t k() const { return param_vars.size(); }

  // Column order used by every rank matrix: x, then nu, then lambda.
  std::vector<VarId> all_vars() const;
};

// Values of K's derivative data at one point.
struct LagrangianSample {
  std::vector<double> x, nu, lam;
  std::vector<double> e;         // dK/dx: costate / effort
  std::vector<double> eps;       // dK/dnu: port efforts
  std::vector<double> residual;  // dK/dlambda: critical-set residual
};

// dK/dlambda at the point; empty when k == 0.
std::vector<double> critical_residual(const MorseFamily& f, const Binding& point);

LagrangianSample coenergy(const MorseFamily& f, const Binding& point);

struct RankPoint {
  Binding point;
  std::vector<double> singular_values;
  int rank = 0;
  std::vector<double> residual;
};

struct RankReport {
  std::string condition;  // "morse" or "restricted"
  int required_rank = 0;
  int rows = 0, cols = 0;
  bool pass = false;
  double tol_rank = 1e-9;
  double tol_crit = 1e-10;
  bool sampled = false;
  std::uint64_t rng_seed = 0;
  std::vector<RankPoint> points;

  std::string table() const;           // fixed-width human-readable summary
  std::string to_json_string() const;  // machine-readable report
};

class RankCheckError : public std::runtime_error {
 public:
  explicit RankCheckError(const std::string& m) : std::runtime_error(m) {}
};

class SamplingError : public std::runtime_error {
 public:
  explicit SamplingError(const std::string& m) : std::runtime_error(m) {}
};

// Rank of [d2K/dlam dx | d2K/dlam dnu | d2K/dlam dlam] (k rows) must be k at
// every point; points must satisfy the critical equations within tol_crit.
RankReport check_morse_rank(const MorseFamily& f, const std::vector<Binding>& points,
                            double tol_rank = 1e-9, double tol_crit = 1e-10, int jobs = 1);

// Rank of [d2K/dnu dx | d2K/dnu dnu] (m rows) must be m: inputs enter
// without redundancy.
RankReport check_restricted_rank(const MorseFamily& f, const std::vector<Binding>& points,
                                 double tol_rank = 1e-9, double tol_crit = 1e-10, int jobs = 1);

// K - sum_j (dK/dnu_j) nu_j. When the result is provably independent of the
// ports (each partial derivative passes the symbolic zero test), ports are
// substituted out so the returned expression is literally input-free.
Expr tilde_H(const MorseFamily& f);

// Per-variable sampling ranges; anything undeclared defaults to [-1, 1].
struct SampleBox {
  std::map<std::string, std::pair<double, double>> ranges;

  void set(const std::string& name, double lo, double hi) { ranges[name] = {lo, hi}; }
  std::pair<double, double> box_for(const std::string& name) const {
    auto it = ranges.find(name);
    return it == ranges.end() ? std::pair{-1.0, 1.0} : it->second;
  }
};

// Draws `count` points on the critical set: uniform seeds in the box, then
// Gauss-Newton (minimum-norm steps over all coordinates) on dK/dlambda = 0.
// Domain errors discard the seed. Returned bindings include `params`.
// Throws SamplingError when fewer than `count` points converge.
std::vector<Binding> sample_on_shell(const MorseFamily& f, const SampleBox& box,
                                     const Binding& params, int count, std::uint64_t seed,
                                     double tol_crit = 1e-10, int max_newton = 50);

// Jacobian matrix d f_i / d v_j as expressions.
std::vector<std::vector<Expr>> jacobian(const std::vector<Expr>& fs,
                                        const std::vector<VarId>& vars);

// General zero-set sampler behind sample_on_shell: finds `count` solutions
// of eqs(vars) = 0 from uniform seeds in `box`, Gauss-Newton minimum-norm
// iteration over all coordinates. With no equations, returns plain uniform
// draws. Bindings include `params`.
std::vector<Binding> newton_sample(const std::vector<Expr>& eqs, const std::vector<VarId>& vars,
                                   const SampleBox& box, const Binding& params, int count,
                                   std::mt19937_64& rng, double tol = 1e-10, int max_newton = 50);

}  // namespace phs
