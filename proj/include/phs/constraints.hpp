#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "phs/geometry.hpp"

namespace phs {

// ---------------------------------------------------------------------------
// Legendre transform of a (possibly degenerate) Lagrangian
// ---------------------------------------------------------------------------

struct LagrangianSpec {
  std::vector<VarId> q_vars;  // positions
  std::vector<VarId> v_vars;  // velocities, paired index-wise with q_vars
  Expr L = Expr::constant(0LL);
};

class LegendreError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LegendreOptions {
  SampleBox box;       // ranges for q, v, and any extra variables in L
  Binding params;      // fixed parameter values for numeric checks
  std::vector<VarId> extra_vars;  // e.g. input variables appearing in L
  int samples = 12;
  std::uint64_t seed = 0;
  double tol_rank = 1e-9;
  double tol_surface = 1e-8;  // max |phi| allowed on the image of the Legendre map
};

struct LegendreReport {
  std::vector<Expr> p_hat;              // dL/dv_i
  std::vector<std::vector<Expr>> W;     // d^2 L / dv_i dv_j
  int rank_W = 0;
  int N = 0;                            // dim - rank_W, number of primary constraints
  Expr E = Expr::constant(0LL);         // p_hat . v - L, canonical energy candidate
  bool E_is_zero = false;               // proven zero symbolically
  std::vector<Binding> samples;         // admissible (q, v, extra) points used
  std::vector<double> phi_residuals;    // max |phi_j(q, p_hat(q, v))| over samples
};

// Computes momenta and the velocity Hessian, checks that the Hessian rank is
// constant across admissible sample points, decides whether the energy
// expression vanishes identically, and verifies that every candidate primary
// constraint vanishes on the image of the Legendre map. `p_vars` names the
// momentum symbols the constraints are written in.
LegendreReport legendre(const LagrangianSpec& spec, const std::vector<Expr>& primary,
                        const std::vector<VarId>& p_vars, const LegendreOptions& opt = {});

// ---------------------------------------------------------------------------
// Poisson brackets and on-surface zero tests
// ---------------------------------------------------------------------------

// Canonical bracket sum_i (df/dq_i * dg/dp_i - df/dp_i * dg/dq_i).
Expr poisson_bracket(const Expr& f, const Expr& g, const std::vector<VarId>& q_vars,
                     const std::vector<VarId>& p_vars);

class InconclusiveError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct VanishReport {
  bool vanishes = false;
  bool symbolic = false;   // settled by the exact zero test, no sampling needed
  int points_used = 0;
  double max_abs = 0.0;
};

// Decides whether f vanishes on the constraint surface represented by the
// sampled points. Tries the exact zero test first; otherwise evaluates f on
// the points and compares against tol. Throws InconclusiveError when fewer
// than min_points samples are available (coincident points within 1e-9 of
// each other count once, except when the whole surface is a single point).
VanishReport vanishes_on_surface(const Expr& f, const std::vector<Binding>& points, double tol,
                                 int min_points = 8);

// ---------------------------------------------------------------------------
// Dirac-Bergmann constraint algorithm
// ---------------------------------------------------------------------------

enum class Generation { primary, secondary };
enum class ConstraintClass { first, second };
enum class MultiplierState { free_gauge, determined, determined_numeric };

struct ConstraintEntry {
  Expr phi = Expr::constant(0LL);
  Generation generation = Generation::primary;
  ConstraintClass cls = ConstraintClass::first;
};

struct MultiplierEntry {
  VarId var;                      // multiplier symbol, paired with primary constraint i
  MultiplierState state = MultiplierState::free_gauge;
  Expr value = Expr::constant(0LL);  // meaningful only when state == determined
};

struct IterationEvent {
  int pass = 0;
  std::string subject;   // e.g. "phi_2"
  std::string action;    // identically-satisfied | secondary-added | multiplier-determined |
                         // joined-numeric-block | converged
  std::string detail;
};

// Rows and columns of the multiplier system that must be solved numerically
// at runtime because the bracket coefficients are not constants. rows[i] is a
// constraint index, cols[j] a multiplier index; the system is
//   sum_j bracket[i][j] * lambda_{cols[j]} = rhs[i]   on the constraint surface.
struct NumericSolveSpec {
  std::vector<int> rows;
  std::vector<int> cols;
  std::vector<std::vector<Expr>> bracket;
  std::vector<Expr> rhs;
};

struct ConstraintSystem {
  std::vector<VarId> q_vars, p_vars;
  Expr H = Expr::constant(0LL);        // canonical Hamiltonian the algorithm started from
  std::vector<ConstraintEntry> constraints;
  std::vector<MultiplierEntry> multipliers;  // parallel to the primary constraints
  Expr H_total = Expr::constant(0LL);
  std::optional<NumericSolveSpec> numeric;
  std::vector<IterationEvent> iterations;

  std::vector<VarId> free_multipliers() const;
  std::string table() const;
  std::string to_json_string() const;
};

class InconsistentSystemError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class AlgorithmError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DiracBergmannOptions {
  SampleBox box;        // ranges for q, p, and extra variables
  Binding params;
  std::vector<VarId> extra_vars;        // inputs appearing in H or the constraints
  std::vector<VarId> multiplier_names;  // user-declared symbols, used in order; the
                                        // rest fall back to lam_1, lam_2, ...
  int max_iter = 16;
  double tol_surface = 1e-8;
  double tol_sample = 1e-10;  // Newton tolerance when sampling the surface
  std::uint64_t seed = 0;
  int min_points = 8;
};

// Runs the stabilization loop: consistency of each constraint under H plus
// the undetermined multiplier terms either holds identically, fixes
// multipliers (exact elimination for constant bracket coefficients, a
// recorded numeric solve otherwise), or yields a secondary constraint.
// Terminates when a full pass adds nothing, classifies every constraint as
// first or second class, and assembles H_total.
ConstraintSystem dirac_bergmann(const Expr& H, const std::vector<Expr>& primary,
                                const std::vector<VarId>& q_vars,
                                const std::vector<VarId>& p_vars,
                                const DiracBergmannOptions& opt = {});

// ---------------------------------------------------------------------------
// From a constraint system to a checked family
// ---------------------------------------------------------------------------

struct ConstrainedIO {
  ConstraintSystem cs;
  MorseFamily family;  // K = H_total over states (q, p), ports = inputs,
                       // parameters = the free multipliers
};

ConstrainedIO assemble_constrained_io(const Expr& H, const std::vector<Expr>& primary,
                                      const std::vector<VarId>& q_vars,
                                      const std::vector<VarId>& p_vars,
                                      const std::vector<VarId>& inputs,
                                      const DiracBergmannOptions& opt = {});

}  // namespace phs
