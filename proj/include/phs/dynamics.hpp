#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "phs/constraints.hpp"
#include "phs/geometry.hpp"

namespace phs {

class DynamicsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The runtime multiplier system has no usable solution at the current point.
class SingularSolveError : public DynamicsError {
 public:
  using DynamicsError::DynamicsError;
};

// Scalar time signal: constant, sinusoid, step, or a natural cubic spline
// through table nodes. Table evaluation clamps to the end values outside the
// node range.
class Signal {
 public:
  Signal() = default;

  static Signal constant(double v);
  static Signal sine(double amp, double omega, double phase);
  static Signal step(double t0, double before, double after);
  // Nodes must be strictly increasing and at least two.
  static Signal table(std::vector<double> ts, std::vector<double> vs);

  double operator()(double t) const;

 private:
  enum class Kind { constant, sine, step, table };
  Kind kind_ = Kind::constant;
  double a_ = 0, b_ = 0, c_ = 0;
  std::vector<double> ts_, vs_, m2_;  // spline nodes and curvatures
};

// Power-conserving interconnection: xdot = J e + B e^p, f^p = -B^T e, with J
// skew-symmetric so <e, xdot> + <e^p, f^p> = 0 identically. `canonical`
// records that J is the standard symplectic block form on states ordered
// (q..., p...): (qdot, pdot) = (e_p, -e_q); its J matrix is materialized when
// the system is assembled and the state count is known.
struct DiracStructure {
  bool canonical = false;
  std::vector<std::vector<double>> J;  // n x n
  std::vector<std::vector<double>> B;  // n x d, empty when d == 0

  static DiracStructure canonical_symplectic();
  // Validates shape and skewness (max |J + J^T| entry <= 1e-12).
  static DiracStructure constant(std::vector<std::vector<double>> J,
                                 std::vector<std::vector<double>> B);

  size_t ports() const { return B.empty() ? 0 : B[0].size(); }
};

// A simulatable system: generating family, optional constraint analysis,
// interconnection, and the external time signals.
struct PHSystem {
  MorseFamily family;
  std::optional<ConstraintSystem> cs;
  DiracStructure dirac;
  std::map<std::string, Signal> gauge_signals;  // free multiplier name -> lambda(t)
  std::map<std::string, Signal> input_signals;  // port name -> nu(t)
  std::vector<Signal> effort_signals;           // e^p channels, one per B column
  Binding parameters;

  // Filled by make():
  std::vector<int> numeric_slot;     // per family parameter: index into the
                                     // runtime solve's columns, or -1 (gauge)
  std::vector<Expr> projection;      // constraints imposed after every step
  std::vector<std::vector<Expr>> projection_jac;  // d projection / d x
  Expr H_tilde = Expr::constant(0);

  // Validates dimensions, J skewness (materializing J for canonical
  // structures), that every free multiplier has a gauge signal and every
  // port an input signal, and pads missing effort signals with zeros.
  static PHSystem make(MorseFamily family, std::optional<ConstraintSystem> cs,
                       DiracStructure dirac, std::map<std::string, Signal> gauge,
                       std::map<std::string, Signal> inputs, std::vector<Signal> efforts,
                       Binding parameters);
};

// Everything the field evaluation produces at one (t, x).
struct FieldSample {
  std::vector<double> xdot;
  std::vector<double> lambda;  // family parameter order
  std::vector<double> e;       // dK/dx
  std::vector<double> y;       // dK/dnu, the port outputs
  std::vector<double> u;       // input values nu(t)
  std::vector<double> fp, ep;  // power-port flow and effort
  std::vector<double> phi;     // projection constraint values
  double K_value = 0;          // H_T at the point
  double H_tilde_value = 0;
};

// Gauge signals fix the free multipliers, the recorded linear system fixes
// the runtime-determined ones, then e = dK/dx maps through the Dirac
// structure to xdot.
FieldSample assemble_field(const PHSystem& sys, double t, const std::vector<double>& x);

// Values of the runtime-determined multipliers at (t, x), ordered like the
// recorded solve's columns; empty when nothing is runtime-determined. Throws
// SingularSolveError when the bracket matrix has condition above 1e12.
std::vector<double> solve_multipliers(const PHSystem& sys, double t,
                                      const std::vector<double>& x);

struct Trajectory {
  std::vector<std::string> state_names, multiplier_names, output_names;
  size_t power_ports = 0;

  std::vector<double> times;
  std::vector<std::vector<double>> states, multipliers, outputs, fps, eps;
  std::vector<double> res_closed;          // |<e, xdot> + <e^p, f^p>| per step
  std::vector<double> res_energyport;      // |d H_tilde/dt + eps_dot . nu + <e^p, f^p>|
  std::vector<double> res_constraint_max;  // max |phi| per step

  // Comma-separated, 17 significant digits, written to a temporary file and
  // renamed into place so failures never leave a partial file.
  void write_csv(const std::string& path) const;
  static Trajectory read_csv(const std::string& path);
};

// Fixed-step RK4 on the assembled field with post-step Newton projection
// back onto the constraints (minimum-norm update, residual <= 1e-12 within
// 20 iterations). The final step shortens to land exactly on t1. x0 must
// satisfy the constraints within 1e-10.
Trajectory integrate(const PHSystem& sys, const std::vector<double>& x0, double t0, double t1,
                     double dt);

struct PowerAudit {
  double t = 0;
  double dHT_dt = 0;               // total Hamiltonian rate (finite differences)
  double dHtilde_dt = 0;
  double port_power = 0;           // <e^p, f^p>
  double energy_port_power = 0;    // eps_dot . nu
  double closed_balance_residual = 0;
  double tilde_balance_residual = 0;
  double io_balance_residual = 0;  // |dH/dt + u . ydot|; NaN unless every
                                   // port enters the family linearly
  double constraint_residual_max = 0;
};

// Recomputes the balance identities from a recorded trajectory: interior
// steps use central finite differences, the two endpoints one-sided
// second-order stencils. Needs at least three recorded steps.
std::vector<PowerAudit> audit_power(const Trajectory& traj, const PHSystem& sys);

}  // namespace phs
