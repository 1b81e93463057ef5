#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "phs/constraints.hpp"
#include "phs/dynamics.hpp"
#include "phs/geometry.hpp"

namespace phs {

// Parse or build failure in a system file; messages carry name:line where
// the offending line is known.
class FileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SimulationSpec {
  double t0 = 0, t1 = 0, dt = 0;
  std::vector<double> x0;
};

struct BuildOptions {
  std::uint64_t seed = 0;
  double tol_rank = 1e-9;
  double tol_crit = 1e-10;
  double tol_surface = 1e-8;
  int samples = 8;  // on-shell points drawn for rank checks
};

// A fully interpreted system file: declarations, the generating family
// (reduced from a Lagrangian or Hamiltonian when constraints are present),
// the interconnection, and the signals. Simulation plumbing is assembled on
// demand so analysis commands work on files without signals or structure.
struct SystemDescription {
  std::string name;
  std::vector<VarId> positions, velocities, momenta, inputs, multipliers;
  SampleBox box;
  Binding parameters;
  BuildOptions options;

  std::optional<LegendreReport> legendre_report;
  std::optional<ConstraintSystem> reduction;
  MorseFamily family;
  DiracStructure dirac;
  std::map<std::string, Signal> gauge_signals, input_signals;
  std::vector<Signal> effort_signals;
  std::optional<SimulationSpec> simulation;

  PHSystem make_system() const;

  // Points on the critical set (plain box draws when the family has no
  // parameters), for the rank checks.
  std::vector<Binding> rank_points(int count, std::uint64_t seed) const;
};

SystemDescription parse_system_text(const std::string& text, const std::string& name,
                                    const BuildOptions& opt = {});
SystemDescription load_system_file(const std::string& path, const BuildOptions& opt = {});

// Built-in example files, keyed by name; content is identical across runs.
const std::map<std::string, std::string>& builtin_examples();

}  // namespace phs
