#include "phs/dynamics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace phs {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_time(double t) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%g", t);
  return buf;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Derivative of the quadratic through three samples, evaluated at ts[i].
// Interior points get the centered stencil, the endpoints one-sided ones;
// both are second order and tolerate a shortened final step.
double fd_derivative(const std::vector<double>& ts, const std::vector<double>& fs, size_t i) {
  size_t s = ts.size();
  size_t a = (i == 0) ? 0 : (i == s - 1 ? s - 3 : i - 1);
  double t0 = ts[a], t1 = ts[a + 1], t2 = ts[a + 2];
  double x = ts[i];
  double d0 = (2 * x - t1 - t2) / ((t0 - t1) * (t0 - t2));
  double d1 = (2 * x - t0 - t2) / ((t1 - t0) * (t1 - t2));
  double d2 = (2 * x - t0 - t1) / ((t2 - t0) * (t2 - t1));
  return fs[a] * d0 + fs[a + 1] * d1 + fs[a + 2] * d2;
}

void check_rectangular(const std::vector<std::vector<double>>& m, const char* what) {
  for (const auto& row : m)
    if (row.size() != m[0].size())
      throw DynamicsError(std::string(what) + " has rows of unequal length");
}

}  // namespace

// ---------------------------------------------------------------------------
// Signals
// ---------------------------------------------------------------------------

Signal Signal::constant(double v) {
  Signal s;
  s.kind_ = Kind::constant;
  s.a_ = v;
  return s;
}

Signal Signal::sine(double amp, double omega, double phase) {
  Signal s;
  s.kind_ = Kind::sine;
  s.a_ = amp;
  s.b_ = omega;
  s.c_ = phase;
  return s;
}

Signal Signal::step(double t0, double before, double after) {
  Signal s;
  s.kind_ = Kind::step;
  s.a_ = t0;
  s.b_ = before;
  s.c_ = after;
  return s;
}

Signal Signal::table(std::vector<double> ts, std::vector<double> vs) {
  if (ts.size() != vs.size())
    throw DynamicsError("signal table needs one value per node");
  if (ts.size() < 2) throw DynamicsError("signal table needs at least two nodes");
  for (size_t i = 1; i < ts.size(); ++i)
    if (!(ts[i] > ts[i - 1]))
      throw DynamicsError("signal table nodes must be strictly increasing");

  Signal s;
  s.kind_ = Kind::table;
  s.ts_ = std::move(ts);
  s.vs_ = std::move(vs);

  // Natural cubic spline: tridiagonal system for the interior curvatures,
  // zero curvature at both ends.
  size_t n = s.ts_.size();
  s.m2_.assign(n, 0.0);
  if (n > 2) {
    size_t r = n - 2;
    std::vector<double> diag(r), upper(r), rhs(r);
    for (size_t i = 0; i < r; ++i) {
      double h0 = s.ts_[i + 1] - s.ts_[i];
      double h1 = s.ts_[i + 2] - s.ts_[i + 1];
      diag[i] = (h0 + h1) / 3.0;
      upper[i] = h1 / 6.0;
      rhs[i] = (s.vs_[i + 2] - s.vs_[i + 1]) / h1 - (s.vs_[i + 1] - s.vs_[i]) / h0;
    }
    // Thomas algorithm; the matrix is symmetric so the subdiagonal reuses
    // the previous row's upper entry.
    for (size_t i = 1; i < r; ++i) {
      double w = upper[i - 1] / diag[i - 1];
      diag[i] -= w * upper[i - 1];
      rhs[i] -= w * rhs[i - 1];
    }
    s.m2_[r] = rhs[r - 1] / diag[r - 1];
    for (size_t i = r - 1; i >= 1; --i) s.m2_[i] = (rhs[i - 1] - upper[i - 1] * s.m2_[i + 1]) / diag[i - 1];
  }
  return s;
}

double Signal::operator()(double t) const {
  switch (kind_) {
    case Kind::constant:
      return a_;
    case Kind::sine:
      return a_ * std::sin(b_ * t + c_);
    case Kind::step:
      return t < a_ ? b_ : c_;
    case Kind::table: {
      if (t <= ts_.front()) return vs_.front();
      if (t >= ts_.back()) return vs_.back();
      size_t i = std::upper_bound(ts_.begin(), ts_.end(), t) - ts_.begin() - 1;
      double h = ts_[i + 1] - ts_[i];
      double a = (ts_[i + 1] - t) / h;
      double b = (t - ts_[i]) / h;
      return a * vs_[i] + b * vs_[i + 1] +
             ((a * a * a - a) * m2_[i] + (b * b * b - b) * m2_[i + 1]) * h * h / 6.0;
    }
  }
  return 0;
}

// ---------------------------------------------------------------------------
// Dirac structures
// ---------------------------------------------------------------------------

DiracStructure DiracStructure::canonical_symplectic() {
  DiracStructure d;
  d.canonical = true;
  return d;
}

DiracStructure DiracStructure::constant(std::vector<std::vector<double>> J,
                                        std::vector<std::vector<double>> B) {
  if (J.empty()) throw DynamicsError("structure matrix J must have at least one row");
  check_rectangular(J, "structure matrix J");
  size_t n = J.size();
  if (J[0].size() != n) throw DynamicsError("structure matrix J must be square");
  double worst = 0;
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < n; ++j) worst = std::max(worst, std::abs(J[i][j] + J[j][i]));
  if (worst > 1e-12)
    throw DynamicsError("structure matrix J is not skew-symmetric: max |J + J^T| entry is " +
                        fmt_time(worst));
  if (!B.empty()) {
    check_rectangular(B, "port matrix B");
    if (B.size() != n) throw DynamicsError("port matrix B must have one row per state");
    if (B[0].empty()) B.clear();
  }
  DiracStructure d;
  d.J = std::move(J);
  d.B = std::move(B);
  return d;
}

// ---------------------------------------------------------------------------
// System assembly
// ---------------------------------------------------------------------------

PHSystem PHSystem::make(MorseFamily family, std::optional<ConstraintSystem> cs,
                        DiracStructure dirac, std::map<std::string, Signal> gauge,
                        std::map<std::string, Signal> inputs, std::vector<Signal> efforts,
                        Binding parameters) {
  size_t n = family.n();

  if (dirac.canonical) {
    if (n % 2 != 0)
      throw DynamicsError("the canonical symplectic structure needs an even state count, got " +
                          std::to_string(n));
    if (dirac.J.empty()) {
      dirac.J.assign(n, std::vector<double>(n, 0.0));
      for (size_t i = 0; i < n / 2; ++i) {
        dirac.J[i][n / 2 + i] = 1.0;
        dirac.J[n / 2 + i][i] = -1.0;
      }
    }
  }
  if (dirac.J.size() != n || dirac.J[0].size() != n)
    throw DynamicsError("structure matrix J must be " + std::to_string(n) + "x" +
                        std::to_string(n) + " to match the states");
  if (!dirac.B.empty() && dirac.B.size() != n)
    throw DynamicsError("port matrix B must have one row per state");
  size_t d = dirac.ports();
  if (efforts.size() > d)
    throw DynamicsError("more port effort signals than B has columns");
  while (efforts.size() < d) efforts.push_back(Signal::constant(0.0));

  PHSystem sys;
  sys.family = std::move(family);
  sys.cs = std::move(cs);
  sys.dirac = std::move(dirac);
  sys.gauge_signals = std::move(gauge);
  sys.input_signals = std::move(inputs);
  sys.effort_signals = std::move(efforts);
  sys.parameters = std::move(parameters);

  for (const auto& port : sys.family.port_vars)
    if (!sys.input_signals.count(port.name))
      throw DynamicsError("port '" + port.name + "' has no input signal");

  // Match runtime-determined multipliers to family parameters; everything
  // else is gauge freedom and must come with a signal.
  sys.numeric_slot.assign(sys.family.k(), -1);
  if (sys.cs && sys.cs->numeric) {
    const auto& ns = *sys.cs->numeric;
    for (size_t j = 0; j < ns.cols.size(); ++j) {
      const std::string& name = sys.cs->multipliers[ns.cols[j]].var.name;
      bool found = false;
      for (size_t i = 0; i < sys.family.param_vars.size(); ++i)
        if (sys.family.param_vars[i].name == name) {
          sys.numeric_slot[i] = static_cast<int>(j);
          found = true;
          break;
        }
      if (!found)
        throw DynamicsError("runtime-determined multiplier '" + name +
                            "' is not a parameter of the family");
    }
  }
  for (size_t i = 0; i < sys.family.param_vars.size(); ++i)
    if (sys.numeric_slot[i] < 0 && !sys.gauge_signals.count(sys.family.param_vars[i].name))
      throw DynamicsError("free multiplier '" + sys.family.param_vars[i].name +
                          "' has no gauge signal; supply one to fix the gauge");

  if (sys.cs) {
    for (const auto& c : sys.cs->constraints) sys.projection.push_back(c.phi);
  } else {
    sys.projection = sys.family.dK_dlam;
  }
  sys.projection_jac = jacobian(sys.projection, sys.family.state_vars);
  sys.H_tilde = tilde_H(sys.family);
  return sys;
}

// ---------------------------------------------------------------------------
// Field evaluation
// ---------------------------------------------------------------------------

std::vector<double> solve_multipliers(const PHSystem& sys, double t,
                                      const std::vector<double>& x) {
  if (!sys.cs || !sys.cs->numeric) return {};
  const auto& ns = *sys.cs->numeric;
  size_t r = ns.rows.size();
  if (r == 0) return {};

  Binding b = sys.parameters;
  for (size_t i = 0; i < sys.family.state_vars.size(); ++i) b.set(sys.family.state_vars[i], x[i]);
  for (const auto& port : sys.family.port_vars) b.set(port.name, sys.input_signals.at(port.name)(t));

  Eigen::MatrixXd A(r, r);
  Eigen::VectorXd rhs(r);
  try {
    for (size_t i = 0; i < r; ++i) {
      for (size_t j = 0; j < r; ++j) A(i, j) = evaluate(ns.bracket[i][j], b);
      rhs(i) = evaluate(ns.rhs[i], b);
    }
  } catch (const EvalError& e) {
    throw DynamicsError("multiplier solve at t = " + fmt_time(t) +
                        " could not be evaluated: " + e.what());
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinU);
  double smax = svd.singularValues()(0);
  double smin = svd.singularValues()(r - 1);
  if (!(smin > 0) || smax / smin > 1e12) {
    // The left singular vector of the smallest singular value names the
    // consistency rows that became linearly dependent.
    std::string who;
    for (size_t i = 0; i < r; ++i)
      if (std::abs(svd.matrixU()(i, r - 1)) > 1e-8) {
        if (!who.empty()) who += ", ";
        who += "phi_" + std::to_string(ns.rows[i] + 1);
      }
    throw SingularSolveError("multiplier solve is singular at t = " + fmt_time(t) +
                             " (condition estimate " +
                             fmt_time(smin > 0 ? smax / smin
                                              : std::numeric_limits<double>::infinity()) +
                             "); degenerate consistency rows: " + who);
  }
  Eigen::VectorXd lam = A.partialPivLu().solve(rhs);
  return std::vector<double>(lam.data(), lam.data() + r);
}

FieldSample assemble_field(const PHSystem& sys, double t, const std::vector<double>& x) {
  const MorseFamily& fam = sys.family;
  size_t n = fam.n(), m = fam.m(), k = fam.k(), d = sys.dirac.ports();
  if (x.size() != n)
    throw DynamicsError("state has " + std::to_string(x.size()) + " entries, expected " +
                        std::to_string(n));

  Binding b = sys.parameters;
  for (size_t i = 0; i < n; ++i) b.set(fam.state_vars[i], x[i]);

  FieldSample s;
  s.u.resize(m);
  for (size_t j = 0; j < m; ++j) {
    s.u[j] = sys.input_signals.at(fam.port_vars[j].name)(t);
    b.set(fam.port_vars[j], s.u[j]);
  }

  bool any_numeric = false;
  for (int slot : sys.numeric_slot) any_numeric |= slot >= 0;
  std::vector<double> numeric;
  if (any_numeric) numeric = solve_multipliers(sys, t, x);
  s.lambda.resize(k);
  for (size_t i = 0; i < k; ++i) {
    s.lambda[i] = sys.numeric_slot[i] >= 0 ? numeric[sys.numeric_slot[i]]
                                           : sys.gauge_signals.at(fam.param_vars[i].name)(t);
    b.set(fam.param_vars[i], s.lambda[i]);
  }

  try {
    s.e.resize(n);
    for (size_t i = 0; i < n; ++i) s.e[i] = evaluate(fam.dK_dx[i], b);
    s.y.resize(m);
    for (size_t j = 0; j < m; ++j) s.y[j] = evaluate(fam.dK_dnu[j], b);
    s.phi.resize(sys.projection.size());
    for (size_t i = 0; i < sys.projection.size(); ++i) s.phi[i] = evaluate(sys.projection[i], b);
    s.K_value = evaluate(fam.K, b);
    s.H_tilde_value = evaluate(sys.H_tilde, b);
  } catch (const EvalError& e) {
    throw DynamicsError("field evaluation failed at t = " + fmt_time(t) + ": " + e.what());
  }

  s.ep.resize(d);
  for (size_t l = 0; l < d; ++l) s.ep[l] = sys.effort_signals[l](t);
  s.xdot.assign(n, 0.0);
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = 0; j < n; ++j) s.xdot[i] += sys.dirac.J[i][j] * s.e[j];
    for (size_t l = 0; l < d; ++l) s.xdot[i] += sys.dirac.B[i][l] * s.ep[l];
  }
  s.fp.assign(d, 0.0);
  for (size_t l = 0; l < d; ++l)
    for (size_t i = 0; i < n; ++i) s.fp[l] -= sys.dirac.B[i][l] * s.e[i];
  return s;
}

// ---------------------------------------------------------------------------
// Integration
// ---------------------------------------------------------------------------

namespace {

// Pulls x back onto the constraint set with minimum-norm Newton updates.
// Inputs and multipliers are held at their time-tn values.
void project_onto_constraints(const PHSystem& sys, double tn, std::vector<double>& x) {
  size_t nc = sys.projection.size();
  if (nc == 0) return;
  size_t n = sys.family.n();

  Binding base = sys.parameters;
  for (const auto& port : sys.family.port_vars)
    base.set(port.name, sys.input_signals.at(port.name)(tn));
  bool any_numeric = false;
  for (int slot : sys.numeric_slot) any_numeric |= slot >= 0;
  std::vector<double> numeric;
  if (any_numeric) numeric = solve_multipliers(sys, tn, x);
  for (size_t i = 0; i < sys.family.param_vars.size(); ++i)
    base.set(sys.family.param_vars[i],
             sys.numeric_slot[i] >= 0
                 ? numeric[sys.numeric_slot[i]]
                 : sys.gauge_signals.at(sys.family.param_vars[i].name)(tn));

  Eigen::VectorXd r(nc);
  Eigen::MatrixXd Jm(nc, n);
  for (int iter = 0; iter < 20; ++iter) {
    Binding b = base;
    for (size_t i = 0; i < n; ++i) b.set(sys.family.state_vars[i], x[i]);
    double worst = 0;
    try {
      for (size_t i = 0; i < nc; ++i) {
        r(i) = evaluate(sys.projection[i], b);
        worst = std::max(worst, std::abs(r(i)));
      }
      if (worst <= 1e-12) return;
      for (size_t i = 0; i < nc; ++i)
        for (size_t j = 0; j < n; ++j) Jm(i, j) = evaluate(sys.projection_jac[i][j], b);
    } catch (const EvalError& e) {
      throw DynamicsError("constraint projection failed at t = " + fmt_time(tn) + ": " +
                          e.what());
    }
    Eigen::MatrixXd JJt = Jm * Jm.transpose();
    Eigen::FullPivLU<Eigen::MatrixXd> lu(JJt);
    if (!lu.isInvertible())
      throw DynamicsError("constraint projection Jacobian is degenerate at t = " + fmt_time(tn));
    Eigen::VectorXd dx = -Jm.transpose() * lu.solve(r);
    for (size_t i = 0; i < n; ++i) x[i] += dx(i);
  }

  Binding b = base;
  for (size_t i = 0; i < n; ++i) b.set(sys.family.state_vars[i], x[i]);
  double worst = 0;
  for (size_t i = 0; i < nc; ++i) worst = std::max(worst, std::abs(evaluate(sys.projection[i], b)));
  if (worst > 1e-12)
    throw DynamicsError("constraint projection did not converge at t = " + fmt_time(tn) +
                        ": residual " + fmt_time(worst) + " after 20 iterations");
}

}  // namespace

Trajectory integrate(const PHSystem& sys, const std::vector<double>& x0, double t0, double t1,
                     double dt) {
  if (!(dt > 0)) throw DynamicsError("step size must be positive");
  if (!(t1 > t0)) throw DynamicsError("final time must exceed initial time");
  const MorseFamily& fam = sys.family;
  size_t n = fam.n();

  Trajectory traj;
  for (const auto& v : fam.state_vars) traj.state_names.push_back(v.name);
  for (const auto& v : fam.param_vars) traj.multiplier_names.push_back(v.name);
  for (const auto& v : fam.port_vars) traj.output_names.push_back(v.name);
  traj.power_ports = sys.dirac.ports();

  FieldSample cur = assemble_field(sys, t0, x0);
  for (size_t i = 0; i < cur.phi.size(); ++i)
    if (std::abs(cur.phi[i]) > 1e-10)
      throw DynamicsError("initial state violates constraint " + sys.projection[i].str() +
                          ": |phi| = " + fmt_time(std::abs(cur.phi[i])));

  // Per-row series kept for the finite-difference balance pass.
  std::vector<double> htilde_series;
  std::vector<std::vector<double>> u_series;

  auto record = [&](double t, const std::vector<double>& x, const FieldSample& s) {
    traj.times.push_back(t);
    traj.states.push_back(x);
    traj.multipliers.push_back(s.lambda);
    traj.outputs.push_back(s.y);
    traj.fps.push_back(s.fp);
    traj.eps.push_back(s.ep);
    traj.res_closed.push_back(std::abs(dot(s.e, s.xdot) + dot(s.ep, s.fp)));
    double worst = 0;
    for (double p : s.phi) worst = std::max(worst, std::abs(p));
    traj.res_constraint_max.push_back(worst);
    htilde_series.push_back(s.H_tilde_value);
    u_series.push_back(s.u);
  };

  std::vector<double> x = x0;
  double t = t0;
  record(t, x, cur);

  std::vector<double> xs(n), k1(n), k2(n), k3(n), k4(n);
  while (t < t1) {
    double remaining = t1 - t;
    double h, tn;
    if (remaining <= dt * (1 + 1e-9)) {
      h = remaining;
      tn = t1;
    } else {
      h = dt;
      tn = t + dt;
    }

    k1 = cur.xdot;
    for (size_t i = 0; i < n; ++i) xs[i] = x[i] + 0.5 * h * k1[i];
    k2 = assemble_field(sys, t + 0.5 * h, xs).xdot;
    for (size_t i = 0; i < n; ++i) xs[i] = x[i] + 0.5 * h * k2[i];
    k3 = assemble_field(sys, t + 0.5 * h, xs).xdot;
    for (size_t i = 0; i < n; ++i) xs[i] = x[i] + h * k3[i];
    k4 = assemble_field(sys, tn, xs).xdot;
    for (size_t i = 0; i < n; ++i)
      x[i] += h / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]);

    project_onto_constraints(sys, tn, x);
    t = tn;
    cur = assemble_field(sys, t, x);
    record(t, x, cur);
  }

  // Balance residual that needs neighbors: d(H_tilde)/dt + eps_dot . nu +
  // <e^p, f^p>. Fewer than three rows leaves it undefined.
  size_t rows = traj.times.size();
  traj.res_energyport.assign(rows, std::numeric_limits<double>::quiet_NaN());
  if (rows >= 3) {
    size_t m = fam.m();
    std::vector<std::vector<double>> eps_cols(m, std::vector<double>(rows));
    for (size_t j = 0; j < m; ++j)
      for (size_t i = 0; i < rows; ++i) eps_cols[j][i] = traj.outputs[i][j];
    for (size_t i = 0; i < rows; ++i) {
      double v = fd_derivative(traj.times, htilde_series, i);
      for (size_t j = 0; j < m; ++j)
        v += fd_derivative(traj.times, eps_cols[j], i) * u_series[i][j];
      v += dot(traj.eps[i], traj.fps[i]);
      traj.res_energyport[i] = std::abs(v);
    }
  }
  return traj;
}

// ---------------------------------------------------------------------------
// Trajectory files
// ---------------------------------------------------------------------------

void Trajectory::write_csv(const std::string& path) const {
  std::string tmp = path + ".tmp";
  std::FILE* f = std::fopen(tmp.c_str(), "w");
  if (!f) throw DynamicsError("cannot open '" + tmp + "' for writing");

  std::string header = "t";
  for (const auto& s : state_names) header += ",x_" + s;
  for (const auto& s : multiplier_names) header += ",lam_" + s;
  for (const auto& s : output_names) header += ",y_" + s;
  for (size_t i = 0; i < power_ports; ++i) header += ",fp_" + std::to_string(i);
  for (size_t i = 0; i < power_ports; ++i) header += ",ep_" + std::to_string(i);
  header += ",res_closed,res_energyport,res_constraint_max\n";

  bool ok = std::fputs(header.c_str(), f) >= 0;
  for (size_t i = 0; ok && i < times.size(); ++i) {
    std::string line = fmt_double(times[i]);
    auto put = [&line](double v) { line += ","; line += fmt_double(v); };
    for (double v : states[i]) put(v);
    for (double v : multipliers[i]) put(v);
    for (double v : outputs[i]) put(v);
    for (double v : fps[i]) put(v);
    for (double v : eps[i]) put(v);
    put(res_closed[i]);
    put(res_energyport[i]);
    put(res_constraint_max[i]);
    line += "\n";
    ok = std::fputs(line.c_str(), f) >= 0;
  }
  ok = (std::fclose(f) == 0) && ok;
  if (!ok) {
    std::remove(tmp.c_str());
    throw DynamicsError("writing '" + tmp + "' failed");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    std::remove(tmp.c_str());
    throw DynamicsError("cannot move trajectory into place at '" + path + "'");
  }
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

Trajectory Trajectory::read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DynamicsError("cannot open trajectory file '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw DynamicsError("'" + path + "' is empty");
  auto cols = split_csv_line(line);

  Trajectory traj;
  size_t c = 0;
  auto have = [&](const std::string& prefix) {
    return c < cols.size() && cols[c].rfind(prefix, 0) == 0;
  };
  if (!(c < cols.size() && cols[c] == "t"))
    throw DynamicsError("'" + path + "': first column must be t");
  ++c;
  while (have("x_")) traj.state_names.push_back(cols[c++].substr(2));
  while (have("lam_")) traj.multiplier_names.push_back(cols[c++].substr(4));
  while (have("y_")) traj.output_names.push_back(cols[c++].substr(2));
  while (have("fp_")) { ++traj.power_ports; ++c; }
  for (size_t i = 0; i < traj.power_ports; ++i, ++c)
    if (!have("ep_")) throw DynamicsError("'" + path + "': expected one ep_ column per fp_ column");
  const char* tail[] = {"res_closed", "res_energyport", "res_constraint_max"};
  for (const char* want : tail) {
    if (!(c < cols.size() && cols[c] == want))
      throw DynamicsError("'" + path + "': expected column '" + want + "', got '" +
                          (c < cols.size() ? cols[c] : std::string("<end>")) + "'");
    ++c;
  }
  if (c != cols.size())
    throw DynamicsError("'" + path + "': unexpected trailing column '" + cols[c] + "'");

  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto vals = split_csv_line(line);
    if (vals.size() != cols.size())
      throw DynamicsError("'" + path + "' line " + std::to_string(lineno) + ": expected " +
                          std::to_string(cols.size()) + " values, got " +
                          std::to_string(vals.size()));
    std::vector<double> row(vals.size());
    for (size_t i = 0; i < vals.size(); ++i) {
      const char* s = vals[i].c_str();
      char* end = nullptr;
      row[i] = std::strtod(s, &end);
      if (end == s || *end != '\0')
        throw DynamicsError("'" + path + "' line " + std::to_string(lineno) +
                            ": bad number '" + vals[i] + "'");
    }
    size_t p = 0;
    traj.times.push_back(row[p++]);
    auto take = [&](size_t count) {
      std::vector<double> v(row.begin() + p, row.begin() + p + count);
      p += count;
      return v;
    };
    traj.states.push_back(take(traj.state_names.size()));
    traj.multipliers.push_back(take(traj.multiplier_names.size()));
    traj.outputs.push_back(take(traj.output_names.size()));
    traj.fps.push_back(take(traj.power_ports));
    traj.eps.push_back(take(traj.power_ports));
    traj.res_closed.push_back(row[p++]);
    traj.res_energyport.push_back(row[p++]);
    traj.res_constraint_max.push_back(row[p++]);
  }
  return traj;
}

// ---------------------------------------------------------------------------
// Power audit
// ---------------------------------------------------------------------------

std::vector<PowerAudit> audit_power(const Trajectory& traj, const PHSystem& sys) {
  size_t rows = traj.times.size();
  if (rows < 3) throw DynamicsError("power audit needs at least three recorded steps");
  const MorseFamily& fam = sys.family;
  size_t n = fam.n(), m = fam.m(), k = fam.k(), d = sys.dirac.ports();
  if (traj.state_names.size() != n || traj.multiplier_names.size() != k ||
      traj.output_names.size() != m || traj.power_ports != d)
    throw DynamicsError("trajectory columns do not match the system");
  for (size_t i = 0; i < k; ++i)
    if (traj.multiplier_names[i] != fam.param_vars[i].name)
      throw DynamicsError("trajectory multiplier '" + traj.multiplier_names[i] +
                          "' does not match family parameter '" + fam.param_vars[i].name + "'");

  // The balance in input-linear form needs the ports to enter the family
  // linearly; then H is the family with the ports switched off.
  bool io_linear = m > 0;
  for (size_t a = 0; a < m && io_linear; ++a)
    for (size_t b = a; b < m && io_linear; ++b)
      io_linear = is_symbolically_zero(differentiate(fam.dK_dnu[a], fam.port_vars[b]));
  Expr H0 = Expr::constant(0);
  if (io_linear) {
    std::map<std::string, Expr> off;
    for (const auto& port : fam.port_vars) off[port.name] = Expr::constant(0);
    H0 = substitute(fam.K, off);
  }

  // Per-row values, then finite differences across rows.
  std::vector<double> K_series(rows), htilde_series(rows), h0_series(rows);
  std::vector<std::vector<double>> y_cols(m, std::vector<double>(rows));
  std::vector<std::vector<double>> u_rows(rows), xdot_rows(rows), e_rows(rows), fp_rows(rows);
  std::vector<double> phi_worst(rows);
  // dH_T/dt holds the multipliers at the row's recorded values, so the K
  // stencil re-evaluates neighbor states under the center row's lambda.
  std::vector<Binding> row_bind(rows);

  for (size_t i = 0; i < rows; ++i) {
    Binding b = sys.parameters;
    for (size_t j = 0; j < n; ++j) b.set(fam.state_vars[j], traj.states[i][j]);
    std::vector<double> u(m);
    for (size_t j = 0; j < m; ++j) {
      u[j] = sys.input_signals.at(fam.port_vars[j].name)(traj.times[i]);
      b.set(fam.port_vars[j], u[j]);
    }
    for (size_t j = 0; j < k; ++j) b.set(fam.param_vars[j], traj.multipliers[i][j]);
    row_bind[i] = b;
    u_rows[i] = std::move(u);

    std::vector<double> e(n);
    try {
      for (size_t j = 0; j < n; ++j) e[j] = evaluate(fam.dK_dx[j], b);
      for (size_t j = 0; j < m; ++j) y_cols[j][i] = evaluate(fam.dK_dnu[j], b);
      htilde_series[i] = evaluate(sys.H_tilde, b);
      if (io_linear) h0_series[i] = evaluate(H0, b);
      double worst = 0;
      for (const auto& phi : sys.projection) worst = std::max(worst, std::abs(evaluate(phi, b)));
      phi_worst[i] = worst;
    } catch (const EvalError& err) {
      throw DynamicsError("power audit failed at t = " + fmt_time(traj.times[i]) + ": " +
                          err.what());
    }

    std::vector<double> xdot(n, 0.0), fp(d, 0.0);
    for (size_t a = 0; a < n; ++a) {
      for (size_t bcol = 0; bcol < n; ++bcol) xdot[a] += sys.dirac.J[a][bcol] * e[bcol];
      for (size_t l = 0; l < d; ++l) xdot[a] += sys.dirac.B[a][l] * traj.eps[i][l];
    }
    for (size_t l = 0; l < d; ++l)
      for (size_t a = 0; a < n; ++a) fp[l] -= sys.dirac.B[a][l] * e[a];
    e_rows[i] = std::move(e);
    xdot_rows[i] = std::move(xdot);
    fp_rows[i] = std::move(fp);
  }

  std::vector<PowerAudit> out(rows);
  for (size_t i = 0; i < rows; ++i) {
    PowerAudit& a = out[i];
    a.t = traj.times[i];
    a.port_power = dot(traj.eps[i], fp_rows[i]);
    a.constraint_residual_max = phi_worst[i];
    a.closed_balance_residual = std::abs(dot(e_rows[i], xdot_rows[i]) + a.port_power);

    // K along the stencil, with the multipliers pinned to row i's values.
    size_t lo = (i == 0) ? 0 : (i == rows - 1 ? rows - 3 : i - 1);
    std::vector<double> st(3), sk(3);
    for (size_t w = 0; w < 3; ++w) {
      size_t idx = lo + w;
      Binding b = row_bind[idx];
      for (size_t j = 0; j < k; ++j) b.set(fam.param_vars[j], traj.multipliers[i][j]);
      st[w] = traj.times[idx];
      sk[w] = evaluate(fam.K, b);
    }
    a.dHT_dt = fd_derivative(st, sk, i - lo);

    a.dHtilde_dt = fd_derivative(traj.times, htilde_series, i);
    a.energy_port_power = 0;
    for (size_t j = 0; j < m; ++j)
      a.energy_port_power += fd_derivative(traj.times, y_cols[j], i) * u_rows[i][j];
    a.tilde_balance_residual = std::abs(a.dHtilde_dt + a.energy_port_power + a.port_power);

    if (io_linear) {
      double v = fd_derivative(traj.times, h0_series, i);
      for (size_t j = 0; j < m; ++j)
        v += u_rows[i][j] * fd_derivative(traj.times, y_cols[j], i);
      a.io_balance_residual = std::abs(v);
    } else {
      a.io_balance_residual = std::numeric_limits<double>::quiet_NaN();
    }
  }
  return out;
}

}  // namespace phs
