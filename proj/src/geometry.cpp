#include "phs/geometry.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace phs {

namespace {

double uniform01(std::mt19937_64& rng) {
  // Top 53 bits -> [0,1); identical on every platform for a given seed.
  return double(rng() >> 11) * 0x1.0p-53;
}

std::vector<Expr> gradient(const Expr& f, const std::vector<VarId>& vars) {
  std::vector<Expr> out;
  out.reserve(vars.size());
  for (const auto& v : vars) out.push_back(differentiate(f, v));
  return out;
}

std::vector<double> eval_all(const std::vector<Expr>& fs, const Binding& b) {
  std::vector<double> out;
  out.reserve(fs.size());
  for (const auto& f : fs) out.push_back(evaluate(f, b));
  return out;
}

}  // namespace

std::vector<std::vector<Expr>> jacobian(const std::vector<Expr>& fs,
                                        const std::vector<VarId>& vars) {
  std::vector<std::vector<Expr>> out;
  out.reserve(fs.size());
  for (const auto& f : fs) out.push_back(gradient(f, vars));
  return out;
}

MorseFamily MorseFamily::make(std::vector<VarId> states, std::vector<VarId> ports,
                              std::vector<VarId> params, Expr K) {
  if (states.empty()) throw std::invalid_argument("a generating family needs at least one state");
  std::set<std::string> names;
  auto claim = [&names](const VarId& v) {
    if (!names.insert(v.name).second)
      throw std::invalid_argument("duplicate variable name '" + v.name + "'");
  };
  for (const auto& v : states) claim(v);
  for (const auto& v : ports) claim(v);
  for (const auto& v : params) claim(v);
  for (const auto& v : free_vars(K)) {
    if (!names.count(v.name) && v.kind != VarKind::parameter)
      throw std::invalid_argument("K references undeclared variable '" + v.name + "'");
  }
  MorseFamily f;
  f.state_vars = std::move(states);
  f.port_vars = std::move(ports);
  f.param_vars = std::move(params);
  f.K = std::move(K);
  f.dK_dx = gradient(f.K, f.state_vars);
  f.dK_dnu = gradient(f.K, f.port_vars);
  f.dK_dlam = gradient(f.K, f.param_vars);
  return f;
}

std::vector<VarId> MorseFamily::all_vars() const {
  std::vector<VarId> out = state_vars;
  out.insert(out.end(), port_vars.begin(), port_vars.end());
  out.insert(out.end(), param_vars.begin(), param_vars.end());
  return out;
}

std::vector<double> critical_residual(const MorseFamily& f, const Binding& point) {
  return eval_all(f.dK_dlam, point);
}

LagrangianSample coenergy(const MorseFamily& f, const Binding& point) {
  LagrangianSample s;
  auto fetch = [&point](const std::vector<VarId>& vars) {
    std::vector<double> out;
    out.reserve(vars.size());
    for (const auto& v : vars) {
      auto val = point.find(v.name);
      if (!val) throw EvalError("no value bound for variable '" + v.name + "'");
      out.push_back(*val);
    }
    return out;
  };
  s.x = fetch(f.state_vars);
  s.nu = fetch(f.port_vars);
  s.lam = fetch(f.param_vars);
  s.e = eval_all(f.dK_dx, point);
  s.eps = eval_all(f.dK_dnu, point);
  s.residual = eval_all(f.dK_dlam, point);
  return s;
}

namespace {

int numeric_rank(const Eigen::MatrixXd& M, double tol_rank, std::vector<double>& sv_out) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(M);
  const auto& sv = svd.singularValues();
  sv_out.assign(sv.data(), sv.data() + sv.size());
  if (sv.size() == 0) return 0;
  double smax = sv(0);
  if (smax == 0.0) return 0;
  int r = 0;
  for (int i = 0; i < sv.size(); ++i)
    if (sv(i) > tol_rank * smax) ++r;
  return r;
}

RankReport run_rank_check(const MorseFamily& f, const std::vector<Binding>& points,
                          const std::vector<Expr>& row_fns, const std::vector<VarId>& col_vars,
                          const std::string& condition, double tol_rank, double tol_crit,
                          int jobs) {
  RankReport rep;
  rep.condition = condition;
  rep.required_rank = static_cast<int>(row_fns.size());
  rep.rows = static_cast<int>(row_fns.size());
  rep.cols = static_cast<int>(col_vars.size());
  rep.tol_rank = tol_rank;
  rep.tol_crit = tol_crit;
  if (points.empty()) throw RankCheckError("rank check needs at least one point");

  auto J = jacobian(row_fns, col_vars);
  rep.points.resize(points.size());

  auto work = [&](size_t begin, size_t end) {
    for (size_t i = begin; i < end; ++i) {
      RankPoint rp;
      rp.point = points[i];
      rp.residual = critical_residual(f, points[i]);
      for (double r : rp.residual) {
        if (std::abs(r) > tol_crit)
          throw RankCheckError("point " + std::to_string(i + 1) +
                               " is off the critical set (|residual| = " + std::to_string(r) +
                               " > " + std::to_string(tol_crit) + ")");
      }
      Eigen::MatrixXd M(rep.rows, rep.cols);
      for (int r = 0; r < rep.rows; ++r)
        for (int c = 0; c < rep.cols; ++c) M(r, c) = evaluate(J[r][c], points[i]);
      rp.rank = numeric_rank(M, tol_rank, rp.singular_values);
      rep.points[i] = std::move(rp);
    }
  };

  int workers = std::max(1, jobs);
  if (workers == 1 || points.size() < 2) {
    work(0, points.size());
  } else {
    workers = std::min<int>(workers, static_cast<int>(points.size()));
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(workers);
    size_t chunk = (points.size() + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
      size_t begin = w * chunk;
      size_t end = std::min(points.size(), begin + chunk);
      threads.emplace_back([&, w, begin, end] {
        try {
          work(begin, end);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : threads) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  rep.pass = true;
  for (const auto& rp : rep.points)
    if (rp.rank != rep.required_rank) rep.pass = false;
  return rep;
}

}  // namespace

RankReport check_morse_rank(const MorseFamily& f, const std::vector<Binding>& points,
                            double tol_rank, double tol_crit, int jobs) {
  if (f.k() == 0) throw RankCheckError("the family has no parameters; nothing to check");
  return run_rank_check(f, points, f.dK_dlam, f.all_vars(), "morse", tol_rank, tol_crit, jobs);
}

RankReport check_restricted_rank(const MorseFamily& f, const std::vector<Binding>& points,
                                 double tol_rank, double tol_crit, int jobs) {
  if (f.m() == 0) throw RankCheckError("the family has no input ports; nothing to check");
  std::vector<VarId> cols = f.state_vars;
  cols.insert(cols.end(), f.port_vars.begin(), f.port_vars.end());
  return run_rank_check(f, points, f.dK_dnu, cols, "restricted", tol_rank, tol_crit, jobs);
}

Expr tilde_H(const MorseFamily& f) {
  Expr h = f.K;
  for (size_t j = 0; j < f.port_vars.size(); ++j)
    h = h - f.dK_dnu[j] * Expr::variable(f.port_vars[j]);
  if (f.port_vars.empty()) return h;
  // If h is provably independent of a port, pin that port to zero so the
  // returned expression is literally free of it.
  std::map<std::string, Expr> pin;
  for (const auto& nu : f.port_vars) {
    if (!depends_on(h, nu.name)) continue;
    if (is_symbolically_zero(differentiate(h, nu))) pin.emplace(nu.name, Expr::constant(0));
  }
  if (!pin.empty()) h = substitute(h, pin);
  return h;
}

std::vector<Binding> newton_sample(const std::vector<Expr>& eqs, const std::vector<VarId>& coords,
                                   const SampleBox& box, const Binding& params, int count,
                                   std::mt19937_64& rng, double tol, int max_newton) {
  auto J = jacobian(eqs, coords);

  std::vector<Binding> accepted;
  const int max_attempts = 40 * std::max(count, 1);
  for (int attempt = 0; attempt < max_attempts && (int)accepted.size() < count; ++attempt) {
    Binding b = params;
    for (const auto& v : coords) {
      auto [lo, hi] = box.box_for(v.name);
      b.set(v.name, lo + (hi - lo) * uniform01(rng));
    }
    if (eqs.empty()) {
      accepted.push_back(std::move(b));
      continue;
    }
    bool ok = false;
    try {
      for (int it = 0; it < max_newton; ++it) {
        std::vector<double> r = eval_all(eqs, b);
        double worst = 0;
        for (double v : r) worst = std::max(worst, std::abs(v));
        if (worst <= tol) {
          ok = true;
          break;
        }
        Eigen::MatrixXd Jm(eqs.size(), coords.size());
        Eigen::VectorXd rv(eqs.size());
        for (size_t i = 0; i < eqs.size(); ++i) {
          rv(i) = r[i];
          for (size_t c = 0; c < coords.size(); ++c) Jm(i, c) = evaluate(J[i][c], b);
        }
        Eigen::VectorXd step =
            Jm.completeOrthogonalDecomposition().solve(-rv);
        for (size_t c = 0; c < coords.size(); ++c)
          b.set(coords[c].name, b.find(coords[c].name).value() + step(c));
      }
    } catch (const EvalError&) {
      continue;  // seed wandered outside the domain of the expressions
    }
    if (ok) accepted.push_back(std::move(b));
  }
  if ((int)accepted.size() < count)
    throw SamplingError("found only " + std::to_string(accepted.size()) + " of " +
                        std::to_string(count) +
                        " requested points on the zero set; widen the sampling box");
  return accepted;
}

std::vector<Binding> sample_on_shell(const MorseFamily& f, const SampleBox& box,
                                     const Binding& params, int count, std::uint64_t seed,
                                     double tol_crit, int max_newton) {
  std::mt19937_64 rng(seed);
  return newton_sample(f.dK_dlam, f.all_vars(), box, params, count, rng, tol_crit, max_newton);
}

// ---------------------------------------------------------------------------
// Report rendering
// ---------------------------------------------------------------------------

std::string RankReport::table() const {
  std::ostringstream os;
  os << (condition == "morse" ? "full-rank condition" : "restricted input-rank condition");
  os << " (" << rows << "x" << cols << ", required rank " << required_rank
     << "): " << (pass ? "PASS" : "FAIL") << "\n";
  if (sampled) os << "  sampled points, rng seed " << rng_seed << "\n";
  for (size_t i = 0; i < points.size(); ++i) {
    const auto& rp = points[i];
    os << "  point " << (i + 1) << ": rank " << rp.rank << ", singular values [";
    for (size_t j = 0; j < rp.singular_values.size(); ++j) {
      if (j) os << ", ";
      os << rp.singular_values[j];
    }
    os << "]\n";
  }
  return os.str();
}

std::string RankReport::to_json_string() const {
  nlohmann::json j;
  j["condition"] = condition;
  j["required_rank"] = required_rank;
  j["rows"] = rows;
  j["cols"] = cols;
  j["pass"] = pass;
  j["tol_rank"] = tol_rank;
  j["tol_crit"] = tol_crit;
  j["sampled"] = sampled;
  j["rng_seed"] = rng_seed;
  j["points"] = nlohmann::json::array();
  for (const auto& rp : points) {
    nlohmann::json pj;
    for (const auto& [name, val] : rp.point.entries()) pj["coords"][name] = val;
    pj["singular_values"] = rp.singular_values;
    pj["rank"] = rp.rank;
    pj["residual"] = rp.residual;
    j["points"].push_back(std::move(pj));
  }
  return j.dump(2);
}

}  // namespace phs
