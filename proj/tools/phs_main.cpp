// phs: build, check, reduce, simulate, and audit port-Hamiltonian systems
// described by .phs files. See README.md for the file format and the
// exit-code contract.
#include <json.hpp>

#include <atomic>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "phs/systemfile.hpp"

namespace {

using namespace phs;
using nlohmann::json;

constexpr int kExitUsage = 1;
constexpr int kExitCheckFail = 2;
constexpr int kExitInconsistent = 3;
constexpr int kExitDynamics = 4;

struct Options {
  bool json_out = false;
  std::uint64_t seed = 0;
  double tol_rank = 1e-9;
  double tol_crit = 1e-10;
  double tol_surface = 1e-8;
  int jobs = 1;
  int samples = 8;
};

BuildOptions build_options(const Options& o) {
  BuildOptions b;
  b.seed = o.seed;
  b.tol_rank = o.tol_rank;
  b.tol_crit = o.tol_crit;
  b.tol_surface = o.tol_surface;
  b.samples = o.samples;
  return b;
}

// Exit-code mapping shared by all commands. Malformed files, expressions,
// and inconclusive classifications are usage-level failures; an
// inconsistent constraint set and runtime dynamics failures have their
// own codes so scripts can tell them apart.
template <typename Body>
int guarded(Body body) {
  try {
    return body();
  } catch (const InconsistentSystemError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInconsistent;
  } catch (const DynamicsError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDynamics;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}

std::string fmt(double v, const char* spec = "%.3e") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

double max_abs(const std::vector<double>& xs) {
  double m = 0;
  for (double x : xs)
    if (std::abs(x) > m) m = std::abs(x);
  return m;
}

// ---- check -----------------------------------------------------------------

json vacuous_report(const std::string& reason) {
  json j;
  j["pass"] = true;
  j["vacuous"] = true;
  j["reason"] = reason;
  return j;
}

int cmd_check(const std::string& path, const Options& o) {
  SystemDescription d = load_system_file(path, build_options(o));
  std::vector<Binding> pts = d.rank_points(static_cast<size_t>(o.samples), o.seed);

  std::optional<RankReport> morse, restricted;
  if (d.family.k() > 0)
    morse = check_morse_rank(d.family, pts, o.tol_rank, o.tol_crit, o.jobs);
  if (d.family.m() > 0)
    restricted = check_restricted_rank(d.family, pts, o.tol_rank, o.tol_crit, o.jobs);
  for (auto* rep : {&morse, &restricted})
    if (*rep) {
      (*rep)->sampled = true;
      (*rep)->rng_seed = o.seed;
    }
  bool pass = (!morse || morse->pass) && (!restricted || restricted->pass);

  if (o.json_out) {
    json j;
    j["file"] = path;
    j["states"] = d.family.n();
    j["ports"] = d.family.m();
    j["multiplier_parameters"] = d.family.k();
    j["morse"] = morse ? json::parse(morse->to_json_string())
                       : vacuous_report("no multiplier parameters; nothing to check");
    j["restricted"] = restricted ? json::parse(restricted->to_json_string())
                                 : vacuous_report("no input ports; nothing to check");
    j["pass"] = pass;
    std::cout << j.dump(2) << "\n";
  } else {
    std::cout << path << ": " << d.family.n() << " state(s), " << d.family.m() << " port(s), "
              << d.family.k() << " multiplier parameter(s)\n";
    if (morse)
      std::cout << morse->table();
    else
      std::cout << "full-rank condition: PASS (vacuous; no multiplier parameters)\n";
    if (restricted)
      std::cout << restricted->table();
    else
      std::cout << "restricted input-rank condition: PASS (vacuous; no input ports)\n";
    std::cout << "check " << (pass ? "PASS" : "FAIL") << "\n";
  }
  return pass ? 0 : kExitCheckFail;
}

// ---- reduce ----------------------------------------------------------------

int cmd_reduce(const std::string& path, const Options& o) {
  SystemDescription d = load_system_file(path, build_options(o));
  if (o.json_out) {
    json j;
    j["file"] = path;
    if (d.legendre_report) {
      const auto& r = *d.legendre_report;
      j["legendre"] = {{"rank_W", r.rank_W},
                       {"N", r.N},
                       {"E", r.E_is_zero ? "0" : r.E.str()}};
    } else {
      j["legendre"] = nullptr;
    }
    if (d.reduction) {
      j["reduction"] = json::parse(d.reduction->to_json_string());
    } else {
      j["reduction"] = nullptr;
      j["family"] = {{"states", d.family.n()},
                     {"ports", d.family.m()},
                     {"multiplier_parameters", d.family.k()},
                     {"K", d.family.K.str()}};
    }
    std::cout << j.dump(2) << "\n";
  } else {
    if (d.legendre_report) {
      const auto& r = *d.legendre_report;
      std::cout << "Legendre map: rank W = " << r.rank_W << ", N = " << r.N
                << " primary constraint(s), E = " << (r.E_is_zero ? "0" : r.E.str()) << "\n";
    }
    if (d.reduction) {
      std::cout << d.reduction->table();
    } else {
      std::cout << "no constraint reduction; the generating family is used directly\n"
                << "K = " << d.family.K.str() << "\n";
    }
  }
  return 0;
}

// ---- simulate --------------------------------------------------------------

struct SimResult {
  std::string text;
  json report;
  std::string error;
  int code = 0;
};

SimResult simulate_one(const std::string& path, const std::string& out, const Options& o) {
  SimResult r;
  try {
    SystemDescription d = load_system_file(path, build_options(o));
    if (!d.simulation)
      throw FileError(path + ": no [simulation] section; supply t0, t1, dt, x0");
    PHSystem sys = d.make_system();
    Trajectory traj =
        integrate(sys, d.simulation->x0, d.simulation->t0, d.simulation->t1, d.simulation->dt);
    traj.write_csv(out);

    double closed = max_abs(traj.res_closed);
    double eport = max_abs(traj.res_energyport);
    double constr = max_abs(traj.res_constraint_max);
    std::ostringstream os;
    os << path << ": " << traj.times.size() << " row(s) -> " << out
       << "; max residuals: closed " << fmt(closed) << ", energy-port " << fmt(eport)
       << ", constraint " << fmt(constr);
    r.text = os.str();
    r.report = {{"file", path},
                {"out", out},
                {"rows", traj.times.size()},
                {"max_res_closed", closed},
                {"max_res_energyport", eport},
                {"max_res_constraint", constr}};
  } catch (const InconsistentSystemError& e) {
    r.error = e.what();
    r.code = kExitInconsistent;
  } catch (const DynamicsError& e) {
    r.error = e.what();
    r.code = kExitDynamics;
  } catch (const std::exception& e) {
    r.error = e.what();
    r.code = kExitUsage;
  }
  return r;
}

int cmd_simulate(const std::vector<std::string>& files, const std::string& out,
                 const Options& o) {
  namespace fs = std::filesystem;
  // One file: --out is the CSV path (unless it names a directory). Several
  // files: --out is a directory and each run writes <stem>.csv into it.
  std::vector<std::string> outs;
  if (files.size() == 1 && !fs::is_directory(out)) {
    outs.push_back(out);
  } else {
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) {
      std::cerr << "error: cannot create output directory '" << out << "': " << ec.message()
                << "\n";
      return kExitUsage;
    }
    for (const auto& f : files) outs.push_back((fs::path(out) / fs::path(f).stem()).string() + ".csv");
  }

  std::vector<SimResult> results(files.size());
  unsigned workers = std::min<size_t>(std::max(o.jobs, 1), files.size());
  if (workers <= 1) {
    for (size_t i = 0; i < files.size(); ++i) results[i] = simulate_one(files[i], outs[i], o);
  } else {
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (size_t i = next.fetch_add(1); i < files.size(); i = next.fetch_add(1))
          results[i] = simulate_one(files[i], outs[i], o);
      });
    for (auto& t : pool) t.join();
  }

  int code = 0;
  json all = json::array();
  for (const auto& r : results) {
    if (r.code != 0) {
      std::cerr << "error: " << r.error << "\n";
      code = std::max(code, r.code);
      continue;
    }
    if (o.json_out)
      all.push_back(r.report);
    else
      std::cout << r.text << "\n";
  }
  if (o.json_out) std::cout << (files.size() == 1 ? all[0].dump(2) : all.dump(2)) << "\n";
  return code;
}

// ---- audit -----------------------------------------------------------------

int cmd_audit(const std::string& path, const std::string& traj_path, const Options& o) {
  SystemDescription d = load_system_file(path, build_options(o));
  PHSystem sys = d.make_system();
  Trajectory traj = Trajectory::read_csv(traj_path);
  std::vector<PowerAudit> rows = audit_power(traj, sys);

  double worst_closed = 0, worst_tilde = 0, worst_io = 0, worst_dht = 0, worst_constr = 0;
  bool have_io = false;
  for (const auto& a : rows) {
    worst_closed = std::max(worst_closed, std::abs(a.closed_balance_residual));
    worst_tilde = std::max(worst_tilde, std::abs(a.tilde_balance_residual));
    worst_dht = std::max(worst_dht, std::abs(a.dHT_dt));
    worst_constr = std::max(worst_constr, a.constraint_residual_max);
    if (!std::isnan(a.io_balance_residual)) {
      have_io = true;
      worst_io = std::max(worst_io, std::abs(a.io_balance_residual));
    }
  }

  if (o.json_out) {
    json j;
    j["file"] = path;
    j["trajectory"] = traj_path;
    j["rows"] = rows.size();
    j["worst"] = {{"dHT_dt", worst_dht},
                  {"closed_balance", worst_closed},
                  {"tilde_balance", worst_tilde},
                  {"io_balance", have_io ? json(worst_io) : json()},
                  {"constraint", worst_constr}};
    std::cout << j.dump(2) << "\n";
  } else {
    std::cout << "t            dHT/dt        closed        tilde         io            "
                 "constraint\n";
    for (const auto& a : rows) {
      std::cout << fmt(a.t, "%-12g") << " " << fmt(a.dHT_dt, "%13.6e") << " "
                << fmt(a.closed_balance_residual, "%13.6e") << " "
                << fmt(a.tilde_balance_residual, "%13.6e") << " "
                << fmt(a.io_balance_residual, "%13.6e") << " "
                << fmt(a.constraint_residual_max, "%13.6e") << "\n";
    }
    std::cout << "worst case: dHT/dt " << fmt(worst_dht) << ", closed " << fmt(worst_closed)
              << ", tilde " << fmt(worst_tilde) << ", io "
              << (have_io ? fmt(worst_io) : std::string("n/a")) << ", constraint "
              << fmt(worst_constr) << "\n";
  }
  return 0;
}

// ---- examples --------------------------------------------------------------

int cmd_examples(const std::string& name, const std::string& dir) {
  const auto& all = builtin_examples();
  std::vector<std::pair<std::string, std::string>> chosen;
  if (name.empty()) {
    chosen.assign(all.begin(), all.end());
  } else {
    auto it = all.find(name);
    if (it == all.end()) {
      std::string known;
      for (const auto& [k, v] : all) known += (known.empty() ? "" : ", ") + k;
      throw FileError("unknown example '" + name + "' (available: " + known + ")");
    }
    chosen.push_back(*it);
  }
  for (const auto& [ex_name, text] : chosen) {
    std::filesystem::path p = dir.empty() ? std::filesystem::path(ex_name + ".phs")
                                          : std::filesystem::path(dir) / (ex_name + ".phs");
    std::ofstream out(p);
    out << text;
    out.flush();
    if (!out.good()) throw FileError("cannot write '" + p.string() + "'");
    std::cout << "wrote " << p.string() << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"port-Hamiltonian systems from Lagrangian and Hamiltonian descriptions"};
  app.require_subcommand(1);
  app.fallthrough();

  Options o;
  app.add_flag("--json", o.json_out, "emit machine-readable JSON reports");
  app.add_option("--seed", o.seed, "RNG seed for sampled check points (default 0)");
  app.add_option("--tol-rank", o.tol_rank, "relative singular-value cutoff for rank decisions");
  app.add_option("--tol-crit", o.tol_crit, "residual tolerance for on-shell sample points");
  app.add_option("--tol-surface", o.tol_surface,
                 "tolerance for constraint-surface and energy verification");
  app.add_option("--jobs", o.jobs, "threads for rank-check points and batched simulations")
      ->check(CLI::PositiveNumber);
  app.add_option("--samples", o.samples, "number of sampled check points (default 8)")
      ->check(CLI::PositiveNumber);

  std::string file, out, traj, name, dir;
  std::vector<std::string> files;

  CLI::App* check = app.add_subcommand("check", "verify the rank conditions of the family");
  check->add_option("file", file, "system file")->required();

  CLI::App* reduce =
      app.add_subcommand("reduce", "run the constraint algorithm and print the reduction");
  reduce->add_option("file", file, "system file")->required();

  CLI::App* simulate =
      app.add_subcommand("simulate", "integrate the constrained dynamics and write CSV");
  simulate->add_option("files", files, "system file(s) with a [simulation] section")->required();
  simulate->add_option("--out", out, "output CSV path (directory for several files)")->required();

  CLI::App* audit =
      app.add_subcommand("audit", "recompute power balances along a recorded trajectory");
  audit->add_option("file", file, "system file")->required();
  audit->add_option("--traj", traj, "trajectory CSV written by simulate")->required();

  CLI::App* examples = app.add_subcommand("examples", "write the built-in example files");
  examples->add_option("name", name, "example to write (all when omitted)");
  examples->add_option("--dir", dir, "output directory (default: current)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  if (*check) return guarded([&] { return cmd_check(file, o); });
  if (*reduce) return guarded([&] { return cmd_reduce(file, o); });
  if (*simulate) return guarded([&] { return cmd_simulate(files, out, o); });
  if (*audit) return guarded([&] { return cmd_audit(file, traj, o); });
  if (*examples) return guarded([&] { return cmd_examples(name, dir); });
  return kExitUsage;
}
