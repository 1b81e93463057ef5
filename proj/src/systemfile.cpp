#include "phs/systemfile.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

namespace phs {

namespace {

[[noreturn]] void fail(const std::string& name, int line, const std::string& msg) {
  throw FileError(name + ":" + std::to_string(line) + ": " + msg);
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

bool parse_double(const std::string& s, double& out) {
  const char* c = s.c_str();
  char* end = nullptr;
  out = std::strtod(c, &end);
  return end != c && *end == '\0';
}

bool valid_name(const std::string& s) {
  if (s.empty() || !(std::isalpha(static_cast<unsigned char>(s[0])) || s[0] == '_')) return false;
  for (char c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_')) return false;
  return true;
}

struct Line {
  int no = 0;
  std::string text;
};

struct Section {
  bool present = false;
  int no = 0;
  std::vector<Line> lines;
};

struct KeyValue {
  std::string key, value;
  int no = 0;
};

std::vector<KeyValue> key_values(const std::string& name, const Section& sec) {
  std::vector<KeyValue> out;
  for (const auto& ln : sec.lines) {
    size_t eq = ln.text.find('=');
    if (eq == std::string::npos) fail(name, ln.no, "expected key = value");
    out.push_back({trim(ln.text.substr(0, eq)), trim(ln.text.substr(eq + 1)), ln.no});
  }
  return out;
}

Signal parse_signal(const std::string& name, int no, const std::string& text) {
  auto toks = split_ws(text);
  if (toks.empty()) fail(name, no, "empty signal");
  const std::string& kind = toks[0];
  auto want = [&](size_t n, const char* usage) {
    if (toks.size() != n + 1) fail(name, no, std::string("signal usage: ") + usage);
  };
  auto num = [&](size_t i) {
    double v;
    if (!parse_double(toks[i], v)) fail(name, no, "bad number '" + toks[i] + "' in signal");
    return v;
  };
  if (kind == "const") {
    want(1, "const <value>");
    return Signal::constant(num(1));
  }
  if (kind == "sin") {
    want(3, "sin <amplitude> <omega> <phase>");
    return Signal::sine(num(1), num(2), num(3));
  }
  if (kind == "step") {
    want(3, "step <t0> <before> <after>");
    return Signal::step(num(1), num(2), num(3));
  }
  if (kind == "table") {
    if (toks.size() < 3) fail(name, no, "signal usage: table <t>:<v> <t>:<v> ...");
    std::vector<double> ts, vs;
    for (size_t i = 1; i < toks.size(); ++i) {
      size_t colon = toks[i].find(':');
      double t, v;
      if (colon == std::string::npos || !parse_double(toks[i].substr(0, colon), t) ||
          !parse_double(toks[i].substr(colon + 1), v))
        fail(name, no, "bad table node '" + toks[i] + "', want <t>:<v>");
      ts.push_back(t);
      vs.push_back(v);
    }
    try {
      return Signal::table(std::move(ts), std::move(vs));
    } catch (const DynamicsError& e) {
      fail(name, no, e.what());
    }
  }
  fail(name, no, "unknown signal '" + kind + "' (const, sin, step, table)");
}

std::vector<std::vector<double>> parse_matrix(const std::string& name, int no,
                                              const std::string& text) {
  std::vector<std::vector<double>> m;
  std::string row;
  std::istringstream in(text);
  while (std::getline(in, row, ';')) {
    std::vector<double> r;
    for (const auto& tok : split_ws(row)) {
      double v;
      if (!parse_double(tok, v)) fail(name, no, "bad matrix entry '" + tok + "'");
      r.push_back(v);
    }
    if (r.empty()) fail(name, no, "empty matrix row");
    m.push_back(std::move(r));
  }
  if (m.empty()) fail(name, no, "empty matrix");
  return m;
}

}  // namespace

SystemDescription parse_system_text(const std::string& text, const std::string& name,
                                    const BuildOptions& opt) {
  static const std::set<std::string> known = {"variables", "parameters", "lagrangian",
                                              "hamiltonian", "constraints", "inputs",
                                              "dirac",     "signals",    "simulation"};
  std::map<std::string, Section> secs;
  {
    std::istringstream in(text);
    std::string raw, cur;
    int no = 0;
    while (std::getline(in, raw)) {
      ++no;
      size_t hash = raw.find('#');
      if (hash != std::string::npos) raw = raw.substr(0, hash);
      std::string line = trim(raw);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']') fail(name, no, "unterminated section header");
        std::string s = trim(line.substr(1, line.size() - 2));
        if (!known.count(s)) fail(name, no, "unknown section [" + s + "]");
        if (secs[s].present) fail(name, no, "section [" + s + "] appears twice");
        secs[s].present = true;
        secs[s].no = no;
        cur = s;
      } else {
        if (cur.empty()) fail(name, no, "content before any section header");
        secs[cur].lines.push_back({no, line});
      }
    }
  }

  SystemDescription d;
  d.name = name;
  d.options = opt;

  if (secs["lagrangian"].present == secs["hamiltonian"].present)
    fail(name, secs["lagrangian"].present ? secs["hamiltonian"].no : 1,
         "a system file needs exactly one of [lagrangian] or [hamiltonian]");

  // --- declarations ---------------------------------------------------------
  std::set<std::string> taken;
  auto declare = [&](std::vector<VarId>& dst, const std::string& nm, VarKind kind, int no) {
    if (!valid_name(nm)) fail(name, no, "bad name '" + nm + "'");
    if (taken.count(nm)) fail(name, no, "name '" + nm + "' is declared twice");
    taken.insert(nm);
    dst.push_back({nm, kind, static_cast<int>(dst.size())});
  };
  for (const auto& ln : secs["variables"].lines) {
    auto toks = split_ws(ln.text);
    if (toks.size() != 2 && toks.size() != 4)
      fail(name, ln.no, "expected: <name> <kind> [<lo> <hi>]");
    const std::string& kind = toks[1];
    if (kind == "position")
      declare(d.positions, toks[0], VarKind::state, ln.no);
    else if (kind == "velocity")
      declare(d.velocities, toks[0], VarKind::state, ln.no);
    else if (kind == "momentum")
      declare(d.momenta, toks[0], VarKind::state, ln.no);
    else if (kind == "input")
      declare(d.inputs, toks[0], VarKind::input, ln.no);
    else if (kind == "multiplier")
      declare(d.multipliers, toks[0], VarKind::multiplier, ln.no);
    else
      fail(name, ln.no,
           "unknown kind '" + kind + "' (position, velocity, momentum, input, multiplier)");
    if (toks.size() == 4) {
      double lo, hi;
      if (!parse_double(toks[2], lo) || !parse_double(toks[3], hi) || !(lo < hi))
        fail(name, ln.no, "box bounds must be two numbers with lo < hi");
      d.box.set(toks[0], lo, hi);
    }
  }

  std::vector<VarId> declared;
  for (const auto* group : {&d.positions, &d.velocities, &d.momenta, &d.inputs, &d.multipliers})
    declared.insert(declared.end(), group->begin(), group->end());
  for (const auto& kv : key_values(name, secs["parameters"])) {
    if (!valid_name(kv.key)) fail(name, kv.no, "bad parameter name '" + kv.key + "'");
    if (taken.count(kv.key)) fail(name, kv.no, "name '" + kv.key + "' is declared twice");
    taken.insert(kv.key);
    double v;
    if (!parse_double(kv.value, v)) fail(name, kv.no, "bad parameter value '" + kv.value + "'");
    d.parameters.set(kv.key, v);
    declared.push_back({kv.key, VarKind::parameter, static_cast<int>(declared.size())});
  }

  auto parse_here = [&](const std::string& src, int no) -> Expr {
    try {
      return parse_expr(src, declared);
    } catch (const ParseError& e) {
      fail(name, no, e.what());
    }
  };

  // --- energy sections ------------------------------------------------------
  Expr energy = Expr::constant(0), hc = Expr::constant(0);
  bool have_hc = false;
  if (secs["lagrangian"].present) {
    bool have_l = false;
    for (const auto& kv : key_values(name, secs["lagrangian"])) {
      if (kv.key == "L") {
        energy = parse_here(kv.value, kv.no);
        have_l = true;
      } else if (kv.key == "Hc") {
        hc = parse_here(kv.value, kv.no);
        have_hc = true;
      } else {
        fail(name, kv.no, "unknown key '" + kv.key + "' in [lagrangian] (L, Hc)");
      }
    }
    if (!have_l) fail(name, secs["lagrangian"].no, "missing L = <expression>");
  } else {
    bool have_h = false;
    for (const auto& kv : key_values(name, secs["hamiltonian"])) {
      if (kv.key == "H") {
        energy = parse_here(kv.value, kv.no);
        have_h = true;
      } else {
        fail(name, kv.no, "unknown key '" + kv.key + "' in [hamiltonian] (H)");
      }
    }
    if (!have_h) fail(name, secs["hamiltonian"].no, "missing H = <expression>");
  }

  std::vector<Expr> constraint_exprs;
  for (const auto& ln : secs["constraints"].lines)
    constraint_exprs.push_back(parse_here(ln.text, ln.no));

  // --- input attachments ----------------------------------------------------
  std::vector<std::pair<VarId, Expr>> attachments;
  std::set<std::string> covered;
  for (const auto& ln : secs["inputs"].lines) {
    size_t eq = ln.text.find('=');
    std::string nm = trim(eq == std::string::npos ? ln.text.substr(0, ln.text.find(' '))
                                                  : ln.text.substr(0, eq));
    auto it = std::find_if(d.inputs.begin(), d.inputs.end(),
                           [&nm](const VarId& v) { return v.name == nm; });
    if (it == d.inputs.end()) fail(name, ln.no, "'" + nm + "' is not a declared input");
    if (covered.count(nm)) fail(name, ln.no, "input '" + nm + "' is listed twice");
    covered.insert(nm);
    if (eq != std::string::npos) {
      attachments.emplace_back(*it, parse_here(trim(ln.text.substr(eq + 1)), ln.no));
    } else {
      auto toks = split_ws(ln.text);
      if (toks.size() != 2 || toks[1] != "nonlinear")
        fail(name, ln.no, "expected '<input> = <expression>' or '<input> nonlinear'");
    }
  }

  // --- dirac structure ------------------------------------------------------
  d.dirac = DiracStructure::canonical_symplectic();
  if (secs["dirac"].present) {
    const auto& lines = secs["dirac"].lines;
    bool is_canonical = lines.size() == 1 && trim(lines[0].text) == "canonical";
    if (!is_canonical) {
      std::vector<std::vector<double>> J, B;
      for (const auto& kv : key_values(name, secs["dirac"])) {
        if (kv.key == "J")
          J = parse_matrix(name, kv.no, kv.value);
        else if (kv.key == "B")
          B = parse_matrix(name, kv.no, kv.value);
        else
          fail(name, kv.no, "unknown key '" + kv.key + "' in [dirac] (canonical, J, B)");
      }
      if (J.empty()) fail(name, secs["dirac"].no, "[dirac] needs 'canonical' or a J matrix");
      try {
        d.dirac = DiracStructure::constant(std::move(J), std::move(B));
      } catch (const DynamicsError& e) {
        fail(name, secs["dirac"].no, e.what());
      }
    }
  }

  // --- signals --------------------------------------------------------------
  std::map<int, Signal> efforts_by_index;
  for (const auto& kv : key_values(name, secs["signals"])) {
    Signal sig = parse_signal(name, kv.no, kv.value);
    auto is_named = [&kv](const VarId& v) { return v.name == kv.key; };
    if (std::any_of(d.multipliers.begin(), d.multipliers.end(), is_named)) {
      d.gauge_signals.emplace(kv.key, std::move(sig));
    } else if (std::any_of(d.inputs.begin(), d.inputs.end(), is_named)) {
      d.input_signals.emplace(kv.key, std::move(sig));
    } else if (kv.key.rfind("effort_", 0) == 0) {
      int idx;
      try {
        idx = std::stoi(kv.key.substr(7));
      } catch (...) {
        fail(name, kv.no, "bad effort channel '" + kv.key + "'");
      }
      if (idx < 0) fail(name, kv.no, "bad effort channel '" + kv.key + "'");
      efforts_by_index.emplace(idx, std::move(sig));
    } else {
      fail(name, kv.no, "'" + kv.key + "' is not a multiplier, input, or effort_<i> channel");
    }
  }
  if (!efforts_by_index.empty()) {
    d.effort_signals.assign(efforts_by_index.rbegin()->first + 1, Signal::constant(0));
    for (auto& [idx, sig] : efforts_by_index) d.effort_signals[idx] = std::move(sig);
  }

  // --- simulation -----------------------------------------------------------
  if (secs["simulation"].present) {
    SimulationSpec sim;
    bool seen[4] = {false, false, false, false};
    for (const auto& kv : key_values(name, secs["simulation"])) {
      if (kv.key == "t0" || kv.key == "t1" || kv.key == "dt") {
        double v;
        if (!parse_double(kv.value, v)) fail(name, kv.no, "bad number '" + kv.value + "'");
        if (kv.key == "t0") sim.t0 = v, seen[0] = true;
        if (kv.key == "t1") sim.t1 = v, seen[1] = true;
        if (kv.key == "dt") sim.dt = v, seen[2] = true;
      } else if (kv.key == "x0") {
        for (const auto& tok : split_ws(kv.value)) {
          double v;
          if (!parse_double(tok, v)) fail(name, kv.no, "bad number '" + tok + "' in x0");
          sim.x0.push_back(v);
        }
        seen[3] = !sim.x0.empty();
      } else {
        fail(name, kv.no, "unknown key '" + kv.key + "' in [simulation] (t0, t1, dt, x0)");
      }
    }
    const char* keys[] = {"t0", "t1", "dt", "x0"};
    for (int i = 0; i < 4; ++i)
      if (!seen[i])
        fail(name, secs["simulation"].no, std::string("[simulation] is missing ") + keys[i]);
    d.simulation = std::move(sim);
  }

  // --- build the family -----------------------------------------------------
  Expr with_ports = energy;
  for (const auto& [var, g] : attachments) with_ports = with_ports + Expr::variable(var) * g;

  DiracBergmannOptions dbopt;
  dbopt.box = d.box;
  dbopt.params = d.parameters;
  dbopt.extra_vars = d.inputs;
  dbopt.multiplier_names = d.multipliers;
  dbopt.tol_surface = opt.tol_surface;
  dbopt.seed = opt.seed;

  if (secs["lagrangian"].present) {
    if (d.positions.empty() || d.positions.size() != d.velocities.size() ||
        d.positions.size() != d.momenta.size())
      fail(name, secs["variables"].present ? secs["variables"].no : 1,
           "a Lagrangian file needs matching position, velocity, and momentum declarations");
    LagrangianSpec spec{d.positions, d.velocities, energy};
    LegendreOptions lopt;
    lopt.box = d.box;
    lopt.params = d.parameters;
    lopt.extra_vars = d.inputs;
    lopt.seed = opt.seed;
    lopt.tol_rank = opt.tol_rank;
    lopt.tol_surface = opt.tol_surface;
    LegendreReport rep = legendre(spec, constraint_exprs, d.momenta, lopt);
    if (static_cast<size_t>(rep.N) != constraint_exprs.size())
      fail(name, secs["constraints"].present ? secs["constraints"].no : 1,
           "the Legendre map leaves N = " + std::to_string(rep.N) +
               " primary constraints, but " + std::to_string(constraint_exprs.size()) +
               " were supplied");

    Expr H = Expr::constant(0);
    if (rep.E_is_zero) {
      // Canonical energy vanishes identically; nothing to carry over.
    } else if (!have_hc) {
      fail(name, secs["lagrangian"].no,
           "the energy p*v - L does not vanish identically; supply Hc = <expression> in (q, p)");
    } else {
      // The user's Hc must agree with the energy on the image of the
      // Legendre map.
      for (const auto& sample : rep.samples) {
        Binding b = sample;
        for (size_t i = 0; i < d.momenta.size(); ++i)
          b.set(d.momenta[i], evaluate(rep.p_hat[i], sample));
        double diff = std::abs(evaluate(hc, b) - evaluate(rep.E, sample));
        if (diff > opt.tol_surface)
          fail(name, secs["lagrangian"].no,
               "Hc disagrees with the energy p*v - L on the Legendre image (difference " +
                   std::to_string(diff) + ")");
      }
      H = hc;
    }
    for (const auto& [var, g] : attachments) H = H + Expr::variable(var) * g;

    auto io = assemble_constrained_io(H, constraint_exprs, d.positions, d.momenta, d.inputs,
                                      dbopt);
    d.legendre_report = std::move(rep);
    d.reduction = std::move(io.cs);
    d.family = std::move(io.family);
  } else if (!constraint_exprs.empty()) {
    if (d.positions.empty() || d.positions.size() != d.momenta.size())
      fail(name, secs["variables"].present ? secs["variables"].no : 1,
           "constraint reduction needs matching position and momentum declarations");
    if (!d.velocities.empty())
      fail(name, secs["variables"].no, "velocities belong to Lagrangian files");
    auto io = assemble_constrained_io(with_ports, constraint_exprs, d.positions, d.momenta,
                                      d.inputs, dbopt);
    d.reduction = std::move(io.cs);
    d.family = std::move(io.family);
  } else {
    // Direct family: the Hamiltonian text is the generating function, with
    // declared multipliers as its parameters.
    if (!d.velocities.empty())
      fail(name, secs["variables"].no, "velocities belong to Lagrangian files");
    std::vector<VarId> states;
    for (const auto& v : d.positions) states.push_back(v);
    for (const auto& v : d.momenta) states.push_back(v);
    if (states.empty())
      fail(name, secs["variables"].present ? secs["variables"].no : 1,
           "declare at least one position or momentum");
    for (size_t i = 0; i < states.size(); ++i) {
      states[i].kind = VarKind::state;
      states[i].index = static_cast<int>(i);
    }
    try {
      d.family = MorseFamily::make(states, d.inputs, d.multipliers, with_ports);
    } catch (const std::invalid_argument& e) {
      fail(name, 1, e.what());
    }
  }

  // Every declared input must do something: either attach linearly or appear
  // inside the energy expressions.
  for (const auto& u : d.inputs)
    if (!covered.count(u.name) && !depends_on(d.family.K, u.name))
      fail(name, secs["variables"].no,
           "input '" + u.name + "' is declared but never used; attach it in [inputs]");

  if (d.simulation && d.simulation->x0.size() != d.family.n())
    fail(name, secs["simulation"].no,
         "x0 has " + std::to_string(d.simulation->x0.size()) + " entries, the system has " +
             std::to_string(d.family.n()) + " states");

  return d;
}

SystemDescription load_system_file(const std::string& path, const BuildOptions& opt) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_system_text(buf.str(), path, opt);
}

PHSystem SystemDescription::make_system() const {
  return PHSystem::make(family, reduction, dirac, gauge_signals, input_signals, effort_signals,
                        parameters);
}

std::vector<Binding> SystemDescription::rank_points(int count, std::uint64_t seed) const {
  if (family.k() > 0) return sample_on_shell(family, box, parameters, count, seed, options.tol_crit);
  std::mt19937_64 rng(seed);
  return newton_sample({}, family.all_vars(), box, parameters, count, rng, options.tol_crit);
}

}  // namespace phs
