#include "phs/systemfile.hpp"

namespace phs {

// Shipped example files. Keep the texts stable: the examples command promises
// byte-identical output across runs.
const std::map<std::string, std::string>& builtin_examples() {
  static const std::map<std::string, std::string> files = {
      {"relativistic_free", R"(# Free relativistic particle. The reparameterization-invariant Lagrangian
# has a degenerate Legendre transform; the mass shell is its one primary
# constraint, stays first class, and leaves the multiplier as gauge freedom.

[variables]
q0 position
q1 position
v0 velocity -0.4 0.4
v1 velocity 0.8 1.6
p0 momentum -0.5 0.5
p1 momentum 0.8 1.6
lam multiplier 0.2 1.0

[parameters]
m = 1

[lagrangian]
L = m*sqrt(-v0^2 + v1^2)

[constraints]
-p0^2 + p1^2 - m^2

[dirac]
canonical

[signals]
lam = const 0.5

[simulation]
t0 = 0
t1 = 1
dt = 1e-3
x0 = 0 0 0 1
)"},
      {"relativistic_em", R"(# Charged relativistic particle. The electromagnetic potential enters the
# mass-shell constraint by minimal coupling, so the potentials become energy
# ports of the reduced family.

[variables]
q0 position
q1 position
p0 momentum -0.5 0.5
p1 momentum 0.8 1.6
A0 input -0.3 0.3
A1 input -0.3 0.3
lam multiplier 0.2 1.0

[parameters]
m = 1
e = 1

[hamiltonian]
H = 0

[constraints]
-(p0 - e*A0)^2 + (p1 - e*A1)^2 - m^2

[inputs]
A0 nonlinear
A1 nonlinear

[dirac]
canonical

[signals]
lam = const 0.5
A0 = const 0
A1 = const 0

[simulation]
t0 = 0
t1 = 1
dt = 1e-3
x0 = 0 0 0 1
)"},
      {"oscillator", R"(# Harmonic oscillator: closed canonical system, no constraints, no ports.
# The flow conserves H, so the closed power balance <e, xdot> vanishes.

[variables]
q position
p momentum

[hamiltonian]
H = (q^2 + p^2)/2

[dirac]
canonical

[simulation]
t0 = 0
t1 = 100
dt = 1e-3
x0 = 1 0
)"},
      {"second_class_toy", R"(# Pinned particle: holding q = 0 under H = p^2/2 forces the secondary
# constraint p = 0. Both end up second class and the multiplier is driven
# to zero, freezing the motion at the origin.

[variables]
q position
p momentum
lam multiplier

[hamiltonian]
H = p^2/2

[constraints]
q

[dirac]
canonical

[simulation]
t0 = 0
t1 = 1
dt = 1e-3
x0 = 0 0
)"},
      {"io_linear", R"(# Forced particle with one energy port attached linearly; the output is
# y = q, and the run obeys dH/dt + u*ydot = 0 along the flow.

[variables]
q position
p momentum
u input

[hamiltonian]
H = p^2/2

[inputs]
u = q

[dirac]
canonical

[signals]
u = sin 1 1 0

[simulation]
t0 = 0
t1 = 10
dt = 1e-3
x0 = 0 0
)"},
  };
  return files;
}

}  // namespace phs
