"""The mollified mean-field equation approaches the porous-medium limit.

With a repulsive interaction of range eta the density solves a nonlocal
equation.  As eta shrinks it approaches the viscous porous-medium equation
d_t rho = 1/2 Lap rho + 1/2 div(rho grad rho).  The L1 gap should shrink like
eta^2 and the relative entropy like eta^4.
"""

from pmechaos.diagnostics import l1_distance, rate_fit, relative_entropy
from pmechaos.grid import gaussian_density
from pmechaos.kernels import MollifierSpec
from pmechaos.pde import PdeConfig, solve_intermediate, solve_vpme, stable_dt

rho0 = gaussian_density(1024, 12.8, 1, 1.0)
t_end = 0.5
dt = stable_dt(rho0, lock=0.05)
limit = solve_vpme(rho0, PdeConfig(dt, t_end)).final
print(f"porous-medium solution at t={t_end}: peak {limit.values.max():.4f}, mass {limit.mass():.10f}")

l1, ent = [], []
print("\n  eta    L1 gap      relative entropy")
for eta in (0.4, 0.2, 0.1, 0.05):
    sol = solve_intermediate(rho0, PdeConfig(dt, t_end, "intermediate", MollifierSpec(1, eta))).final
    l1.append((eta, l1_distance(sol, limit)))
    ent.append((eta, relative_entropy(sol, limit)))
    print(f"  {eta:<5}  {l1[-1][1]:.3e}   {ent[-1][1]:.3e}")
print(f"\nL1 rate in eta: {rate_fit(l1).slope:.2f}; entropy rate: {rate_fit(ent).slope:.2f}")
