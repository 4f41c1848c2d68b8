"""A law of large numbers for a regularized Coulomb field in two dimensions.

For i.i.d. particles X_j ~ rho the empirical field 1/N sum_j psi(X_i - X_j)
approaches psi * rho.  The squared error at a particle decays like 1/N even
though psi = grad Phi^eta sharpens as eta = N^(-beta/d) shrinks.
"""

import numpy as np

from pmechaos.diagnostics import rate_fit
from pmechaos.kernels import CoulombSpec, ScalingLaw
from pmechaos.particles import InitialLawSpec, convolved_field, init_iid, lln_statistic
from pmechaos.seeds import SeedLineage

law = ScalingLaw(0.2, 2, "coulomb")
box, m = 12.8, 256
initial = InitialLawSpec(std=1.0)
rho = initial.density(m, box, 2)

rows = []
for n in (500, 1000, 2000, 4000):
    psi = CoulombSpec(2, 1, law.eta(n))
    field = convolved_field(psi, rho)
    sq = []
    for r in range(20):
        ens = init_iid(n, 2, initial, SeedLineage(5, replica=r, study="demo", n=n), box)
        h = lln_statistic(ens, psi, rho, probes=np.arange(100), field=field)
        sq.append(np.mean(h**2))
    rows.append((n, np.mean(sq)))
    print(f"N={n:>5}  eta={psi.bandwidth:.3f}  E[h^2] = {rows[-1][1]:.3e}")
print(f"\nslope in N: {rate_fit(rows).slope:.2f} (expected -1)")
