"""The Gaussian mollifier family and how fast mollification converges.

W^eta is a centred Gaussian of width eta and V^eta = W^eta * W^eta.  The
script checks the basic identities numerically and then shows that
smoothing a Gaussian density's gradient with V^eta costs O(eta^2).
"""

import numpy as np

from pmechaos.grid import gaussian_density
from pmechaos.kernels import MollifierSpec, ScalingLaw, self_convolution_error, verify_assumptions
from pmechaos.pde import mollification_error
from pmechaos.diagnostics import rate_fit

law = ScalingLaw(beta=0.15, dim=1)
print("eta(N) = N^(-beta/d) with beta = 0.15:")
for n in (500, 4000, 32000):
    print(f"  N = {n:>6}  eta = {law.eta(n):.4f}")

spec = MollifierSpec(1, 0.2)
print(f"\nV at the origin has zero gradient: grad V(0) = {spec.grad_v(np.zeros(1))}")
print(f"W * W against the closed form of V: max error {self_convolution_error(spec):.2e}")
rep = verify_assumptions(spec, law)
print(f"assumption report passes: {rep.passed}")

rho = gaussian_density(2048, 25.6, 1, 2.0)
obs = []
print("\n  eta    |V*grad rho - grad rho|_inf")
for eta in (0.4, 0.2, 0.1, 0.05):
    err = mollification_error(rho, MollifierSpec(1, eta))
    obs.append((eta, err))
    print(f"  {eta:<5}  {err:.3e}")
print(f"fitted power of eta: {rate_fit(obs).slope:.3f} (expected 2)")
