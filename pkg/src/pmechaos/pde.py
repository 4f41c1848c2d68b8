"""Periodic grid solvers for the local and nonlocal limit equations.

Three equations share one scheme:

* ``vpme``:          d_t rho = 1/2 div((1 + rho) grad rho)
* ``intermediate``:  d_t rho = 1/2 lap rho + 1/2 div(rho grad V^eta * rho)
* ``coulomb_drift``: d_t rho = sigma lap rho - div(rho b),  b = -(kappa/2) grad Phi^eta * rho

The linear diffusion is integrated exactly in Fourier space; the remaining
divergence term is an explicit conservative face-flux difference, so total
mass is preserved up to round-off at every step.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

import numpy as np

from . import grid as gr
from .errors import BlowUpError, ConfigurationError, SchemeError, ShapeError
from .grid import GridDensity
from .io import load_array, save_array
from .kernels import CoulombSpec, MollifierSpec

__all__ = [
    "EQUATIONS",
    "PdeConfig",
    "Solution",
    "Solver",
    "load_solution",
    "mollification_error",
    "save_solution",
    "solve",
    "solve_coulomb_drift",
    "solve_intermediate",
    "solve_vpme",
    "stable_dt",
]

EQUATIONS = ("vpme", "intermediate", "coulomb_drift")

C_STAB = 0.2
ADVECTIVE_CFL = 0.5
UNDERSHOOT_TOL = 1e-10
CLIP_BUDGET = 1e-9


@dataclass(frozen=True)
class PdeConfig:
    """Solver settings.

    ``interaction`` scales the nonlocal term (``0`` leaves pure diffusion);
    ``sup_ceiling`` aborts Coulomb runs whose sup-norm exceeds it.
    """

    dt: float
    t_end: float
    equation: str = "vpme"
    kernel: MollifierSpec | CoulombSpec | None = None
    sigma: float = 0.5
    kappa: int | None = None
    interaction: float = 1.0
    snapshot_times: tuple | None = None
    sup_ceiling: float = 1e6
    check_resolution: bool = True

    def __post_init__(self):
        if self.equation not in EQUATIONS:
            raise ConfigurationError(f"unknown equation {self.equation!r}")
        if not (self.dt > 0 and self.t_end > 0):
            raise ConfigurationError("dt and t_end must be positive")
        if not self.sigma > 0:
            raise ConfigurationError("sigma must be positive")
        if self.equation == "intermediate" and not isinstance(self.kernel, MollifierSpec):
            raise ConfigurationError("the intermediate equation needs a MollifierSpec kernel")
        if self.equation == "coulomb_drift":
            if not isinstance(self.kernel, CoulombSpec):
                raise ConfigurationError("coulomb_drift needs a CoulombSpec kernel")
            if self.kappa is not None and self.kappa != self.kernel.kappa:
                raise ConfigurationError("kappa disagrees with the kernel's kappa")

    @property
    def diffusion(self):
        """Coefficient of the linear Laplacian handled by the exponential factor."""
        return self.sigma if self.equation == "coulomb_drift" else 0.5

    @property
    def n_steps(self):
        return int(round(self.t_end / self.dt))

    def with_(self, **changes):
        from dataclasses import replace

        return replace(self, **changes)


def stable_dt(rho0, max_dt=None, lock=None, c_stab=C_STAB):
    """Largest admissible step ``c_stab h^2 / (1 + max rho)``.

    With ``lock`` the result divides ``lock`` exactly (an integer number of
    substeps per locked step); ``max_dt`` caps it further.
    """
    h = rho0.spacing
    dt = c_stab * h * h / (1.0 + float(np.max(rho0.values)))
    if max_dt is not None:
        dt = min(dt, max_dt)
    if lock is not None:
        dt = lock / math.ceil(lock / dt * (1 - 1e-12))
    return dt


@dataclass
class Solution:
    """Snapshots of a solver run plus monitoring histories."""

    equation: str
    times: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    sup_history: list = field(default_factory=list)
    mass_history: list = field(default_factory=list)
    clipped_mass: float = 0.0
    steps: int = 0

    def at(self, t, tol=1e-9):
        # snapshot times are increasing; check the two neighbours of t
        i = bisect.bisect_left(self.times, t)
        for j in (i - 1, i):
            if 0 <= j < len(self.times) and abs(self.times[j] - t) <= tol + 1e-12:
                return self.snapshots[j]
        raise LookupError(f"no snapshot at t={t}")

    @property
    def final(self):
        return self.snapshots[-1]


class Solver:
    """Stateful time stepper; :meth:`advance_to` lets particle codes advance it in lockstep."""

    def __init__(self, rho0, config):
        if not isinstance(rho0, GridDensity):
            raise ShapeError("rho0 must be a GridDensity")
        self.config = config
        self.box_length = rho0.box_length
        self.shape = rho0.values.shape
        self.dim = rho0.dims
        self.h = rho0.spacing
        self.t0 = rho0.time
        self.count = 0
        self._rho = np.array(rho0.values, dtype=float)
        self.clipped_mass = 0.0
        self.mass0 = rho0.mass()
        kernel = config.kernel
        if kernel is not None and kernel.dim != self.dim:
            raise ShapeError(f"kernel dim {kernel.dim} does not match grid dim {self.dim}")
        if config.check_resolution and config.equation != "vpme" and kernel is not None:
            gr._check_resolved(kernel, self.h)
        _, k2 = gr.wavenumbers(self.shape[0], self.box_length, self.dim)
        self._decay = np.exp(-config.diffusion * k2 * config.dt)
        if config.equation == "intermediate":
            self._v_hat = kernel.v_hat(k2)
        if config.equation == "coulomb_drift":
            self._coulomb_hat = gr._coulomb_kernel_hat(kernel, self.shape[0], float(self.box_length))
        self._check_stability()

    # -- state -------------------------------------------------------------

    @property
    def time(self):
        return self.t0 + self.count * self.config.dt

    @property
    def state(self):
        return GridDensity(self._rho, self.box_length, self.time)

    # -- scheme ------------------------------------------------------------

    def _velocity(self, rho_hat):
        """Coulomb advection velocity at nodes, components on the leading axis."""
        kappa = self.config.kernel.kappa
        return np.stack(
            [-0.5 * kappa * gr.irfft(rho_hat * self._coulomb_hat[a], self.shape) for a in range(self.dim)]
        )

    def _nonlinear(self, rho, rho_hat):
        cfg = self.config
        h = self.h
        out = np.zeros_like(rho)
        if cfg.interaction == 0:
            return out, None
        if cfg.equation in ("vpme", "intermediate"):
            u = rho if cfg.equation == "vpme" else gr.irfft(rho_hat * self._v_hat, self.shape)
            for a in range(self.dim):
                face = 0.5 * (rho + np.roll(rho, -1, axis=a))
                flux = face * (np.roll(u, -1, axis=a) - u) / h
                out += (flux - np.roll(flux, 1, axis=a)) / h
            return 0.5 * cfg.interaction * out, None
        b = cfg.interaction * self._velocity(rho_hat)
        for a in range(self.dim):
            face = 0.5 * (rho + np.roll(rho, -1, axis=a))
            flux = face * 0.5 * (b[a] + np.roll(b[a], -1, axis=a))
            out -= (flux - np.roll(flux, 1, axis=a)) / h
        return out, b

    def _check_stability(self, b=None):
        # the exponential factor is unconditionally stable; only the explicit part is limited
        if self.config.interaction == 0:
            return
        dt, h = self.config.dt, self.h
        rmax = float(np.max(self._rho))
        limit = C_STAB * h * h / (1.0 + rmax)
        if dt > limit * (1 + 1e-9):
            raise ConfigurationError(
                f"time step {dt:.4g} violates the stability bound {limit:.4g} = 0.2 h^2/(1 + max rho) at t={self.time:.4g}"
            )
        if b is not None:
            bmax = float(np.max(np.abs(b)))
            if dt * bmax / h > ADVECTIVE_CFL:
                raise ConfigurationError(f"advective CFL number {dt * bmax / h:.3g} exceeds {ADVECTIVE_CFL}")

    def step(self):
        cfg = self.config
        rho = self._rho
        rho_hat = gr.rfft(rho)
        nl, b = self._nonlinear(rho, rho_hat)
        self._check_stability(b)
        if cfg.interaction == 0:
            new = gr.irfft(rho_hat * self._decay, self.shape)
        else:
            new = gr.irfft((rho_hat + cfg.dt * gr.rfft(nl)) * self._decay, self.shape)
        lo = float(np.min(new))
        if lo < -UNDERSHOOT_TOL:
            raise SchemeError(f"undershoot {lo:.3g} below -1e-10 at t={self.time + cfg.dt:.6g}")
        if lo < 0:
            mass_before = float(np.sum(new))
            neg = new < 0
            self.clipped_mass += float(-np.sum(new[neg])) * h_d(self)
            new[neg] = 0.0
            new *= mass_before / float(np.sum(new))
            if self.clipped_mass > CLIP_BUDGET:
                raise SchemeError(f"cumulative clipped mass {self.clipped_mass:.3g} exceeds {CLIP_BUDGET}")
        if not np.all(np.isfinite(new)):
            raise BlowUpError(f"non-finite density at step {self.count + 1}", self.count + 1, cfg.equation)
        self._rho = new
        self.count += 1
        sup = float(np.max(new))
        if sup > cfg.sup_ceiling:
            raise BlowUpError(
                f"sup-norm {sup:.4g} exceeds ceiling {cfg.sup_ceiling:.4g} at t={self.time:.6g}", self.count, cfg.equation
            )
        return sup

    def advance_to(self, t):
        """Step until ``time == t``; ``t - time`` must be a whole number of steps."""
        k = (t - self.t0) / self.config.dt
        target = int(round(k))
        if abs(k - target) > 1e-6 or target < self.count:
            raise ConfigurationError(f"cannot advance from t={self.time} to t={t} with dt={self.config.dt}")
        while self.count < target:
            self.step()
        return self.state

    def run(self):
        """Integrate to ``t_end`` collecting snapshots at ``snapshot_times``."""
        cfg = self.config
        times = cfg.snapshot_times if cfg.snapshot_times is not None else (self.t0, self.t0 + cfg.t_end)
        snap_steps = {}
        for t in times:
            k = (t - self.t0) / cfg.dt
            if abs(k - round(k)) > 1e-6 or k < -1e-9 or k > cfg.n_steps + 1e-6:
                raise ConfigurationError(f"snapshot time {t} is not a step time within the horizon")
            snap_steps[int(round(k))] = float(t)
        sol = Solution(cfg.equation)
        h_vol = h_d(self)
        if 0 in snap_steps:
            sol.times.append(snap_steps[0])
            sol.snapshots.append(GridDensity(self._rho, self.box_length, snap_steps[0]))
        sol.sup_history.append((self.time, float(np.max(self._rho))))
        sol.mass_history.append((self.time, float(np.sum(self._rho)) * h_vol))
        for k in range(1, cfg.n_steps + 1):
            sup = self.step()
            sol.sup_history.append((self.time, sup))
            if k in snap_steps:
                sol.times.append(snap_steps[k])
                sol.snapshots.append(GridDensity(self._rho, self.box_length, snap_steps[k]))
                sol.mass_history.append((self.time, float(np.sum(self._rho)) * h_vol))
        sol.clipped_mass = self.clipped_mass
        sol.steps = self.count
        return sol


def h_d(solver):
    return solver.h**solver.dim


def solve(rho0, config):
    return Solver(rho0, config).run()


def solve_vpme(rho0, config):
    """Viscous porous medium equation ``d_t rho = 1/2 div((1 + rho) grad rho)``."""
    if config.equation != "vpme":
        config = config.with_(equation="vpme", kernel=None)
    return solve(rho0, config)


def solve_intermediate(rho0, config):
    """Nonlocal equation ``d_t rho = 1/2 lap rho + 1/2 div(rho grad V^eta * rho)``."""
    if config.equation != "intermediate":
        config = config.with_(equation="intermediate")
    return solve(rho0, config)


def solve_coulomb_drift(rho0, config):
    """Diffusion with regularized Coulomb drift; monitors the sup-norm against ``sup_ceiling``."""
    if config.equation != "coulomb_drift":
        config = config.with_(equation="coulomb_drift")
    return solve(rho0, config)


def mollification_error(rho, kernel):
    """``max |V^eta * grad rho - grad rho|`` over grid nodes and components (spectral)."""
    if rho.dims != kernel.dim:
        raise ShapeError("kernel and grid dimensions differ")
    _, k2 = gr.wavenumbers(rho.points_per_axis, rho.box_length, rho.dims)
    hat = gr.rfft(rho.values)
    grad = gr.gradient_from_hat(hat, rho.values.shape, rho.box_length)
    smooth = gr.gradient_from_hat(hat * kernel.v_hat(k2), rho.values.shape, rho.box_length)
    return float(np.max(np.abs(smooth - grad)))


def save_solution(path, solution, config=None):
    """Write snapshots as one ``(T, M, ..., M)`` ``.npy`` array plus a JSON sidecar."""
    first = solution.snapshots[0]
    kernel = None if config is None or config.kernel is None else config.kernel
    meta = {
        "equation": solution.equation,
        "times": [float(t) for t in solution.times],
        "box_length": first.box_length,
        "dims": first.dims,
        "dt": None if config is None else config.dt,
        "sigma": None if config is None else config.sigma,
        "kernel": None if kernel is None else {"family": type(kernel).__name__, **kernel.to_dict()},
        "clipped_mass": solution.clipped_mass,
    }
    return save_array(path, np.stack([g.values for g in solution.snapshots]), **meta)


def load_solution(path):
    """Inverse of :func:`save_solution`; returns ``(solution, meta)``."""
    arr, meta = load_array(path)
    sol = Solution(meta["equation"], clipped_mass=meta.get("clipped_mass", 0.0))
    for t, v in zip(meta["times"], arr):
        g = GridDensity(v, meta["box_length"], t)
        sol.times.append(float(t))
        sol.snapshots.append(g)
        sol.mass_history.append(g.mass())
        sol.sup_history.append(float(np.max(v)))
    return sol, meta
