"""Moderately interacting particles, their intermediate (mean-field) twins and the coupling.

Coordinates live on the torus ``[0, L)^d``.  With ``V^eta`` the interaction
potential (Gaussian mollifier or ``kappa Phi^eta``) the coupled system moves by

    dX_i = -1/(2N) sum_{j != i} grad V^eta(X_i - X_j) dt + sqrt(2 sigma) dB_i

and the intermediate system replaces the empirical sum with ``grad V^eta * rho``
for a deterministic density ``rho`` supplied by a grid solver.  ``sigma = 1/2``
gives unit-variance Brownian increments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.special import erfc

from . import grid as gr
from .io import load_array, save_array, write_csv
from .errors import BlowUpError, ConfigurationError, ResolutionError, ShapeError, StalenessError
from .kernels import CoulombSpec, MollifierSpec
from .seeds import SeedLineage

__all__ = [
    "CouplingRun",
    "DRIFT_MODES",
    "InitialLawSpec",
    "ParticleEnsemble",
    "SdeConfig",
    "Trajectory",
    "convolved_field",
    "drift_coupled",
    "drift_intermediate",
    "init_iid",
    "load_trajectory",
    "lln_statistic",
    "max_deviation",
    "run_coupling",
    "run_coupling_batch",
    "save_trajectory",
    "simulate",
    "step",
    "torus_distance",
    "write_series",
]

DRIFT_MODES = ("coupled_pme", "intermediate_pme", "coupled_coulomb", "intermediate_coulomb", "free_diffusion")

# Rows of the pair matrix held in memory at once by the direct force sum.
_PAIR_BUDGET = 2**22


# ---------------------------------------------------------------------------
# Ensembles and configuration


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    """Immutable snapshot of ``N`` particle positions on the torus."""

    positions: np.ndarray
    box_length: float
    time: float = 0.0
    replica_id: int = 0
    seed_lineage: SeedLineage | None = None

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float)
        if pos.ndim != 2:
            raise ShapeError(f"positions must be an (N, d) array, got shape {pos.shape}")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @property
    def n(self):
        return self.positions.shape[0]

    @property
    def dim(self):
        return self.positions.shape[1]

    def moved(self, positions, time):
        return ParticleEnsemble(positions, self.box_length, time, self.replica_id, self.seed_lineage)

    def permuted(self, perm):
        return self.moved(self.positions[np.asarray(perm)], self.time)


@dataclass(frozen=True)
class InitialLawSpec:
    """Isotropic Gaussian initial law, centred in the box unless ``center`` is given."""

    std: float = 1.0
    center: tuple | None = None
    kind: str = "gaussian"

    def __post_init__(self):
        if self.kind != "gaussian":
            raise ConfigurationError(f"unsupported initial law {self.kind!r}")
        if not self.std > 0:
            raise ConfigurationError("initial std must be positive")

    def center_in(self, box_length, dim):
        if self.center is None:
            return np.full(dim, box_length / 2)
        c = np.asarray(self.center, dtype=float)
        return np.broadcast_to(c, (dim,)).copy()

    def escaped_mass(self, box_length, dim):
        """Upper bound on the mass outside the box (union bound over coordinates)."""
        c = self.center_in(box_length, dim)
        total = 0.0
        for a in range(dim):
            for gap in (c[a], box_length - c[a]):
                total += 0.5 * erfc(gap / (self.std * math.sqrt(2)))
        return total

    def sample(self, rng, n, dim, box_length):
        return self.center_in(box_length, dim) + self.std * rng.standard_normal((n, dim))

    def density(self, points_per_axis, box_length, dim, time=0.0):
        """Grid samples of the law after heat flow for ``time`` (variance ``std^2 + time``)."""
        return gr.gaussian_density(
            points_per_axis, box_length, dim, math.sqrt(self.std**2 + time), self.center_in(box_length, dim)
        )

    def to_dict(self):
        return {"kind": self.kind, "std": self.std, "center": None if self.center is None else list(self.center)}


@dataclass(frozen=True)
class SdeConfig:
    """Time stepping and force evaluation settings for one particle system.

    ``interaction`` scales every interaction force (0 switches it off) and
    ``force_method`` picks the direct pair sum or the particle-mesh path.
    """

    n: int
    dt: float
    t_end: float
    box_length: float
    master_seed: int = 0
    drift_mode: str = "coupled_pme"
    scheme: str = "euler_maruyama"
    sigma: float = 0.5
    interaction: float = 1.0
    force_method: str = "mesh"
    points_per_axis: int | None = None
    observation_times: tuple = ()

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise ConfigurationError(f"need n >= 2 particles, got {self.n}")
        if not (self.dt > 0 and self.t_end > 0 and self.box_length > 0):
            raise ConfigurationError("dt, t_end and box_length must be positive")
        if self.scheme != "euler_maruyama":
            raise ConfigurationError(f"unsupported scheme {self.scheme!r}")
        if self.drift_mode not in DRIFT_MODES:
            raise ConfigurationError(f"unknown drift_mode {self.drift_mode!r}")
        if self.force_method not in ("direct", "mesh"):
            raise ConfigurationError(f"unknown force_method {self.force_method!r}")
        if not self.sigma > 0:
            raise ConfigurationError("sigma must be positive")
        steps = self.t_end / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ConfigurationError(f"t_end={self.t_end} is not an integer multiple of dt={self.dt}")
        for t in self.observation_times:
            k = t / self.dt
            if t < 0 or t > self.t_end * (1 + 1e-12) or abs(k - round(k)) > 1e-9 * max(1.0, k):
                raise ConfigurationError(f"observation time {t} is not a step time in [0, t_end]")
        if self.points_per_axis is not None and not gr._is_power_of_two(self.points_per_axis):
            raise ConfigurationError("points_per_axis must be a power of two")

    @property
    def n_steps(self):
        return int(round(self.t_end / self.dt))

    @property
    def noise_scale(self):
        return math.sqrt(2.0 * self.sigma)

    def observation_steps(self):
        return {int(round(t / self.dt)): float(t) for t in self.observation_times}

    def validate_kernel(self, kernel):
        """Check the time step and box against the kernel's length scale."""
        if kernel is None:
            return
        if kernel.bandwidth > self.box_length / 8:
            raise ConfigurationError(f"bandwidth {kernel.bandwidth} is not resolved by box {self.box_length} (eta <= L/8)")
        if isinstance(kernel, MollifierSpec) and self.dt > kernel.bandwidth**2 / 4 * (1 + 1e-12):
            raise ConfigurationError(f"dt={self.dt} exceeds eta^2/4={kernel.bandwidth**2 / 4:.4g}")
        if self.points_per_axis is not None:
            h = self.box_length / self.points_per_axis
            if h > kernel.bandwidth / 4 * (1 + 1e-9):
                raise ResolutionError(f"grid spacing {h:.4g} exceeds eta/4 = {kernel.bandwidth / 4:.4g}")

    def with_(self, **changes):
        from dataclasses import replace

        return replace(self, **changes)


def init_iid(n, dim, initial_law=None, seed_lineage=None, box_length=40.0, replica_id=None):
    """Draw ``n`` i.i.d. positions from ``initial_law`` and wrap them to the torus."""
    if int(n) != n or n < 2:
        raise ConfigurationError(f"need n >= 2 particles, got {n}")
    law = initial_law or InitialLawSpec()
    escaped = law.escaped_mass(box_length, dim)
    if escaped > 1e-6:
        raise ConfigurationError(f"box of length {box_length} loses initial mass {escaped:.3g} > 1e-6; enlarge the box")
    lineage = seed_lineage if seed_lineage is not None else SeedLineage(0)
    rng = lineage.stream().initial()
    pos = np.mod(law.sample(rng, int(n), dim, box_length), box_length)
    rid = lineage.replica if replica_id is None else replica_id
    return ParticleEnsemble(pos, box_length, 0.0, rid, lineage)


# ---------------------------------------------------------------------------
# Forces


def _pair_grad(kernel, disp):
    if isinstance(kernel, CoulombSpec):
        return kernel.kappa * kernel.grad(disp)
    return kernel.grad_v(disp)


def _direct_forces(positions, kernel, box_length):
    n, d = positions.shape
    out = np.empty((n, d))
    rows = max(1, _PAIR_BUDGET // max(1, n * d))
    for start in range(0, n, rows):
        stop = min(n, start + rows)
        disp = gr.minimum_image(positions[start:stop, None, :] - positions[None, :, :], box_length)
        g = _pair_grad(kernel, disp)
        # exclude j == i explicitly (grad V(0) = 0, but keep the sum literal)
        idx = np.arange(start, stop)
        g[idx - start, idx, :] = 0.0
        out[start:stop] = g.sum(axis=1)
    return -out / (2.0 * n)


def _mesh_forces_gaussian(positions, kernel, box_length, m):
    n, d = positions.shape
    h = box_length / m
    if h > kernel.bandwidth / 4 * (1 + 1e-9):
        raise ResolutionError(f"mesh spacing {h:.4g} exceeds eta/4 = {kernel.bandwidth / 4:.4g}")
    tau = gr.gridding_width(h)
    rest = kernel.v_var - 2.0 * tau**2
    if rest <= 0:
        raise ResolutionError("mesh too coarse for Gaussian gridding of this kernel")
    st = gr.GaussianStencil.build(positions, m, box_length, tau)
    rho_tau = gr.spread_gaussian(positions, m, box_length, tau, stencil=st)
    _, k2 = gr.wavenumbers(m, box_length, d)
    hat = gr.rfft(rho_tau) * np.exp(-0.5 * rest * k2)
    field_ = gr.gradient_from_hat(hat, rho_tau.shape, box_length)
    return -0.5 * gr.interp_gaussian(field_, positions, box_length, tau, stencil=st).reshape(n, d)


def _mesh_forces_coulomb(positions, kernel, box_length, m):
    n, d = positions.shape
    rho = gr.spread_cic(positions, m, box_length)
    field_ = gr.coulomb_field(rho, kernel, box_length)
    return -0.5 * kernel.kappa * gr.interp_cic(field_, positions, box_length).reshape(n, d)


def default_mesh_size(kernel, box_length):
    """Smallest power-of-two points per axis with ``h <= eta/4``."""
    m = 2
    while box_length / m > kernel.bandwidth / 4:
        m *= 2
    return m


def drift_coupled(positions, kernel, box_length, method="direct", points_per_axis=None):
    """Interaction drift ``-1/(2N) sum_{j != i} grad V^eta(x_i - x_j)``.

    ``method='direct'`` is the O(N^2) minimum-image pair sum.  ``'mesh'``
    uses Gaussian gridding for the Gaussian family (accurate to round-off
    once ``h <= eta/4``) and cloud-in-cell transfer with the sampled field
    for :class:`CoulombSpec`.  The mesh path sums over all ``j`` including
    ``i``, which changes nothing since ``grad V^eta(0) = 0``.
    """
    positions = np.asarray(positions, dtype=float)
    if positions.ndim != 2 or positions.shape[1] != kernel.dim:
        raise ShapeError(f"positions must have shape (N, {kernel.dim})")
    if kernel.bandwidth > box_length / 8:
        raise ConfigurationError("kernel bandwidth must satisfy eta <= L/8")
    if method == "direct":
        return _direct_forces(positions, kernel, box_length)
    if method != "mesh":
        raise ConfigurationError(f"unknown force method {method!r}")
    m = points_per_axis or default_mesh_size(kernel, box_length)
    if isinstance(kernel, CoulombSpec):
        return _mesh_forces_coulomb(positions, kernel, box_length, m)
    return _mesh_forces_gaussian(positions, kernel, box_length, m)


def mean_field_velocity(density, kernel):
    """Grid field ``-1/2 grad V^eta * rho`` with components on the leading axis."""
    if isinstance(kernel, CoulombSpec):
        return -0.5 * kernel.kappa * gr.convolve(density, kernel)
    return -0.5 * gr.convolve(density, kernel, which="v", gradient=True)


def drift_intermediate(positions, density, kernel, time=None, dt=None, velocity=None):
    """Mean-field drift ``-1/2 (grad V^eta * rho)(x_i)`` by multilinear interpolation.

    ``time`` and ``dt`` enable the staleness check against ``density.time``.
    A precomputed ``velocity`` grid (from :func:`mean_field_velocity`) may be
    passed to share one convolution between several ensembles.
    """
    positions = np.asarray(positions, dtype=float)
    if time is not None:
        tol = 0.5 * dt if dt is not None else 1e-12
        if abs(density.time - time) > tol + 1e-12:
            raise StalenessError(f"density at t={density.time} used for particles at t={time}")
    if velocity is None:
        velocity = mean_field_velocity(density, kernel)
    return gr.interp_cic(velocity, positions, density.box_length).reshape(positions.shape)


def step(ensemble, forces, dt, noise_increments, step_index=None, system=None):
    """Euler-Maruyama update ``x <- wrap(x + forces dt + noise)``."""
    new = ensemble.positions + forces * dt + noise_increments
    if not np.all(np.isfinite(new)):
        k = step_index if step_index is not None else int(round(ensemble.time / dt))
        raise BlowUpError(f"non-finite positions at step {k}" + (f" in {system} system" if system else ""), k, system)
    return ensemble.moved(np.mod(new, ensemble.box_length), ensemble.time + dt)


def torus_distance(a, b, box_length):
    return np.linalg.norm(gr.minimum_image(np.asarray(a) - np.asarray(b), box_length), axis=-1)


# ---------------------------------------------------------------------------
# Density sources for the intermediate system


class _DensityTrack:
    """Serves the intermediate density at each step time.

    Accepts a stateful solver (``state`` / ``advance_to``), a precomputed
    solution (``at(t)``), or a single static :class:`GridDensity`.
    """

    def __init__(self, source, kernel, dt):
        self.source = source
        self.kernel = kernel
        self.dt = dt
        self._cache_time = None
        self._velocity = None

    def velocity_at(self, t):
        if self._cache_time is not None and abs(self._cache_time - t) <= 1e-12 * max(1.0, t):
            return self._density, self._velocity
        src = self.source
        if hasattr(src, "advance_to"):
            src.advance_to(t)
            dens = src.state
        elif hasattr(src, "at"):
            dens = src.at(t, tol=0.5 * self.dt)
        else:
            dens = src
        if abs(dens.time - t) > 0.5 * self.dt + 1e-12:
            raise StalenessError(f"density at t={dens.time} used for particles at t={t}")
        self._density, self._velocity = dens, mean_field_velocity(dens, self.kernel)
        self._cache_time = t
        return self._density, self._velocity


# ---------------------------------------------------------------------------
# Trajectories and couplings


@dataclass
class Trajectory:
    """Observation-time snapshots of one system."""

    times: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)

    def add(self, ensemble):
        self.times.append(float(ensemble.time))
        self.snapshots.append(ensemble)

    def at(self, t):
        for tt, ens in zip(self.times, self.snapshots):
            if math.isclose(tt, t, rel_tol=1e-9, abs_tol=1e-12):
                return ens
        raise LookupError(f"time {t} was not observed")

    @property
    def final(self):
        return self.snapshots[-1]


@dataclass
class CouplingRun:
    """Paired coupled/intermediate trajectories sharing initial data and noise."""

    coupled: Trajectory
    intermediate: Trajectory
    initial_positions: np.ndarray
    lineage: SeedLineage
    config: SdeConfig

    @property
    def times(self):
        return list(self.coupled.times)


def _system_forces(mode, ensemble, kernel, config, track):
    if mode == "free_diffusion" or config.interaction == 0:
        return np.zeros_like(ensemble.positions)
    if mode.startswith("coupled"):
        f = drift_coupled(ensemble.positions, kernel, config.box_length, config.force_method, config.points_per_axis)
    else:
        dens, vel = track.velocity_at(ensemble.time)
        f = drift_intermediate(ensemble.positions, dens, kernel, ensemble.time, config.dt, velocity=vel)
    return config.interaction * f if config.interaction != 1 else f


def _check_family(mode, kernel):
    if mode == "free_diffusion":
        return
    want = CoulombSpec if mode.endswith("coulomb") else MollifierSpec
    if not isinstance(kernel, want):
        raise ConfigurationError(f"drift mode {mode!r} needs a {want.__name__}")


def _lineages(config, replicas, study):
    return [r if isinstance(r, SeedLineage) else SeedLineage(config.master_seed, int(r), study, config.n) for r in replicas]


def _initial_ensembles(config, dim, lineages, initial_law, initial):
    if initial is None:
        return [init_iid(config.n, dim, initial_law, lin, config.box_length) for lin in lineages]
    out = []
    for lin, pos in zip(lineages, initial):
        pos = np.mod(np.asarray(pos, dtype=float), config.box_length)
        if pos.shape != (config.n, dim):
            raise ShapeError(f"initial positions must have shape {(config.n, dim)}")
        out.append(ParticleEnsemble(pos, config.box_length, 0.0, lin.replica, lin))
    return out


def run_coupling_batch(
    config,
    kernel,
    intermediate_solution=None,
    replicas=(0,),
    dim=None,
    initial_law=None,
    initial=None,
    noise=None,
    study="default",
):
    """Advance coupled and intermediate ensembles for several replicas in lockstep.

    The intermediate density is queried once per step and shared by all
    replicas, so a stateful solver can be advanced alongside the particles.
    ``noise`` may be a callable ``(replica_index, step) -> (N, d)`` array of
    standard normals; by default each replica draws from its own counter
    based stream, which makes results independent of batching.
    """
    mode = config.drift_mode
    if mode == "free_diffusion":
        coupled_mode = intermediate_mode = mode
    else:
        family = mode.split("_", 1)[1]
        coupled_mode, intermediate_mode = f"coupled_{family}", f"intermediate_{family}"
        _check_family(coupled_mode, kernel)
        config.validate_kernel(kernel)
    dim = kernel.dim if kernel is not None else (dim or 1)
    if intermediate_mode.startswith("intermediate") and config.interaction != 0 and intermediate_solution is None:
        raise ConfigurationError("the intermediate system needs a density source")
    lineages = _lineages(config, replicas, study)
    ens0 = _initial_ensembles(config, dim, lineages, initial_law, initial)
    track = _DensityTrack(intermediate_solution, kernel, config.dt) if intermediate_solution is not None else None
    streams = [lin.stream() for lin in lineages]
    obs = config.observation_steps()
    runs = []
    coupled, inter = list(ens0), list(ens0)
    for r, e in enumerate(ens0):
        runs.append(CouplingRun(Trajectory(), Trajectory(), e.positions, lineages[r], config))
        if 0 in obs:
            runs[r].coupled.add(e)
            runs[r].intermediate.add(e)
    scale = config.noise_scale
    for k in range(config.n_steps):
        for r in range(len(ens0)):
            z = noise(r, k) if noise is not None else streams[r].increments(k, config.n, dim, 1.0)
            dw = scale * math.sqrt(config.dt) * z
            try:
                fc = _system_forces(coupled_mode, coupled[r], kernel, config, track)
                coupled[r] = step(coupled[r], fc, config.dt, dw, k, "coupled")
            except BlowUpError as exc:
                exc.system = "coupled"
                raise
            try:
                fi = _system_forces(intermediate_mode, inter[r], kernel, config, track)
                inter[r] = step(inter[r], fi, config.dt, dw, k, "intermediate")
            except BlowUpError as exc:
                exc.system = "intermediate"
                raise
            if k + 1 in obs:
                t = obs[k + 1]
                runs[r].coupled.add(coupled[r].moved(coupled[r].positions, t))
                runs[r].intermediate.add(inter[r].moved(inter[r].positions, t))
    return runs


def run_coupling(config, kernel, intermediate_solution=None, replica=0, **kwargs):
    """Single-replica :func:`run_coupling_batch`."""
    return run_coupling_batch(config, kernel, intermediate_solution, replicas=(replica,), **kwargs)[0]


def simulate(config, kernel, density_source=None, replica=0, dim=None, initial_law=None, initial=None, study="default"):
    """Run the single system selected by ``config.drift_mode``; returns a :class:`Trajectory`."""
    mode = config.drift_mode
    _check_family(mode, kernel)
    if mode != "free_diffusion":
        config.validate_kernel(kernel)
    dim = kernel.dim if kernel is not None else (dim or 1)
    lin = _lineages(config, (replica,), study)[0]
    ens = _initial_ensembles(config, dim, [lin], initial_law, None if initial is None else [initial])[0]
    track = _DensityTrack(density_source, kernel, config.dt) if density_source is not None else None
    stream = lin.stream()
    obs = config.observation_steps()
    traj = Trajectory()
    if 0 in obs:
        traj.add(ens)
    scale = config.noise_scale * math.sqrt(config.dt)
    for k in range(config.n_steps):
        f = _system_forces(mode, ens, kernel, config, track)
        ens = step(ens, f, config.dt, scale * stream.increments(k, config.n, dim, 1.0), k, mode)
        if k + 1 in obs:
            traj.add(ens.moved(ens.positions, obs[k + 1]))
    return traj


def max_deviation(run, t):
    """``max_i |X_i(t) - Xbar_i(t)|`` in the torus metric."""
    a = run.coupled.at(t)
    b = run.intermediate.at(t)
    return float(np.max(torus_distance(a.positions, b.positions, a.box_length)))


# ---------------------------------------------------------------------------
# Law-of-large-numbers statistic


def _psi_values(psi, disp):
    if isinstance(psi, CoulombSpec):
        return psi.grad(disp)
    if isinstance(psi, MollifierSpec):
        return psi.grad_v(disp)
    out = np.asarray(psi(disp), dtype=float)
    return out


def convolved_field(psi, density):
    """Grid samples of ``psi * rho`` (Riemann sum over minimum-image nodes).

    Returns an array of shape ``(c, M, ..., M)`` with ``c`` components.
    """
    vals = density.values
    m, d, box = vals.shape[0], vals.ndim, density.box_length
    h = box / m
    idx = np.arange(m)
    disp1 = np.where(idx < m // 2, idx, idx - m) * h
    pts = np.stack(np.meshgrid(*([disp1] * d), indexing="ij"), axis=-1)
    kern = _psi_values(psi, pts)
    if kern.ndim == d:
        kern = kern[..., None]
    # Nyquist planes are zeroed to keep odd kernels exactly odd
    for a in range(d):
        sl = [slice(None)] * d
        sl[a] = m // 2
        kern[tuple(sl)] = 0.0
    rho_hat = gr.rfft(vals)
    return np.stack([gr.irfft(rho_hat * gr.rfft(kern[..., c]), vals.shape) * h**d for c in range(kern.shape[-1])])


def _spline_eval(field_, points, box_length, order=5):
    m = field_.shape[-1]
    coords = (np.asarray(points) / (box_length / m)).T
    out = []
    for comp in field_:
        coef = ndimage.spline_filter(comp, order=order, mode="grid-wrap")
        out.append(ndimage.map_coordinates(coef, coords, order=order, mode="grid-wrap", prefilter=False))
    return np.stack(out, axis=-1)


def lln_statistic(ensemble, psi, density, probes=None, field=None):
    """Per-particle ``h_i = |1/N sum_j psi(X_i - X_j) - (psi * rho)(X_i)|``.

    ``psi`` is a kernel spec (its gradient field is used) or a callable on
    displacement arrays.  ``probes`` restricts the evaluation to a subset of
    indices ``i``; the empirical sum still runs over all ``j``.  The
    deterministic part ``psi * rho`` is computed on the grid and evaluated by
    periodic quintic splines; pass ``field`` to reuse it across ensembles.
    """
    pos = ensemble.positions if isinstance(ensemble, ParticleEnsemble) else np.asarray(ensemble, dtype=float)
    box = density.box_length
    n = pos.shape[0]
    idx = np.arange(n) if probes is None else np.asarray(probes)
    xi = pos[idx]
    acc = None
    rows = max(1, _PAIR_BUDGET // max(1, n * pos.shape[1]))
    parts = []
    for start in range(0, len(idx), rows):
        disp = gr.minimum_image(xi[start : start + rows, None, :] - pos[None, :, :], box)
        vals = _psi_values(psi, disp)
        parts.append(vals.sum(axis=1) if vals.ndim == 3 else vals.sum(axis=1)[:, None])
    acc = np.concatenate(parts) / n
    if field is None:
        field = convolved_field(psi, density)
    mean = _spline_eval(field, xi, box)
    return np.linalg.norm(acc - mean, axis=-1)


# ---------------------------------------------------------------------------
# Persistence


def save_trajectory(path, trajectory, config, kernel=None):
    """Write snapshots as one ``(T, N, d)`` ``.npy`` array plus a JSON sidecar.

    The sidecar records ``n, d, dt, times, seed, drift_mode`` and the kernel
    parameters, which is enough to reload and identify the run.
    """
    first = trajectory.snapshots[0]
    lin = first.seed_lineage
    meta = {
        "n": first.n,
        "d": first.dim,
        "dt": config.dt,
        "times": list(trajectory.times),
        "seed": None if lin is None else lin.child_seed,
        "seed_lineage": None if lin is None else lin.to_dict(),
        "replica": first.replica_id,
        "drift_mode": config.drift_mode,
        "box_length": first.box_length,
        "kernel": None if kernel is None else {"family": type(kernel).__name__, **kernel.to_dict()},
    }
    return save_array(path, np.stack([e.positions for e in trajectory.snapshots]), **meta)


def load_trajectory(path):
    """Inverse of :func:`save_trajectory`; returns ``(trajectory, meta)``."""
    arr, meta = load_array(path)
    lin = meta.get("seed_lineage")
    lineage = None if lin is None else SeedLineage(lin["master_seed"], lin["replica"], lin["study"], lin["n"])
    traj = Trajectory()
    for t, pos in zip(meta["times"], arr):
        traj.add(ParticleEnsemble(pos, meta["box_length"], t, meta["replica"], lineage))
    return traj, meta


def write_series(path, records):
    """Observation-time series (deviations, h-statistics) as CSV ``replica,t,value``."""
    rows = [{"replica": r, "t": float(t), "value": float(v)} for r, t, v in records]
    return write_csv(path, rows, fieldnames=("replica", "t", "value"))
