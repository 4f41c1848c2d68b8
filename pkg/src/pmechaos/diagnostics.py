"""Statistics comparing particle ensembles and grid densities.

Every grid integral is a Riemann sum ``h^d sum``.  Densities entering
entropy-type quantities must have unit mass to within ``1e-4``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import grid as gr
from .errors import (
    ConfigurationError,
    DomainError,
    InequalityViolation,
    NormalizationError,
    ResourceError,
    ShapeError,
)
from .grid import GridDensity

__all__ = [
    "ENTROPY_FLOOR",
    "EntropyReport",
    "GridMeta",
    "RateFit",
    "SuperadditivityReport",
    "ckp_check",
    "kde_marginal",
    "h1_distance",
    "l1_distance",
    "l2_mollified_error",
    "l2_mollified_grad_error",
    "modulated_energy",
    "mollified_empirical",
    "rate_fit",
    "relative_entropy",
    "relative_fisher",
    "superadditivity_check",
]

ENTROPY_FLOOR = 1e-12
MASS_TOL = 1e-4


@dataclass(frozen=True)
class GridMeta:
    points_per_axis: int
    box_length: float
    dim: int

    @classmethod
    def of(cls, density):
        return cls(density.points_per_axis, density.box_length, density.dims)

    @property
    def spacing(self):
        return self.box_length / self.points_per_axis


def _positions(ensemble):
    return getattr(ensemble, "positions", ensemble)


# ---------------------------------------------------------------------------
# Mollified empirical measures


def _mollified_hat(positions, kernel, meta):
    """Fourier coefficients of ``W^eta * mu_N`` on the grid described by ``meta``.

    Particles are deposited with a narrow Gaussian ``G_tau`` and the remaining
    Gaussian factor of ``W^eta`` is applied spectrally, which reproduces the
    continuous mollification at the nodes to round-off.
    """
    m, box, d = meta.points_per_axis, meta.box_length, meta.dim
    h = box / m
    if h > kernel.bandwidth / 4 * (1 + 1e-9):
        raise gr.ResolutionError(f"grid spacing {h:.4g} does not resolve eta={kernel.bandwidth:.4g} (need h <= eta/4)")
    tau = gr.gridding_width(h)
    rest = kernel.w_var - tau**2
    if rest < 0:
        raise gr.ResolutionError("grid too coarse for Gaussian deposition at this bandwidth")
    pos = np.asarray(_positions(positions), dtype=float)
    if pos.ndim != 2 or pos.shape[1] != d:
        raise ShapeError(f"positions must have shape (N, {d})")
    rho_tau = gr.spread_gaussian(pos, m, box, tau)
    _, k2 = gr.wavenumbers(m, box, d)
    return gr.rfft(rho_tau) * np.exp(-0.5 * rest * k2)


def mollified_empirical(ensemble, kernel, grid_meta, time=None):
    """``W^eta * mu_N = 1/N sum_i W^eta(x - X_i)`` sampled on the grid."""
    meta = grid_meta if isinstance(grid_meta, GridMeta) else GridMeta.of(grid_meta)
    shape = (meta.points_per_axis,) * meta.dim
    vals = gr.irfft(_mollified_hat(ensemble, kernel, meta), shape)
    t = getattr(ensemble, "time", 0.0) if time is None else time
    return GridDensity(vals, meta.box_length, t)


def _same_grid(a, b):
    if not a.same_grid(b):
        raise ShapeError("densities live on different grids")


def _l2_sq(field_, h, d):
    return float(np.sum(field_ * field_) * h**d)


def l2_mollified_error(ensemble, reference, kernel):
    """``|| W^eta * mu_N - W^eta * rho ||_{L^2}^2``.

    ``ensemble`` may also be a :class:`GridDensity` already holding
    ``W^eta * mu_N``; ``reference`` is the unmollified density ``rho``.
    """
    meta = GridMeta.of(reference)
    _, k2 = gr.wavenumbers(meta.points_per_axis, meta.box_length, meta.dim)
    if isinstance(ensemble, GridDensity):
        _same_grid(ensemble, reference)
        emp = ensemble.values
    else:
        emp = mollified_empirical(ensemble, kernel, meta).values
    ref = gr.irfft(gr.rfft(reference.values) * kernel.w_hat(k2), reference.values.shape)
    return _l2_sq(emp - ref, meta.spacing, meta.dim)


def l2_mollified_grad_error(ensemble, reference, kernel):
    """``|| grad W^eta * (mu_N - rho) ||_{L^2}^2`` summed over components (spectral gradient)."""
    meta = GridMeta.of(reference)
    _, k2 = gr.wavenumbers(meta.points_per_axis, meta.box_length, meta.dim)
    shape = reference.values.shape
    if isinstance(ensemble, GridDensity):
        _same_grid(ensemble, reference)
        emp_hat = gr.rfft(ensemble.values)
    else:
        emp_hat = _mollified_hat(ensemble, kernel, meta)
    diff_hat = emp_hat - gr.rfft(reference.values) * kernel.w_hat(k2)
    grads = gr.gradient_from_hat(diff_hat, shape, meta.box_length)
    return _l2_sq(grads, meta.spacing, meta.dim)


@dataclass(frozen=True)
class MeanEstimate:
    value: float
    stderr: float
    count: int

    def to_dict(self):
        return asdict(self)


def mean_se(values):
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        raise ConfigurationError("need at least two replicas for a standard error")
    return float(np.mean(v)), float(np.std(v, ddof=1) / math.sqrt(v.size))


def modulated_energy(values):
    """``1/2`` times the replica mean of squared mollified errors, with its standard error."""
    mean, se = mean_se(values)
    return MeanEstimate(0.5 * mean, 0.5 * se, len(values))


# ---------------------------------------------------------------------------
# Entropy-type quantities


def _check_pair(p, q):
    _same_grid(p, q)
    for name, g in (("p", p), ("q", q)):
        if abs(g.mass() - 1.0) > MASS_TOL:
            raise NormalizationError(f"{name} has mass {g.mass():.8g}, expected 1 within {MASS_TOL}")


def _entropy_sum(p, q, floor):
    pv = np.maximum(p.values, floor)
    qv = np.maximum(q.values, floor)
    return float(np.sum(p.values * np.log(pv / qv)) * p.cell_volume)


def relative_entropy(p, q, floor=ENTROPY_FLOOR, with_sensitivity=False):
    """``int p log(p/q)`` with both arguments floored at ``floor`` inside the log.

    With ``with_sensitivity`` returns ``(value, |value(floor) - value(floor/10)|)``.
    """
    _check_pair(p, q)
    val = _entropy_sum(p, q, floor)
    if with_sensitivity:
        return val, abs(val - _entropy_sum(p, q, floor / 10))
    return val


def _centered_grad(values, h):
    return np.stack([(np.roll(values, -1, a) - np.roll(values, 1, a)) / (2 * h) for a in range(values.ndim)])


def relative_fisher(p, q, floor=ENTROPY_FLOOR):
    """``int p |grad log(p/q)|^2`` with centred differences on the torus."""
    _check_pair(p, q)
    logr = np.log(np.maximum(p.values, floor)) - np.log(np.maximum(q.values, floor))
    g = _centered_grad(logr, p.spacing)
    return float(np.sum(p.values * np.sum(g * g, axis=0)) * p.cell_volume)


def l1_distance(p, q):
    _same_grid(p, q)
    return float(np.sum(np.abs(p.values - q.values)) * p.cell_volume)


def h1_distance(p, q):
    """``||p - q||_{H^1}`` with the gradient taken spectrally."""
    _same_grid(p, q)
    diff = p.values - q.values
    shape = diff.shape
    grad = gr.gradient_from_hat(gr.rfft(diff), shape, p.box_length)
    sq = np.sum(diff * diff) + np.sum(grad * grad)
    return float(math.sqrt(sq * p.cell_volume))


@dataclass
class EntropyReport:
    relative_entropy: float
    l1_distance: float
    ckp_bound: float
    relative_fisher: float
    floor_sensitivity: float

    @property
    def reliable(self):
        """Floor sensitivity within 1% of the entropy value."""
        return self.floor_sensitivity <= 0.01 * abs(self.relative_entropy) or self.floor_sensitivity < 1e-14

    def to_dict(self):
        d = asdict(self)
        d["reliable"] = self.reliable
        return d

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def ckp_check(p, q, floor=ENTROPY_FLOOR, strict=True):
    """Evaluate the pair and assert ``||p - q||_1 <= sqrt(2 H(p|q)) + 1e-8``."""
    h, sens = relative_entropy(p, q, floor, with_sensitivity=True)
    l1 = l1_distance(p, q)
    bound = math.sqrt(2.0 * max(h, 0.0))
    rep = EntropyReport(h, l1, bound, relative_fisher(p, q, floor), sens)
    if strict and l1 > bound + 1e-8:
        raise InequalityViolation(f"CKP violated: l1={l1:.6g} > sqrt(2H)={bound:.6g}")
    return rep


@dataclass
class SuperadditivityReport:
    k: int
    n: int
    h1: float
    hk: float
    factorization_error: float
    lhs: float
    rhs: float
    holds: bool

    def to_dict(self):
        return asdict(self)


def product_density(p, k):
    """``p^{(x)k}`` on the ``k * d``-dimensional product grid."""
    vals = p.values
    out = vals
    for _ in range(k - 1):
        out = np.multiply.outer(out, vals)
    return GridDensity(out, p.box_length, p.time)


def superadditivity_check(p, q, k, n, tol=1e-8):
    """Factorization ``H_k = k H_1`` on explicit product grids and the averaged inequality.

    For product laws the per-particle entropy ``H_N / N`` equals ``H_1`` and
    ``H_k / (2k) = H_1 / 2``, so ``H_N / N >= H_k / (2k)`` must hold.
    Product grids are materialized only for ``k <= 3``.
    """
    if p.dims != 1 or q.dims != 1:
        raise ShapeError("superadditivity check expects one-dimensional densities")
    if k < 1 or k > n:
        raise ConfigurationError("need 1 <= k <= N")
    if k > 3:
        raise ResourceError(f"explicit product grids for k={k} need {p.points_per_axis}^{k} nodes; only k <= 3 is supported")
    h1 = relative_entropy(p, q)
    hk = relative_entropy(product_density(p, k), product_density(q, k)) if k > 1 else h1
    err = abs(hk - k * h1)
    lhs = (n * h1) / n
    rhs = hk / (2 * k)
    holds = err <= tol * max(1.0, abs(hk)) and lhs >= rhs - tol
    return SuperadditivityReport(k, n, h1, hk, err, lhs, rhs, bool(holds))


def kde_marginal(ensembles, bandwidth, grid_meta, kernel=None):
    """Pooled ``W^eta * mu_N`` over replicas (mean of per-replica mollified measures).

    ``bandwidth`` sets ``eta`` of a Gaussian mollifier; a ``kernel`` may be
    passed instead to reuse its ``base_std``.
    """
    from .kernels import MollifierSpec

    ensembles = list(ensembles)
    if not ensembles:
        raise ConfigurationError("kde_marginal needs at least one replica")
    meta = grid_meta if isinstance(grid_meta, GridMeta) else GridMeta.of(grid_meta)
    spec = kernel.with_bandwidth(bandwidth) if kernel is not None else MollifierSpec(meta.dim, bandwidth)
    acc = np.zeros((meta.points_per_axis,) * meta.dim)
    for ens in ensembles:
        acc += mollified_empirical(ens, spec, meta).values
    t = getattr(ensembles[0], "time", 0.0)
    return GridDensity(acc / len(ensembles), meta.box_length, t)


# ---------------------------------------------------------------------------
# Rate fits


@dataclass
class RateFit:
    observations: list
    slope: float
    intercept: float
    residual_rms: float
    stderr: float = float("nan")

    def predict(self, x):
        return math.exp(self.intercept) * np.asarray(x, dtype=float) ** self.slope

    def to_dict(self):
        return {
            "observations": [[float(a), float(b)] for a, b in self.observations],
            "slope": self.slope,
            "intercept": self.intercept,
            "residual_rms": self.residual_rms,
            "stderr": self.stderr,
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def rate_fit(observations):
    """Least-squares line through ``(log x, log y)``."""
    obs = [(float(a), float(b)) for a, b in observations]
    if len(obs) < 3:
        raise ConfigurationError(f"rate fit needs at least 3 observations, got {len(obs)}")
    x = np.array([a for a, _ in obs])
    y = np.array([b for _, b in obs])
    if np.any(~np.isfinite(y)) or np.any(y <= 0) or np.any(x <= 0):
        raise DomainError("rate fit needs strictly positive parameters and errors")
    lx, ly = np.log(x), np.log(y)
    A = np.column_stack([lx, np.ones_like(lx)])
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - A @ coef
    rms = float(math.sqrt(np.mean(resid**2)))
    dof = len(obs) - 2
    se = float("nan")
    if dof > 0:
        sxx = float(np.sum((lx - lx.mean()) ** 2))
        se = math.sqrt(float(np.sum(resid**2)) / dof / sxx) if sxx > 0 else float("nan")
    return RateFit(obs, float(coef[0]), float(coef[1]), rms, se)
