"""Mollifier hierarchy, scaling law and regularized Coulomb kernel.

The base mollifier ``W`` is an isotropic Gaussian with standard deviation
``base_std``.  Its rescaling ``W^eta(x) = eta^-d W(x / eta)`` and the
interaction potential ``V^eta = W^eta * W^eta`` are then Gaussians with
variances ``(eta * base_std)**2`` and ``2 * (eta * base_std)**2``.

All kernel objects are immutable; evaluation is pure.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.polynomial import Polynomial

from .errors import (
    AssumptionViolation,
    ConfigurationError,
    SingularityError,
    UnsupportedFamilyError,
)

__all__ = [
    "AssumptionReport",
    "CoulombSpec",
    "MollifierSpec",
    "ScalingLaw",
    "coulomb_grad_phi",
    "coulomb_grad_phi_reg",
    "eta_from_n",
    "eval_grad_v",
    "eval_grad_w",
    "eval_v",
    "eval_w",
    "second_moment_v",
    "self_convolution_error",
    "verify_assumptions",
]

FAMILIES = ("gaussian",)


def as_points(x, dim):
    """Coerce ``x`` to a float array whose last axis has length ``dim``.

    In one dimension bare scalars and 1-D sample vectors are accepted.
    """
    x = np.asarray(x, dtype=float)
    if dim == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        return x[..., None]
    if x.ndim == 0 or x.shape[-1] != dim:
        raise ValueError(f"expected points with trailing dimension {dim}, got shape {x.shape}")
    return x


def _gaussian(x, var):
    d = x.shape[-1]
    r2 = np.sum(x * x, axis=-1)
    return np.exp(-0.5 * r2 / var) / (2.0 * np.pi * var) ** (d / 2)


def _gaussian_grad(x, var):
    return -x / var * _gaussian(x, var)[..., None]


# ---------------------------------------------------------------------------
# Scaling law


@dataclass(frozen=True)
class ScalingLaw:
    """Algebraic moderate scaling ``eta = N^(-beta/d)``.

    ``regime='pme'`` admits ``beta`` in ``(0, d / (2(d+2)))`` and
    ``regime='coulomb'`` admits ``beta`` in ``(0, 1/4)``.
    """

    beta: float
    dim: int
    regime: str = "pme"

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise ConfigurationError(f"dimension must be a positive integer, got {self.dim}")
        if self.regime not in ("pme", "coulomb"):
            raise ConfigurationError(f"unknown regime {self.regime!r}")
        if not self.beta > 0:
            raise ConfigurationError(f"beta must be strictly positive (beta > 0), got {self.beta}")
        upper = self.upper_bound
        if not self.beta < upper:
            bound = "d/(2(d+2))" if self.regime == "pme" else "1/4"
            raise ConfigurationError(
                f"beta={self.beta} violates beta < {bound} = {upper:.6g} for regime {self.regime!r}"
            )
        if self.regime == "coulomb" and self.dim < 2:
            raise ConfigurationError("the Coulomb regime needs d >= 2")

    @property
    def upper_bound(self):
        if self.regime == "pme":
            return self.dim / (2.0 * (self.dim + 2))
        return 0.25

    def eta(self, n):
        return eta_from_n(n, self)


def eta_from_n(n, law):
    """Bandwidth ``N^(-beta/d)`` for ``n >= 2`` particles."""
    if int(n) != n or n < 2:
        raise ConfigurationError(f"need at least two particles, got n={n}")
    return float(n) ** (-law.beta / law.dim)


# ---------------------------------------------------------------------------
# Gaussian mollifier


@dataclass(frozen=True)
class MollifierSpec:
    dim: int
    bandwidth: float
    family: str = "gaussian"
    base_std: float = 1.0

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise ConfigurationError(f"dim must be >= 1, got {self.dim}")
        if not (self.bandwidth > 0 and math.isfinite(self.bandwidth)):
            raise ConfigurationError(f"bandwidth must be positive, got {self.bandwidth}")
        if not self.base_std > 0:
            raise ConfigurationError(f"base_std must be positive, got {self.base_std}")
        if self.family not in FAMILIES:
            raise UnsupportedFamilyError(f"mollifier family {self.family!r} is not implemented")

    @property
    def w_var(self):
        """Variance per coordinate of ``W^eta``."""
        return (self.bandwidth * self.base_std) ** 2

    @property
    def v_var(self):
        return 2.0 * self.w_var

    @property
    def width(self):
        """Length scale ``eta * base_std`` used for grid-resolution checks."""
        return self.bandwidth * self.base_std

    def with_bandwidth(self, eta):
        return MollifierSpec(self.dim, float(eta), self.family, self.base_std)

    def w(self, x):
        return _gaussian(as_points(x, self.dim), self.w_var)

    def grad_w(self, x):
        return _gaussian_grad(as_points(x, self.dim), self.w_var)

    def v(self, x):
        return _gaussian(as_points(x, self.dim), self.v_var)

    def grad_v(self, x):
        return _gaussian_grad(as_points(x, self.dim), self.v_var)

    def w_hat(self, k2):
        """Fourier multiplier of ``W^eta`` at squared wavenumber ``k2``."""
        return np.exp(-0.5 * self.w_var * k2)

    def v_hat(self, k2):
        return np.exp(-0.5 * self.v_var * k2)

    def to_dict(self):
        return asdict(self)


def eval_w(spec, x):
    """``W^eta(x)``; ``x`` has shape ``(..., d)``."""
    return spec.w(x)


def eval_grad_w(spec, x):
    return spec.grad_w(x)


def eval_v(spec, x):
    """``V^eta(x) = (W^eta * W^eta)(x)``, in closed form for the Gaussian family."""
    return spec.v(x)


def eval_grad_v(spec, x):
    return spec.grad_v(x)


def second_moment_v(spec):
    """Exact ``int |y|^2 V^eta(y) dy = 2 d eta^2 base_std^2``."""
    return spec.dim * spec.v_var


def gaussian_abs_moment(order, dim, std):
    """``E|X|^order`` for ``X ~ N(0, std^2 I_dim)``."""
    return std**order * 2.0 ** (order / 2) * math.gamma((dim + order) / 2) / math.gamma(dim / 2)


# ---------------------------------------------------------------------------
# Numerical checks


def _axis_nodes(radius, n):
    # odd node count keeps the origin on the grid
    return np.linspace(-radius, radius, 2 * n + 1)


def tensor_quadrature(funcs, dim, radius, tol=1e-9, start=16, max_points=2**22):
    """Composite trapezoid on ``[-radius, radius]^dim``, refined by halving ``h``.

    ``funcs`` map points ``(..., dim)`` to values; refinement stops once
    every integrand changes by less than ``tol`` (relative to ``max(1, |value|)``)
    between successive grids, or the node budget is exhausted.
    Returns ``(values, spacing)`` for all integrands on the final grid.
    """
    n = start
    prev = None
    while True:
        x = _axis_nodes(radius, n)
        h = x[1] - x[0]
        pts = np.stack(np.meshgrid(*([x] * dim), indexing="ij"), axis=-1)
        vals = [float(np.sum(f(pts)) * h**dim) for f in funcs]
        if prev is not None and all(abs(a - b) < tol * max(1.0, abs(a)) for a, b in zip(vals, prev)):
            return vals, h
        prev = vals
        n *= 2
        if (2 * n + 1) ** dim > max_points:
            return vals, h


def self_convolution_error(spec, points_per_axis=None, box_length=None):
    """Sup-norm gap between a direct periodic FFT convolution ``W^eta * W^eta``
    of sampled values and the closed form ``V^eta``."""
    width = spec.width
    if box_length is None:
        box_length = 24.0 * width
    if points_per_axis is None:
        points_per_axis = 128 if spec.dim == 1 else 64
        while box_length / points_per_axis > width / 8:
            points_per_axis *= 2
    m = points_per_axis
    h = box_length / m
    x = (np.arange(m) - m // 2) * h
    pts = np.stack(np.meshgrid(*([x] * spec.dim), indexing="ij"), axis=-1)
    w = spec.w(pts)
    # origin moved to index 0 so the circular convolution is centred
    w0 = np.fft.ifftshift(w)
    conv = np.real(np.fft.ifftn(np.fft.fftn(w0) ** 2)) * h**spec.dim
    conv = np.fft.fftshift(conv)
    return float(np.max(np.abs(conv - spec.v(pts))))


@dataclass
class AssumptionReport:
    mass_error: float
    moments: list
    fourier_C: float
    fourier_rate: float
    beta_ok: bool
    derivative_constants: dict = field(default_factory=dict)
    closed_form_error: float = 0.0
    decay_ok: bool = True
    derivatives_ok: bool = True
    passed: bool = True

    def to_dict(self):
        out = asdict(self)
        out["moments"] = [[int(l), float(v)] for l, v in self.moments]
        out["derivative_constants"] = {str(k): float(v) for k, v in self.derivative_constants.items()}
        return out

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), sort_keys=True, **kwargs)


def _fourier_axis_profile(spec, lam, orders=(0, 1, 2)):
    """Numerical ``D^k F(W)(lam e_1)`` for the unscaled base mollifier.

    The first-coordinate marginal is obtained by trapezoid quadrature over
    the remaining coordinates, then transformed by quadrature.
    """
    base = MollifierSpec(spec.dim, 1.0, spec.family, spec.base_std)
    radius = 12.0 * spec.base_std
    n = 2048 if spec.dim == 1 else (128 if spec.dim == 2 else 48)
    x = _axis_nodes(radius, n)
    h = x[1] - x[0]
    if spec.dim == 1:
        marginal = base.w(x)
    else:
        pts = np.stack(np.meshgrid(*([x] * spec.dim), indexing="ij"), axis=-1)
        marginal = np.sum(base.w(pts), axis=tuple(range(1, spec.dim))) * h ** (spec.dim - 1)
    phase = np.outer(lam, x)
    out = {}
    for k in orders:
        if k == 0:
            out[k] = np.cos(phase) @ marginal * h
        elif k == 1:
            out[k] = -(np.sin(phase) @ (x * marginal)) * h
        elif k == 2:
            out[k] = -(np.cos(phase) @ (x * x * marginal)) * h
        else:
            raise ValueError("only derivative orders up to 2 are checked")
    return out


def verify_assumptions(spec, law, moment_orders=(1, 2, 4), rate=1.0, lam_max=20.0, strict=True):
    """Numerically check the kernel assumptions for ``spec`` and ``law``.

    Checks the quadrature mass of ``W^eta``, finiteness of the absolute
    moments, exponential decay of the Fourier transform of ``W`` on a
    ``lambda``-grid up to ``lam_max`` (prefactor fitted for the given decay
    ``rate``), the derivative bound for orders 1 and 2, and the admissible
    range of ``beta``.  With ``strict`` a failed check raises
    :class:`AssumptionViolation`.
    """
    if spec.family != "gaussian":
        raise UnsupportedFamilyError(f"no assumption checks for family {spec.family!r}")
    radius = 12.0 * spec.width
    moment_fns = [lambda p, l=l: np.linalg.norm(p, axis=-1) ** l * spec.w(p) for l in moment_orders]
    vals, _ = tensor_quadrature([spec.w, *moment_fns], spec.dim, radius)
    mass_error = abs(vals[0] - 1.0)
    moments = [(int(l), v) for l, v in zip(moment_orders, vals[1:])]

    lam = np.linspace(0.0, lam_max, 401)
    prof = _fourier_axis_profile(spec, lam)
    f0 = prof[0]
    closed = np.exp(-0.5 * spec.base_std**2 * lam**2)
    closed_form_error = float(np.max(np.abs(f0 - closed)))
    envelope = np.abs(f0) * np.exp(rate * lam)
    fourier_C = float(np.max(envelope))
    # decay must dominate: the envelope may not grow towards the end of the grid
    tail = envelope[lam >= 0.75 * lam_max]
    decay_ok = bool(np.all(np.isfinite(envelope)) and np.max(tail) <= fourier_C and closed_form_error < 1e-8)

    reliable = np.abs(f0) > 1e-10
    derivative_constants = {}
    derivatives_ok = True
    for order in (1, 2):
        ratio = np.abs(prof[order][reliable]) / ((1 + lam[reliable] ** order) * np.abs(f0[reliable]))
        derivative_constants[order] = float(np.max(ratio))
        half = len(ratio) // 2
        growth = np.max(ratio[-max(1, len(ratio) // 8):]) / max(np.max(ratio[: half + 1]), 1e-300)
        derivatives_ok &= bool(np.isfinite(derivative_constants[order]) and growth <= 1.5)

    beta_ok = bool(0 < law.beta < law.upper_bound) and law.dim == spec.dim
    moments_ok = all(math.isfinite(v) and v > 0 for _, v in moments)
    passed = bool(mass_error < 1e-8 and moments_ok and decay_ok and derivatives_ok and beta_ok)
    report = AssumptionReport(
        mass_error=mass_error,
        moments=moments,
        fourier_C=fourier_C,
        fourier_rate=float(rate),
        beta_ok=beta_ok,
        derivative_constants=derivative_constants,
        closed_form_error=closed_form_error,
        decay_ok=decay_ok,
        derivatives_ok=derivatives_ok,
        passed=passed,
    )
    if strict and not passed:
        raise AssumptionViolation(f"kernel assumption check failed: {report.to_dict()}")
    return report


# ---------------------------------------------------------------------------
# Coulomb kernel


def _blend_polynomial(dim):
    """Quintic on ``[1/2, 1]`` joining ``2^d u`` to ``u^(1-d)`` with C^2 contact.

    Solved in ``s = 4u - 3`` on ``[-1, 1]`` so evaluation stays well conditioned.
    """
    c = 2.0**dim
    # derivatives in u are 4^k times derivatives in s
    ends = ((-1.0, (c * 0.5, c, 0.0)), (1.0, (1.0, 1.0 - dim, dim * (dim - 1.0))))
    rows, rhs = [], []
    for s, vals in ends:
        for k, target in enumerate(vals):
            rows.append([math.perm(p, k) * s ** (p - k) if p >= k else 0.0 for p in range(6)])
            rhs.append(target / 4.0**k)
    coeffs = np.linalg.solve(np.array(rows), np.array(rhs))
    return Polynomial(coeffs, domain=[0.5, 1.0], window=[-1.0, 1.0])


@dataclass(frozen=True)
class CoulombSpec:
    """Regularized Coulomb kernel ``Phi^eta`` with ``grad Phi = x / |x|^d``.

    The radial derivative is ``eta^(1-d) F(|x| / eta)`` where ``F(u) = 2^d u``
    for ``u <= 1/2``, a quintic on ``[1/2, 1]`` and ``u^(1-d)`` beyond, so the
    field is exact for ``|x| >= eta``.  ``constant`` is the measured ``C`` with
    ``||D^k Phi^eta||_inf <= C eta^-(d-2+k)``.
    """

    dim: int
    kappa: int
    bandwidth: float
    constant: float = field(init=False, compare=False)
    _poly: Polynomial = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 2:
            raise ConfigurationError(f"Coulomb kernels need d >= 2, got {self.dim}")
        if self.kappa not in (1, -1):
            raise ConfigurationError(f"kappa must be +1 or -1, got {self.kappa}")
        if not self.bandwidth > 0:
            raise ConfigurationError(f"bandwidth must be positive, got {self.bandwidth}")
        object.__setattr__(self, "_poly", _blend_polynomial(self.dim))
        object.__setattr__(self, "constant", max(self.measured_constants().values()))

    # profile in the scaled radius u = r / eta
    def _profile(self, u):
        d = self.dim
        u = np.asarray(u, dtype=float)
        safe = np.where(u > 0, u, 1.0)
        inner = 2.0**d * u
        blend = self._poly(u)
        outer = safe ** (1 - d)
        return np.where(u <= 0.5, inner, np.where(u < 1.0, blend, outer))

    def _profile_deriv(self, u):
        d = self.dim
        u = np.asarray(u, dtype=float)
        safe = np.where(u > 0, u, 1.0)
        return np.where(
            u <= 0.5, 2.0**d, np.where(u < 1.0, self._poly.deriv()(u), (1 - d) * safe ** (-d))
        )

    def _potential_profile(self, u):
        """``Phi^eta(u eta) = eta^(2-d) P(u)`` (plus ``log eta`` when d=2)."""
        d = self.dim
        u = np.asarray(u, dtype=float)
        safe = np.where(u > 0, u, 1.0)
        if d == 2:
            outer = np.log(safe)
        else:
            outer = -(safe ** (2 - d)) / (d - 2)
        outer_at_1 = 0.0 if d == 2 else -1.0 / (d - 2)
        integ = self._poly.integ()
        blend = outer_at_1 - (integ(1.0) - integ(u))
        inner_edge = outer_at_1 - (integ(1.0) - integ(0.5))
        inner = inner_edge - 2.0**d * (0.125 - 0.5 * u * u)
        return np.where(u <= 0.5, inner, np.where(u < 1.0, blend, outer))

    def measured_constants(self, samples=60001):
        u = np.linspace(0.0, 4.0, samples)[1:]
        out = {
            1: float(np.max(np.abs(self._profile(u)))),
            2: float(np.max(np.maximum(np.abs(self._profile(u) / u), np.abs(self._profile_deriv(u))))),
        }
        if self.dim >= 3:
            out[0] = float(np.max(np.abs(self._potential_profile(u))))
        return out

    def potential(self, x):
        x = as_points(x, self.dim)
        r = np.linalg.norm(x, axis=-1)
        eta, d = self.bandwidth, self.dim
        val = eta ** (2 - d) * self._potential_profile(r / eta)
        if d == 2:
            val = val + np.log(eta)
        return val

    def grad(self, x):
        """Regularized field ``grad Phi^eta(x)``."""
        x = as_points(x, self.dim)
        eta, d = self.bandwidth, self.dim
        r = np.linalg.norm(x, axis=-1)
        u = r / eta
        # f(r)/r with the inner branch written without division
        safe = np.where(r > 0, r, 1.0)
        g = np.where(u <= 0.5, eta ** (-d) * 2.0**d, eta ** (1 - d) * self._profile(u) / safe)
        return x * g[..., None]

    def hessian(self, x):
        x = as_points(x, self.dim)
        eta, d = self.bandwidth, self.dim
        r = np.linalg.norm(x, axis=-1)
        u = r / eta
        safe = np.where(r > 0, r, 1.0)
        f_over_r = np.where(u <= 0.5, eta ** (-d) * 2.0**d, eta ** (1 - d) * self._profile(u) / safe)
        fprime = eta ** (-d) * self._profile_deriv(u)
        xhat = x / safe[..., None]
        eye = np.eye(d)
        return f_over_r[..., None, None] * eye + (fprime - f_over_r)[..., None, None] * (
            xhat[..., :, None] * xhat[..., None, :]
        )

    def to_dict(self):
        return {"dim": self.dim, "kappa": self.kappa, "bandwidth": self.bandwidth, "constant": self.constant}


def coulomb_grad_phi(spec, x):
    """Unregularized ``x / |x|^d``; raises at the origin."""
    x = as_points(x, spec.dim)
    r = np.linalg.norm(x, axis=-1)
    if np.any(r == 0):
        raise SingularityError("grad Phi is singular at x = 0")
    return x / r[..., None] ** spec.dim


def coulomb_grad_phi_reg(spec, x):
    return spec.grad(x)
