"""Periodic tensor-product grids, spectral convolution and particle/mesh transfer.

Grid nodes sit at ``x_k = k h`` for ``k = 0, ..., M-1`` with ``h = L / M``.
Densities are stored as point values; integrals are Riemann sums ``h^d sum``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from .errors import ResolutionError, ShapeError
from .kernels import CoulombSpec, MollifierSpec

__all__ = [
    "GridDensity",
    "convolve",
    "gaussian_density",
    "interp_cic",
    "interp_gaussian",
    "minimum_image",
    "spread_cic",
    "spread_gaussian",
    "GaussianStencil",
]


def _is_power_of_two(m):
    return m >= 2 and (m & (m - 1)) == 0


def minimum_image(dx, box_length):
    """Wrap displacements into ``[-L/2, L/2]`` (exactly odd in ``dx``)."""
    return dx - box_length * np.round(dx / box_length)


@dataclass(frozen=True, eq=False)
class GridDensity:
    """Point values of a density on the periodic box ``[0, L)^d``.

    ``values`` is copied and made read-only.  Mass and sign invariants are
    checked by :meth:`check` rather than on construction, so that signed
    fields and scaled densities can flow through the same code paths.
    """

    values: np.ndarray
    box_length: float
    time: float = 0.0

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim < 1 or len(set(vals.shape)) != 1:
            raise ShapeError(f"grid values must be a cube, got shape {vals.shape}")
        if not _is_power_of_two(vals.shape[0]):
            raise ShapeError(f"points per axis must be a power of two, got {vals.shape[0]}")
        if not self.box_length > 0:
            raise ShapeError("box_length must be positive")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def dims(self):
        return self.values.ndim

    @property
    def points_per_axis(self):
        return self.values.shape[0]

    @property
    def spacing(self):
        return self.box_length / self.points_per_axis

    @property
    def cell_volume(self):
        return self.spacing**self.dims

    def mass(self):
        return float(np.sum(self.values) * self.cell_volume)

    def axis(self):
        return np.arange(self.points_per_axis) * self.spacing

    def mesh(self):
        """Node coordinates with shape ``(M, ..., M, d)``."""
        ax = self.axis()
        return np.stack(np.meshgrid(*([ax] * self.dims), indexing="ij"), axis=-1)

    def with_values(self, values, time=None):
        return GridDensity(values, self.box_length, self.time if time is None else time)

    def same_grid(self, other):
        return (
            self.values.shape == other.values.shape
            and math.isclose(self.box_length, other.box_length, rel_tol=1e-12)
        )

    def check(self, mass_tol=1e-6, neg_tol=0.0):
        """Raise if the density is not a unit-mass non-negative field."""
        from .errors import NormalizationError

        if not np.all(np.isfinite(self.values)):
            raise NormalizationError("density has non-finite values")
        if abs(self.mass() - 1.0) > mass_tol:
            raise NormalizationError(f"density mass {self.mass():.12g} differs from 1 by more than {mass_tol}")
        if np.min(self.values) < -neg_tol:
            raise NormalizationError(f"density has negative values down to {np.min(self.values):.3g}")
        return self

    def subsample(self, factor):
        """Keep every ``factor``-th node (coarser grid over the same box)."""
        sl = (slice(None, None, factor),) * self.dims
        return GridDensity(self.values[sl], self.box_length, self.time)

    def shifted(self, offsets):
        """Roll by integer node offsets along each axis."""
        return self.with_values(np.roll(self.values, offsets, axis=tuple(range(self.dims))))


def gaussian_density(points_per_axis, box_length, dim, std, center=None, time=0.0):
    """Isotropic Gaussian sampled on the grid (centre defaults to the box centre)."""
    m = points_per_axis
    h = box_length / m
    if center is None:
        center = np.full(dim, box_length / 2)
    center = np.broadcast_to(np.asarray(center, dtype=float), (dim,))
    ax = np.arange(m) * h
    vals = np.ones((m,) * dim)
    for a in range(dim):
        dx = minimum_image(ax - center[a], box_length)
        prof = np.exp(-0.5 * dx * dx / std**2) / math.sqrt(2 * math.pi * std**2)
        shape = [1] * dim
        shape[a] = m
        vals = vals * prof.reshape(shape)
    return GridDensity(vals, box_length, time)


# ---------------------------------------------------------------------------
# Spectral helpers


@functools.lru_cache(maxsize=64)
def wavenumbers(points_per_axis, box_length, dim):
    """Broadcastable angular wavenumbers for ``rfftn`` layouts, plus ``|k|^2``.

    Odd-derivative multipliers should use :func:`derivative_wavenumbers`,
    which zero the Nyquist mode.
    """
    m = points_per_axis
    full = 2 * np.pi * sfft.fftfreq(m, d=box_length / m)
    half = 2 * np.pi * sfft.rfftfreq(m, d=box_length / m)
    ks = []
    for a in range(dim):
        k = half if a == dim - 1 else full
        shape = [1] * dim
        shape[a] = k.size
        ks.append(k.reshape(shape))
    k2 = sum(k * k for k in ks)
    return tuple(ks), k2


@functools.lru_cache(maxsize=64)
def derivative_wavenumbers(points_per_axis, box_length, dim):
    ks, _ = wavenumbers(points_per_axis, box_length, dim)
    out = []
    for k in ks:
        k = k.copy()
        k[np.isclose(np.abs(k), np.pi * points_per_axis / box_length)] = 0.0
        out.append(k)
    return tuple(out)


def rfft(values, workers=None):
    return sfft.rfftn(values, workers=workers)


def irfft(coeffs, shape, workers=None):
    return sfft.irfftn(coeffs, s=shape, workers=workers)


def apply_multiplier(values, multiplier):
    return irfft(rfft(values) * multiplier, values.shape)


def gradient_from_hat(hat, shape, box_length):
    """Spectral gradient components from Fourier coefficients ``hat``."""
    dim = len(shape)
    dks = derivative_wavenumbers(shape[0], box_length, dim)
    return np.stack([irfft(1j * k * hat, shape) for k in dks])


# ---------------------------------------------------------------------------
# Convolution


def _check_resolved(spec, spacing, factor=4.0):
    if spacing > spec.bandwidth / factor * (1 + 1e-9):
        raise ResolutionError(
            f"grid spacing {spacing:.4g} does not resolve bandwidth {spec.bandwidth:.4g} (need h <= eta/{factor:g})"
        )


@functools.lru_cache(maxsize=32)
def _coulomb_kernel_hat(spec, points_per_axis, box_length):
    """Transforms of the sampled field ``grad Phi^eta`` at minimum-image nodes.

    Nodes on the Nyquist planes are zeroed so the sampled field stays exactly
    odd under reflection.
    """
    m, d = points_per_axis, spec.dim
    h = box_length / m
    idx = np.arange(m)
    disp = np.where(idx < m // 2, idx, idx - m) * h
    pts = np.stack(np.meshgrid(*([disp] * d), indexing="ij"), axis=-1)
    field = spec.grad(pts)
    nyq = np.zeros((m,) * d, dtype=bool)
    for a in range(d):
        sl = [slice(None)] * d
        sl[a] = m // 2
        nyq[tuple(sl)] = True
    field[nyq] = 0.0
    hats = np.stack([rfft(field[..., a]) for a in range(d)]) * h**d
    hats.setflags(write=False)
    return hats


def coulomb_field(values, spec, box_length):
    """``grad Phi^eta * rho`` on the grid, shape ``(d, M, ..., M)``."""
    hats = _coulomb_kernel_hat(spec, values.shape[0], float(box_length))
    rho_hat = rfft(values)
    return np.stack([irfft(rho_hat * hats[a], values.shape) for a in range(spec.dim)])


def convolve(grid, kernel, which="v", gradient=False, check_resolution=True):
    """Periodic FFT convolution of a grid field with a kernel.

    For a :class:`MollifierSpec`, ``which`` selects ``W^eta`` (``"w"``) or
    ``V^eta`` (``"v"``) and the closed-form Fourier multiplier is used;
    ``gradient=True`` returns the ``d`` components of the convolution with
    the kernel gradient, stacked on a leading axis.  A :class:`CoulombSpec`
    always yields ``grad Phi^eta * rho`` from the sampled kernel.
    """
    values = grid.values if isinstance(grid, GridDensity) else np.asarray(grid, dtype=float)
    box = grid.box_length if isinstance(grid, GridDensity) else None
    if box is None:
        raise ShapeError("convolve needs a GridDensity (box length unknown for raw arrays)")
    h = box / values.shape[0]
    if isinstance(kernel, CoulombSpec):
        if check_resolution:
            _check_resolved(kernel, h)
        return coulomb_field(values, kernel, box)
    if not isinstance(kernel, MollifierSpec):
        raise TypeError(f"unsupported kernel {kernel!r}")
    if kernel.dim != values.ndim:
        raise ShapeError(f"kernel dim {kernel.dim} does not match grid dim {values.ndim}")
    if check_resolution:
        _check_resolved(kernel, h)
    _, k2 = wavenumbers(values.shape[0], box, values.ndim)
    mult = kernel.v_hat(k2) if which == "v" else kernel.w_hat(k2)
    hat = rfft(values) * mult
    if gradient:
        return gradient_from_hat(hat, values.shape, box)
    return irfft(hat, values.shape)


# ---------------------------------------------------------------------------
# Particle <-> mesh transfer


def _flat_index(idx, m):
    flat = np.zeros(idx.shape[:-1], dtype=np.int64)
    for a in range(idx.shape[-1]):
        flat = flat * m + idx[..., a]
    return flat


def _cic_stencil(positions, m, box_length):
    """Corner indices ``(N, 2^d)`` and multilinear weights for each particle."""
    n, d = positions.shape
    h = box_length / m
    s = positions / h
    base = np.floor(s)
    frac = s - base
    base = base.astype(np.int64)
    corners = np.array(np.meshgrid(*([[0, 1]] * d), indexing="ij")).reshape(d, -1).T
    idx = (base[:, None, :] + corners[None, :, :]) % m
    w = np.where(corners[None, :, :] == 1, frac[:, None, :], 1.0 - frac[:, None, :])
    return _flat_index(idx, m), np.prod(w, axis=-1)


def spread_cic(positions, points_per_axis, box_length, weights=None):
    """Cloud-in-cell deposit; the Riemann sum of the result equals ``sum(weights)``."""
    positions = np.asarray(positions, dtype=float)
    n, d = positions.shape
    m = points_per_axis
    flat, w = _cic_stencil(positions, m, box_length)
    if weights is None:
        weights = np.full(n, 1.0 / n)
    vals = np.bincount(flat.ravel(), weights=(w * weights[:, None]).ravel(), minlength=m**d)
    return vals.reshape((m,) * d) / (box_length / m) ** d


def interp_cic(field, positions, box_length):
    """Multilinear periodic interpolation of one or several stacked fields.

    ``field`` has shape ``(M,)*d`` or ``(c, M, ..., M)``; the result has
    shape ``(N,)`` or ``(N, c)``.
    """
    positions = np.asarray(positions, dtype=float)
    n, d = positions.shape
    field = np.asarray(field)
    m = field.shape[-1]
    flat, w = _cic_stencil(positions, m, box_length)
    if field.ndim == d:
        return np.sum(field.reshape(-1)[flat] * w, axis=1)
    comps = field.reshape(field.shape[0], -1)
    return np.stack([np.sum(c[flat] * w, axis=1) for c in comps], axis=1)


def _gaussian_stencil(positions, m, box_length, tau, cutoff=7.0):
    """Per-axis node indices and weights ``G_tau(x - x_k)``, each of shape ``(K, N)``.

    Uses ``exp(-(r - jh)^2 / 2tau^2) = exp(-r^2/2tau^2) q^j exp(-j^2 h^2 / 2tau^2)``
    with ``q = exp(r h / tau^2)``, so only two exponentials per particle and axis
    are evaluated (fast Gaussian gridding).  ``m`` must be a power of two.
    """
    n, d = positions.shape
    h = box_length / m
    p = int(math.ceil(cutoff * tau / h))
    offs = np.arange(-p, p + 2)
    const = np.exp(-0.5 * (offs * h / tau) ** 2) / (math.sqrt(2 * math.pi) * tau)
    axis_idx, axis_w = [], []
    for a in range(d):
        s = positions[:, a] / h
        base = np.floor(s)
        r = (s - base) * h
        q = np.exp(r * h / tau**2)
        pw = np.empty((offs.size, n))
        pw[0] = np.exp(-0.5 * (r / tau) ** 2 - p * r * h / tau**2)
        for j in range(1, offs.size):
            np.multiply(pw[j - 1], q, out=pw[j])
        pw *= const[:, None]
        axis_w.append(pw)
        axis_idx.append((base.astype(np.int64)[None, :] + offs[:, None]) & (m - 1))
    return axis_idx, axis_w


def _outer_stencil(axis_idx, axis_w, m):
    flat = axis_idx[0]
    w = axis_w[0]
    for a in range(1, len(axis_idx)):
        n = flat.shape[-1]
        flat = (flat[:, None, :] * m + axis_idx[a][None, :, :]).reshape(-1, n)
        w = (w[:, None, :] * axis_w[a][None, :, :]).reshape(-1, n)
    return flat, w


@dataclass(frozen=True, eq=False)
class GaussianStencil:
    """Flat node indices and weights (shape ``(K^d, N)``) of ``G_tau`` around each particle.

    Built once and shared by spreading and interpolation.
    """

    flat: np.ndarray
    weights: np.ndarray
    points_per_axis: int
    dim: int
    tau: float

    @classmethod
    def build(cls, positions, points_per_axis, box_length, tau):
        positions = np.asarray(positions, dtype=float)
        if not _is_power_of_two(points_per_axis):
            raise ShapeError("Gaussian gridding needs a power-of-two grid")
        flat, w = _outer_stencil(*_gaussian_stencil(positions, points_per_axis, box_length, tau), points_per_axis)
        return cls(flat, w, points_per_axis, positions.shape[1], tau)


def spread_gaussian(positions, points_per_axis, box_length, tau, weights=None, stencil=None):
    """Grid samples of ``sum_j weights_j G_tau(x - X_j)`` (periodic, truncated at 7 tau).

    Without ``weights`` every particle carries mass ``1/N``.
    """
    st = stencil or GaussianStencil.build(positions, points_per_axis, box_length, tau)
    n = st.flat.shape[1]
    m, d = st.points_per_axis, st.dim
    w = st.weights if weights is None else st.weights * np.asarray(weights)[None, :]
    vals = np.bincount(st.flat.ravel(), weights=w.ravel(), minlength=m**d)
    if weights is None:
        vals /= n
    return vals.reshape((m,) * d)


def interp_gaussian(field, positions, box_length, tau, stencil=None):
    """Quadrature ``h^d sum_k G_tau(X_i - x_k) f_k`` for one or several stacked fields."""
    field = np.asarray(field)
    m = field.shape[-1]
    st = stencil or GaussianStencil.build(positions, m, box_length, tau)
    d = st.dim
    hd = (box_length / m) ** d
    if field.ndim == d:
        return np.einsum("ij,ij->j", field.reshape(-1)[st.flat], st.weights) * hd
    comps = field.reshape(field.shape[0], -1)
    return np.stack([np.einsum("ij,ij->j", c[st.flat], st.weights) for c in comps], axis=1) * hd


def gridding_width(spacing):
    """Spreading width used by Gaussian gridding; aliasing error ~exp(-2 pi^2 (tau/h)^2)."""
    return 1.5 * spacing
