"""Grids, spectral transforms, derivatives and the Leray/Helmholtz projections.

Transform convention
--------------------
Fields on periodic boxes (``periodic3`` and the doubled ``hybrid_slab``) are
transformed with a unitary real FFT over the three spatial axes, the third axis
being the half-spectrum (rfft) axis::

    u_hat[k] = N^{-1/2} * sum_x u(x) exp(-i k.x_index)

so that ``sum_x |u|^2 = sum_k w_k |u_hat[k]|^2`` where ``w_k`` is 1 on the
``k3 = 0`` and ``k3 = N3/2`` planes and 2 elsewhere. Physical quadrature is
``sum * cell_volume``.

Odd derivative multipliers drop the Nyquist wavenumber so that differentiation,
divergence and projection stay exactly real and mutually consistent.

``FFT_WORKERS_ENV`` (``ENFLUX_WORKERS``) sets the number of FFT threads.
"""

from __future__ import annotations

import enum
import math
import os
from dataclasses import dataclass, field as dc_field
from functools import cached_property

import numpy as np
import scipy.fft as sfft

from .errors import DataError, DomainError, RangeError, ValidationError

FFT_WORKERS_ENV = "ENFLUX_WORKERS"

# default divergence tolerance, relative to max |u_hat|
DIV_TOL_REL = 1e-10


def fft_workers() -> int:
    raw = os.environ.get(FFT_WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ValidationError(f"{FFT_WORKERS_ENV} must be an integer, got {raw!r}") from exc
    return max(1, n)


class DomainKind(str, enum.Enum):
    PERIODIC3 = "periodic3"
    HYBRID_SLAB = "hybrid_slab"
    HALF_SLAB = "half_slab"


@dataclass(frozen=True)
class Domain:
    """Box geometry.

    For ``hybrid_slab`` the third length is the half-length: x3 in [-L3, L3).
    For ``half_slab`` x3 runs over [0, L3] (``side=+1``) or [-L3, 0] (``side=-1``).
    """

    kind: DomainKind
    lengths: tuple[float, float, float]
    side: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", DomainKind(self.kind))
        lengths = tuple(float(v) for v in self.lengths)
        if len(lengths) != 3:
            raise ValidationError("lengths must have three entries")
        if not all(math.isfinite(v) and v > 0 for v in lengths):
            raise ValidationError(f"lengths must be positive and finite, got {lengths}")
        object.__setattr__(self, "lengths", lengths)
        if self.side not in (1, -1):
            raise ValidationError("side must be +1 or -1")
        if self.side == -1 and self.kind is not DomainKind.HALF_SLAB:
            raise ValidationError("side=-1 is only meaningful for half_slab")

    @classmethod
    def periodic(cls, lengths=(2 * math.pi,) * 3) -> "Domain":
        return cls(DomainKind.PERIODIC3, tuple(lengths))

    @classmethod
    def hybrid(cls, lengths) -> "Domain":
        return cls(DomainKind.HYBRID_SLAB, tuple(lengths))

    @classmethod
    def half(cls, lengths, side: int = 1) -> "Domain":
        return cls(DomainKind.HALF_SLAB, tuple(lengths), side)


@dataclass(frozen=True)
class Grid:
    """Uniform grid on a domain.

    ``resolution`` counts intervals. Periodic axes have that many nodes; the
    x3 axis of a half slab is closed and carries ``N3 + 1`` nodes, wall and far
    end included.
    """

    domain: Domain
    resolution: tuple[int, int, int]

    def __post_init__(self) -> None:
        res = tuple(int(n) for n in self.resolution)
        if len(res) != 3:
            raise ValidationError("resolution must have three entries")
        if any(n <= 0 for n in res):
            raise ValidationError(f"resolution must be positive, got {res}")
        if any(n % 2 for n in res):
            raise ValidationError(f"resolution must be even, got {res}")
        object.__setattr__(self, "resolution", res)

    @classmethod
    def periodic(cls, n, lengths=(2 * math.pi,) * 3) -> "Grid":
        res = (n, n, n) if np.isscalar(n) else tuple(n)
        return cls(Domain.periodic(lengths), res)

    @property
    def kind(self) -> DomainKind:
        return self.domain.kind

    @property
    def is_periodic(self) -> bool:
        return self.kind is not DomainKind.HALF_SLAB

    @property
    def periods(self) -> tuple[float, float, float]:
        L1, L2, L3 = self.domain.lengths
        if self.kind is DomainKind.HYBRID_SLAB:
            return (L1, L2, 2.0 * L3)
        return (L1, L2, L3)

    @property
    def spacing(self) -> tuple[float, float, float]:
        return tuple(p / n for p, n in zip(self.periods, self.resolution))

    @property
    def cell_volume(self) -> float:
        h1, h2, h3 = self.spacing
        return h1 * h2 * h3

    @property
    def shape(self) -> tuple[int, int, int]:
        N1, N2, N3 = self.resolution
        if self.kind is DomainKind.HALF_SLAB:
            return (N1, N2, N3 + 1)
        return (N1, N2, N3)

    @property
    def spectral_shape(self) -> tuple[int, int, int]:
        N1, N2, N3 = self.require_periodic().resolution
        return (N1, N2, N3 // 2 + 1)

    def coords(self, axis: int) -> np.ndarray:
        """Node coordinates along axis 0, 1 or 2."""
        n = self.shape[axis]
        h = self.spacing[axis]
        j = np.arange(n, dtype=np.float64)
        if axis < 2 or self.kind is DomainKind.PERIODIC3:
            return j * h
        L3 = self.domain.lengths[2]
        if self.kind is DomainKind.HYBRID_SLAB:
            return -L3 + j * h
        if self.domain.side == 1:
            return j * h
        return -L3 + j * h

    def mesh(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return np.meshgrid(self.coords(0), self.coords(1), self.coords(2), indexing="ij", sparse=True)

    def x3_weights(self) -> np.ndarray:
        """Quadrature weights along x3 (trapezoid ends on the closed half-slab axis)."""
        w = np.ones(self.shape[2])
        if self.kind is DomainKind.HALF_SLAB:
            w[0] = w[-1] = 0.5
        return w

    def require_periodic(self) -> "Grid":
        if not self.is_periodic:
            raise DomainError("operation needs a periodic or hybrid-slab grid; extend half-slab fields first")
        return self

    # ---- wavenumbers (periodic grids only) ----

    @cached_property
    def mode_indices(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Integer mode numbers, broadcastable to the spectral shape."""
        N1, N2, N3 = self.require_periodic().resolution
        n1 = np.rint(sfft.fftfreq(N1) * N1).astype(np.int64)
        n2 = np.rint(sfft.fftfreq(N2) * N2).astype(np.int64)
        n3 = np.arange(N3 // 2 + 1, dtype=np.int64)
        return n1[:, None, None], n2[None, :, None], n3[None, None, :]

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return tuple(2.0 * math.pi / p * n.astype(np.float64) for p, n in zip(self.periods, self.mode_indices))

    @cached_property
    def odd_wavenumbers(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Wavenumbers with the Nyquist entry zeroed, for odd-order derivatives."""
        out = []
        for k, n, N in zip(self.wavenumbers, self.mode_indices, self.resolution):
            out.append(np.where(np.abs(n) == N // 2, 0.0, k))
        return tuple(out)

    @cached_property
    def k_squared(self) -> np.ndarray:
        k1, k2, k3 = self.wavenumbers
        return k1**2 + k2**2 + k3**2

    @cached_property
    def parseval_weights(self) -> np.ndarray:
        N3 = self.resolution[2]
        w = np.full(N3 // 2 + 1, 2.0)
        w[0] = 1.0
        w[-1] = 1.0
        return w[None, None, :]

    def dealias_mask(self) -> np.ndarray:
        """True on modes kept by the two-thirds rule (3|n_i| < N_i on every axis)."""
        n1, n2, n3 = self.mode_indices
        N1, N2, N3 = self.resolution
        return (3 * np.abs(n1) < N1) & (3 * np.abs(n2) < N2) & (3 * n3 < N3)


def _readonly(arr: np.ndarray) -> np.ndarray:
    view = arr.view()
    view.flags.writeable = False
    return view


@dataclass(frozen=True, eq=False)
class VelocityField:
    """Three real components sampled on ``grid`` nodes, shape ``(3, *grid.shape)``."""

    grid: Grid
    data: np.ndarray = dc_field(repr=False)

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.shape != (3, *self.grid.shape):
            raise DataError(f"field data shape {arr.shape} does not match grid {(3, *self.grid.shape)}")
        if not np.all(np.isfinite(arr)):
            raise DataError("field contains non-finite samples")
        object.__setattr__(self, "data", _readonly(arr))

    def with_data(self, data: np.ndarray) -> "VelocityField":
        return VelocityField(self.grid, data)

    def __add__(self, other: "VelocityField") -> "VelocityField":
        _same_grid(self, other)
        return self.with_data(self.data + other.data)

    def __sub__(self, other: "VelocityField") -> "VelocityField":
        _same_grid(self, other)
        return self.with_data(self.data - other.data)

    def __mul__(self, scalar: float) -> "VelocityField":
        return self.with_data(self.data * float(scalar))

    __rmul__ = __mul__

    def __neg__(self) -> "VelocityField":
        return self.with_data(-self.data)

    @classmethod
    def zeros(cls, grid: Grid) -> "VelocityField":
        return cls(grid, np.zeros((3, *grid.shape)))


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Half-spectrum coefficients of a real field, shape ``(3, N1, N2, N3//2+1)``."""

    grid: Grid
    coeffs: np.ndarray = dc_field(repr=False)

    def __post_init__(self) -> None:
        arr = np.asarray(self.coeffs, dtype=np.complex128)
        if arr.shape != (3, *self.grid.spectral_shape):
            raise DataError(f"coefficient shape {arr.shape} does not match grid")
        object.__setattr__(self, "coeffs", _readonly(arr))


def _same_grid(a, b) -> None:
    if a.grid != b.grid:
        raise ValidationError("fields live on different grids")


# ---- raw transforms on arrays whose last three axes are spatial ----

def rfft3(arr: np.ndarray) -> np.ndarray:
    return sfft.rfftn(arr, axes=(-3, -2, -1), norm="ortho", workers=fft_workers())


def irfft3(arr: np.ndarray, shape: tuple[int, int, int]) -> np.ndarray:
    return sfft.irfftn(arr, s=shape, axes=(-3, -2, -1), norm="ortho", workers=fft_workers())


def forward(field: VelocityField) -> SpectralField:
    grid = field.grid.require_periodic()
    return SpectralField(grid, rfft3(field.data))


def inverse(spec: SpectralField) -> VelocityField:
    return VelocityField(spec.grid, irfft3(spec.coeffs, spec.grid.shape))


def _check_axis(axis: int) -> int:
    if axis not in (1, 2, 3):
        raise RangeError(f"axis must be 1, 2 or 3, got {axis}")
    return axis - 1


def derivative(spec: SpectralField, axis: int) -> SpectralField:
    """Spectral d/dx_axis (axis numbered 1..3)."""
    k = spec.grid.odd_wavenumbers[_check_axis(axis)]
    return SpectralField(spec.grid, 1j * k * spec.coeffs)


def divergence_hat(grid: Grid, coeffs: np.ndarray) -> np.ndarray:
    k1, k2, k3 = grid.odd_wavenumbers
    return 1j * (k1 * coeffs[0] + k2 * coeffs[1] + k3 * coeffs[2])


def divergence(field: VelocityField) -> np.ndarray:
    grid = field.grid.require_periodic()
    return irfft3(divergence_hat(grid, rfft3(field.data)), grid.shape)


def divergence_norm(field: VelocityField) -> tuple[float, float]:
    """Return (max |div u|, max |u_hat|) so callers can form the relative test."""
    grid = field.grid.require_periodic()
    u_hat = rfft3(field.data)
    div = irfft3(divergence_hat(grid, u_hat), grid.shape)
    return float(np.max(np.abs(div))), float(np.max(np.abs(u_hat)))


def is_divergence_free(field: VelocityField, tol_rel: float | None = None) -> bool:
    tol_rel = DIV_TOL_REL if tol_rel is None else tol_rel
    div, scale = divergence_norm(field)
    return div <= tol_rel * max(scale, np.finfo(float).tiny)


def gradient(scalar: np.ndarray, grid: Grid) -> VelocityField:
    grid.require_periodic()
    s_hat = rfft3(np.asarray(scalar, dtype=np.float64))
    k = grid.odd_wavenumbers
    return VelocityField(grid, irfft3(np.stack([1j * ki * s_hat for ki in k]), grid.shape))


def curl(field: VelocityField) -> VelocityField:
    grid = field.grid.require_periodic()
    u = rfft3(field.data)
    k1, k2, k3 = grid.odd_wavenumbers
    w = np.stack([
        1j * (k2 * u[2] - k3 * u[1]),
        1j * (k3 * u[0] - k1 * u[2]),
        1j * (k1 * u[1] - k2 * u[0]),
    ])
    return VelocityField(grid, irfft3(w, grid.shape))


def project_hat(grid: Grid, coeffs: np.ndarray) -> np.ndarray:
    """Apply I - k k^T/|k|^2 to coefficients; modes with k = 0 pass through."""
    k1, k2, k3 = grid.odd_wavenumbers
    kk = k1**2 + k2**2 + k3**2
    inv = np.divide(1.0, kk, out=np.zeros_like(kk), where=kk > 0)
    kdotu = (k1 * coeffs[0] + k2 * coeffs[1] + k3 * coeffs[2]) * inv
    return np.stack([coeffs[0] - k1 * kdotu, coeffs[1] - k2 * kdotu, coeffs[2] - k3 * kdotu])


def leray_project(field: VelocityField) -> VelocityField:
    grid = field.grid.require_periodic()
    return VelocityField(grid, irfft3(project_hat(grid, rfft3(field.data)), grid.shape))


def helmholtz(field: VelocityField) -> tuple[VelocityField, np.ndarray]:
    """Split ``field`` into a divergence-free part and the gradient potential chi.

    Returns ``(phi, chi)`` with ``field = phi + grad(chi)``; chi has zero mean.
    """
    grid = field.grid.require_periodic()
    u = rfft3(field.data)
    k1, k2, k3 = grid.odd_wavenumbers
    kk = k1**2 + k2**2 + k3**2
    inv = np.divide(1.0, kk, out=np.zeros_like(kk), where=kk > 0)
    chi_hat = -1j * (k1 * u[0] + k2 * u[1] + k3 * u[2]) * inv
    phi_hat = project_hat(grid, u)
    return VelocityField(grid, irfft3(phi_hat, grid.shape)), irfft3(chi_hat, grid.shape)


def _coeff_norm_sq(grid: Grid, coeffs: np.ndarray, s: float) -> float:
    weight = grid.parseval_weights if s == 0 else grid.parseval_weights * (1.0 + grid.k_squared) ** s
    return float(np.sum(weight * (coeffs.real**2 + coeffs.imag**2))) * grid.cell_volume


def sobolev_norm(field: VelocityField, s: float) -> float:
    """Discrete H^s norm with weights (1 + |k|^2)^s in coefficient space."""
    if not s >= 0:
        raise RangeError(f"Sobolev index must be >= 0, got {s}")
    grid = field.grid.require_periodic()
    return math.sqrt(_coeff_norm_sq(grid, rfft3(field.data), s))


def helmholtz_constant(field: VelocityField, s: float) -> float:
    """Measured ratio (||phi||_s + ||grad chi||_s) / ||field||_s of the decomposition."""
    phi, chi = helmholtz(field)
    total = sobolev_norm(field, s)
    if total == 0:
        return 1.0
    return (sobolev_norm(phi, s) + sobolev_norm(gradient(chi, field.grid), s)) / total


def energy(field: VelocityField) -> float:
    """||u||^2 by node quadrature (trapezoid ends on a half slab)."""
    w = field.grid.x3_weights()
    return float(np.sum(np.sum(field.data**2, axis=0) * w)) * field.grid.cell_volume


def inner(a: VelocityField, b: VelocityField) -> float:
    _same_grid(a, b)
    w = a.grid.x3_weights()
    return float(np.sum(np.sum(a.data * b.data, axis=0) * w)) * a.grid.cell_volume


def lp_norm(field: VelocityField, p: float) -> float:
    w = field.grid.x3_weights()
    mag = np.sqrt(np.sum(field.data**2, axis=0))
    return float(np.sum(mag**p * w) * field.grid.cell_volume) ** (1.0 / p)


# ---- shifts ----

def _node_offsets(grid: Grid, y) -> tuple[int, int, int] | None:
    out = []
    for yi, hi in zip(y, grid.spacing):
        q = yi / hi
        m = round(q)
        if abs(q - m) > 1e-10:
            return None
        out.append(int(m))
    return tuple(out)


def shift_phase(grid: Grid, y) -> np.ndarray:
    """Multiplier taking coefficients of u to those of u(. + y)."""
    factors = []
    for k, n, N, yi in zip(grid.wavenumbers, grid.mode_indices, grid.resolution, y):
        f = np.exp(1j * k * yi)
        nyq = np.abs(n) == N // 2
        f = np.where(nyq, np.cos(k * yi) + 0j, f)
        factors.append(f)
    return factors[0] * factors[1] * factors[2]


def check_shift(grid: Grid, y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (3,) or not np.all(np.isfinite(y)):
        raise RangeError("shift must be a finite 3-vector")
    for yi, p in zip(y, grid.periods):
        if abs(yi) > p / 2 * (1 + 1e-12):
            raise RangeError(f"shift component {yi} exceeds half the box period {p / 2}")
    return y


def shift_array(grid: Grid, data: np.ndarray, y, data_hat: np.ndarray | None = None) -> np.ndarray:
    """Sample ``data`` (leading axes arbitrary) at x + y by exact rolls or phase shift."""
    offs = _node_offsets(grid, y)
    if offs is not None:
        return np.roll(data, shift=tuple(-m for m in offs), axis=(-3, -2, -1))
    if data_hat is None:
        data_hat = rfft3(data)
    return irfft3(data_hat * shift_phase(grid, y), grid.shape)


def shift_sample(field: VelocityField, y) -> VelocityField:
    """Return u(. + y) on the same grid (periodic or hybrid slab)."""
    grid = field.grid.require_periodic()
    y = check_shift(grid, y)
    return VelocityField(grid, shift_array(grid, field.data, y))
