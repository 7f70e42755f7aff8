"""The even compactly supported bump mollifier and its convolution.

The profile is ``psi(r) = exp(-1/(1 - r^2))`` for ``r < 1``; ``phi = c * psi(|x|)``
with ``c`` fixing unit mass in R^3, and ``phi_eps(x) = eps^-3 phi(x / eps)``.

A built :class:`Mollifier` carries three views of the same kernel:

* the grid-sampled kernel, renormalized to unit discrete mass, used by
  :func:`convolve`;
* the continuum gradient ``grad phi_eps`` for quadrature at arbitrary points;
* the continuum Fourier transform ``phi_hat(|k| eps)`` for spectral formulas.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from functools import cached_property, lru_cache

import numpy as np
import scipy.fft as sfft
from scipy.special import roots_legendre

from .errors import DomainError, RangeError, ValidationError
from .spectral import Grid, VelocityField, inner, irfft3, rfft3

# discrete unit-mass tolerance after renormalization
QUAD_TOL = 1e-8
# admissible eps: [EPS_MIN_CELLS * max(h), min(period) * EPS_MAX_FRACTION)
EPS_MIN_CELLS = 3.0
EPS_MAX_FRACTION = 0.5

# composite Gauss-Legendre panels on [0, 1], refined toward the flat end r = 1
_PANELS = (0.0, 0.25, 0.5, 0.7, 0.85, 0.95, 1.0)
_RADIAL_NODES = 64
_TRANSFORM_NODES = 128


def bump_profile(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    out = np.zeros_like(r)
    inside = r < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return out


@lru_cache(maxsize=None)
def _radial_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = roots_legendre(n)
    nodes, weights = [], []
    for a, b in zip(_PANELS[:-1], _PANELS[1:]):
        nodes.append(a + 0.5 * (b - a) * (x + 1.0))
        weights.append(0.5 * (b - a) * w)
    return np.concatenate(nodes), np.concatenate(weights)


@lru_cache(maxsize=None)
def bump_normalization() -> float:
    """Constant c with c * int_{R^3} psi(|x|) dx = 1."""
    r, w = _radial_rule(_RADIAL_NODES)
    return 1.0 / (4.0 * math.pi * float(np.sum(w * r**2 * bump_profile(r))))


def bump_transform(q: np.ndarray) -> np.ndarray:
    """Fourier transform of the unit-scale bump at radial wavenumber q.

    phi_hat(q) = 4 pi c int_0^1 r^2 psi(r) sin(q r)/(q r) dr, phi_hat(0) = 1.
    """
    q = np.asarray(q, dtype=np.float64)
    flat = q.ravel()
    uq, inv = np.unique(np.abs(flat), return_inverse=True)
    r, w = _radial_rule(_TRANSFORM_NODES)
    base = 4.0 * math.pi * bump_normalization() * w * r**2 * bump_profile(r)
    vals = np.empty_like(uq)
    step = 2048
    for start in range(0, uq.size, step):
        block = uq[start:start + step]
        vals[start:start + step] = np.sinc(np.outer(block, r) / math.pi) @ base
    return vals[inv].reshape(q.shape)


def admissible_epsilon(grid: Grid) -> tuple[float, float]:
    grid.require_periodic()
    return EPS_MIN_CELLS * max(grid.spacing), EPS_MAX_FRACTION * min(grid.periods)


def _signed_offsets(n: int, h: float) -> np.ndarray:
    m = (np.arange(n) + n // 2) % n - n // 2
    return m.astype(np.float64) * h


@dataclass(frozen=True, eq=False)
class Mollifier:
    epsilon: float
    grid: Grid
    kernel: np.ndarray = dc_field(repr=False)
    renormalization: float = 1.0

    @cached_property
    def kernel_hat(self) -> np.ndarray:
        """Real multiplier applying the sampled kernel in unitary coefficient space."""
        return (sfft.rfftn(self.kernel) * self.grid.cell_volume).real

    @cached_property
    def analytic_multiplier(self) -> np.ndarray:
        """Continuum transform phi_hat(|k| eps) on the grid's wavevectors."""
        return bump_transform(np.sqrt(self.grid.k_squared) * self.epsilon)

    def value(self, points: np.ndarray) -> np.ndarray:
        """Continuum phi_eps at displacements ``points[..., 3]``."""
        points = np.asarray(points, dtype=np.float64)
        r = np.sqrt(np.sum(points**2, axis=-1)) / self.epsilon
        return bump_normalization() * self.epsilon**-3 * bump_profile(r)

    def gradient(self, points: np.ndarray) -> np.ndarray:
        """Continuum grad phi_eps at displacements ``points[..., 3]``."""
        points = np.asarray(points, dtype=np.float64)
        eps = self.epsilon
        rho2 = np.sum(points**2, axis=-1) / eps**2
        scale = np.zeros_like(rho2)
        inside = rho2 < 1.0
        one_minus = 1.0 - rho2[inside]
        scale[inside] = -2.0 * np.exp(-1.0 / one_minus) / one_minus**2
        scale *= bump_normalization() * eps**-5
        return scale[..., None] * points

    def transform(self, k: np.ndarray) -> np.ndarray:
        return bump_transform(np.asarray(k, dtype=np.float64) * self.epsilon)


def build(epsilon: float, grid: Grid) -> Mollifier:
    """Sample phi_eps on ``grid`` (periodic images) and renormalize to unit mass."""
    if not grid.is_periodic:
        raise DomainError("mollifier needs a periodic or hybrid-slab grid")
    lo, hi = admissible_epsilon(grid)
    epsilon = float(epsilon)
    if not (lo <= epsilon < hi):
        raise RangeError(f"epsilon {epsilon} outside admissible interval [{lo}, {hi})")
    d = [_signed_offsets(n, h) / epsilon for n, h in zip(grid.resolution, grid.spacing)]
    rho2 = d[0][:, None, None] ** 2 + d[1][None, :, None] ** 2 + d[2][None, None, :] ** 2
    kernel = bump_normalization() * epsilon**-3 * bump_profile(np.sqrt(rho2))
    mass = float(np.sum(kernel)) * grid.cell_volume
    factor = 1.0 / mass
    kernel = kernel * factor
    kernel.flags.writeable = False
    return Mollifier(epsilon, grid, kernel, factor)


def _check_grid(field: VelocityField, m: Mollifier) -> None:
    if field.grid != m.grid:
        raise ValidationError("field and mollifier are built on different grids")


def convolve(field: VelocityField, m: Mollifier) -> VelocityField:
    """phi_eps * u by a pointwise product of transforms."""
    _check_grid(field, m)
    return VelocityField(field.grid, irfft3(rfft3(field.data) * m.kernel_hat, field.grid.shape))


def convolve_scalar(values: np.ndarray, m: Mollifier) -> np.ndarray:
    return irfft3(rfft3(values) * m.kernel_hat, m.grid.shape)


def pairing(a: VelocityField, b: VelocityField) -> float:
    """L^2 pairing <a, b> = int a_i b_i."""
    return inner(a, b)
