"""Synthetic velocity fields: smooth exact solutions, random rough fields with a
prescribed spectral slope, and half-slab fields built by mirror symmetrization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, GenerationError, RangeError, ValidationError
from .reflect import doubled_grid, mirror, restrict
from .spectral import (
    DomainKind,
    Grid,
    VelocityField,
    energy,
    irfft3,
    project_hat,
    rfft3,
)

# generated slab fields may keep at most this energy fraction near the seam
SEAM_MASS_TOL = 1e-10
SEAM_BAND_FRACTION = 0.125
# exponent p of the seam window ((1 + cos(pi x3 / L3)) / 2)^p
WINDOW_POWER = 8


@dataclass(frozen=True)
class RoughSpec:
    """Random field with |u_hat(k)| ~ |k|^-(alpha + 3/2) on shells k_min <= |k| <= k_max.

    Shell radii are measured in units of the x1 fundamental 2*pi/L1.
    """

    alpha: float
    seed: int
    band: tuple[int, int] = (1, 16)
    amplitude: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise RangeError(f"alpha must lie in (0, 1), got {self.alpha}")
        kmin, kmax = (int(b) for b in self.band)
        if not 1 <= kmin <= kmax:
            raise RangeError(f"band must satisfy 1 <= k_min <= k_max, got {self.band}")
        object.__setattr__(self, "band", (kmin, kmax))

    @property
    def exponent(self) -> float:
        return self.alpha + 1.5


@dataclass(frozen=True)
class SmoothSpec:
    """Random band-limited field with a steep spectrum on 1 <= |k| <= k_max."""

    seed: int
    k_max: int = 4
    amplitude: float = 1.0

    def __post_init__(self) -> None:
        if self.k_max < 1:
            raise RangeError("k_max must be >= 1")

    @property
    def band(self) -> tuple[int, int]:
        return (1, int(self.k_max))

    @property
    def exponent(self) -> float:
        return 2.5


def _require_periodic3(grid: Grid) -> None:
    if grid.kind is not DomainKind.PERIODIC3:
        raise DomainError("generator needs a periodic3 grid")


def gen_taylor_green(grid: Grid) -> VelocityField:
    _require_periodic3(grid)
    x1, x2, x3 = (2 * math.pi / L * x for L, x in zip(grid.periods, grid.mesh()))
    u1 = np.sin(x1) * np.cos(x2) * np.cos(x3)
    u2 = -np.cos(x1) * np.sin(x2) * np.cos(x3)
    shape = grid.shape
    return VelocityField(grid, np.stack([np.broadcast_to(u1, shape), np.broadcast_to(u2, shape), np.zeros(shape)]))


def gen_abc(grid: Grid, A: float = 1.0, B: float = 1.0, C: float = 1.0) -> VelocityField:
    _require_periodic3(grid)
    x1, x2, x3 = (2 * math.pi / L * x for L, x in zip(grid.periods, grid.mesh()))
    shape = grid.shape
    u = [
        A * np.sin(x3) + C * np.cos(x2),
        B * np.sin(x1) + A * np.cos(x3),
        C * np.sin(x2) + B * np.cos(x1),
    ]
    return VelocityField(grid, np.stack([np.broadcast_to(c, shape) for c in u]))


def _shell_radius(grid: Grid) -> np.ndarray:
    kappa = 2 * math.pi / grid.periods[0]
    return np.sqrt(grid.k_squared) / kappa


def _check_band(grid: Grid, mask: np.ndarray, extra_n3: int = 0) -> None:
    n1, n2, n3 = grid.mode_indices
    N1, N2, N3 = grid.resolution
    for n, N, extra in ((n1, N1, 0), (n2, N2, 0), (n3, N3, extra_n3)):
        reach = int(np.max(np.where(mask, np.abs(n), 0))) + extra
        if 3 * reach > N:
            raise RangeError(
                f"band reaches mode {reach} on an axis with {N} nodes; dealias-safe limit is {N // 3}"
            )


def _spectral_noise(grid: Grid, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rfft3(rng.standard_normal((3, *grid.shape)))


def _synthesize_periodic(grid: Grid, spec) -> VelocityField:
    s = _shell_radius(grid)
    kmin, kmax = spec.band
    mask = (s >= kmin - 1e-12) & (s <= kmax + 1e-12)
    _check_band(grid, mask)
    amp = np.where(mask, spec.amplitude * np.power(s, -spec.exponent, where=mask, out=np.zeros_like(s)), 0.0)
    coeffs = project_hat(grid, _spectral_noise(grid, spec.seed) * amp)
    return VelocityField(grid, irfft3(coeffs, grid.shape))


def seam_window(grid: Grid, power: int = WINDOW_POWER) -> np.ndarray:
    L3 = grid.domain.lengths[2]
    return ((1.0 + np.cos(math.pi * grid.coords(2) / L3)) / 2.0) ** power


def seam_mass_fraction(field: VelocityField) -> float:
    grid = field.grid
    L3 = grid.domain.lengths[2]
    near = np.abs(grid.coords(2)) >= L3 * (1 - SEAM_BAND_FRACTION)
    total = energy(field)
    if total == 0:
        return 0.0
    part = float(np.sum(field.data[..., near] ** 2)) * grid.cell_volume
    return part / total


def _synthesize_slab(grid: Grid, spec) -> VelocityField:
    """Curl of a seam-windowed random vector potential: exactly solenoidal, decays at the seam."""
    s = _shell_radius(grid)
    kmin, kmax = spec.band
    mask = (s >= kmin - 1e-12) & (s <= kmax + 1e-12)
    _check_band(grid, mask, extra_n3=WINDOW_POWER)
    amp = np.where(mask, spec.amplitude * np.power(s, -(spec.exponent + 1.0), where=mask, out=np.zeros_like(s)), 0.0)
    kappa = 2 * math.pi / grid.periods[0]
    potential = irfft3(_spectral_noise(grid, spec.seed) * amp, grid.shape) * seam_window(grid)
    a = rfft3(potential)
    k1, k2, k3 = (k / kappa for k in grid.odd_wavenumbers)
    u_hat = np.stack([
        1j * (k2 * a[2] - k3 * a[1]),
        1j * (k3 * a[0] - k1 * a[2]),
        1j * (k1 * a[1] - k2 * a[0]),
    ])
    field = VelocityField(grid, irfft3(project_hat(grid, u_hat), grid.shape))
    frac = seam_mass_fraction(field)
    if frac > SEAM_MASS_TOL:
        raise GenerationError(
            f"energy fraction {frac:.3e} within L3/8 of the seam exceeds {SEAM_MASS_TOL}; use a larger L3"
        )
    return field


def _generate(grid: Grid, spec) -> VelocityField:
    if grid.kind is DomainKind.PERIODIC3:
        return _synthesize_periodic(grid, spec)
    if grid.kind is DomainKind.HYBRID_SLAB:
        return _synthesize_slab(grid, spec)
    raise DomainError("rough generation needs a periodic3 or hybrid-slab grid; use gen_halfspace for half slabs")


def gen_rough(grid: Grid, spec: RoughSpec) -> VelocityField:
    if not isinstance(spec, RoughSpec):
        raise ValidationError("spec must be a RoughSpec")
    return _generate(grid, spec)


def gen_smooth(grid: Grid, spec: SmoothSpec) -> VelocityField:
    return _generate(grid, spec)


def gen_halfspace(grid: Grid, base: RoughSpec | SmoothSpec) -> VelocityField:
    """Half-slab field u = (w + w_R)/2 restricted to x3 >= 0, w drawn from ``base``."""
    if grid.kind is not DomainKind.HALF_SLAB or grid.domain.side != 1:
        raise DomainError("gen_halfspace needs an upper half-slab grid")
    full = doubled_grid(grid)
    w = _generate(full, base)
    sym = VelocityField(full, 0.5 * (w.data + mirror(w).data))
    return restrict(sym)
