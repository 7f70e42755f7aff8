"""Dealiased pseudo-spectral incompressible Euler on the periodic box.

The state is kept as projected, two-thirds-truncated unitary coefficients; the
nonlinear term is formed in divergence form, -P div(u u), so the truncated
system conserves sum |u_hat|^2 exactly and time stepping (classical RK4) is the
only source of energy drift.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CFLError, DomainError, RangeError, ResolutionLossError, ValidationError
from .spectral import DomainKind, Grid, VelocityField, irfft3, rfft3

CFL = 0.5
# abort when the top third of the retained band carries more than this energy fraction
TOP_SHELL_TOL = 1e-10
DEFAULT_STRIDE = 100

_PAIRS = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))


@dataclass(frozen=True)
class SnapshotSeries:
    times: tuple[float, ...]
    fields: tuple[VelocityField, ...]
    dt: float
    energy_series: tuple[float, ...]
    enstrophy_series: tuple[float, ...]
    top_shell_series: tuple[float, ...]
    max_energy_drift: float

    def __post_init__(self) -> None:
        if len(self.times) != len(self.fields):
            raise ValidationError("times and fields differ in length")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValidationError("snapshot times must be strictly increasing")
        if self.fields and any(f.grid != self.fields[0].grid for f in self.fields):
            raise ValidationError("snapshots live on different grids")

    @property
    def grid(self) -> Grid:
        return self.fields[0].grid


def _require_box(grid: Grid) -> None:
    if grid.kind is not DomainKind.PERIODIC3:
        raise DomainError("the Euler integrator runs on periodic3 grids only")


def top_shell_mask(grid: Grid) -> np.ndarray:
    """Retained modes whose largest |n_i| / (N_i / 3) exceeds 2/3."""
    n1, n2, n3 = grid.mode_indices
    N1, N2, N3 = grid.resolution
    frac = np.maximum(np.maximum(9 * np.abs(n1) / N1, 9 * np.abs(n2) / N2), 9 * n3 / N3)
    return grid.dealias_mask() & (frac > 2.0)


def spectral_energy(grid: Grid, u_hat: np.ndarray) -> float:
    return float(np.sum(grid.parseval_weights * (u_hat.real**2 + u_hat.imag**2))) * grid.cell_volume


def enstrophy(grid: Grid, u_hat: np.ndarray) -> float:
    w = grid.parseval_weights * grid.k_squared
    return float(np.sum(w * (u_hat.real**2 + u_hat.imag**2))) * grid.cell_volume


def top_shell_fraction(grid: Grid, u_hat: np.ndarray) -> float:
    total = spectral_energy(grid, u_hat)
    if total == 0:
        return 0.0
    top = top_shell_mask(grid)
    part = float(np.sum((grid.parseval_weights * (u_hat.real**2 + u_hat.imag**2))[:, top])) * grid.cell_volume
    return part / total


class _Stepper:
    """Right-hand side on the compressed vector of retained (dealiased) modes."""

    def __init__(self, grid: Grid):
        self.grid = grid
        self.mask = grid.dealias_mask()
        full = np.broadcast_to(self.mask, grid.spectral_shape)
        self.index = np.nonzero(full)
        self.k = [np.broadcast_to(k, grid.spectral_shape)[self.index] for k in grid.odd_wavenumbers]
        kk = self.k[0] ** 2 + self.k[1] ** 2 + self.k[2] ** 2
        self.inv_kk = np.divide(1.0, kk, out=np.zeros_like(kk), where=kk > 0)
        self.weights = np.broadcast_to(grid.parseval_weights, grid.spectral_shape)[self.index]
        self._full = np.zeros((3, *grid.spectral_shape), dtype=np.complex128)
        self._prod = np.empty((6, *grid.shape))

    def compress(self, u_hat: np.ndarray) -> np.ndarray:
        return u_hat[(slice(None), *self.index)]

    def expand(self, vec: np.ndarray) -> np.ndarray:
        out = np.zeros((vec.shape[0], *self.grid.spectral_shape), dtype=np.complex128)
        out[(slice(None), *self.index)] = vec
        return out

    def project(self, vec: np.ndarray) -> np.ndarray:
        k1, k2, k3 = self.k
        kdotu = (k1 * vec[0] + k2 * vec[1] + k3 * vec[2]) * self.inv_kk
        return np.stack([vec[0] - k1 * kdotu, vec[1] - k2 * kdotu, vec[2] - k3 * kdotu])

    def energy(self, vec: np.ndarray) -> float:
        return float(np.sum(self.weights * (vec.real**2 + vec.imag**2))) * self.grid.cell_volume

    def __call__(self, vec: np.ndarray) -> tuple[np.ndarray, float]:
        grid = self.grid
        self._full[(slice(None), *self.index)] = vec
        u = irfft3(self._full, grid.shape)
        umax = float(np.sqrt(np.max(np.einsum("i...,i...->...", u, u))))
        for n, (i, j) in enumerate(_PAIRS):
            np.multiply(u[i], u[j], out=self._prod[n])
        prods = rfft3(self._prod)[(slice(None), *self.index)]
        p = {pair: prods[n] for n, pair in enumerate(_PAIRS)}
        k = self.k
        div = np.empty_like(vec)
        for i in range(3):
            div[i] = 1j * (k[0] * p[_pair(0, i)] + k[1] * p[_pair(1, i)] + k[2] * p[_pair(2, i)])
        return -self.project(div), umax


def _pair(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a <= b else (b, a)


def rhs(field: VelocityField) -> VelocityField:
    """-P div(u u) with two-thirds dealiasing of the input and the product."""
    grid = field.grid
    _require_box(grid)
    stepper = _Stepper(grid)
    du, _ = stepper(stepper.compress(rfft3(field.data)))
    return VelocityField(grid, irfft3(stepper.expand(du), grid.shape))


def integrate(
    u0: VelocityField,
    T_end: float,
    dt: float,
    stride: int = DEFAULT_STRIDE,
    cfl: float | None = None,
    top_shell_tol: float | None = None,
) -> SnapshotSeries:
    """Classical RK4 from ``u0`` to ``T_end``; snapshots every ``stride`` steps and at the end."""
    cfl = CFL if cfl is None else cfl
    top_shell_tol = TOP_SHELL_TOL if top_shell_tol is None else top_shell_tol
    grid = u0.grid
    _require_box(grid)
    if not (dt > 0 and T_end > 0):
        raise RangeError("dt and T_end must be positive")
    if stride < 1:
        raise RangeError("stride must be >= 1")
    n_steps = int(round(T_end / dt))
    if n_steps < 1 or abs(n_steps * dt - T_end) > 1e-9 * T_end:
        raise RangeError(f"T_end = {T_end} is not an integer multiple of dt = {dt}")
    stepper = _Stepper(grid)
    raw = rfft3(u0.data)
    vec = stepper.project(stepper.compress(raw))
    e_raw = spectral_energy(grid, raw)
    if e_raw > 0 and (e_raw - stepper.energy(vec)) > top_shell_tol * e_raw:
        raise ResolutionLossError("initial field carries energy outside the dealiased divergence-free band")
    h = min(grid.spacing)

    def check_cfl(umax: float, t: float) -> None:
        if dt * umax > cfl * h:
            raise CFLError(f"CFL violated at t = {t:.6g}: dt*max|u|/h = {dt * umax / h:.3g} > {cfl}")

    top = top_shell_mask(grid)
    top_c = np.broadcast_to(top, grid.spectral_shape)[stepper.index]

    def check_top(v: np.ndarray, t: float) -> float:
        total = stepper.energy(v)
        part = float(np.sum(stepper.weights[top_c] * np.abs(v[:, top_c]) ** 2)) * grid.cell_volume
        frac = part / total if total > 0 else 0.0
        if frac > top_shell_tol:
            raise ResolutionLossError(f"top-shell energy fraction {frac:.3e} exceeds {top_shell_tol:g} at t = {t:.6g}")
        return frac

    e0 = stepper.energy(vec)
    times, fields, energies, enst, tops = [], [], [], [], []

    def emit(v: np.ndarray, t: float, frac: float) -> None:
        uh = stepper.expand(v)
        times.append(t)
        fields.append(VelocityField(grid, irfft3(uh, grid.shape)))
        energies.append(spectral_energy(grid, uh))
        enst.append(enstrophy(grid, uh))
        tops.append(frac)

    emit(vec, 0.0, check_top(vec, 0.0))
    drift = 0.0
    for step in range(1, n_steps + 1):
        t = (step - 1) * dt
        k1, umax = stepper(vec)
        check_cfl(umax, t)
        k2, _ = stepper(vec + 0.5 * dt * k1)
        k3, _ = stepper(vec + 0.5 * dt * k2)
        k4, _ = stepper(vec + dt * k3)
        vec = stepper.project(vec + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
        if e0 > 0:
            drift = max(drift, abs(stepper.energy(vec) - e0) / e0)
        frac = check_top(vec, step * dt)
        if step % stride == 0 or step == n_steps:
            emit(vec, step * dt, frac)
    return SnapshotSeries(
        times=tuple(times),
        fields=tuple(fields),
        dt=float(dt),
        energy_series=tuple(energies),
        enstrophy_series=tuple(enst),
        top_shell_series=tuple(tops),
        max_energy_drift=drift,
    )

