"""Energy-flux functional J_eps, structure functions, and the integral
energy-conservation criteria.

J_eps(v) = int int grad(phi_eps)(xi) . dv |dv|^2 dxi dx,  dv = v(x + xi) - v(x)

is computed by two independent routes:

* :func:`j_eps_direct` evaluates the double integral literally. The x-integral
  F(xi) = int dv |dv|^2 dx is expanded into correlations of v, v_i v_j and
  |v|^2, which makes F available at any xi as a trigonometric polynomial; the
  xi-integral is a lattice sum over the kernel ball using the analytic gradient.
* :func:`j_eps_bilinear` evaluates 2(<div[v v]_eps, v> - <v v : grad v_eps>)
  with spectral products.

Both use the continuum kernel, so their agreement tests the identity itself.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field as dc_field
from typing import Sequence

import numpy as np
from scipy import stats
from scipy.special import roots_legendre

from .errors import DomainError, HypothesisWarning, RangeError, ValidationError
from .mollifier import Mollifier, admissible_epsilon, build, bump_normalization
from .spectral import (
    DomainKind,
    Grid,
    VelocityField,
    check_shift,
    energy,
    is_divergence_free,
    irfft3,
    lp_norm,
    rfft3,
    shift_array,
)

# residual floor: FLUX_FLOOR_REL * ||u||_{L^3}^3
FLUX_FLOOR_REL = 1e-14
# xi-lattice points per kernel radius in the direct route
XI_NODES_PER_RADIUS = 64
CONFIDENCE = 0.95
# inertial fit band [BAND_LO_CELLS * h, L * BAND_HI_FRACTION]
BAND_LO_CELLS = 3.0
BAND_HI_FRACTION = 0.125
MIN_SHIFTS = 4


class Verdict(str, enum.Enum):
    VANISHING = "vanishing"
    NON_VANISHING = "non-vanishing"
    INCONCLUSIVE = "inconclusive"
    CONSERVING = "conserving"


# ---- fitting ----

@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    lower: float
    upper: float
    residual: float
    n_points: int
    band: tuple[float, float]

    def verdict(self) -> Verdict:
        if self.lower > 0:
            return Verdict.VANISHING
        if self.upper < 0:
            return Verdict.NON_VANISHING
        return Verdict.INCONCLUSIVE


def fit_power_law(x, y, band: tuple[float, float] | None = None, confidence: float = CONFIDENCE) -> SlopeFit:
    """Least-squares line through (log x, log y) with a t-based confidence band on the slope."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    keep = (x > 0) & (y > 0) & np.isfinite(y)
    if band is not None:
        keep &= (x >= band[0] * (1 - 1e-12)) & (x <= band[1] * (1 + 1e-12))
    lx, ly = np.log(x[keep]), np.log(y[keep])
    n = lx.size
    used = (float(np.min(x[keep])), float(np.max(x[keep]))) if n else (float("nan"),) * 2
    if n < 2:
        nan = float("nan")
        return SlopeFit(nan, nan, -math.inf, math.inf, nan, n, used)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    rms = float(np.sqrt(np.mean(resid**2)))
    if n < 3:
        return SlopeFit(float(slope), float(intercept), -math.inf, math.inf, rms, n, used)
    sxx = float(np.sum((lx - lx.mean()) ** 2))
    se = math.sqrt(float(np.sum(resid**2)) / (n - 2) / sxx)
    half = stats.t.ppf(0.5 + confidence / 2, n - 2) * se
    return SlopeFit(float(slope), float(intercept), float(slope - half), float(slope + half), rms, n, used)


def inertial_band(grid: Grid) -> tuple[float, float]:
    L = min(grid.domain.lengths)
    return BAND_LO_CELLS * max(grid.spacing), BAND_HI_FRACTION * L


def trapezoid_weights(times: Sequence[float]) -> np.ndarray:
    t = np.asarray(times, dtype=np.float64)
    if t.size == 1:
        return np.ones(1)
    w = np.zeros_like(t)
    dt = np.diff(t)
    w[:-1] += dt / 2
    w[1:] += dt / 2
    return w


# ---- direction sets and spherical quadrature ----

def lattice_directions(count: int = 9) -> np.ndarray:
    """Axes (3), then face diagonals (6), then body diagonals (4); unit vectors."""
    axes = [(1, 0, 0), (0, 1, 0), (0, 0, 1)]
    faces = [(1, 1, 0), (1, -1, 0), (1, 0, 1), (1, 0, -1), (0, 1, 1), (0, 1, -1)]
    bodies = [(1, 1, 1), (1, 1, -1), (1, -1, 1), (-1, 1, 1)]
    table = {3: axes, 9: axes + faces, 13: axes + faces + bodies}
    if count not in table:
        raise RangeError("direction count must be 3, 9 or 13")
    d = np.asarray(table[count], dtype=np.float64)
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def sphere_rule(n_theta: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre in cos(theta) times uniform azimuth; weights sum to 4 pi."""
    mu, wmu = roots_legendre(n_theta)
    n_phi = 2 * n_theta
    phi = (np.arange(n_phi) + 0.5) * 2 * math.pi / n_phi
    st = np.sqrt(1 - mu**2)
    dirs = np.stack([
        np.outer(st, np.cos(phi)).ravel(),
        np.outer(st, np.sin(phi)).ravel(),
        np.repeat(mu, n_phi),
    ], axis=1)
    weights = np.repeat(wmu, n_phi) * (2 * math.pi / n_phi)
    return dirs, weights


# ---- structure functions ----

def _cubed_increment_sum(grid: Grid, data: np.ndarray, y, data_hat=None, weights=None) -> float:
    shifted = shift_array(grid, data, y, data_hat)
    d = shifted - data
    mag3 = np.sum(d * d, axis=0) ** 1.5
    if weights is not None:
        mag3 = mag3 * weights
    return float(np.sum(mag3)) * grid.cell_volume


def structure_fn(field: VelocityField, y) -> float:
    """S3(y) = int_D |u(x + y) - u(x)|^3 dx (over D+ for a half slab, via its extension)."""
    grid = field.grid
    if grid.kind is DomainKind.HALF_SLAB:
        return structure_fn_half(field, y, whole=True)
    y = check_shift(grid, y)
    return _cubed_increment_sum(grid, field.data, y)


def _interval_weights(x: np.ndarray, a: float, b: float) -> np.ndarray:
    """Node weights integrating the piecewise-linear interpolant over [a, b]."""
    w = np.zeros_like(x)
    h = x[1] - x[0]
    for j in range(x.size - 1):
        s, t = max(a, x[j]), min(b, x[j + 1])
        if t <= s:
            continue
        right = ((t - x[j]) ** 2 - (s - x[j]) ** 2) / (2 * h)
        w[j] += (t - s) - right
        w[j + 1] += right
    return w


def _extended(field: VelocityField) -> VelocityField:
    from .reflect import extend

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", HypothesisWarning)
        return extend(field)


def structure_fn_half(field: VelocityField, y, whole: bool = False, _ext: VelocityField | None = None) -> float:
    """S3 over the inner region x3 > |y| of the upper half slab, x + y kept inside.

    With ``whole`` the region is all of D+ (used for the y = 0 comparison and
    for plain :func:`structure_fn` on half slabs).
    """
    grid = field.grid
    if grid.kind is not DomainKind.HALF_SLAB or grid.domain.side != 1:
        raise DomainError("structure_fn_half needs an upper half-slab field")
    y = np.asarray(y, dtype=np.float64)
    L3 = grid.domain.lengths[2]
    ny = float(np.linalg.norm(y))
    if not whole and ny >= L3 / 4:
        raise RangeError(f"|y| = {ny} must stay below L3/4 = {L3 / 4}")
    ext = _ext if _ext is not None else _extended(field)
    check_shift(ext.grid, y)
    x3 = grid.coords(2)
    if whole:
        a, b = 0.0, L3
    else:
        a, b = ny, L3 - max(float(y[2]), 0.0)
    if b <= a:
        raise RangeError("integration region is empty")
    wts = _interval_weights(x3, a, b) / grid.spacing[2]
    N3 = grid.resolution[2]
    n = ext.grid.resolution[2]
    upper = np.concatenate([np.arange(N3, n), [0]])
    shifted = shift_array(ext.grid, ext.data, y)[..., upper]
    d = shifted - field.data
    mag3 = np.sum(d * d, axis=0) ** 1.5
    return float(np.sum(mag3 * wts)) * grid.cell_volume


@dataclass(frozen=True)
class CriterionReport:
    mode: str
    shifts: tuple[float, ...]
    direction_vectors: tuple[tuple[float, float, float], ...]
    per_direction: tuple[tuple[float, ...], ...]
    s3_over_y: tuple[float, ...]
    fit: SlopeFit
    verdict: Verdict
    besov_integral: float | None = None
    besov_remainder: float | None = None
    extras: dict = dc_field(default_factory=dict)

    def __post_init__(self) -> None:
        if any(b >= a for a, b in zip(self.shifts, self.shifts[1:])):
            raise ValidationError("shifts must be strictly decreasing")
        if any(v < 0 for v in self.s3_over_y):
            raise ValidationError("structure-function values must be non-negative")
        object.__setattr__(self, "verdict", Verdict(self.verdict))


def _validate_shifts(grid: Grid, shifts) -> np.ndarray:
    s = np.unique(np.asarray(shifts, dtype=np.float64))
    if s.size < MIN_SHIFTS:
        raise RangeError(f"need at least {MIN_SHIFTS} distinct shift magnitudes, got {s.size}")
    if s[0] <= 0 or s[-1] / s[0] < 10 * (1 - 1e-12):
        raise RangeError("shift magnitudes must be positive and span at least one decade")
    if s[0] < min(grid.spacing) * (1 - 1e-12):
        raise RangeError("smallest shift is below the grid spacing")
    return s[::-1]


def _weights_for(fields: Sequence[VelocityField], weights) -> np.ndarray:
    if not fields:
        raise ValidationError("no snapshots supplied")
    if weights is None:
        return np.full(len(fields), 1.0 / len(fields))
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (len(fields),):
        raise ValidationError("one weight per snapshot is required")
    return w


def _shared_grid(fields: Sequence[VelocityField]) -> Grid:
    grid = fields[0].grid
    if any(f.grid != grid for f in fields):
        raise ValidationError("snapshots live on different grids")
    return grid


def s_condition(
    fields: Sequence[VelocityField] | VelocityField,
    shifts,
    weights=None,
    directions: np.ndarray | None = None,
    band: tuple[float, float] | None = None,
    confidence: float = CONFIDENCE,
) -> CriterionReport:
    """(1/|y|) sum_t w_t S3(y; t), direction-averaged, with a log-log slope verdict.

    ``weights`` default to a plain average (ensemble use); pass
    :func:`trapezoid_weights` for a time series.
    """
    if isinstance(fields, VelocityField):
        fields = [fields]
    grid = _shared_grid(fields)
    grid.require_periodic()
    w = _weights_for(fields, weights)
    mags = _validate_shifts(grid, shifts)
    dirs = lattice_directions(9) if directions is None else np.asarray(directions, dtype=np.float64)
    if dirs.ndim != 2 or dirs.shape[0] < 6:
        raise RangeError("at least 6 directions are required")
    dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    for y in (mags[0] * d for d in dirs):
        check_shift(grid, y)
    table = np.zeros((mags.size, dirs.shape[0]))
    for f, wt in zip(fields, w):
        u_hat = rfft3(f.data)
        for i, r in enumerate(mags):
            for j, d in enumerate(dirs):
                table[i, j] += wt * _cubed_increment_sum(grid, f.data, r * d, u_hat)
    per_dir = table / mags[:, None]
    values = per_dir.mean(axis=1)
    band = inertial_band(grid) if band is None else band
    fit = fit_power_law(mags, values, band, confidence)
    return CriterionReport(
        mode="s",
        shifts=tuple(float(v) for v in mags),
        direction_vectors=tuple(tuple(float(c) for c in d) for d in dirs),
        per_direction=tuple(tuple(float(v) for v in row) for row in per_dir),
        s3_over_y=tuple(float(v) for v in values),
        fit=fit,
        verdict=fit.verdict(),
    )


# ---- Besov-type double integral ----

@dataclass(frozen=True)
class BesovBreakdown:
    value: float
    remainder: float
    core: float
    r_max: float
    delta: float
    n_theta: int


def _angular_s3(grid: Grid, data: np.ndarray, data_hat: np.ndarray, r: float, n_theta: int) -> float:
    dirs, wts = sphere_rule(n_theta)
    return float(sum(wt * _cubed_increment_sum(grid, data, r * d, data_hat) for d, wt in zip(dirs, wts)))


def besov_breakdown(
    field: VelocityField,
    delta: float,
    r_max: float,
    core: float | None = None,
    n_radial: int = 16,
    n_theta: int = 3,
) -> BesovBreakdown:
    """int_{core <= |z| <= r_max} |z|^-(4 + delta) S3(z) dz plus a core estimate.

    The radial integral uses Gauss-Legendre in log r; the angular one a
    Gauss-product rule of order ``n_theta``. The unresolved core |z| < core is
    estimated assuming S3 ~ r^3 below the grid scale.
    """
    if not delta > 0:
        raise RangeError(f"delta must be positive, got {delta}")
    grid = field.grid.require_periodic()
    if r_max > min(grid.domain.lengths) / 4 * (1 + 1e-12):
        raise RangeError(f"r_max must not exceed min(L)/4 = {min(grid.domain.lengths) / 4}")
    core = BAND_LO_CELLS * max(grid.spacing) if core is None else float(core)
    if not 0 < core < r_max:
        raise RangeError("core cutoff must lie in (0, r_max)")
    data_hat = rfft3(field.data)
    x, wx = roots_legendre(n_radial)
    a, b = math.log(core), math.log(r_max)
    s = a + (b - a) * (x + 1) / 2
    ws = wx * (b - a) / 2
    total = 0.0
    for si, wi in zip(s, ws):
        r = math.exp(si)
        total += wi * r ** (-1.0 - delta) * _angular_s3(grid, field.data, data_hat, r, n_theta)
    s_core = _angular_s3(grid, field.data, data_hat, core, n_theta)
    remainder = s_core * core ** (-1.0 - delta) / (2.0 - delta) if delta < 2 else math.inf
    return BesovBreakdown(float(total), float(remainder), core, float(r_max), float(delta), n_theta)


def besov_integral(field: VelocityField, delta: float, r_max: float, **kwargs) -> float:
    return besov_breakdown(field, delta, r_max, **kwargs).value


# ---- J_eps ----

def _check_solenoidal(field: VelocityField) -> None:
    if not is_divergence_free(field):
        warnings.warn("J_eps identity assumes a divergence-free field", HypothesisWarning, stacklevel=3)


def increment_flux_coefficients(field: VelocityField) -> np.ndarray:
    """Coefficients c with F_i(xi) = Re sum_{k3 >= 0} w3 c_i(k) exp(i k.xi).

    F_i(xi) = int (v(x+xi) - v(x))_i |v(x+xi) - v(x)|^2 dx.
    """
    grid = field.grid.require_periodic()
    v = field.data
    v_hat = rfft3(v)
    s_hat = rfft3(np.sum(v * v, axis=0))
    acc = np.zeros_like(v_hat)
    for i in range(3):
        cross = np.zeros(v_hat.shape[1:], dtype=np.complex128)
        for j in range(3):
            p_hat = rfft3(v[i] * v[j])
            cross += p_hat * np.conj(v_hat[j])
        acc[i] = -2.0 * cross.imag + (v_hat[i] * np.conj(s_hat)).imag
    return 2j * acc * grid.cell_volume


def increment_flux(field: VelocityField, xi: np.ndarray) -> np.ndarray:
    """F(xi) at points ``xi[..., 3]`` from the correlation expansion."""
    grid = field.grid
    c = increment_flux_coefficients(field) * grid.parseval_weights
    xi = np.asarray(xi, dtype=np.float64)
    k1, k2, k3 = grid.wavenumbers
    flat = xi.reshape(-1, 3)
    out = np.empty((flat.shape[0], 3))
    for p, (a, b, cc) in enumerate(flat):
        phase = np.exp(1j * (k1 * a + k2 * b + k3 * cc))
        out[p] = np.real(np.sum(c * phase, axis=(1, 2, 3)))
    return out.reshape(*xi.shape[:-1], 3)


def _active_block(grid: Grid, c: np.ndarray, rel: float = 1e-13):
    """Index ranges per axis covering every coefficient above ``rel`` of the peak."""
    mag = np.max(np.abs(c), axis=0)
    peak = float(np.max(mag))
    if peak == 0.0:
        return None
    live = mag > rel * peak
    n1, n2, n3 = grid.mode_indices
    r1 = int(np.max(np.abs(np.where(live, n1, 0))))
    r2 = int(np.max(np.abs(np.where(live, n2, 0))))
    r3 = int(np.max(np.where(live, n3, 0)))
    i1 = np.nonzero(np.abs(n1.ravel()) <= r1)[0]
    i2 = np.nonzero(np.abs(n2.ravel()) <= r2)[0]
    return i1, i2, np.arange(r3 + 1)


def j_eps_direct(field: VelocityField, m: Mollifier, nodes_per_radius: int = XI_NODES_PER_RADIUS) -> float:
    """Double-integral form of J_eps with a lattice sum over the kernel ball."""
    grid = field.grid.require_periodic()
    if m.grid != grid:
        raise ValidationError("field and mollifier are built on different grids")
    _check_solenoidal(field)
    c = increment_flux_coefficients(field) * grid.parseval_weights
    block = _active_block(grid, c)
    if block is None:
        return 0.0
    i1, i2, i3 = block
    c = c[:, i1][:, :, i2][:, :, :, i3]
    k1 = grid.wavenumbers[0].ravel()[i1]
    k2 = grid.wavenumbers[1].ravel()[i2]
    k3 = grid.wavenumbers[2].ravel()[i3]
    n = int(nodes_per_radius)
    step = m.epsilon / n
    xi = np.arange(-n, n + 1) * step
    xi_pos = np.arange(0, n + 1) * step
    e3 = np.exp(1j * np.outer(xi, k3))
    e2 = np.exp(1j * np.outer(xi, k2))
    t = np.tensordot(c, e3, axes=([3], [1]))           # (3, k1, k2, c)
    t = np.tensordot(t, e2, axes=([2], [1]))           # (3, k1, c, b)
    total = 0.0
    chunk = 8
    # g . F is even in xi: sum a1 > 0 twice, a1 = 0 once
    for start in range(0, xi_pos.size, chunk):
        a_vals = xi_pos[start:start + chunk]
        e1 = np.exp(1j * np.outer(a_vals, k1))
        F = np.tensordot(t, e1, axes=([1], [1])).real   # (3, c, b, a)
        pts = np.stack(np.meshgrid(xi, xi, a_vals, indexing="ij"), axis=-1)[..., ::-1]
        g = m.gradient(pts)                              # (c, b, a, 3) with components (x1, x2, x3)
        contrib = np.einsum("cbai,icba->a", g, F)
        mult = np.where(a_vals == 0.0, 1.0, 2.0)
        total += float(np.sum(mult * contrib))
    return total * step**3


def j_eps_bilinear(field: VelocityField, m: Mollifier) -> float:
    """2 (<div [v v]_eps, v> - <v v : grad v_eps>) by spectral products."""
    grid = field.grid.require_periodic()
    if m.grid != grid:
        raise ValidationError("field and mollifier are built on different grids")
    _check_solenoidal(field)
    v = field.data
    v_hat = rfft3(v)
    phi = m.analytic_multiplier
    k = grid.odd_wavenumbers
    w = grid.parseval_weights
    first = 0.0
    second = 0.0
    for i in range(3):
        div_i = np.zeros(v_hat.shape[1:], dtype=np.complex128)
        for j in range(3):
            p_hat = rfft3(v[i] * v[j])
            div_i += 1j * k[j] * p_hat
            second += float(np.sum(w * (p_hat * np.conj(1j * k[j] * v_hat[i] * phi)).real))
        first += float(np.sum(w * (div_i * phi * np.conj(v_hat[i])).real))
    return 2.0 * (first - second) * grid.cell_volume


def flux_floor(field: VelocityField) -> float:
    return FLUX_FLOOR_REL * lp_norm(field, 3) ** 3


def identity_residual(j_direct: float, j_bilinear: float, floor: float) -> float:
    return abs(j_direct - j_bilinear) / (abs(j_direct) + abs(j_bilinear) + floor)


def flux_majorant(field: VelocityField, m: Mollifier, n_radial: int = 12, n_theta: int = 3) -> float:
    """int int |grad phi_eps(xi)| |dv|^3 dxi dx, the bound behind the Holder-decay argument."""
    grid = field.grid.require_periodic()
    eps = m.epsilon
    x, wx = roots_legendre(n_radial)
    r = eps * (x + 1) / 2
    wr = wx * eps / 2
    rho = r / eps
    psi = np.exp(-1.0 / (1.0 - rho**2))
    gmag = bump_normalization() * eps**-4 * 2.0 * rho * psi / (1.0 - rho**2) ** 2
    data_hat = rfft3(field.data)
    total = 0.0
    for ri, wi, gi in zip(r, wr, gmag):
        total += wi * gi * ri**2 * _angular_s3(grid, field.data, data_hat, float(ri), n_theta)
    return float(total)


def mollified_pairing(field: VelocityField, m: Mollifier) -> float:
    """<u, u_eps> with the continuum kernel transform."""
    grid = field.grid
    u_hat = rfft3(field.data)
    return float(np.sum(grid.parseval_weights * m.analytic_multiplier * np.abs(u_hat) ** 2)) * grid.cell_volume


@dataclass(frozen=True)
class FluxReport:
    epsilons: tuple[float, ...]
    j_direct: tuple[float, ...]
    j_bilinear: tuple[float, ...]
    identity_residuals: tuple[float, ...]
    decay: SlopeFit
    extrapolated_integral: float
    energy_change: float
    energy_balance_residual: float
    mollified_balance_residuals: tuple[float, ...]
    times: tuple[float, ...]
    majorant: tuple[float, ...] | None = None
    majorant_decay: SlopeFit | None = None

    def __post_init__(self) -> None:
        n = len(self.epsilons)
        for name in ("j_direct", "j_bilinear", "identity_residuals", "mollified_balance_residuals"):
            if len(getattr(self, name)) != n:
                raise ValidationError(f"{name} length differs from epsilons")
        if any(b >= a for a, b in zip(self.epsilons, self.epsilons[1:])):
            raise ValidationError("epsilons must be strictly decreasing")

    @property
    def decay_exponent(self) -> float:
        return self.decay.slope


# highest power of eps^2 in the extrapolation polynomial
EXTRAP_MAX_DEGREE = 3


def _extrapolate(eps: np.ndarray, values: np.ndarray, floor: float) -> float:
    """Value at eps -> 0 of a least-squares polynomial in eps^2.

    J_eps of a grid field is a finite sum of terms phi_hat(|k| eps), and
    phi_hat is even and analytic, so J is analytic in eps^2.
    """
    if np.all(np.abs(values) <= floor):
        return 0.0
    degree = min(eps.size - 1, EXTRAP_MAX_DEGREE)
    if degree == 0:
        return float(values[0])
    scale = float(np.max(eps))
    basis = np.stack([(eps / scale) ** (2 * j) for j in range(degree + 1)], axis=1)
    coef, *_ = np.linalg.lstsq(basis, values, rcond=None)
    return float(coef[0])


def dissipation_estimate(
    series,
    eps_list,
    direct: bool = True,
    majorant: bool = False,
    times: Sequence[float] | None = None,
) -> FluxReport:
    """Time-integrated J_eps per eps, its decay fit, and the energy-balance residual.

    ``series`` is a :class:`~enflux.euler.SnapshotSeries`, a list of fields with
    ``times``, or a single field (treated as a one-snapshot series).
    """
    if isinstance(series, VelocityField):
        fields, t = [series], [0.0]
    elif hasattr(series, "fields"):
        fields, t = list(series.fields), list(series.times)
    else:
        fields = list(series)
        t = list(times) if times is not None else [float(i) for i in range(len(fields))]
    if len(fields) != len(t):
        raise ValidationError("times and snapshots differ in length")
    if any(b <= a for a, b in zip(t, t[1:])):
        raise ValidationError("snapshot times must be strictly increasing")
    grid = _shared_grid(fields)
    eps = np.asarray([float(e) for e in eps_list])
    if eps.size == 0:
        raise RangeError("empty epsilon list")
    if np.any(np.diff(eps) >= 0):
        raise RangeError("epsilon list must be strictly decreasing")
    lo, hi = admissible_epsilon(grid)
    bad = [e for e in eps if not lo <= e < hi]
    if bad:
        raise RangeError(f"epsilon values {bad} outside admissible interval [{lo}, {hi})")
    w = trapezoid_weights(t)
    jd = np.zeros(eps.size)
    jb = np.zeros(eps.size)
    maj = np.zeros(eps.size)
    pair0 = np.zeros(eps.size)
    pair1 = np.zeros(eps.size)
    floors = np.zeros(eps.size)
    for e_idx, e in enumerate(eps):
        m = build(e, grid)
        for f_idx, (f, wt) in enumerate(zip(fields, w)):
            jb[e_idx] += wt * j_eps_bilinear(f, m)
            if direct:
                jd[e_idx] += wt * j_eps_direct(f, m)
            if majorant:
                maj[e_idx] += wt * flux_majorant(f, m)
            floors[e_idx] += wt * flux_floor(f)
        pair0[e_idx] = mollified_pairing(fields[0], m)
        pair1[e_idx] = mollified_pairing(fields[-1], m)
    if not direct:
        jd = jb.copy()
    resid = [identity_residual(a, b, fl) for a, b, fl in zip(jd, jb, floors)]
    if len(fields) == 1:
        balance = np.zeros(eps.size)
    else:
        balance = pair1 - pair0 + 0.5 * jb
    decay = fit_power_law(eps, np.abs(jb))
    extrap = _extrapolate(eps, jb, float(np.max(floors)))
    d_energy = energy(fields[-1]) - energy(fields[0])
    maj_fit = fit_power_law(eps, maj) if majorant else None
    return FluxReport(
        epsilons=tuple(float(v) for v in eps),
        j_direct=tuple(float(v) for v in jd),
        j_bilinear=tuple(float(v) for v in jb),
        identity_residuals=tuple(float(v) for v in resid),
        decay=decay,
        extrapolated_integral=extrap,
        energy_change=float(d_energy),
        energy_balance_residual=float(d_energy + 0.5 * extrap),
        mollified_balance_residuals=tuple(float(v) for v in balance),
        times=tuple(float(v) for v in t),
        majorant=tuple(float(v) for v in maj) if majorant else None,
        majorant_decay=maj_fit,
    )
