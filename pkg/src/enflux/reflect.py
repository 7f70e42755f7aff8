"""Mirror reflection across x3 = 0, the even/odd extension to the full slab,
and the boundary continuity modulus.

Index conventions (``N3`` = half-slab intervals, doubled slab has ``2*N3`` nodes):

* half slab, upper side: node ``j`` at ``x3 = j*h``, ``j = 0..N3``;
* doubled slab: node ``J`` at ``x3 = -L3 + J*h``; the wall is ``J = N3`` and the
  seam ``J = 0`` (``x3 = -L3`` identified with ``+L3``);
* mirror on the doubled slab: ``J -> (2*N3 - J) mod 2*N3``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import OptimizeWarning, curve_fit

from .errors import DomainError, HypothesisWarning, RangeError, ValidationError
from .flux import (
    CONFIDENCE,
    CriterionReport,
    Verdict,
    _validate_shifts,
    _weights_for,
    _shared_grid,
    fit_power_law,
    lattice_directions,
    structure_fn_half,
)
from .spectral import (
    Domain,
    DomainKind,
    Grid,
    VelocityField,
    gradient,
    rfft3,
    shift_phase,
)

# |u3| on the wall above this fraction of the near-wall sup counts as a trace violation
TRACE_TOL_REL = 1e-8
# depth of the near-wall layer used for the trace scale, as a fraction of L3
NEAR_WALL_FRACTION = 0.125
IDENTITY_FLOOR_REL = 1e-14
MODULUS_DIRECTIONS = 26


def doubled_grid(half: Grid) -> Grid:
    if half.kind is not DomainKind.HALF_SLAB:
        raise DomainError("expected a half-slab grid")
    N1, N2, N3 = half.resolution
    return Grid(Domain.hybrid(half.domain.lengths), (N1, N2, 2 * N3))


def half_grid(full: Grid, side: int = 1) -> Grid:
    if full.kind is not DomainKind.HYBRID_SLAB:
        raise DomainError("expected a hybrid-slab grid")
    N1, N2, N3 = full.resolution
    return Grid(Domain.half(full.domain.lengths, side), (N1, N2, N3 // 2))


def _flip_normal(data: np.ndarray) -> np.ndarray:
    out = data.copy()
    out[2] = -out[2]
    return out


def mirror(field: VelocityField) -> VelocityField:
    """Whole-slab reflection f_R(x) = (f1, f2, -f3)(x1, x2, -x3) on a doubled slab."""
    grid = field.grid
    if grid.kind is not DomainKind.HYBRID_SLAB:
        raise DomainError("mirror needs a hybrid-slab field")
    n = grid.resolution[2]
    idx = (n - np.arange(n)) % n
    return VelocityField(grid, _flip_normal(field.data[..., idx]))


def reflect(field: VelocityField) -> VelocityField:
    """Map a half-slab field to the mirror half; involutive bit for bit."""
    grid = field.grid
    if grid.kind is not DomainKind.HALF_SLAB:
        raise DomainError("reflect needs a half-slab field")
    dom = Domain.half(grid.domain.lengths, -grid.domain.side)
    return VelocityField(Grid(dom, grid.resolution), _flip_normal(field.data[..., ::-1]))


def near_wall_sup(field: VelocityField, depth: float | None = None) -> float:
    """sup |u| over the layer of the given depth next to x3 = 0 (half slab, upper side)."""
    grid = field.grid
    L3 = grid.domain.lengths[2]
    depth = NEAR_WALL_FRACTION * L3 if depth is None else depth
    planes = np.nonzero(np.abs(grid.coords(2)) <= depth + 1e-12 * L3)[0]
    return float(np.max(np.sqrt(np.sum(field.data[..., planes] ** 2, axis=0))))


def wall_plane(field: VelocityField) -> np.ndarray:
    """Samples on x3 = 0, shape (3, N1, N2)."""
    return field.data[..., 0] if field.grid.domain.side == 1 else field.data[..., -1]


def trace_violation(field: VelocityField, tol_rel: float | None = None) -> tuple[float, bool]:
    """Return (max |u3| on the wall, whether it exceeds tol_rel * near-wall sup)."""
    tol_rel = TRACE_TOL_REL if tol_rel is None else tol_rel
    u3 = float(np.max(np.abs(wall_plane(field)[2])))
    scale = near_wall_sup(field)
    return u3, u3 > tol_rel * scale


def extend(field: VelocityField, trace_tol_rel: float | None = None) -> VelocityField:
    """u_E = u + u_R on the doubled slab; wall and seam planes take (u1, u2, 0)."""
    grid = field.grid
    if grid.kind is not DomainKind.HALF_SLAB:
        raise DomainError("extend needs a half-slab field")
    if grid.domain.side == -1:
        field = reflect(field)
        grid = field.grid
    u3, bad = trace_violation(field, trace_tol_rel)
    if bad:
        warnings.warn(
            f"normal trace max|u3(x3=0)| = {u3:.3e} exceeds tolerance; extension is discontinuous",
            HypothesisWarning,
            stacklevel=2,
        )
    N3 = grid.resolution[2]
    full = doubled_grid(grid)
    u = field.data
    out = np.empty((3, *full.shape))
    out[..., N3:] = u[..., :N3]
    out[..., :N3] = _flip_normal(u[..., N3:0:-1])
    out[..., N3] = u[..., 0]
    out[2, ..., N3] = 0.0
    out[..., 0] = u[..., N3]
    out[2, ..., 0] = 0.0
    return VelocityField(full, out)


def restrict(field: VelocityField, side: int = 1) -> VelocityField:
    """Restriction of a doubled-slab field to the closed half x3 >= 0 (or <= 0)."""
    full = field.grid
    if full.kind is not DomainKind.HYBRID_SLAB:
        raise DomainError("restrict needs a hybrid-slab field")
    if side not in (1, -1):
        raise ValidationError("side must be +1 or -1")
    n = full.resolution[2]
    N3 = n // 2
    if side == 1:
        idx = np.concatenate([np.arange(N3, n), [0]])
    else:
        idx = np.arange(0, N3 + 1)
    return VelocityField(half_grid(full, side), field.data[..., idx])


def _half_integral(grid: Grid, density: np.ndarray) -> float:
    return float(np.sum(density * grid.x3_weights())) * grid.cell_volume


def _stress_pairing(u: np.ndarray, dpsi: np.ndarray) -> np.ndarray:
    # sum_ij u_i u_j d_j psi_i
    return np.einsum("i...,j...,ij...->...", u, u, dpsi, optimize=True)


def _jacobian(field: VelocityField) -> np.ndarray:
    """d_j psi_i as array [i, j, ...]."""
    return np.stack([gradient(field.data[i], field.grid).data for i in range(3)])


def nonlinear_identity_sides(u: VelocityField, psi: VelocityField) -> tuple[float, float, float]:
    """(mirrored pairing on D-, pairing on D+, int_{D+} |u|^2 |grad psi|).

    ``u`` lives on the upper half slab; ``psi`` is a test field on the doubled
    slab whose restriction to D+ is the test function. The two sides are
    computed on disjoint node sets with independently differentiated fields.
    """
    if u.grid.kind is not DomainKind.HALF_SLAB or u.grid.domain.side != 1:
        raise DomainError("u must live on the upper half slab")
    full = doubled_grid(u.grid)
    if psi.grid != full:
        raise ValidationError("psi must live on the doubled slab of u's grid")
    n = full.resolution[2]
    N3 = n // 2
    upper = np.concatenate([np.arange(N3, n), [0]])
    lower = np.arange(0, N3 + 1)

    dpsi = _jacobian(psi)[..., upper]
    rhs = _half_integral(u.grid, _stress_pairing(u.data, dpsi))
    magnitude = _half_integral(u.grid, np.sum(u.data**2, axis=0) * np.sqrt(np.sum(dpsi**2, axis=(0, 1))))

    u_r = reflect(u)
    dpsi_r = _jacobian(mirror(psi))[..., lower]
    lhs = _half_integral(u_r.grid, _stress_pairing(u_r.data, dpsi_r))
    return lhs, rhs, magnitude


def nonlinear_identity_check(u: VelocityField, psi: VelocityField) -> float:
    """|LHS - RHS| / (|LHS| + |RHS| + floor), floor a roundoff share of the integrand size."""
    lhs, rhs, magnitude = nonlinear_identity_sides(u, psi)
    floor = IDENTITY_FLOOR_REL * magnitude + np.finfo(float).tiny
    return abs(lhs - rhs) / (abs(lhs) + abs(rhs) + floor)


# ---- continuity modulus ----

def shell_directions(n: int = MODULUS_DIRECTIONS, hemisphere: bool = False) -> np.ndarray:
    """Deterministic near-uniform unit vectors (Fibonacci spiral), shape (n, 3).

    With ``hemisphere`` the points cover x3 >= 0 only.
    """
    i = np.arange(n) + 0.5
    golden = math.pi * (3.0 - math.sqrt(5.0))
    z = 1.0 - i / n if hemisphere else 1.0 - 2.0 * i / n
    r = np.sqrt(np.clip(1.0 - z**2, 0.0, None))
    theta = golden * i
    return np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)


def sample_plane(grid: Grid, u_hat: np.ndarray, z: np.ndarray, plane: int) -> np.ndarray:
    """Values of the trigonometric interpolant at (x1, x2, x3[plane]) + z on all (x1, x2) nodes."""
    g = u_hat * shift_phase(grid, z)
    N3 = grid.resolution[2]
    n3 = np.arange(N3 // 2 + 1)
    e = np.exp(2j * math.pi * n3 * plane / N3)
    e[-1] = math.cos(math.pi * plane)
    acc = np.tensordot(g, e, axes=([-1], [0]))
    inner = np.tensordot(g[..., 1:-1], e[1:-1], axes=([-1], [0]))
    # Hermitian partners of the interior n3 planes live at (-n1, -n2, -n3)
    partner = np.conj(np.roll(np.flip(inner, axis=(-2, -1)), shift=(1, 1), axis=(-2, -1)))
    plane_hat = acc + partner
    N1, N2 = grid.resolution[:2]
    vals = np.fft.ifft2(plane_hat, axes=(-2, -1)) * (N1 * N2) / math.sqrt(N1 * N2 * N3)
    return vals.real


@dataclass(frozen=True)
class ContinuityModulus:
    radii: tuple[float, ...]
    w_values: tuple[float, ...]
    boundary: str
    n_directions: int
    slope: float
    w_zero: float
    fit_exponent: float

    def __post_init__(self) -> None:
        if any(b < a for a, b in zip(self.w_values, self.w_values[1:])):
            raise ValidationError("w must be non-decreasing")


def _fit_modulus(radii: np.ndarray, w: np.ndarray) -> tuple[float, float, float]:
    pos = w > 0
    slope = float("nan")
    if np.count_nonzero(pos) >= 2:
        slope = float(np.polyfit(np.log(radii[pos]), np.log(w[pos]), 1)[0])
    if not np.any(pos):
        return 0.0, 0.0, 0.0
    if radii.size < 3:
        return slope, float(w[0]), slope
    try:
        with warnings.catch_warnings():
            # the covariance is not used
            warnings.simplefilter("ignore", OptimizeWarning)
            popt, _ = curve_fit(
                lambda r, w0, a, p: w0 + a * (r / radii[-1]) ** p,
                radii,
                w,
                p0=(0.0, float(w[-1]), 1.0),
                bounds=([0.0, 0.0, 1e-3], [np.inf, np.inf, 6.0]),
                maxfev=20000,
            )
        return slope, float(popt[0]), float(popt[2])
    except (RuntimeError, ValueError):
        return slope, float(w[0]), slope


def continuity_modulus(
    field: VelocityField,
    radii,
    n_directions: int = MODULUS_DIRECTIONS,
) -> ContinuityModulus:
    """Boundary-anchored sup increment w(r) over the plane x3 = 0.

    Half-slab input is interpolated through its extension and probed with
    directions pointing into x3 >= 0; full-slab input is probed in all
    directions around its x3 = 0 plane.
    """
    radii = np.asarray(sorted(float(r) for r in radii))
    if radii.size == 0:
        raise RangeError("radius list is empty")
    if np.any(radii <= 0):
        raise RangeError("radii must be positive")
    grid = field.grid
    L3 = grid.domain.lengths[2]
    if radii[-1] > L3 / 4 * (1 + 1e-12):
        raise RangeError(f"radii must not exceed L3/4 = {L3 / 4}")
    if grid.kind is DomainKind.HALF_SLAB:
        if grid.domain.side == -1:
            field = reflect(field)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", HypothesisWarning)
            full = extend(field)
        base = field.data[..., 0]
        plane = full.grid.resolution[2] // 2
        dirs = shell_directions(n_directions, hemisphere=True)
    else:
        full = field
        x3 = grid.coords(2)
        plane = int(np.argmin(np.abs(x3)))
        base = field.data[..., plane]
        dirs = shell_directions(n_directions)
    u_hat = rfft3(full.data)
    w = np.empty(radii.size)
    running = 0.0
    for i, r in enumerate(radii):
        for d in dirs:
            vals = sample_plane(full.grid, u_hat, r * d, plane)
            running = max(running, float(np.max(np.sqrt(np.sum((vals - base) ** 2, axis=0)))))
        w[i] = running
    slope, w0, p = _fit_modulus(radii, w)
    return ContinuityModulus(tuple(float(r) for r in radii), tuple(float(v) for v in w), "x3=0", len(dirs), slope, w0, p)


# ---- half-space criterion ----

def halfspace_criterion(
    fields,
    shifts,
    weights=None,
    directions: np.ndarray | None = None,
    band: tuple[float, float] | None = None,
    confidence: float = CONFIDENCE,
    n_modulus_directions: int = MODULUS_DIRECTIONS,
) -> CriterionReport:
    """Bulk S3/|y| over the inner region plus the boundary-strip bound |T^2| w(2|y|)^3.

    ``extras`` carries the strip values, their slope fit, the modulus per
    snapshot, and the trace check. A violated trace makes the verdict
    inconclusive and sets ``extras["trace_violated"]``.
    """
    if isinstance(fields, VelocityField):
        fields = [fields]
    grid = _shared_grid(fields)
    if grid.kind is not DomainKind.HALF_SLAB:
        raise DomainError("halfspace_criterion needs half-slab snapshots")
    if grid.domain.side == -1:
        fields = [reflect(f) for f in fields]
        grid = fields[0].grid
    w = _weights_for(fields, weights)
    mags = _validate_shifts(grid, shifts)
    L1, L2, L3 = grid.domain.lengths
    if mags[0] > L3 / 8 * (1 + 1e-12):
        raise RangeError(f"shifts must not exceed L3/8 = {L3 / 8} (the strip uses radius 2|y|)")
    dirs = lattice_directions(9) if directions is None else np.asarray(directions, dtype=np.float64)
    if dirs.ndim != 2 or dirs.shape[0] < 6:
        raise RangeError("at least 6 directions are required")
    dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)

    table = np.zeros((mags.size, dirs.shape[0]))
    strip = np.zeros(mags.size)
    trace_max, near_sup, violated = 0.0, 0.0, False
    moduli = []
    for f, wt in zip(fields, w):
        u3, bad = trace_violation(f)
        trace_max = max(trace_max, u3)
        near_sup = max(near_sup, near_wall_sup(f))
        violated |= bad
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", HypothesisWarning)
            ext = extend(f)
        for i, r in enumerate(mags):
            for j, d in enumerate(dirs):
                table[i, j] += wt * structure_fn_half(f, r * d, _ext=ext)
        mod = continuity_modulus(f, 2.0 * mags, n_modulus_directions)
        moduli.append(mod)
        # modulus radii come back ascending; shifts are descending
        strip += wt * L1 * L2 * np.asarray(mod.w_values)[::-1] ** 3

    per_dir = table / mags[:, None]
    values = per_dir.mean(axis=1)
    # shifts are already capped at L3/8, so the whole list is the fit band
    fit = fit_power_law(mags, values, band, confidence)
    strip_fit = fit_power_law(mags, strip, None, confidence)
    conserving = fit.lower > 0 and strip_fit.lower > 0 and not violated
    if violated:
        warnings.warn(
            f"normal trace max|u3(x3=0)| = {trace_max:.3e} violates the boundary hypothesis",
            HypothesisWarning,
            stacklevel=2,
        )
    extras = {
        "strip_values": [float(v) for v in strip],
        "strip_fit": {
            "slope": strip_fit.slope,
            "lower": strip_fit.lower,
            "upper": strip_fit.upper,
            "residual": strip_fit.residual,
            "n_points": strip_fit.n_points,
        },
        "modulus_radii": [float(v) for v in 2.0 * mags[::-1]],
        "modulus_w": [list(m.w_values) for m in moduli],
        "w_zero": max(m.w_zero for m in moduli),
        "trace_max": trace_max,
        "near_wall_sup": near_sup,
        "trace_violated": bool(violated),
    }
    return CriterionReport(
        mode="half",
        shifts=tuple(float(v) for v in mags),
        direction_vectors=tuple(tuple(float(c) for c in d) for d in dirs),
        per_direction=tuple(tuple(float(v) for v in row) for row in per_dir),
        s3_over_y=tuple(float(v) for v in values),
        fit=fit,
        verdict=Verdict.CONSERVING if conserving else Verdict.INCONCLUSIVE,
        extras=extras,
    )
