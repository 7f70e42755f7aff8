import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from enflux import euler
from enflux.errors import CFLError, DomainError, RangeError, ResolutionLossError, ValidationError
from enflux.euler import SnapshotSeries, integrate, rhs, top_shell_fraction
from enflux.fields import SmoothSpec, gen_abc, gen_smooth, gen_taylor_green
from enflux.spectral import Domain, Grid, VelocityField, energy, is_divergence_free, rfft3

import oracles

TWO_PI = 2 * math.pi


def diff_norm(a, b):
    return float(np.sqrt(np.sum((a.data - b.data) ** 2)))


# ---- rhs ----

def test_rhs_of_abc_vanishes():
    assert np.max(np.abs(rhs(gen_abc(Grid.periodic(16))).data)) <= 1e-11


def test_rhs_of_constant_vanishes():
    g = Grid.periodic(8)
    data = np.ones((3, *g.shape)) * np.array([0.3, -1.0, 2.0])[:, None, None, None]
    assert np.max(np.abs(rhs(VelocityField(g, data)).data)) == 0.0


def test_rhs_of_taylor_green_matches_dense_sum():
    g = Grid.periodic(16)
    u = gen_taylor_green(g)
    ref = oracles.dense_euler_rhs(u.data)
    out = rhs(u)
    assert np.max(np.abs(out.data - ref)) <= 1e-10
    # guard against comparing two zero fields
    assert np.max(np.abs(ref)) > 0.1


def test_rhs_of_random_field_matches_dense_sum():
    g = Grid.periodic((8, 6, 10), lengths=(TWO_PI, 3.0, 5.0))
    rng = np.random.default_rng(1)
    u = VelocityField(g, rng.standard_normal((3, *g.shape)))
    ref = oracles.dense_euler_rhs(u.data, lengths=g.domain.lengths)
    assert np.max(np.abs(rhs(u).data - ref)) <= 1e-10 * np.max(np.abs(ref))


@settings(max_examples=10)
@given(seed=st.integers(0, 2**32 - 1))
def test_rhs_is_divergence_free_and_dealiased(seed):
    g = Grid.periodic(12)
    rng = np.random.default_rng(seed)
    out = rhs(VelocityField(g, rng.standard_normal((3, *g.shape))))
    assert is_divergence_free(out)
    c = rfft3(out.data)
    assert np.max(np.abs(c[:, ~g.dealias_mask()])) <= 1e-13 * np.max(np.abs(c))


def test_rhs_needs_periodic_grid():
    with pytest.raises(DomainError):
        rhs(VelocityField.zeros(Grid(Domain.half((TWO_PI,) * 3), (8, 8, 8))))


# ---- integrate ----

def test_abc_is_steady():
    u = gen_abc(Grid.periodic(16))
    s = integrate(u, 1.0, 0.05)
    assert np.max(np.abs(s.fields[-1].data - u.data)) <= 1e-9
    assert s.times == (0.0, 1.0)


def test_taylor_green_energy_is_conserved():
    u = gen_taylor_green(Grid.periodic(64))
    s = integrate(u, 1.0, 1e-2, stride=25)
    e0 = s.energy_series[0]
    assert e0 == pytest.approx(energy(u), rel=1e-13)
    assert max(abs(e - e0) / e0 for e in s.energy_series) <= 1e-6
    assert s.max_energy_drift <= 1e-6
    assert s.times == (0.0, 0.25, 0.5, 0.75, 1.0)
    # the flow is genuinely evolving: enstrophy grows monotonically
    assert all(b > a for a, b in zip(s.enstrophy_series, s.enstrophy_series[1:]))
    assert diff_norm(s.fields[-1], u) > 0.1 * math.sqrt(energy(u))
    assert all(is_divergence_free(f) for f in s.fields)


def test_dt_halving_shows_fourth_order():
    u = gen_taylor_green(Grid.periodic(16))
    finals = [integrate(u, 1.0, dt, top_shell_tol=1.0).fields[-1] for dt in (0.1, 0.05, 0.025)]
    ratio = diff_norm(finals[0], finals[1]) / diff_norm(finals[1], finals[2])
    assert ratio == pytest.approx(16.0, rel=0.2)


def test_energy_drift_is_a_time_stepping_effect():
    u = gen_taylor_green(Grid.periodic(16))
    drifts = [integrate(u, 1.0, dt, top_shell_tol=1.0).max_energy_drift for dt in (0.1, 0.05)]
    assert drifts[1] <= drifts[0] / 16


def test_momentum_is_constant():
    g = Grid.periodic(12)
    base = gen_smooth(g, SmoothSpec(seed=3, k_max=2, amplitude=0.5))
    data = base.data + np.array([0.2, -0.1, 0.05])[:, None, None, None]
    s = integrate(VelocityField(g, data), 0.2, 0.02, stride=2, top_shell_tol=1.0)
    means = [f.data.mean(axis=(1, 2, 3)) for f in s.fields]
    for m in means:
        assert np.max(np.abs(m - means[0])) <= 1e-14


def test_snapshot_stride_and_series_lengths():
    s = integrate(gen_abc(Grid.periodic(8)), 0.7, 0.1, stride=3)
    assert s.times == pytest.approx((0.0, 0.3, 0.6, 0.7))
    n = len(s.times)
    assert len(s.fields) == len(s.energy_series) == len(s.enstrophy_series) == len(s.top_shell_series) == n
    assert s.dt == 0.1
    assert s.grid == Grid.periodic(8)


def test_cfl_violation_raises():
    u = gen_taylor_green(Grid.periodic(16))
    with pytest.raises(CFLError):
        integrate(u, 1.0, 0.5)
    # a looser bound admits the same step
    integrate(u, 0.5, 0.5, cfl=5.0, top_shell_tol=1.0)


def test_resolution_loss_raises():
    u = gen_taylor_green(Grid.periodic(16))
    with pytest.raises(ResolutionLossError):
        integrate(u, 1.0, 0.05)


def test_resolution_tolerance_is_read_at_call_time(monkeypatch):
    u = gen_taylor_green(Grid.periodic(16))
    monkeypatch.setattr(euler, "TOP_SHELL_TOL", 1.0)
    integrate(u, 1.0, 0.05)


def test_unresolved_initial_data_is_rejected():
    g = Grid.periodic(8)
    rng = np.random.default_rng(0)
    with pytest.raises(ResolutionLossError):
        integrate(VelocityField(g, rng.standard_normal((3, *g.shape))), 0.1, 0.01)


def test_top_shell_fraction():
    g = Grid.periodic(18)
    assert top_shell_fraction(g, rfft3(gen_taylor_green(g).data)) <= 1e-30
    x1, _, _ = g.mesh()
    data = np.zeros((3, *g.shape))
    data[1] = np.broadcast_to(np.sin(5 * x1), g.shape)
    # |n1| = 5 of the retained |n1| <= 5 sits in the top third
    assert top_shell_fraction(g, rfft3(data)) == pytest.approx(1.0, rel=1e-12)
    assert top_shell_fraction(g, np.zeros((3, *g.spectral_shape), dtype=complex)) == 0.0


def test_integrate_validation():
    u = gen_abc(Grid.periodic(8))
    with pytest.raises(RangeError):
        integrate(u, 1.0, 0.0)
    with pytest.raises(RangeError):
        integrate(u, 1.0, 0.3)
    with pytest.raises(RangeError):
        integrate(u, 1.0, 0.1, stride=0)
    with pytest.raises(DomainError):
        integrate(VelocityField.zeros(Grid(Domain.half((TWO_PI,) * 3), (8, 8, 8))), 1.0, 0.1)


def test_snapshot_series_validation():
    g = Grid.periodic(8)
    f = VelocityField.zeros(g)
    with pytest.raises(ValidationError):
        SnapshotSeries((0.0, 0.0), (f, f), 0.1, (0.0, 0.0), (0.0, 0.0), (0.0, 0.0), 0.0)
    with pytest.raises(ValidationError):
        SnapshotSeries((0.0,), (f, f), 0.1, (0.0,), (0.0,), (0.0,), 0.0)
    with pytest.raises(ValidationError):
        SnapshotSeries((0.0, 1.0), (f, VelocityField.zeros(Grid.periodic(6))), 0.1, (0, 0), (0, 0), (0, 0), 0.0)
