import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from curvedfronts.errors import InvalidShift, RejectedConfiguration
from curvedfronts.media import build_reaction
from curvedfronts.pde_solver import (BoundaryPolicy, Field, Grid2D, Stepper, advance,
                                     check_cfl, front_position, max_stable_dt, planar_speed,
                                     read_snapshot, read_timeseries, recentre_cells,
                                     write_snapshot, write_timeseries)

MEDIUM = build_reaction("cubic-periodic", threshold=0.3, amp=0.15)
HOMOG = build_reaction("homogeneous-cubic", threshold=0.25)
GRID = Grid2D(20, 20, 0.1, 0.1)
WRAP = BoundaryPolicy("periodic-wrap", "periodic-wrap", "periodic-wrap", "periodic-wrap")
STRIP = BoundaryPolicy("periodic-wrap", "periodic-wrap", "clamp-1", "clamp-0")


def numpy_step(u, reaction, grid, dt):
    """Reference update for fully periodic data, written with np.roll."""
    X, Y = grid.mesh()
    lap = ((np.roll(u, 1, 0) - 2 * u + np.roll(u, -1, 0)) / grid.hx ** 2
           + (np.roll(u, 1, 1) - 2 * u + np.roll(u, -1, 1)) / grid.hy ** 2)
    return u + dt * (lap + reaction.f(X, Y, u))


def test_kernel_matches_numpy_reference():
    rng = np.random.default_rng(3)
    u = rng.uniform(0, 1, (GRID.nx, GRID.ny))
    dt = max_stable_dt(GRID, MEDIUM)
    ref = u.copy()
    for _ in range(25):
        ref = numpy_step(ref, MEDIUM, GRID, dt)
    out = advance(Field(GRID, u), MEDIUM, dt, 25, WRAP)
    np.testing.assert_allclose(out.values, ref, rtol=0, atol=1e-13)
    assert out.time == pytest.approx(25 * dt)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), steps=st.integers(1, 200))
def test_comparison_principle(seed, steps):
    rng = np.random.default_rng(seed)
    lo = rng.uniform(-0.2, 1.0, (GRID.nx, GRID.ny))
    hi = lo + rng.uniform(0, 0.3, lo.shape)
    dt = max_stable_dt(GRID, MEDIUM)
    a = advance(Field(GRID, lo), MEDIUM, dt, steps, STRIP)
    b = advance(Field(GRID, hi), MEDIUM, dt, steps, STRIP)
    assert np.all(a.values <= b.values + 1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_unit_interval_is_invariant(seed):
    rng = np.random.default_rng(seed)
    u = rng.uniform(0, 1, (GRID.nx, GRID.ny))
    out = advance(Field(GRID, u), MEDIUM, max_stable_dt(GRID, MEDIUM), 150, WRAP)
    assert out.values.min() >= -1e-12 and out.values.max() <= 1 + 1e-12


def test_equilibria_are_fixed():
    dt = max_stable_dt(GRID, MEDIUM)
    for c in (0.0, 1.0):
        out = advance(Field(GRID, np.full((20, 20), c)), MEDIUM, dt, 50, WRAP)
        assert np.all(out.values == c)


def test_cfl_rejection():
    dt = max_stable_dt(GRID, MEDIUM)
    check_cfl(GRID, MEDIUM, dt)
    with pytest.raises(RejectedConfiguration):
        check_cfl(GRID, MEDIUM, 1.01 * dt)
    with pytest.raises(RejectedConfiguration):
        Stepper(Field(GRID, np.zeros((20, 20))), MEDIUM, 2 * dt, WRAP)


def test_wrap_needs_whole_periods():
    g = Grid2D(15, 20, 0.1, 0.1)
    with pytest.raises(RejectedConfiguration):
        Stepper(Field(g, np.zeros((15, 20))), MEDIUM, 1e-3, WRAP)
    with pytest.raises(RejectedConfiguration):
        BoundaryPolicy("periodic-wrap", "clamp-0")


def test_recentre_is_a_shift():
    rng = np.random.default_rng(1)
    v = rng.uniform(0, 1, (20, 20))
    f = recentre_cells(Field(GRID, v), 0, 10, WRAP)
    np.testing.assert_array_equal(f.values, np.roll(v, -10, axis=1))
    assert f.grid.y0 == pytest.approx(1.0)
    with pytest.raises(InvalidShift):
        recentre_cells(Field(GRID, v), 20, 0, WRAP)


def test_snapshot_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    g = Grid2D(7, 9, 0.1, 0.2, x0=-0.3, y0=1.7)
    f = Field(g, rng.normal(size=(7, 9)), time=3.25)
    write_snapshot(tmp_path / "a.snap", f)
    back = read_snapshot(tmp_path / "a.snap")
    assert back.grid == g and back.time == f.time
    np.testing.assert_array_equal(back.values, f.values)


def test_timeseries_round_trip(tmp_path):
    rows = [(0.0, 1.5, 0.0), (1.0, 1.853, 0.01)]
    write_timeseries(tmp_path / "t.csv", rows)
    assert read_timeseries(tmp_path / "t.csv") == rows


def test_front_position_of_flat_profile():
    g = Grid2D(10, 50, 0.1, 0.1)
    X, Y = g.mesh()
    f = Field(g, 0.5 * (1 - np.tanh(Y - 2.0)))
    pos, spread = front_position(f, (0.0, 1.0))
    assert pos == pytest.approx(2.0, abs=1e-3)
    assert spread < 1e-12


def test_planar_speed_homogeneous():
    # travelling wave speed for the cubic is (1 - 2 theta) / sqrt 2
    exact = (1 - 2 * 0.25) / math.sqrt(2)
    c, pos = planar_speed(HOMOG, length=40, width=2, start=5, burn_in=5, fit=15)
    assert c == pytest.approx(exact, rel=5e-3)
    assert np.all(np.diff(pos[:, 1]) > 0)
