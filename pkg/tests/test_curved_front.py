import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from curvedfronts.curved_front import (CurvedFrontSolution, ExperimentVerdict, WindowConfig,
                                       WindowFrame, apex_speed, apex_track, construct,
                                       construction_verdict, interface_distances,
                                       interior_angles, junction_positions, merge_verdict,
                                       read_polylines, read_verdict, shared_difference,
                                       stability_verdict, verify_limit_shape, write_polylines,
                                       write_verdict)
from curvedfronts.direction_atlas import AnglePair, triple_junction
from curvedfronts.errors import ConstructionFaulted
from curvedfronts.media import build_reaction
from curvedfronts.pde_solver import Field, Grid2D
from curvedfronts.pulsating import TravelingWaveField

A = 0.25
HOMOG = build_reaction("homogeneous-cubic", threshold=A)
WAVE = TravelingWaveField(A)
ALPHA = math.pi / 6
PAIR = AnglePair(ALPHA, math.pi - ALPHA, WAVE.c / math.sin(ALPHA), -1.0, 1.0, 1.0, 0.0)


@pytest.fixture(scope="module")
def small_run():
    cfg = WindowConfig(half_width=8)
    return construct(HOMOG, PAIR, WAVE, 6.0, cfg, t_obs=8.0), cfg


def test_small_construction_keeps_invariants(small_run):
    sol, cfg = small_run
    v = construction_verdict(sol, cfg)
    assert v.passed, v.rows()
    assert v["sandwich_lower"].measured >= 0.0
    assert [round(s.time, 9) for s in sol.snapshots] == [-6.0, -1.0, 0.0, 4.0, 8.0]
    assert sol.final.time == pytest.approx(8.0)
    # the interface moves up at the corner speed, so the window bottom follows it
    assert sol.final.grid.y0 > sol.snapshots[0].grid.y0


def test_shape_distance_shrinks_with_radius(small_run):
    sol, _ = small_run
    v = verify_limit_shape(sol, [2, 4, 6])
    vals = [v[f"shape_R{r}"].measured for r in (2, 4, 6)]
    assert vals == sorted(vals, reverse=True)
    assert v["shape_decreasing"].passed


def test_upper_barrier_violation_is_fatal():
    cfg = WindowConfig(half_width=6)

    def low(t, x, y):
        return np.full(np.shape(x), 0.5)
    with pytest.raises(ConstructionFaulted):
        construct(HOMOG, PAIR, WAVE, 2.0, cfg, t_obs=0.0, upper=low)


@settings(max_examples=100, deadline=None)
@given(t=st.floats(-50, 50), off=st.floats(-20, 20))
def test_window_frame_is_lattice_aligned(t, off):
    fr = WindowFrame(off, 30.0, 8.0, 0.7)
    g = fr.grid_at(HOMOG, t, 0.1)
    assert g.y0 == pytest.approx(round(g.y0))
    assert g.x0 == -8.0 and g.nx == 161 and g.ny == 301
    # the bottom lags the drifting reference by less than one period
    assert -1e-9 <= 0.7 * t + off - g.y0 < 1.0 + 1e-9


def test_shared_difference_on_offset_windows():
    ga = Grid2D(41, 41, 0.1, 0.1, 0.0, 0.0)
    gb = Grid2D(41, 41, 0.1, 0.1, 1.0, 2.0)

    def fn(g):
        X, Y = g.mesh()
        return np.sin(X) + Y ** 2
    a, b = Field(ga, fn(ga)), Field(gb, fn(gb) + 0.25)
    d = shared_difference(a, b, 0.3)
    # overlap is x in [1, 4], y in [2, 4], minus 3 points at each edge
    assert d.shape == (25, 15)
    np.testing.assert_allclose(d, 0.25, atol=1e-12)
    far = Field(Grid2D(41, 41, 0.1, 0.1, 10.0, 0.0), fn(ga))
    assert shared_difference(a, far, 0.3).size == 0


def v_polylines(vy, times, xs):
    """Interfaces y = vy t + |x| / sqrt 3 sampled on xs."""
    return [(t, xs.copy(), vy * t + np.abs(xs) / math.sqrt(3)) for t in times]


def test_apex_track_follows_the_corner():
    xs = np.linspace(-5, 5, 101)
    t, x, y = apex_track(v_polylines(0.7, np.arange(10.0), xs))
    np.testing.assert_allclose(y, 0.7 * t, atol=1e-12)
    np.testing.assert_allclose(x, 0.0, atol=1e-12)


def test_apex_speed_on_exact_corner():
    xs = np.linspace(-5, 5, 101)
    fronts = (WAVE.fixed(PAIR.alpha), WAVE.fixed(PAIR.beta))
    sol = CurvedFrontSolution(PAIR, 5.0, [], v_polylines(PAIR.c_ab, np.arange(0.0, 30.0), xs),
                              {}, {}, fronts)
    th = interior_angles(PAIR.alpha, PAIR.beta)
    np.testing.assert_allclose(th, [ALPHA + k * math.pi / 6 for k in (1, 2, 3)])
    v = apex_speed(sol, interior=[(a, WAVE.c) for a in th])
    assert v.passed, v.rows()
    assert v["apex_vy_vs_g_alpha"].measured < 1e-12
    # constant speed: margin c/sin(alpha) - c/sin(theta)
    assert v["interior_margin_1"].measured == pytest.approx(WAVE.c)


def test_interface_distances_of_parallel_lines():
    xs = np.linspace(-20, 20, 40001)
    m, s = 0.5, 1.5
    early = (0.0, xs, m * xs)
    later = (1.0, xs, m * xs + s)
    d, dt = interface_distances(later, early, 5.0)
    exact = s / math.sqrt(1 + m * m)
    assert d == pytest.approx(exact, abs=1e-5)
    assert dt == pytest.approx(exact, abs=1e-5)


def test_junction_positions_on_a_broken_line():
    xs = np.linspace(-10, 10, 2001)
    slopes = [-1.0, 0.2, 1.5]
    y = np.where(xs < -2, -1.0 * (xs + 2), np.where(xs < 3, 0.2 * (xs + 2), 1.0 + 1.5 * (xs - 3)))
    left, right = junction_positions((0.0, xs, y), slopes)
    assert left == pytest.approx(-2.0, abs=0.011)
    assert right == pytest.approx(3.0, abs=0.011)


def test_verdict_and_polyline_files(tmp_path):
    v = ExperimentVerdict().add("a", 0.1, 0.2, True).add("b", float("nan"), 1.0, False)
    write_verdict(tmp_path / "v.csv", v)
    assert read_verdict(tmp_path / "v.csv").rows() == v.rows()
    assert not v.passed
    polys = v_polylines(0.5, [0.0, 1.0], np.linspace(-1, 1, 5))
    write_polylines(tmp_path / "p.csv", polys)
    back = read_polylines(tmp_path / "p.csv")
    for (t0, x0, y0), (t1, x1, y1) in zip(polys, back):
        assert t0 == t1
        np.testing.assert_array_equal(x0, x1)
        np.testing.assert_array_equal(y0, y1)


def test_stability_verdict_rows():
    times = np.arange(0.0, 21.0)
    dist = 0.3 * np.exp(-times / 3)
    v = stability_verdict(times, dist, 20.0, 0.02, 0.001, 0.05, violations=0)
    assert v.passed
    bumped = dist.copy()
    bumped[15] += 0.01
    v = stability_verdict(times, bumped, 20.0, 0.02, 0.001, 0.05, violations=2)
    assert not v["decay_eventually_monotone"].passed
    assert not v["bracket_violations"].passed


def test_merge_verdict_needs_junctions():
    tj = triple_junction(WAVE.c, WAVE.c, WAVE.c, 0.5, math.pi / 2, math.pi - 0.5)
    v, j = merge_verdict({}, [], tj, (0.5, math.pi / 2, math.pi - 0.5), 10.0, 2.0, 0.0, 5.0)
    assert not v["junction_sign"].passed
    assert not v["late_proximity"].passed
    assert j["t"].size == 0
