import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from curvedfronts.direction_atlas import (SpeedCurve, axis_band, axis_condition,
                                          build_speed_curve, find_angle_pairs, pair_at_level,
                                          read_pairs, read_speed_curve, triple_junction,
                                          write_pairs, write_speed_curve)
from curvedfronts.errors import CurveUnusable, InvalidAngles, NoPairs
from curvedfronts.media import build_reaction

C = 0.35


def constant_curve(n=21, lo=0.15, hi=math.pi - 0.15):
    a = np.linspace(lo, hi, n)
    return SpeedCurve(a, np.full(n, C), a.copy())


def test_constant_speed_pair_at_twice_the_speed():
    # g = c / sin, so g = 2c at pi/6 and 5 pi/6
    p = pair_at_level(constant_curve(), 2 * C)
    assert p.alpha == pytest.approx(math.pi / 6, abs=1e-10)
    assert p.beta == pytest.approx(5 * math.pi / 6, abs=1e-10)
    assert p.gpa < 0 < p.gpb
    # g'(theta) = -c cos / sin^2, which is -2 sqrt(3) c at pi/6
    assert p.gpa == pytest.approx(-2 * math.sqrt(3) * C, rel=1e-9)
    assert p.gpb == pytest.approx(2 * math.sqrt(3) * C, rel=1e-9)
    assert p.mismatch < 1e-12 and p.margin > 0


def test_find_pairs_levels_are_validated():
    pairs = find_angle_pairs(constant_curve(), level_grid=6)
    assert len(pairs) == 6
    for p in pairs:
        assert p.gpa < 0 < p.gpb and p.margin > 0
        assert math.sin(p.alpha) * p.c_ab == pytest.approx(C, rel=1e-9)
        assert p.alpha + p.beta == pytest.approx(math.pi, abs=1e-9)
    assert [p.c_ab for p in pairs] == sorted(p.c_ab for p in pairs)


def test_no_interior_minimum():
    a = np.linspace(0.2, 1.2, 9)
    with pytest.raises(NoPairs):
        find_angle_pairs(SpeedCurve(a, np.full(9, C), a))


def test_curve_needs_three_usable_angles():
    a = np.linspace(0.5, 2.5, 5)
    with pytest.raises(CurveUnusable):
        SpeedCurve(a, np.array([C, np.nan, np.nan, np.nan, C]), a)
    with pytest.raises(CurveUnusable):
        SpeedCurve(a, np.array([C, C, -C, C, C]), a)


def test_curve_interpolant_exact_at_nodes():
    a = np.linspace(0.3, 2.8, 11)
    c = 0.3 + 0.05 * np.cos(3 * a)
    curve = SpeedCurve(a, c, a)
    np.testing.assert_array_equal(curve.speed(a), c)
    np.testing.assert_array_equal(curve.g_at(a), c / np.sin(a))


@pytest.mark.parametrize("kw", [dict(n_angles=5), dict(n_angles=9, arc=(0.0, 1.0)),
                                dict(n_angles=9, arc=(2.0, 1.0))])
def test_invalid_angle_grids(kw):
    r = build_reaction("homogeneous-cubic", threshold=0.25)
    with pytest.raises(InvalidAngles):
        build_speed_curve(r, **kw)


def solve_junction(ca, ct, a, t):
    """Velocity of the point common to two lines with normal speeds ca and ct."""
    M = np.array([[math.cos(a), math.sin(a)], [math.cos(t), math.sin(t)]])
    return np.linalg.solve(M, [ca, ct])


@settings(max_examples=200, deadline=None)
@given(a=st.floats(0.1, 1.4), dt1=st.floats(0.01, 1.0), dt2=st.floats(0.01, 1.0),
       ca=st.floats(0.1, 1.0), ct=st.floats(0.1, 1.0), cb=st.floats(0.1, 1.0))
def test_triple_junction_matches_linear_solve(a, dt1, dt2, ca, ct, cb):
    t, b = a + dt1, a + dt1 + dt2
    assume(b < math.pi - 1e-3)
    tj = triple_junction(ca, ct, cb, a, t, b)
    np.testing.assert_allclose([tj.c1, tj.c2], solve_junction(ca, ct, a, t), rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose([tj.c1_hat, tj.c2_hat], solve_junction(cb, ct, b, t),
                               rtol=1e-9, atol=1e-9)


def test_triple_junction_rejects_bad_order():
    with pytest.raises(InvalidAngles):
        triple_junction(1, 1, 1, 1.0, 0.5, 2.0)
    with pytest.raises(InvalidAngles):
        triple_junction(1, 1, 1, 1.0, 1.0 + 1e-4, 2.0)


def speed_law(a):
    return 0.3 + 0.1 * math.cos(a) ** 2


@settings(max_examples=200, deadline=None)
@given(a1=st.floats(0.0, 2 * math.pi), gap=st.floats(0.05, 1.4))
def test_axis_condition_balances_projected_speeds(a1, gap):
    a2 = a1 + math.pi - gap
    e1 = (math.cos(a1), math.sin(a1))
    e2 = (math.cos(a2), math.sin(a2))
    d, inside = axis_band(e1, e2)
    assert inside and d == pytest.approx(-math.cos(gap))
    ax = axis_condition(speed_law, e1, e2)
    assert ax is not None
    e0 = np.array(ax.e0)
    p1, p2 = float(np.dot(e1, e0)), float(np.dot(e2, e0))
    assert p1 > 0 and p2 > 0
    assert speed_law(math.atan2(e1[1], e1[0])) / p1 == pytest.approx(
        speed_law(math.atan2(e2[1], e2[0])) / p2, rel=1e-9)


def test_axis_condition_outside_band():
    assert axis_condition(speed_law, (1, 0), (0, 1)) is None
    assert axis_condition(speed_law, (1, 0), (-1, 0)) is None


def test_files_round_trip(tmp_path):
    curve = constant_curve()
    write_speed_curve(tmp_path / "c.csv", curve)
    back = read_speed_curve(tmp_path / "c.csv")
    np.testing.assert_array_equal(back.angles, curve.angles)
    np.testing.assert_array_equal(back.speeds, curve.speeds)
    pairs = find_angle_pairs(curve, level_grid=3)
    write_pairs(tmp_path / "p.csv", pairs)
    got = read_pairs(tmp_path / "p.csv")
    assert [(p.alpha, p.beta, p.c_ab) for p in got] == [(p.alpha, p.beta, p.c_ab) for p in pairs]
