import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from curvedfronts.barriers import (SamplePlan, TimeShift, UMinus, build_interface_curve,
                                   make_lower_barrier, make_U_plus, read_residual_summary,
                                   residual_certify, sech, sech_d, validate_auxiliary,
                                   write_residual_report)
from curvedfronts.errors import InvalidAuxiliaryAngle, InvalidCurve, InvalidShift
from curvedfronts.media import build_reaction
from curvedfronts.pulsating import TravelingWaveField

A = 0.25
WAVE = TravelingWaveField(A)
HOMOG = build_reaction("homogeneous-cubic", threshold=A)
ALPHA, BETA = math.pi / 6, 5 * math.pi / 6
C_AB = WAVE.c / math.sin(ALPHA)


@settings(max_examples=100, deadline=None)
@given(x=st.floats(-8, 8), k=st.integers(1, 3))
def test_sech_derivatives(x, k):
    h = 1e-5
    fd = (sech_d(x + h, k - 1) - sech_d(x - h, k - 1)) / (2 * h)
    assert float(sech_d(x, k)) == pytest.approx(float(fd), abs=1e-8)


@pytest.mark.parametrize("kind,a1,a2", [("convex-psi", ALPHA, BETA),
                                        ("concave-phi1", ALPHA, ALPHA / 2),
                                        ("concave-phi2", (BETA + math.pi) / 2, BETA)])
def test_curve_asymptotes_and_convexity(kind, a1, a2):
    cur = build_interface_curve(kind, a1, a2)
    far = 200.0
    assert float(cur.psi(-far, 1)) == pytest.approx(cur.left_slope, abs=1e-9)
    assert float(cur.psi(far, 1)) == pytest.approx(cur.right_slope, abs=1e-9)
    xs = np.linspace(-40, 40, 8001)
    assert cur.convexity_margin(xs) > 0
    k = cur.constants
    assert k["k1"] > 0 and k["k2"] > 0 and k["K1"] >= max(k["k1"], k["k2"])
    # second derivative by differences of the first
    h = 1e-5
    fd = (cur.psi(0.3 + h, 1) - cur.psi(0.3 - h, 1)) / (2 * h)
    assert float(cur.psi(0.3, 2)) == pytest.approx(float(fd), abs=1e-7)


def test_convex_psi_slopes_are_cotangents():
    cur = build_interface_curve("convex-psi", ALPHA, BETA)
    assert cur.left_slope == pytest.approx(-1 / math.tan(ALPHA))
    assert cur.right_slope == pytest.approx(-1 / math.tan(BETA))


def test_curve_angle_order_is_checked():
    with pytest.raises(InvalidCurve):
        build_interface_curve("convex-psi", BETA, ALPHA)
    with pytest.raises(InvalidCurve):
        build_interface_curve("concave-phi1", ALPHA, ALPHA + 0.1)


def test_auxiliary_angle_check():
    assert validate_auxiliary(WAVE.speed, ALPHA, ALPHA / 2) > 0
    # g = c / sin drops towards pi / 2, so an auxiliary angle past alpha is rejected
    with pytest.raises(InvalidAuxiliaryAngle):
        validate_auxiliary(WAVE.speed, ALPHA, ALPHA + 0.2)


def test_upper_barrier_certifies():
    cur = build_interface_curve("convex-psi", ALPHA, BETA)
    rep = residual_certify(make_U_plus(WAVE, cur, 0.01, 0.01, C_AB), HOMOG,
                           SamplePlan(5000, 1), 0.025)
    assert rep.verdict and rep.violations == 0
    assert rep.min_residual >= -rep.slack
    assert rep.claim_min > 0


def test_lower_barrier_certifies():
    cur = build_interface_curve("concave-phi1", ALPHA, ALPHA / 2)
    b = make_lower_barrier(1, WAVE, cur, 0.01, 0.02, C_AB)
    rep = residual_certify(b, HOMOG, SamplePlan(5000, 2), 0.025)
    assert b.expect == "sub" and rep.verdict
    assert rep.max_residual <= rep.slack


def test_slow_interface_is_not_a_supersolution():
    cur = build_interface_curve("convex-psi", ALPHA, BETA)
    rep = residual_certify(make_U_plus(WAVE, cur, 0.0, 0.01, 0.8 * C_AB), HOMOG,
                           SamplePlan(2000, 3), 0.025)
    assert not rep.verdict and rep.violations > 0


def test_u_minus_is_the_larger_front():
    fa, fb = WAVE.fixed(ALPHA), WAVE.fixed(BETA)
    b = UMinus(fa, fb)
    rng = np.random.default_rng(0)
    t, x, y = rng.uniform(0, 5, 50), rng.uniform(-10, 10, 50), rng.uniform(-5, 10, 50)
    np.testing.assert_array_equal(b(t, x, y), np.maximum(fa.at_points(t, x, y),
                                                         fb.at_points(t, x, y)))


def test_time_shift():
    base = UMinus(WAVE.fixed(ALPHA), WAVE.fixed(BETA))
    t, x, y = np.array([0.5, 2.0]), np.array([1.0, -3.0]), np.array([0.2, 1.0])
    np.testing.assert_array_equal(TimeShift(base, 0.0, 1.0, 0.1, "sub")(t, x, y), base(t, x, y))
    sh = TimeShift(base, 0.05, 1.0, 0.1, "sub")
    # at t = 0 the shift is only the -delta drop
    assert float(sh(0.0, 1.0, 0.2)) == pytest.approx(float(base(0.0, 1.0, 0.2)) - 0.05)
    with pytest.raises(InvalidShift):
        TimeShift(base, 0.2, 1.0, 0.1, "sub", sigma=0.3)
    with pytest.raises(InvalidShift):
        TimeShift(base, 0.01, 1.0, 0.0, "super")


def test_residual_summary_round_trip(tmp_path):
    cur = build_interface_curve("convex-psi", ALPHA, BETA)
    rep = residual_certify(make_U_plus(WAVE, cur, 0.01, 0.01, C_AB), HOMOG,
                           SamplePlan(500, 4), 0.025)
    write_residual_report(tmp_path / "r.csv", rep)
    got = read_residual_summary(tmp_path / "r.csv")
    assert got == {"verdict": rep.verdict, "extreme": rep.extreme, "slack": rep.slack,
                   "samples": 500}


def test_sech_is_even_and_bounded():
    xs = np.linspace(-20, 20, 401)
    np.testing.assert_array_equal(sech(xs), sech(-xs))
    assert sech(0.0) == 1.0 and np.all(sech(xs) <= 1.0)
