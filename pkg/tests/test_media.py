import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from curvedfronts.errors import InvalidMedium
from curvedfronts.media import (PeriodicCell, build_reaction, cubic_f, h1_integral,
                                verify_assumptions)

PERIODIC = build_reaction("cubic-periodic", threshold=0.3, amp=0.1)
RECT = build_reaction("cubic-periodic", L1=1.0, L2=2.0, threshold=0.3, amp=0.1, diag=0.05)


def quad_h1(reaction):
    """Independent oracle: nested adaptive quadrature of f over cell x [0, 1]."""
    L1, L2 = reaction.cell.L1, reaction.cell.L2

    def inner(x, y):
        return integrate.quad(lambda u: float(reaction.f(x, y, u)), 0.0, 1.0)[0]
    val, _ = integrate.dblquad(lambda y, x: inner(x, y), 0.0, L1, 0.0, L2, epsabs=1e-10)
    return val


def test_h1_homogeneous_matches_quadrature():
    r = build_reaction("homogeneous-cubic", threshold=0.25)
    # quadrature gives 1/24 for a quarter threshold
    assert quad_h1(r) == pytest.approx(1.0 / 24.0, rel=1e-9)
    assert h1_integral(r, 32, 32, 64) == pytest.approx(1.0 / 24.0, rel=1e-3)


def test_h1_periodic_matches_quadrature():
    r = build_reaction("cubic-periodic", threshold=0.25, amp=0.15)
    ref = quad_h1(r)
    assert ref == pytest.approx(1.0 / 24.0, rel=1e-8)
    assert h1_integral(r, 32, 32, 64) == pytest.approx(ref, rel=1e-3)


def test_balanced_medium_fails_h1():
    r = build_reaction("homogeneous-cubic", threshold=0.5)
    rep = verify_assumptions(r)
    assert not rep.ok
    assert rep.integral_sign == 0
    assert rep.lines()[0].startswith("H1: fail, integral")
    assert "zeros: pass" in rep.lines()


def test_measured_constants_homogeneous():
    r = build_reaction("homogeneous-cubic", threshold=0.25)
    # -f_u(0) = 0.25 and -f_u(1) = 0.75, so lambda is half the smaller one
    assert r.lam == pytest.approx(0.125)
    # M is attained at u = 3 on the linear extension or inside [0, 1]
    assert r.lipschitz_M >= 0.75
    rep = verify_assumptions(r)
    assert rep.ok and rep.integral_sign == 1


@settings(max_examples=60, deadline=None)
@given(x=st.floats(-5, 5), y=st.floats(-5, 5), u=st.floats(0.01, 0.99))
def test_f_u_matches_finite_difference(x, y, u):
    r = PERIODIC
    h = 1e-6
    fd = (r.f(x, y, u + h) - r.f(x, y, u - h)) / (2 * h)
    assert float(r.f_u(x, y, u)) == pytest.approx(float(fd), abs=1e-7)


@settings(max_examples=60, deadline=None)
@given(x=st.floats(-3, 3), y=st.floats(-3, 3), k=st.integers(-4, 4), m=st.integers(-4, 4))
def test_threshold_is_exactly_periodic(x, y, k, m):
    r = RECT
    assert r.theta(x + k * 1.0, y + m * 2.0) == r.theta(x, y)


def test_f_vanishes_at_equilibria():
    r = build_reaction("cubic-periodic", threshold=0.3, amp=0.2)
    xs = np.linspace(0, 1, 11)
    assert np.all(r.f(xs[:, None], xs[None, :], 0.0) == 0.0)
    assert np.all(r.f(xs[:, None], xs[None, :], 1.0) == 0.0)


def test_linear_extension_outside_unit_interval():
    assert cubic_f(-1.0, 0.25) == pytest.approx(0.25)
    assert cubic_f(2.0, 0.25) == pytest.approx(-0.75)


def test_flipped_reaction():
    r = build_reaction("cubic-periodic", threshold=0.3, amp=0.1)
    g = r.flipped()
    x, y, v = 0.37, 0.81, 0.42
    assert float(g.f(x, y, v)) == pytest.approx(-float(r.f(x, y, 1 - v)), abs=1e-15)


@pytest.mark.parametrize("kw", [
    dict(kind="cubic-periodic", threshold=0.9, amp=0.2),
    dict(kind="homogeneous-cubic", threshold=0.25, amp=0.1),
    dict(kind="unknown"),
    dict(kind="tabulated"),
])
def test_invalid_media(kw):
    with pytest.raises(InvalidMedium):
        build_reaction(**kw)


def test_invalid_cell():
    with pytest.raises(InvalidMedium):
        PeriodicCell(0.0, 1.0)
    with pytest.raises(InvalidMedium):
        PeriodicCell(1.0, math.inf)


def test_tabulated_matches_cubic_on_nodes():
    nu = 65
    us = np.linspace(0, 1, nu)
    table = np.broadcast_to(cubic_f(us, 0.25), (4, 4, nu)).copy()
    r = build_reaction("tabulated", table=table)
    assert float(r.f(0.1, 0.2, us[10])) == pytest.approx(float(cubic_f(us[10], 0.25)), abs=1e-15)
