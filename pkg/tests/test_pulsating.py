import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from curvedfronts.errors import OutOfAtlas
from curvedfronts.media import build_reaction
from curvedfronts.pulsating import (DirectionField, PlanarFront, PlanarFrontSet, PulsatingFront,
                                    TravelingWaveField, compute_pulsating_front,
                                    elliptic_residual, freeze_direction, read_profile,
                                    sample_profile, snap_direction, tail_and_slope_report,
                                    write_profile)

A = 0.25
EXACT_C = (1 - 2 * A) / math.sqrt(2)
K = 1 / (2 * math.sqrt(2))
HOMOG = build_reaction("homogeneous-cubic", threshold=A)


@pytest.fixture(scope="module")
def vertical():
    return compute_pulsating_front(HOMOG, (0.0, 1.0))


@pytest.fixture(scope="module")
def oblique():
    return compute_pulsating_front(HOMOG, (math.cos(1.0), math.sin(1.0)))


def tanh_front(angle, n_xi=401, hxi=0.05, cells=(4, 4)):
    """Synthetic front table with the exact homogeneous profile."""
    xi = (np.arange(n_xi) - n_xi // 2) * hxi
    prof = np.broadcast_to(0.5 * (1 - np.tanh(K * xi))[:, None, None], (n_xi,) + cells).copy()
    d = np.array([math.cos(angle), math.sin(angle)])
    return PulsatingFront(d, d.copy(), EXACT_C, 0.0, xi, prof, (1.0, 1.0),
                          (1.0 / cells[0], 1.0 / cells[1]), (2 * K, 2 * K), 0.1,
                          meta={"xi_step": hxi})


def test_vertical_speed_matches_travelling_wave(vertical):
    assert vertical.speed == pytest.approx(EXACT_C, rel=1e-3)
    assert vertical.speed_ci < 0.02 * vertical.speed


def test_oblique_speed_is_isotropic(oblique):
    # snapping moves the angle only slightly and the medium is isotropic
    assert abs(oblique.angle - 1.0) < 0.05
    assert oblique.speed == pytest.approx(EXACT_C, rel=1e-3)


def test_profile_is_normalised(vertical):
    assert float(sample_profile(vertical, 0.0, 0.0, 0.0)) == pytest.approx(0.5, abs=1e-12)


def test_tails_and_slope_floor(vertical):
    mu1, mu2, r = tail_and_slope_report(vertical)
    # the tanh profile decays like exp(-|xi| / sqrt 2) on both sides
    assert mu1 == pytest.approx(1 / math.sqrt(2), rel=0.01)
    assert mu2 == pytest.approx(1 / math.sqrt(2), rel=0.01)
    # min of -U' over |xi| <= 2 is at the ends: (K / 2) sech^2(2 K)
    floor = 0.5 * K / math.cosh(2 * K) ** 2
    assert floor == pytest.approx(0.11125, abs=1e-5)
    assert r == pytest.approx(floor, rel=0.01)


def test_elliptic_residual_small(vertical):
    assert elliptic_residual(vertical, HOMOG) < 1e-3


def test_profile_monotone_in_xi(vertical):
    assert np.all(np.diff(vertical.profile, axis=0) <= 1e-12)


def test_profile_round_trip(tmp_path, vertical):
    write_profile(tmp_path / "f.prof", vertical)
    back = read_profile(tmp_path / "f.prof")
    assert back.speed == vertical.speed and back.tail_rates == vertical.tail_rates
    np.testing.assert_array_equal(back.profile, vertical.profile)
    np.testing.assert_array_equal(back.xi, vertical.xi)
    assert back.xi_step == pytest.approx(vertical.xi_step, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(angle=st.floats(0.05, math.pi - 0.05), width=st.integers(1, 12))
def test_snap_is_commensurate(angle, width):
    geo = snap_direction((math.cos(angle), math.sin(angle)), 1.0, 1.0, width)
    d = geo.direction
    assert np.hypot(*d) == pytest.approx(1.0)
    assert 1 <= geo.width_periods <= width
    # the snapped direction is parallel to an integer vector with the strip width as one entry
    n, m = geo.width_periods, geo.twist_periods
    v = np.array([n, m] if geo.transposed else [m, n], dtype=float)
    assert abs(v[0] * d[1] - v[1] * d[0]) < 1e-12 * np.hypot(*v)
    # never worse than the width-one choice
    e = np.array([math.cos(angle), math.sin(angle)])
    one = snap_direction(e, 1.0, 1.0, 1).direction
    assert abs(np.arctan2(d[1], d[0]) - angle) <= abs(np.arctan2(one[1], one[0]) - angle) + 1e-12


def test_direction_field_reproduces_basis():
    fronts = [tanh_front(a) for a in (1.2, 1.4, 1.6, 1.8)]
    field = DirectionField(fronts)
    assert float(field.speed(1.4)) == EXACT_C
    xi = np.linspace(-3, 3, 13)
    got = field.profile(np.full(xi.shape, 1.5), xi, 0.25, 0.5)
    np.testing.assert_allclose(got, 0.5 * (1 - np.tanh(K * xi)), atol=1e-6)
    with pytest.raises(OutOfAtlas):
        field.speed(2.0)


def test_frozen_direction_matches_field():
    field = DirectionField([tanh_front(a) for a in (1.2, 1.4, 1.6, 1.8)])
    fd = field.fixed(1.5)
    frozen = PlanarFront(freeze_direction(fd))
    assert frozen.speed == fd.speed and frozen.angle == pytest.approx(fd.angle)
    xi = np.linspace(-25, 25, 101)
    ix = np.arange(101) % 4
    np.testing.assert_array_equal(frozen.on_lattice(xi, ix, ix[::-1]),
                                  fd.on_lattice(xi, ix, ix[::-1]))


def test_planar_front_set_picks_nearest():
    s = PlanarFrontSet([tanh_front(1.0), tanh_front(2.0)], tol=0.1)
    assert s.fixed(1.05).angle == pytest.approx(1.0)
    with pytest.raises(OutOfAtlas):
        s.fixed(1.5)


def test_travelling_wave_solves_the_ode():
    w = TravelingWaveField(A)
    xi = np.linspace(-10, 10, 2001)
    h = xi[1] - xi[0]
    U = w.profile(0.0, xi, 0.0, 0.0)
    d1 = np.gradient(U, h)
    d2 = np.gradient(d1, h)
    res = d2 + w.c * d1 + U * (1 - U) * (U - A)
    assert np.abs(res[5:-5]).max() < 1e-5
    np.testing.assert_allclose(w.profile_dxi(xi), d1, atol=1e-5)
    fd = w.fixed(0.7)
    assert float(fd.at_points(0.0, 0.0, 0.0)) == 0.5
