"""Speed curve g(theta) = c_theta / sin(theta), angle pairs, axis condition, triple junctions."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq

from .errors import (CurveUnusable, FrontError, InvalidAngles, NoPairs)
from .media import ReactionField
from .pulsating import FrontConfig, PulsatingFront, compute_pulsating_front

ARC_FLOOR = 0.15
MATCH_TOL = 0.005
ANGLE_FLOOR = 1e-3


@dataclass
class SpeedCurve:
    angles: np.ndarray             # snapped angles actually computed (gaps included)
    speeds: np.ndarray             # NaN at gaps
    requested: np.ndarray
    fronts: list = field(default_factory=list)
    failures: dict = field(default_factory=dict)
    axis: tuple = (0.0, 1.0)

    def __post_init__(self):
        self.angles = np.asarray(self.angles, dtype=float)
        self.speeds = np.asarray(self.speeds, dtype=float)
        ok = np.isfinite(self.speeds)
        if ok.sum() < 3:
            raise CurveUnusable(f"only {int(ok.sum())} usable angles")
        if np.any(self.speeds[ok] <= 0):
            raise CurveUnusable("non-positive speed on the curve")
        self._ok = ok
        a, c = self.angles[ok], self.speeds[ok]
        # same speed interpolant as DirectionField, so g(alpha) = c_alpha / sin(alpha) exactly
        self._c = PchipInterpolator(a, c)
        self._dc = self._c.derivative()

    @property
    def valid(self):
        return self._ok

    @property
    def g(self) -> np.ndarray:
        return self.speeds / np.sin(self.angles)

    @property
    def gprime(self) -> np.ndarray:
        """Centred differences on the usable nodes; NaN at gaps."""
        out = np.full(self.angles.shape, np.nan)
        a = self.angles[self._ok]
        out[self._ok] = np.gradient(self.g[self._ok], a)
        return out

    @property
    def arc(self):
        a = self.angles[self._ok]
        return float(a[0]), float(a[-1])

    def speed(self, theta):
        return self._interp(self._c, self.speeds, theta)

    def g_at(self, theta):
        theta = np.asarray(theta, dtype=float)
        return self.speed(theta) / np.sin(theta)

    def dg_at(self, theta):
        theta = np.asarray(theta, dtype=float)
        s = np.sin(theta)
        return (self._dc(theta) * s - self.speed(theta) * np.cos(theta)) / s ** 2

    def _interp(self, fn, nodes, theta):
        theta = np.asarray(theta, dtype=float)
        out = fn(theta)
        a = self.angles[self._ok]
        v = nodes[self._ok]
        for k in range(a.size):
            out = np.where(theta == a[k], v[k], out)
        return out


def build_speed_curve(reaction: ReactionField, n_angles: int, arc=(ARC_FLOOR, math.pi - ARC_FLOOR),
                      cfg: Optional[FrontConfig] = None, angles: Optional[Sequence[float]] = None,
                      max_fail: float = 0.3) -> SpeedCurve:
    """Pulsating speeds on an angle grid over ``arc`` (or the explicit ``angles``)."""
    lo, hi = arc
    if not (0 < lo < hi < math.pi):
        raise InvalidAngles(f"arc {arc} not inside (0, pi)")
    if angles is None:
        if n_angles < 9:
            raise InvalidAngles(f"n_angles = {n_angles}, need at least 9")
        angles = np.linspace(lo, hi, n_angles)
    req = np.asarray(sorted(angles), dtype=float)
    got = np.empty_like(req)
    speeds = np.full(req.shape, np.nan)
    fronts: List[Optional[PulsatingFront]] = []
    failures = {}
    for k, a in enumerate(req):
        try:
            fr = compute_pulsating_front(reaction, (math.cos(a), math.sin(a)), cfg)
        except FrontError as exc:
            failures[float(a)] = f"{type(exc).__name__}: {exc}"
            got[k] = a
            fronts.append(None)
            continue
        got[k] = fr.angle
        speeds[k] = fr.speed
        fronts.append(fr)
    if len(failures) > max_fail * req.size:
        raise CurveUnusable(f"{len(failures)} of {req.size} angles failed", failures=failures)
    if np.any(np.diff(got) <= 0):
        raise CurveUnusable("snapped angles collide; refine the strip width or the angle grid")
    return SpeedCurve(got, speeds, req, fronts, failures)


# --------------------------------------------------------------------------- pairs

@dataclass(frozen=True)
class AnglePair:
    alpha: float
    beta: float
    c_ab: float
    gpa: float
    gpb: float
    margin: float
    mismatch: float

    @property
    def slope_ok(self):
        return (self.gpa < 0, self.gpb > 0)

    @property
    def interior_strict(self):
        return self.margin


def _crossing(G, c, a, b):
    return brentq(lambda s: float(G(s)) - c, a, b, xtol=1e-13, rtol=1e-13)


def pair_at_level(curve: SpeedCurve, c: float, tol: float = MATCH_TOL,
                  scan: int = 4000) -> Optional[AnglePair]:
    """Leftmost alpha on a decreasing branch and rightmost beta on an increasing branch with g = c."""
    lo, hi = curve.arc
    th = np.linspace(lo, hi, scan)
    gv = curve.g_at(th)
    below = np.nonzero(gv < c)[0]
    if below.size == 0 or below[0] == 0 or below[-1] == th.size - 1:
        return None
    i, j = below[0], below[-1]
    alpha = _crossing(curve.g_at, c, th[i - 1], th[i])
    beta = _crossing(curve.g_at, c, th[j], th[j + 1])
    gpa = float(curve.dg_at(alpha))
    gpb = float(curve.dg_at(beta))
    ga, gb = float(curve.g_at(alpha)), float(curve.g_at(beta))
    mismatch = abs(ga - gb) / c
    # strictness away from the end points, by a quarter of the smallest node gap
    nodes = curve.angles[curve.valid]
    d = 0.25 * float(np.min(np.diff(nodes)))
    inner = np.linspace(alpha + d, beta - d, 2000) if beta - alpha > 2 * d else np.array([])
    margin = float(np.min(c - curve.g_at(inner))) if inner.size else float("nan")
    return AnglePair(float(alpha), float(beta), float(c), gpa, gpb, margin, float(mismatch))


def find_angle_pairs(curve: SpeedCurve, level_grid: int = 8, levels: Sequence[float] = (),
                     tol: float = MATCH_TOL) -> List[AnglePair]:
    """Validated pairs for ``level_grid`` levels between min g and the lower arc end, plus ``levels``."""
    ok = curve.valid
    g = curve.g[ok]
    k = int(np.argmin(g))
    if k == 0 or k == g.size - 1:
        raise NoPairs("g has no interior minimum on the sampled arc")
    top = min(g[0], g[-1])
    grid = list(np.linspace(g[k], top, level_grid + 2)[1:-1]) if level_grid > 0 else []
    out = []
    for c in sorted(set(float(v) for v in grid + list(levels))):
        if not (g[k] < c < top):
            continue
        p = pair_at_level(curve, c, tol)
        if p is None:
            continue
        if p.mismatch <= tol and p.gpa < 0 < p.gpb and p.margin > 0:
            out.append(p)
    return sorted(out, key=lambda p: p.c_ab)


# --------------------------------------------------------------------------- rotated axis

@dataclass(frozen=True)
class AxisCondition:
    e0: tuple
    c: float
    dot12: float
    lhs: float
    rhs: float


def axis_band(e1, e2, band: float = 1.0):
    """(e1.e2, inside) with inside meaning -1 < e1.e2 < -1 + band."""
    d = float(np.dot(_unit(e1), _unit(e2)))
    return d, (-1.0 < d < -1.0 + band)


def axis_condition(speed: Callable[[float], float], e1, e2, band: float = 1.0
                   ) -> Optional[AxisCondition]:
    """Axis e0 with c_e1/(e1.e0) = c_e2/(e2.e0), both projections positive.

    ``speed`` maps a direction angle to its pulsating speed. Returns None when
    e1.e2 is outside the band or no admissible axis exists.
    """
    e1, e2 = _unit(e1), _unit(e2)
    d, inside = axis_band(e1, e2, band)
    if not inside:
        return None
    a1, a2 = math.atan2(e1[1], e1[0]), math.atan2(e2[1], e2[0])
    c1, c2 = float(speed(a1)), float(speed(a2))
    # c1 (e2.e0) - c2 (e1.e0) = A cos(s) + B sin(s)
    A = c1 * e2[0] - c2 * e1[0]
    B = c1 * e2[1] - c2 * e1[1]
    if math.hypot(A, B) < 1e-15:
        return None
    s0 = math.atan2(-A, B)
    for s in (s0, s0 + math.pi):
        e0 = np.array([math.cos(s), math.sin(s)])
        p1, p2 = float(e1 @ e0), float(e2 @ e0)
        if p1 > 0 and p2 > 0:
            lhs, rhs = c1 / p1, c2 / p2
            return AxisCondition((float(e0[0]), float(e0[1])), lhs, d, lhs, rhs)
    return None


def h_slope(speed: Callable[[float], float], e0, s: float, step: float = 1e-4) -> float:
    """Centred derivative of s -> c_s / (e0.(cos s, sin s))."""
    e0 = _unit(e0)

    def h(v):
        return float(speed(v)) / (e0[0] * math.cos(v) + e0[1] * math.sin(v))
    return (h(s + step) - h(s - step)) / (2 * step)


def _unit(v):
    v = np.asarray(v, dtype=float)
    return v / math.hypot(v[0], v[1])


# --------------------------------------------------------------------------- triple junction

@dataclass(frozen=True)
class TripleSpeeds:
    c1: float
    c2: float
    c1_hat: float
    c2_hat: float


def _junction(ca, ct, a, t):
    s = math.sin(t - a)
    v1 = (ca * math.sin(t) - ct * math.sin(a)) / s
    v2 = (ca * math.cos(t) - ct * math.cos(a)) / math.sin(a - t)
    return v1, v2


def triple_junction(c_alpha: float, c_theta: float, c_beta: float,
                    alpha: float, theta: float, beta: float,
                    floor: float = ANGLE_FLOOR) -> TripleSpeeds:
    if not (0 < alpha < theta < beta < math.pi):
        raise InvalidAngles(f"need 0 < alpha < theta < beta < pi, got {alpha}, {theta}, {beta}")
    if theta - alpha < floor or beta - theta < floor:
        raise InvalidAngles(f"angles closer than {floor}")
    c1, c2 = _junction(c_alpha, c_theta, alpha, theta)
    d1, d2 = _junction(c_beta, c_theta, beta, theta)
    return TripleSpeeds(c1, c2, d1, d2)


# --------------------------------------------------------------------------- files

def write_speed_curve(path, curve: SpeedCurve):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["theta", "c", "g", "gprime"])
        for a, c, g, gp in zip(curve.angles, curve.speeds, curve.g, curve.gprime):
            w.writerow([repr(float(a)), repr(float(c)), repr(float(g)), repr(float(gp))])


def read_speed_curve(path) -> SpeedCurve:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    a = np.array([float(r["theta"]) for r in rows])
    c = np.array([float(r["c"]) for r in rows])
    return SpeedCurve(a, c, a.copy())


def write_pairs(path, pairs: Sequence[AnglePair]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["alpha", "beta", "c_ab", "gpa", "gpb", "margin"])
        for p in pairs:
            w.writerow([repr(float(v)) for v in (p.alpha, p.beta, p.c_ab, p.gpa, p.gpb,
                                                 p.margin)])


def read_pairs(path) -> List[AnglePair]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [AnglePair(float(r["alpha"]), float(r["beta"]), float(r["c_ab"]), float(r["gpa"]),
                      float(r["gpb"]), float(r["margin"]), 0.0) for r in rows]
