"""Explicit sub- and supersolutions built from pulsating fronts, and residual certification.

Every barrier is a pure function of (t, x, y). The curve barriers compose a
direction field U_e(xi, x, y) with a V-shaped interface y = psi(rx)/r, using
the unit normal of the interface as the direction and the normal distance as
the moving coordinate, plus a small sech bump.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (InvalidAuxiliaryAngle, InvalidCurve, InvalidShift, OutsideValidity)
from .media import ReactionField

_GL_X, _GL_W = np.polynomial.legendre.leggauss(24)


# --------------------------------------------------------------------------- sech

def sech(x):
    return 1.0 / np.cosh(np.asarray(x, dtype=float))


def sech_d(x, k: int):
    """k-th derivative of sech for k = 0..3."""
    x = np.asarray(x, dtype=float)
    s = 1.0 / np.cosh(x)
    if k == 0:
        return s
    th = np.tanh(x)
    if k == 1:
        return -s * th
    if k == 2:
        return s * (th * th - s * s)
    if k == 3:
        return s * th * (6.0 * s * s - 1.0)
    raise ValueError(k)


# --------------------------------------------------------------------------- curves

def _smoothstep(s, k: int):
    """Quintic s^3 (10 - 15 s + 6 s^2) and its first two derivatives."""
    if k == 0:
        return s ** 3 * (10.0 - 15.0 * s + 6.0 * s * s)
    if k == 1:
        return 30.0 * s * s * (1.0 - s) ** 2
    return 60.0 * s * (1.0 - s) * (1.0 - 2.0 * s)


class _ConvexCorner:
    """Line y = mL x, incircle arc, line y = mR x (mL < mR), blended to C^3 in the slope.

    On each side of the arc the slope moves from the line slope to the arc slope
    with a quintic smoothstep over a width w inside the arc. The resulting curve
    is shifted so that both asymptotes pass through the origin exactly.
    """

    def __init__(self, mL: float, mR: float, radius: float, blend: float = 0.2):
        if not mL < mR:
            raise InvalidCurve(f"slopes must increase, got {mL} >= {mR}")
        self.mL, self.mR, self.r = float(mL), float(mR), float(radius)
        uL = np.array([-1.0, -mL]) / math.hypot(1.0, mL)
        uR = np.array([1.0, mR]) / math.hypot(1.0, mR)
        bis = uL + uR
        bis /= np.hypot(*bis)
        cg = float(uL @ bis)
        sg = math.sqrt(max(1.0 - cg * cg, 0.0))
        dist = self.r / sg
        self.xc, self.yc = dist * bis
        tl = dist * cg * uL
        tr = dist * cg * uR
        self.a = -float(tl[0])
        self.b = float(tr[0])
        self.w = min(blend * self.r, 0.5 * min(self.a, self.b))
        # integrate once to get the right-hand intercept, then recentre
        self.d = 0.0
        self._F_lw = self.mL * (-self.a + self.w) + self._I_left(np.array([-self.a + self.w]))[0]
        self._F_rw = self._F_lw + self._circle(self.b - self.w) - self._circle(-self.a + self.w)
        self._F_b = (self._F_rw + self.mR * self.w
                     + self._I_right(np.array([self.b]))[0])
        delta = self._F_b - self.mR * self.b
        self.d = delta / (self.mR - self.mL)

    # arc pieces in unshifted coordinates
    def _root(self, u):
        q = u - self.xc
        return q, np.sqrt(np.maximum(self.r ** 2 - q * q, 1e-300))

    def _circle(self, u):
        _, rt = self._root(u)
        return self.yc - rt

    def _p(self, u, k):
        q, rt = self._root(u)
        r2 = self.r ** 2
        if k == 0:
            return q / rt
        if k == 1:
            return r2 / rt ** 3
        return 3.0 * r2 * q / rt ** 5

    def _I_left(self, z):
        """int_{-a}^{z} B((u + a) / w) (p(u) - mL) du, by Gauss-Legendre."""
        lo = -self.a
        half = 0.5 * (z - lo)
        u = lo + half[:, None] * (1.0 + _GL_X[None, :])
        s = (u + self.a) / self.w
        g = _smoothstep(s, 0) * (self._p(u, 0) - self.mL)
        return half * (g @ _GL_W)

    def _I_right(self, z):
        """int_{b - w}^{z} B((b - u) / w) (p(u) - mR) du."""
        lo = self.b - self.w
        half = 0.5 * (z - lo)
        u = lo + half[:, None] * (1.0 + _GL_X[None, :])
        s = (self.b - u) / self.w
        g = _smoothstep(s, 0) * (self._p(u, 0) - self.mR)
        return half * (g @ _GL_W)

    def _regions(self, z):
        a, b, w = self.a, self.b, self.w
        return (z <= -a, (z > -a) & (z < -a + w), (z >= -a + w) & (z <= b - w),
                (z > b - w) & (z < b), z >= b)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        z = (x - self.d).ravel()
        out = np.empty_like(z)
        L, BL, A, BR, R = self._regions(z)
        out[L] = self.mL * z[L]
        if BL.any():
            out[BL] = self.mL * z[BL] + self._I_left(z[BL])
        out[A] = self._F_lw + self._circle(z[A]) - self._circle(-self.a + self.w)
        if BR.any():
            zz = z[BR]
            out[BR] = self._F_rw + self.mR * (zz - self.b + self.w) + self._I_right(zz)
        out[R] = self._F_b + self.mR * (z[R] - self.b)
        return (out + self.mL * self.d).reshape(x.shape)

    def deriv(self, x, k: int):
        """k-th derivative, k = 1..3."""
        x = np.asarray(x, dtype=float)
        z = (x - self.d).ravel()
        out = np.zeros_like(z)
        L, BL, A, BR, R = self._regions(z)
        if k == 1:
            out[L] = self.mL
            out[R] = self.mR
        out[A] = self._p(z[A], k - 1)
        for mask, side in ((BL, -1), (BR, 1)):
            if not mask.any():
                continue
            zz = z[mask]
            m = self.mL if side < 0 else self.mR
            s = (zz + self.a) / self.w if side < 0 else (self.b - zz) / self.w
            ds = 1.0 / self.w if side < 0 else -1.0 / self.w
            p0, p1, p2 = self._p(zz, 0), self._p(zz, 1), self._p(zz, 2)
            B0, B1, B2 = _smoothstep(s, 0), _smoothstep(s, 1), _smoothstep(s, 2)
            if k == 1:
                out[mask] = m + B0 * (p0 - m)
            elif k == 2:
                out[mask] = B1 * ds * (p0 - m) + B0 * p1
            else:
                out[mask] = B2 * ds * ds * (p0 - m) + 2.0 * B1 * ds * p1 + B0 * p2
        return out.reshape(x.shape)

    def dev_left(self, x):
        """phi'(x) - mL without cancellation on the left line and blend."""
        x = np.asarray(x, dtype=float)
        z = (x - self.d).ravel()
        out = np.zeros_like(z)
        L, BL, A, BR, R = self._regions(z)
        if BL.any():
            s = (z[BL] + self.a) / self.w
            out[BL] = _smoothstep(s, 0) * (self._p(z[BL], 0) - self.mL)
        out[A] = self._p(z[A], 0) - self.mL
        right = BR | R
        out[right] = (self.mR - self.mL) - self.dev_right(z[right] + self.d)
        return out.reshape(x.shape)

    def dev_right(self, x):
        """mR - phi'(x)."""
        x = np.asarray(x, dtype=float)
        z = (x - self.d).ravel()
        out = np.zeros_like(z)
        L, BL, A, BR, R = self._regions(z)
        if BR.any():
            s = (self.b - z[BR]) / self.w
            out[BR] = _smoothstep(s, 0) * (self.mR - self._p(z[BR], 0))
        out[A] = self.mR - self._p(z[A], 0)
        left = L | BL
        if left.any():
            zl = z[left]
            dl = np.zeros_like(zl)
            inb = zl > -self.a
            if inb.any():
                s = (zl[inb] + self.a) / self.w
                dl[inb] = _smoothstep(s, 0) * (self._p(zl[inb], 0) - self.mL)
            out[left] = (self.mR - self.mL) - dl
        return out.reshape(x.shape)


KINDS = ("convex-psi", "concave-phi1", "concave-phi2", "convex-phi")


class InterfaceCurve:
    """psi = s * (corner + rho sech) with s = +1 (convex kinds) or -1 (concave kinds).

    ``left_slope`` and ``right_slope`` are the slopes of the asymptotes of psi
    itself as x -> -inf and x -> +inf.
    """

    def __init__(self, kind: str, left_slope: float, right_slope: float, rho: float,
                 radius: float, blend: float = 0.2):
        if kind not in KINDS:
            raise InvalidCurve(f"unknown curve kind {kind!r}")
        self.kind = kind
        self.sign = 1.0 if kind.startswith("convex") else -1.0
        self.left_slope, self.right_slope = float(left_slope), float(right_slope)
        self.rho = float(rho)
        self.corner = _ConvexCorner(self.sign * left_slope, self.sign * right_slope, radius, blend)
        self.radius = float(radius)
        self.constants = {}

    @property
    def tangent_points(self):
        c = self.corner
        return -c.a + c.d, c.b + c.d

    def psi(self, x, k: int = 0):
        if k == 0:
            v = self.corner.value(x) + self.rho * sech(x)
        else:
            v = self.corner.deriv(x, k) + self.rho * sech_d(x, k)
        return self.sign * v

    def phi(self, x, k: int = 0):
        """The curve without its sech term."""
        v = self.corner.value(x) if k == 0 else self.corner.deriv(x, k)
        return self.sign * v

    def dev_left(self, x):
        """|psi' - left_slope|, computed without cancellation."""
        return self.corner.dev_left(x) + self.rho * sech_d(x, 1)

    def dev_right(self, x):
        """|right_slope - psi'|."""
        return self.corner.dev_right(x) - self.rho * sech_d(x, 1)

    def convexity_margin(self, xs) -> float:
        """min of s * psi'' over ``xs`` (positive when psi is strictly convex, or concave)."""
        return float(np.min(self.corner.deriv(xs, 2) + self.rho * sech_d(xs, 2)))

    def scan_constants(self, half_width: float = 30.0, n: int = 12001):
        """Smallest k and largest K with k sech <= deviations <= K sech, and psi'', psi''' <= K sech."""
        xs = np.linspace(-half_width, half_width, n)
        s = sech(xs)
        neg, pos = xs < 0, xs >= 0
        k1 = float(np.min(self.dev_left(xs[neg]) / s[neg]))
        k2 = float(np.min(self.dev_right(xs[pos]) / s[pos]))
        K = max(float(np.max(self.dev_left(xs[neg]) / s[neg])),
                float(np.max(self.dev_right(xs[pos]) / s[pos])),
                float(np.max(np.abs(self.psi(xs, 2)) / s)),
                float(np.max(np.abs(self.psi(xs, 3)) / s)))
        return {"k1": k1, "k2": k2, "K1": K}


def _slopes_for(kind, a1, a2):
    """Asymptote slopes (left, right) of each curve kind from its two angles."""
    cot = lambda v: math.cos(v) / math.sin(v)
    if kind in ("convex-psi", "convex-phi"):
        lo, hi = a1, a2                      # alpha < beta
        if not 0 < lo < hi < math.pi:
            raise InvalidCurve(f"need 0 < alpha < beta < pi, got {a1}, {a2}")
        return -cot(lo), -cot(hi)
    if kind == "concave-phi1":
        alpha, alpha1 = a1, a2               # alpha1 < alpha
        if not 0 < alpha1 < alpha < math.pi:
            raise InvalidCurve(f"need 0 < alpha1 < alpha < pi, got {a2}, {a1}")
        return -cot(alpha), -cot(alpha1)
    beta1, beta = a1, a2                     # beta < beta1
    if not 0 < beta < beta1 < math.pi:
        raise InvalidCurve(f"need 0 < beta < beta1 < pi, got {a2}, {a1}")
    return -cot(beta1), -cot(beta)


def build_interface_curve(kind: str, a1: float, a2: float, rho: float = 0.2,
                          radius: Optional[float] = None, blend: float = 0.2,
                          clearance: float = 1.0, retries: int = 5) -> InterfaceCurve:
    """Curve with asymptotes y = -x cot(angle).

    Angle arguments by kind: convex-psi / convex-phi (alpha, beta); concave-phi1
    (alpha, alpha1) with alpha1 < alpha; concave-phi2 (beta1, beta) with beta < beta1.
    The radius defaults to the smallest one that keeps both blends at least
    ``clearance`` away from the origin, since sech'' < 0 for |x| < 0.8814.
    """
    left, right = _slopes_for(kind, a1, a2)
    sgn = 1.0 if kind.startswith("convex") else -1.0
    r = 1.0 if radius is None else float(radius)
    if radius is None:
        for _ in range(60):
            c = _ConvexCorner(sgn * left, sgn * right, r, blend)
            if min(c.a - c.d, c.b + c.d) - c.w >= clearance:
                break
            r *= 1.25
    if kind == "convex-phi":
        rho = 0.0
    xs = np.linspace(-60.0, 60.0, 24001)
    for _ in range(retries):
        cur = InterfaceCurve(kind, left, right, rho, r, blend)
        xs_all = np.concatenate([xs, np.array(cur.tangent_points)])
        if kind == "convex-phi" or cur.convexity_margin(xs_all) > 0:
            if kind != "convex-phi":
                cur.constants = cur.scan_constants()
            return cur
        rho *= 0.5
    raise InvalidCurve(f"{kind} loses strict convexity after {retries} reductions of rho")


# --------------------------------------------------------------------------- evaluators

class Barrier:
    """Callable (t, x, y) -> value with an expected residual sign."""
    tag = "barrier"
    expect = "super"
    params: dict = {}

    def __call__(self, t, x, y):
        raise NotImplementedError

    def sample(self, rng, n: int, **region):
        raise NotImplementedError

    def claim(self, t, x, y):
        return None


class UMinus(Barrier):
    """max of two planar pulsating fronts."""
    tag = "U-"
    expect = "sub"

    def __init__(self, front_a, front_b):
        self.fa, self.fb = front_a, front_b
        self.params = {"alpha": front_a.angle, "beta": front_b.angle}

    def __call__(self, t, x, y):
        return np.maximum(self.fa.at_points(t, x, y), self.fb.at_points(t, x, y))


def eval_U_minus(front_a, front_b, t, x, y):
    return UMinus(front_a, front_b)(t, x, y)


class CurveBarrier(Barrier):
    """U_{e(x)}(xi, x, y) + s eps sech(r x) on the interface y = c t + psi(r x) / r."""

    def __init__(self, dirfield, curve: InterfaceCurve, eps: float, varrho: float, c_ab: float,
                 bump_sign: float, tag: str, expect: str):
        if varrho <= 0:
            raise ValueError("varrho must be positive")
        self.field = dirfield
        self.curve = curve
        self.eps, self.varrho, self.c_ab = float(eps), float(varrho), float(c_ab)
        self.bump = float(bump_sign)
        self.tag, self.expect = tag, expect
        self.params = {"eps": self.eps, "varrho": self.varrho, "c_ab": self.c_ab,
                       "rho": curve.rho, "radius": curve.radius}

    def geometry(self, x):
        X = self.varrho * np.asarray(x, dtype=float)
        P = self.curve.psi(X, 0)
        P1 = self.curve.psi(X, 1)
        n = np.sqrt(P1 * P1 + 1.0)
        ang = np.arctan2(1.0, -P1)
        return X, P, P1, n, ang

    def xi(self, t, x, y):
        t, x, y = np.broadcast_arrays(*(np.asarray(v, float) for v in (t, x, y)))
        X, P, P1, n, ang = self.geometry(x)
        return (y - self.c_ab * t - P / self.varrho) / n

    def __call__(self, t, x, y):
        t, x, y = np.broadcast_arrays(*(np.asarray(v, float) for v in (t, x, y)))
        X, P, P1, n, ang = self.geometry(x)
        xi = (y - self.c_ab * t - P / self.varrho) / n
        return self.field.profile(ang, xi, x, y) + self.bump * self.eps * sech(X)

    def claim(self, t, x, y):
        """c_ab e_2(x) - c_{e(x)}: interface speed along its normal minus the front speed."""
        X, P, P1, n, ang = self.geometry(x)
        return self.c_ab / n - self.field.speed(ang)

    def sample(self, rng, n, span=6.0, xi_max=12.0, period=(1.0, 1.0)):
        """x uniform on |r x| <= span, xi uniform on |xi| <= xi_max, t over one y-period."""
        x = rng.uniform(-span / self.varrho, span / self.varrho, n)
        xi = rng.uniform(-xi_max, xi_max, n)
        t = rng.uniform(0.0, period[1] / self.c_ab, n)
        X, P, P1, nn, ang = self.geometry(x)
        y = self.c_ab * t + P / self.varrho + xi * nn
        return t, x, y


def eval_U_plus(dirfield, curve: InterfaceCurve, eps, varrho, c_ab, t, x, y):
    return make_U_plus(dirfield, curve, eps, varrho, c_ab)(t, x, y)


def make_U_plus(dirfield, curve: InterfaceCurve, eps, varrho, c_ab) -> CurveBarrier:
    if curve.kind != "convex-psi":
        raise InvalidCurve("U+ needs a convex-psi curve")
    return CurveBarrier(dirfield, curve, eps, varrho, c_ab, +1.0, "U+", "super")


def validate_auxiliary(speed: Callable, main: float, aux: float, n: int = 200):
    """g(theta) > g(main) on the closed range between aux and main (main excluded)."""
    g = lambda v: np.asarray(speed(v), float) / np.sin(v)
    th = np.linspace(aux, main, n + 1)[:-1]
    gap = g(th) - float(g(np.array(main)))
    if not np.all(gap > 0):
        raise InvalidAuxiliaryAngle(f"g does not exceed g({main:.6f}) on [{min(aux, main):.6f}, "
                                    f"{max(aux, main):.6f}]", worst=float(np.min(gap)))
    return float(np.min(gap))


def make_lower_barrier(which: int, dirfield, curve: InterfaceCurve, eps, varrho, c_ab,
                       speed: Optional[Callable] = None) -> CurveBarrier:
    """U1- (which = 1, concave-phi1) or U2- (which = 2, concave-phi2), with a -eps sech term."""
    want = "concave-phi1" if which == 1 else "concave-phi2"
    if curve.kind != want:
        raise InvalidCurve(f"lower barrier {which} needs a {want} curve")
    speed = speed or dirfield.speed
    cot_inv = lambda m: math.atan2(1.0, -m)
    main = cot_inv(curve.left_slope if which == 1 else curve.right_slope)
    aux = cot_inv(curve.right_slope if which == 1 else curve.left_slope)
    validate_auxiliary(speed, main, aux)
    b = CurveBarrier(dirfield, curve, eps, varrho, c_ab, -1.0, f"U{which}-", "sub")
    b.params.update({"main": main, "aux": aux})
    return b


def eval_lower_barrier(which, dirfield, curve, eps, varrho, c_ab, t, x, y):
    return make_lower_barrier(which, dirfield, curve, eps, varrho, c_ab)(t, x, y)


class TimeShift(Barrier):
    """base(t + s w d e^{-l t} - s w d) - s d e^{-l t}, s = +1 for sub and -1 for super."""

    def __init__(self, base, delta: float, omega: float, lam: float, sign: str,
                 sigma: Optional[float] = None):
        if sign not in ("sub", "super"):
            raise ValueError(sign)
        if delta < 0 or omega < 0 or lam <= 0:
            raise InvalidShift("delta, omega must be non-negative and lambda positive")
        if sigma is not None and delta >= sigma / 2:
            raise InvalidShift(f"delta = {delta} not below sigma / 2 = {sigma / 2}")
        self.base = base
        self.delta, self.omega, self.lam = float(delta), float(omega), float(lam)
        self.s = 1.0 if sign == "sub" else -1.0
        self.expect = sign
        self.tag = f"shift({getattr(base, 'tag', 'u')})"
        self.params = {"delta": delta, "omega": omega, "lambda": lam}

    def __call__(self, t, x, y):
        t = np.asarray(t, dtype=float)
        if self.delta == 0.0:
            return self.base(t, x, y)
        decay = self.delta * np.exp(-self.lam * t)
        ts = t + self.s * (self.omega * decay - self.omega * self.delta)
        return self.base(ts, x, y) - self.s * decay


def time_shift(base, delta, omega, lam, sign, t, x, y, sigma=None):
    return TimeShift(base, delta, omega, lam, sign, sigma)(t, x, y)


class VMinus(Barrier):
    """U_theta(x.e - c t - w e^{-d t} + w + shift) - d e^{-d t}, a subsolution for t >= 0."""
    tag = "v-"
    expect = "sub"

    def __init__(self, front, delta: float, omega: float, shift: float):
        self.front = front
        self.delta, self.omega, self.shift = float(delta), float(omega), float(shift)
        self.params = {"delta": delta, "omega": omega, "shift": shift}

    def __call__(self, t, x, y):
        t, x, y = np.broadcast_arrays(*(np.asarray(v, float) for v in (t, x, y)))
        e = self.front.direction
        xi = (x * e[0] + y * e[1] - self.front.speed * t
              - self.omega * np.exp(-self.delta * t) + self.omega + self.shift)
        fld = self.front.parent
        return fld.profile(np.full(xi.shape, self.front.angle), xi, x, y) \
            - self.delta * np.exp(-self.delta * t)


class MergingUpper(Barrier):
    """Three-front supersolution for very negative times, spliced at x = (c1 + c1hat) t / 2."""
    tag = "U~+"
    expect = "super"

    def __init__(self, dirfield, triple, curve1: InterfaceCurve, curve2: InterfaceCurve,
                 rho: float, eps: float, varrho: float, period=(1.0, 1.0)):
        if curve1.kind != "convex-phi" or curve2.kind != "convex-phi":
            raise InvalidCurve("merging barrier needs two convex-phi curves")
        self.field = dirfield
        self.tr = triple
        self.c1, self.c2 = triple.c1, triple.c2
        self.d1, self.d2 = triple.c1_hat, triple.c2_hat
        self.curve1, self.curve2 = curve1, curve2
        self.rho, self.eps, self.varrho = float(rho), float(eps), float(varrho)
        self.period = period
        self.params = {"rho": rho, "eps": eps, "varrho": varrho}
        self.T_neg = self._horizon()

    def _branch(self, which, t, x):
        r = self.varrho
        X1 = r * (x - self.c1 * t)
        Xh = r * (x - self.d1 * t)
        cur, Xo, cy = (self.curve1, X1, self.c2) if which == 1 else (self.curve2, Xh, self.d2)
        P = cur.phi(Xo, 0) + self.rho * (sech(X1) + sech(Xh))
        P1 = cur.phi(Xo, 1) + self.rho * (sech_d(X1, 1) + sech_d(Xh, 1))
        return X1, Xh, P, P1, cy

    def _raw(self, which, t, x, y):
        r = self.varrho
        X1, Xh, P, P1, cy = self._branch(which, t, x)
        n = np.sqrt(P1 * P1 + 1.0)
        xi = (y - cy * t - P / r) / n
        ang = np.arctan2(1.0, -P1)
        return self.field.profile(ang, xi, x, y) + self.eps * (sech(X1) + sech(Xh))

    def evaluate(self, t, x, y, check=True):
        t, x, y = np.broadcast_arrays(*(np.asarray(v, float) for v in (t, x, y)))
        if check and np.any(t > self.T_neg):
            raise OutsideValidity(f"t = {float(np.max(t)):.4g} beyond horizon {self.T_neg:.4g}")
        split = 0.5 * (self.c1 + self.d1) * t
        left = x <= split
        out = np.empty(t.shape)
        if left.any():
            out[left] = self._raw(1, t[left], x[left], y[left])
        if (~left).any():
            out[~left] = self._raw(2, t[~left], x[~left], y[~left])
        return out

    def __call__(self, t, x, y):
        return self.evaluate(t, x, y)

    def splice_mismatch(self, t: float, xi_max: float = 15.0, n: int = 61) -> float:
        xs = 0.5 * (self.c1 + self.d1) * t
        cth = self.field.speed(np.array(self.tr_theta))
        e = np.array([math.cos(self.tr_theta), math.sin(self.tr_theta)])
        # points on the splice line around the theta front
        xi = np.linspace(-xi_max, xi_max, n)
        y = (xi + float(cth) * t - xs * e[0]) / e[1]
        tt = np.full(n, t)
        xx = np.full(n, xs)
        return float(np.max(np.abs(self._raw(1, tt, xx, y) - self._raw(2, tt, xx, y))))

    @property
    def tr_theta(self):
        # direction of the middle front, from the junction velocities
        c1, c2, d1, d2 = self.c1, self.c2, self.d1, self.d2
        v = np.array([c1 - d1, c2 - d2])
        # (c1, c2).e = (d1, d2).e = c_theta, so e is normal to their difference
        e = np.array([-v[1], v[0]])
        if e[1] < 0:
            e = -e
        return math.atan2(e[1], e[0])

    def _horizon(self, t_min: float = -1e5, tol: float = 1e-6) -> float:
        """Last scanned t up to which the branches agree within ``tol`` on the splice,
        less one junction transit time across a cell."""
        ts = -np.geomspace(-t_min, 1e-2, 400)
        last_ok = None
        for t in ts:
            if self.splice_mismatch(float(t)) > tol:
                break
            last_ok = float(t)
        if last_ok is None:
            raise OutsideValidity(f"branches disagree on the splice already at t = {t_min:g}")
        transit = self.period[0] / max(min(abs(self.c1), abs(self.d1)), 1e-12)
        return last_ok - transit

    def claim(self, t, x, y):
        """Normal speed of the moving interface minus the front speed, left or right branch."""
        t, x, y = np.broadcast_arrays(*(np.asarray(v, float) for v in (t, x, y)))
        split = 0.5 * (self.c1 + self.d1) * t
        out = np.empty(t.shape)
        for which, mask in ((1, x <= split), (2, x > split)):
            if not mask.any():
                continue
            tt, xx = t[mask], x[mask]
            X1, Xh, P, P1, cy = self._branch(which, tt, xx)
            cur, Xo, cx = (self.curve1, X1, self.c1) if which == 1 else (self.curve2, Xh, self.d1)
            dPdt = (-cx * cur.phi(Xo, 1)
                    - self.rho * (self.c1 * sech_d(X1, 1) + self.d1 * sech_d(Xh, 1)))
            n = np.sqrt(P1 * P1 + 1.0)
            ang = np.arctan2(1.0, -P1)
            out[mask] = (cy + dPdt) / n - self.field.speed(ang)
        return out

    def sample(self, rng, n, span=6.0, xi_max=12.0, t_range=None, period=(1.0, 1.0)):
        if t_range is None:
            # junctions at least ``span`` sech-widths apart, and below the horizon
            sep = span / (self.varrho * min(abs(self.c1), abs(self.d1)))
            hi = min(self.T_neg, -sep) - 1.0
            t_range = (2.0 * hi, hi)
        lo, hi = t_range
        t = rng.uniform(lo, hi, n)
        # x around either junction and the middle segment
        xj = np.where(rng.random(n) < 0.5, self.c1 * t, self.d1 * t)
        x = xj + rng.uniform(-span / self.varrho, span / self.varrho, n)
        which = np.where(x <= 0.5 * (self.c1 + self.d1) * t, 1, 2)
        y = np.empty(n)
        xi = rng.uniform(-xi_max, xi_max, n)
        for w in (1, 2):
            m = which == w
            if m.any():
                X1, Xh, P, P1, cy = self._branch(w, t[m], x[m])
                y[m] = cy * t[m] + P / self.varrho + xi[m] * np.sqrt(P1 * P1 + 1.0)
        return t, x, y


def eval_merging_upper(dirfield, triple, curve1, curve2, rho, eps, varrho, t, x, y):
    return MergingUpper(dirfield, triple, curve1, curve2, rho, eps, varrho)(t, x, y)


# --------------------------------------------------------------------------- certification

@dataclass
class SamplePlan:
    n: int = 100_000
    seed: int = 0
    region: dict = field(default_factory=dict)


@dataclass
class ResidualReport:
    tag: str
    expect: str
    samples: int
    fd_step: float
    min_residual: float
    max_residual: float
    slack: float
    c_fd: float
    violations: int
    worst: tuple
    claim_min: Optional[float]
    claim_max: Optional[float]
    verdict: bool
    worst_points: list = field(default_factory=list)

    @property
    def extreme(self) -> float:
        """The residual extreme that decides the verdict: min for super, max for sub."""
        return self.min_residual if self.expect == "super" else self.max_residual

    def summary(self) -> str:
        return (f"{'pass' if self.verdict else 'fail'},{self.extreme!r},{self.slack!r},"
                f"{self.samples}")


def residual(barrier, reaction: ReactionField, t, x, y, step: float):
    """u_t - lap u - f(x, y, u) by centred differences with one step in t, x and y."""
    u0 = barrier(t, x, y)
    ut = (barrier(t + step, x, y) - barrier(t - step, x, y)) / (2 * step)
    lap = (barrier(t, x + step, y) + barrier(t, x - step, y) + barrier(t, x, y + step)
           + barrier(t, x, y - step) - 4.0 * u0) / step ** 2
    return ut - lap - reaction.f(x, y, u0), u0


def residual_certify(barrier, reaction: ReactionField, plan: SamplePlan, fd: float,
                     chunk: int = 20_000, keep_worst: int = 20) -> ResidualReport:
    """Sign check of the residual on ``plan.n`` seeded samples.

    The residual uses step ``fd``; a second pass at ``fd / 2`` gives the
    truncation constant C with slack = C fd^2 plus a round-off floor.
    """
    rng = np.random.default_rng(plan.seed)
    t, x, y = barrier.sample(rng, plan.n, **plan.region)
    L1 = np.empty(plan.n)
    L2 = np.empty(plan.n)
    for s in range(0, plan.n, chunk):
        sl = slice(s, s + chunk)
        L1[sl], _ = residual(barrier, reaction, t[sl], x[sl], y[sl], fd)
        L2[sl], _ = residual(barrier, reaction, t[sl], x[sl], y[sl], fd / 2)
    c_fd = float(np.max(np.abs(L1 - L2))) / (0.75 * fd * fd)
    floor = 64.0 * np.finfo(float).eps / fd ** 2
    slack = c_fd * fd * fd + floor
    if barrier.expect == "super":
        viol = L1 < -slack
        k = int(np.argmin(L1))
        order = np.argsort(L1)[:keep_worst]
        verdict = float(L1[k]) >= -slack
    else:
        viol = L1 > slack
        k = int(np.argmax(L1))
        order = np.argsort(-L1)[:keep_worst]
        verdict = float(L1[k]) <= slack
    q = barrier.claim(t, x, y)
    claim_min = None if q is None else float(np.min(q))
    claim_max = None if q is None else float(np.max(q))
    worst_pts = [(float(t[i]), float(x[i]), float(y[i]), float(L1[i])) for i in order]
    return ResidualReport(getattr(barrier, "tag", "u"), barrier.expect, plan.n, fd,
                          float(L1.min()), float(L1.max()), float(slack), c_fd, int(viol.sum()),
                          worst_pts[0], claim_min, claim_max, bool(verdict), worst_pts)


def write_residual_report(path, rep: ResidualReport):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "y", "residual"])
        for row in rep.worst_points:
            w.writerow([repr(v) for v in row])
        fh.write("verdict,min_residual,slack,samples\n")
        fh.write(rep.summary() + "\n")


def read_residual_summary(path) -> dict:
    """The summary line of a residual report: verdict, extreme, slack, samples."""
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    if len(lines) < 2 or lines[-2] != "verdict,min_residual,slack,samples":
        raise ValueError(f"{path}: no residual summary")
    verdict, extreme, slack, samples = lines[-1].split(",")
    return {"verdict": verdict == "pass", "extreme": float(extreme), "slack": float(slack),
            "samples": int(samples)}


def search_eps_rho(make: Callable[[float, float], Barrier], reaction: ReactionField,
                   eps_grid: Sequence[float], rho_grid: Sequence[float], fd: float,
                   n: int = 10_000, seed: int = 0, region: Optional[dict] = None):
    """Smallest eps on ``eps_grid`` for which some varrho on ``rho_grid`` certifies.

    ``make(eps, varrho)`` builds the barrier. Returns (eps, varrho, report) or
    None when nothing certifies. For each eps the largest passing varrho is kept.
    """
    best = None
    for eps in sorted(eps_grid, reverse=True):
        found = None
        for r in sorted(rho_grid, reverse=True):
            rep = residual_certify(make(eps, r), reaction, SamplePlan(n, seed, dict(region or {})),
                                   fd)
            if rep.verdict:
                found = (eps, r, rep)
                break
        if found is None:
            if best is not None:
                break
            continue
        best = found
    return best
