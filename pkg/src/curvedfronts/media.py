"""Spatially periodic bistable reaction terms.

The reaction is f(x, y, u) = u (1 - u) (u - theta(x, y)) on [0, 1], continued
linearly outside [0, 1] with the slope it has at the nearest stable zero, so
that f is globally Lipschitz and strictly decreasing near both zeros.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import InvalidMedium

# Phase quantum for periodic coordinates: x is reduced to an integer count of
# L1 / 2**30 before any trigonometry, so x and x + k*L1 give the same phase.
_PHASE_BITS = 30
_PHASE_Q = float(1 << _PHASE_BITS)

KINDS = ("cubic-periodic", "homogeneous-cubic", "tabulated")


@dataclass(frozen=True)
class PeriodicCell:
    L1: float = 1.0
    L2: float = 1.0

    def __post_init__(self):
        if not (self.L1 > 0 and self.L2 > 0) or not np.isfinite([self.L1, self.L2]).all():
            raise InvalidMedium(f"cell lengths must be positive, got ({self.L1}, {self.L2})")


def _phase(v, period):
    """Fractional position of v in its period, quantized so the map is exactly periodic."""
    n = np.rint(np.asarray(v, dtype=float) / period * _PHASE_Q)
    return np.mod(n, _PHASE_Q) / _PHASE_Q


@dataclass(frozen=True)
class ThresholdSpec:
    """theta(x, y) = base + amp * sin(2 pi (kx x / L1 + px)) * sin(2 pi (ky y / L2 + py))
    + diag * sin(2 pi (x / L1 + y / L2)).

    The last term gives media layered along a diagonal, which have no mirror
    symmetry about the vertical axis.
    """
    base: float = 0.25
    amp: float = 0.0
    kx: int = 1
    ky: int = 1
    px: float = 0.0
    py: float = 0.0
    diag: float = 0.0

    def bounds(self):
        span = abs(self.amp) + abs(self.diag)
        return self.base - span, self.base + span


class ReactionField:
    """Bistable reaction with cubic (or tabulated) nonlinearity on a periodic cell.

    Attributes ``lam``, ``sigma`` and ``lipschitz_M`` are measured by scanning
    at construction time (see :func:`scan_constants`).
    """

    def __init__(self, cell: PeriodicCell, kind: str, threshold: Optional[ThresholdSpec] = None,
                 table: Optional[np.ndarray] = None, scan_points: int = 64):
        if kind not in KINDS:
            raise InvalidMedium(f"unknown medium kind {kind!r}")
        self.cell = cell
        self.kind = kind
        self.threshold = threshold
        self.table = None
        if kind == "tabulated":
            if table is None:
                raise InvalidMedium("tabulated medium needs a table")
            table = np.asarray(table, dtype=float)
            if table.ndim != 3 or table.shape[2] < 3:
                raise InvalidMedium("table must have shape (nx, ny, nu) with nu >= 3")
            if np.abs(table[:, :, 0]).max() > 0 or np.abs(table[:, :, -1]).max() > 0:
                raise InvalidMedium("tabulated f must vanish at u = 0 and u = 1")
            self.table = table
        else:
            if threshold is None:
                raise InvalidMedium("cubic medium needs threshold parameters")
            if kind == "homogeneous-cubic" and (threshold.amp != 0 or threshold.diag != 0):
                raise InvalidMedium("homogeneous-cubic takes a constant threshold")
            lo, hi = threshold.bounds()
            if not (0.0 < lo and hi < 1.0):
                raise InvalidMedium(f"threshold range [{lo}, {hi}] leaves (0, 1)")
        self.lam, self.sigma, self.lipschitz_M = scan_constants(self, scan_points, 2001)

    # -- threshold and its table -------------------------------------------------
    def theta(self, x, y):
        th = self.threshold
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        out = np.full(np.broadcast(x, y).shape, th.base, dtype=float)
        if th.amp != 0.0:
            sx = np.sin(2 * np.pi * _phase(th.kx * x + th.px * self.cell.L1, self.cell.L1))
            sy = np.sin(2 * np.pi * _phase(th.ky * y + th.py * self.cell.L2, self.cell.L2))
            out = out + th.amp * sx * sy
        if th.diag != 0.0:
            s = _phase(x, self.cell.L1) + _phase(y, self.cell.L2)
            out = out + th.diag * np.sin(2 * np.pi * s)
        return out

    def _table_lookup(self, x, y, u):
        nx, ny, nu = self.table.shape
        i = np.rint(_phase(x, self.cell.L1) * nx).astype(np.int64) % nx
        j = np.rint(_phase(y, self.cell.L2) * ny).astype(np.int64) % ny
        uc = np.clip(u, 0.0, 1.0) * (nu - 1)
        k = np.minimum(np.floor(uc).astype(np.int64), nu - 2)
        w = uc - k
        lo = self.table[i, j, k]
        hi = self.table[i, j, k + 1]
        return lo, hi, w, nu - 1

    # -- the nonlinearity ----------------------------------------------------------
    def f(self, x, y, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "tabulated":
            x, y, u = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float), u)
            lo, hi, w, _ = self._table_lookup(x, y, u)
            inner = lo + w * (hi - lo)
            s0, s1 = self._tab_end_slopes(x, y)
            return np.where(u < 0, s0 * u, np.where(u > 1, s1 * (u - 1), inner))
        th = self.theta(x, y)
        return cubic_f(u, th)

    def f_u(self, x, y, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "tabulated":
            x, y, u = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float), u)
            lo, hi, w, n = self._table_lookup(x, y, u)
            inner = (hi - lo) * n
            s0, s1 = self._tab_end_slopes(x, y)
            return np.where(u < 0, s0, np.where(u > 1, s1, inner))
        return cubic_fu(u, self.theta(x, y))

    def _tab_end_slopes(self, x, y):
        nx, ny, nu = self.table.shape
        i = np.rint(_phase(x, self.cell.L1) * nx).astype(np.int64) % nx
        j = np.rint(_phase(y, self.cell.L2) * ny).astype(np.int64) % ny
        s0 = self.table[i, j, 1] * (nu - 1)
        s1 = -self.table[i, j, -2] * (nu - 1)
        return s0, s1

    def flipped(self) -> "ReactionField":
        """Reaction for 1 - u: g(x, y, v) = -f(x, y, 1 - v)."""
        if self.kind == "tabulated":
            return ReactionField(self.cell, "tabulated", table=-self.table[:, :, ::-1])
        th = self.threshold
        return ReactionField(self.cell, self.kind, ThresholdSpec(
            1.0 - th.base, -th.amp, th.kx, th.ky, th.px, th.py, -th.diag))

    def describe(self) -> dict:
        d = {"kind": self.kind, "L1": self.cell.L1, "L2": self.cell.L2}
        if self.threshold is not None:
            d.update({f"theta.{k}": v for k, v in self.threshold.__dict__.items()})
        return d


def cubic_f(u, th):
    u = np.asarray(u, dtype=float)
    inner = u * (1.0 - u) * (u - th)
    return np.where(u < 0.0, -th * u, np.where(u > 1.0, (th - 1.0) * (u - 1.0), inner))


def cubic_fu(u, th):
    u = np.asarray(u, dtype=float)
    inner = -3.0 * u * u + 2.0 * (1.0 + th) * u - th
    return np.where(u < 0.0, -th + 0.0 * u, np.where(u > 1.0, th - 1.0 + 0.0 * u, inner))


def cell_points(cell: PeriodicCell, nx: int, ny: int):
    xs = np.arange(nx) * (cell.L1 / nx)
    ys = np.arange(ny) * (cell.L2 / ny)
    return np.meshgrid(xs, ys, indexing="ij")


def scan_constants(reaction: ReactionField, n_xy: int, n_u: int):
    """Measure (lambda, sigma, M) on a cell grid.

    lambda is half the smallest stabilizing slope -f_u at u = 0 and u = 1;
    sigma is the largest value <= 0.49 keeping -f_u >= lambda on
    [0, sigma] and [1 - sigma, 1]; M bounds |f_u| over u in [-2, 3].
    """
    X, Y = cell_points(reaction.cell, n_xy, n_xy)
    X = X.ravel()[:, None]
    Y = Y.ravel()[:, None]
    u = np.linspace(0.0, 1.0, n_u)[None, :]
    fu = reaction.f_u(X, Y, u)
    lam = 0.5 * min((-fu[:, 0]).min(), (-fu[:, -1]).min())
    ok = (-fu >= lam).all(axis=0)
    sigma = 0.0
    for k in range(1, n_u):
        s = u[0, k]
        if s > 0.49:
            break
        if ok[k] and ok[n_u - 1 - k]:
            sigma = s
        else:
            break
    outer = reaction.f_u(X, Y, np.array([[-2.0, 3.0]]))
    M = max(np.abs(fu).max(), np.abs(outer).max())
    return float(lam), float(sigma), float(M)


@dataclass
class AssumptionReport:
    integral_H1: float
    integral_sign: int
    lambda_measured: float
    sigma_measured: float
    M_measured: float
    tolerance: float
    passes: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.passes.values())

    def lines(self):
        out = []
        for name, ok in self.passes.items():
            val = {"H1": self.integral_H1, "lambda": self.lambda_measured,
                   "sigma": self.sigma_measured, "M": self.M_measured}.get(name)
            head = f"{name}: {'pass' if ok else 'fail'}"
            if val is None:
                out.append(head)
                continue
            label = "integral" if name == "H1" else "value"
            out.append(f"{head}, {label} {val:.12g}")
        return out


def h1_integral(reaction: ReactionField, nx: int, ny: int, nu: int) -> float:
    """Midpoint-rule integral of f over one cell times [0, 1]."""
    L1, L2 = reaction.cell.L1, reaction.cell.L2
    xs = (np.arange(nx) + 0.5) * (L1 / nx)
    ys = (np.arange(ny) + 0.5) * (L2 / ny)
    us = (np.arange(nu) + 0.5) / nu
    total = 0.0
    for x in xs:
        vals = reaction.f(x, ys[:, None], us[None, :])
        total += float(np.sum(vals))
    return total * (L1 / nx) * (L2 / ny) / nu


def verify_assumptions(reaction: ReactionField, nx: int = 32, ny: int = 32, nu: int = 64,
                       tolerance: float = 1e-8) -> AssumptionReport:
    if nx < 8 or ny < 8 or nu < 32:
        raise ValueError("resolution must be at least 8 points per axis and 32 in u")
    integral = h1_integral(reaction, nx, ny, nu)
    lam, sigma, M = scan_constants(reaction, max(nx, ny), max(nu, 2001))
    X, Y = cell_points(reaction.cell, nx, ny)
    zeros_ok = (np.abs(reaction.f(X, Y, 0.0)).max() == 0.0
                and np.abs(reaction.f(X, Y, 1.0)).max() == 0.0)
    passes = {
        "H1": abs(integral) > tolerance,
        "zeros": bool(zeros_ok),
        "lambda": lam > 0,
        "sigma": 0 < sigma < 0.5,
        "M": np.isfinite(M) and M > 0,
    }
    sign = 0 if abs(integral) <= tolerance else int(np.sign(integral))
    return AssumptionReport(integral, sign, lam, sigma, M, tolerance, passes)


def build_reaction(kind: str, L1: float = 1.0, L2: float = 1.0, threshold: float = 0.25,
                   amp: float = 0.0, kx: int = 1, ky: int = 1, px: float = 0.0,
                   py: float = 0.0, diag: float = 0.0,
                   table: Optional[np.ndarray] = None) -> ReactionField:
    cell = PeriodicCell(float(L1), float(L2))
    if kind == "tabulated":
        return ReactionField(cell, kind, table=table)
    spec = ThresholdSpec(float(threshold), float(amp), int(kx), int(ky), float(px), float(py),
                         float(diag))
    return ReactionField(cell, kind, spec)


def threshold_callable(reaction: ReactionField) -> Callable:
    return reaction.theta
