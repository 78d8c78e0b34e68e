"""Pulsating fronts by time evolution on a twisted-periodic strip.

For a direction e whose slope is commensurate with the cell, the front
u(t, x, y) = U(x.e - c t, x, y) satisfies u(x + W, y) = u(x, y + W cot(phi))
with W a whole number of x-periods and W cot(phi) a whole number of y-periods.
The strip therefore needs only a few periods across and is long along e.
Directions closer to the x-axis are handled on the transposed problem.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage
from scipy.interpolate import CubicSpline, PchipInterpolator

from .errors import (DiagnosticFailure, OutOfAtlas, PossiblyNoFront,
                     SpeedUnresolved)
from .media import ReactionField
from .pde_solver import BoundaryPolicy, Field, Grid2D, Stepper, front_position, max_stable_dt


@dataclass
class FrontConfig:
    h: float = 0.1
    cfl: float = 1.0
    max_width_periods: int = 12
    length: float = 40.0
    burn_in: float = 30.0
    fit_time: float = 30.0
    min_periods: int = 5
    sample_time: float = 12.0
    xi_step: float = 0.05
    margin: float = 4.0
    slope_halfwidth: float = 2.0
    ci_limit: float = 0.02
    speed_floor: float = 1e-3


@dataclass
class StripGeometry:
    transposed: bool
    width_periods: int
    twist_periods: int
    direction: np.ndarray          # snapped unit direction in (x, y)
    requested: np.ndarray


def snap_direction(e, Lx: float, Ly: float, max_width: int) -> StripGeometry:
    """Closest commensurate direction with strip width at most ``max_width`` periods."""
    e = np.asarray(e, dtype=float)
    e = e / np.hypot(*e)
    transposed = abs(e[0]) > abs(e[1])
    ew = e[::-1] if transposed else e
    Lp, Lq = (Ly, Lx) if transposed else (Lx, Ly)
    cot = ew[0] / ew[1]
    target = math.atan2(1.0, cot)
    best = None
    for n in range(1, max_width + 1):
        # nearest m in cot is nearest in angle; compare widths by angle
        m = round(cot * n * Lp / Lq)
        err = abs(math.atan2(n * Lp, m * Lq) - target)
        if best is None or err < best[0] - 1e-12:
            best = (err, n, m)
    _, n, m = best
    v = np.array([m * Lq, n * Lp], dtype=float) * np.sign(ew[1])
    v /= np.hypot(*v)
    snapped = v[::-1] if transposed else v
    return StripGeometry(transposed, n, m, snapped, e)


@dataclass
class PulsatingFront:
    direction: np.ndarray
    requested: np.ndarray
    speed: float
    speed_ci: float
    xi: np.ndarray                 # uniform grid, xi[j0] == 0
    profile: np.ndarray            # (n_xi, ncx, ncy)
    cell: tuple
    spacing: tuple
    tail_rates: tuple
    slope_floor: float
    timeseries: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def angle(self) -> float:
        return math.atan2(self.direction[1], self.direction[0])

    @property
    def xi_range(self):
        return float(self.xi[0]), float(self.xi[-1])

    @property
    def xi_step(self) -> float:
        return float(self.meta.get("xi_step", self.xi[1] - self.xi[0]))

    @property
    def j_lo(self) -> int:
        """Index offset: xi[k] = (k + j_lo) * xi_step."""
        return int(round(self.xi[0] / self.xi_step))


def _frame(reaction: ReactionField, geo: StripGeometry, cfg: FrontConfig):
    L1, L2 = reaction.cell.L1, reaction.cell.L2
    Lp, Lq = (L2, L1) if geo.transposed else (L1, L2)
    width = geo.width_periods * Lp
    twist = geo.twist_periods * Lq
    ew = geo.direction[::-1] if geo.transposed else geo.direction
    span = abs(twist)
    length = math.ceil((cfg.length + span) / Lq) * Lq
    n_p = int(round(width / cfg.h))
    n_q = int(round(length / cfg.h))
    return Lp, Lq, width, twist, ew, length, n_p, n_q


class _TransposedReaction:
    """The same medium seen with the axes exchanged."""

    def __init__(self, reaction: ReactionField):
        self.base = reaction
        self.kind = reaction.kind
        self.lipschitz_M = reaction.lipschitz_M
        self.cell = type(reaction.cell)(reaction.cell.L2, reaction.cell.L1)

    def theta(self, p, q):
        return self.base.theta(q, p)

    def f(self, p, q, u):
        return self.base.f(q, p, u)


def compute_pulsating_front(reaction: ReactionField, e, cfg: Optional[FrontConfig] = None,
                            keep_run: bool = False) -> PulsatingFront:
    cfg = cfg or FrontConfig()
    geo = snap_direction(e, reaction.cell.L1, reaction.cell.L2, cfg.max_width_periods)
    Lp, Lq, width, twist, ew, length, n_p, n_q = _frame(reaction, geo, cfg)
    med = _TransposedReaction(reaction) if geo.transposed else reaction
    h = cfg.h
    q_per = int(round(Lq / h))
    p_per = int(round(Lp / h))
    forward = ew[1] > 0
    bc = BoundaryPolicy(left="periodic-wrap", right="periodic-wrap",
                        bottom="clamp-1" if forward else "clamp-0",
                        top="clamp-0" if forward else "clamp-1",
                        twist_x=geo.twist_periods * q_per)
    # start with the level line through the strip centre
    q0 = -math.floor(length / 2 / Lq) * Lq
    grid = Grid2D(n_p, n_q, h, h, 0.0, q0)
    P, Q = grid.mesh()
    xi0 = P * ew[0] + Q * ew[1] - (width / 2) * ew[0]
    u0 = 0.5 * (1.0 - np.tanh(xi0 / (2.0 * math.sqrt(2.0))))
    dt = cfg.cfl * max_stable_dt(grid, reaction)
    st = Stepper(Field(grid, u0, 0.0), med, dt, bc)

    chunk = max(1, int(round(0.25 / dt)))
    series = []

    def record():
        fl = st.field()
        pos, spread = front_position(fl, ew)
        series.append((fl.time, pos, spread))
        # keep the front near the middle of the strip
        x_, y_ = _front_q(fl, ew)
        mid = st.grid.y0 + 0.5 * (st.grid.ny - 1) * h
        k = int((y_ - mid) / Lq)
        if k:
            st.shift_window(0, k * q_per)

    def run_until(t_end):
        while st.time < t_end - 0.5 * dt:
            n = min(chunk, int(round((t_end - st.time) / dt)))
            st.run(max(n, 1))
            record()

    record()
    run_until(cfg.burn_in)
    c_est = _slope([s for s in series if s[0] >= cfg.burn_in * 0.5])
    if abs(c_est) < cfg.speed_floor:
        raise PossiblyNoFront(f"front stalls in direction {geo.direction.tolist()}, "
                              f"speed {c_est:.3g}", direction=geo.direction.tolist())
    g_gcd = math.gcd(abs(geo.twist_periods), geo.width_periods) or geo.width_periods
    xi_period = abs(ew[1]) * Lq * g_gcd / geo.width_periods
    t_period = xi_period / abs(c_est)
    n_per = max(cfg.min_periods, math.ceil(cfg.fit_time / t_period))
    t_fit_end = cfg.burn_in + n_per * t_period
    run_until(t_fit_end)
    fit = [s for s in series if s[0] >= cfg.burn_in - 1e-9]
    c, se = _slope(fit, with_error=True)
    ci = 1.96 * se
    if not np.isfinite(c) or abs(c) < cfg.speed_floor:
        raise PossiblyNoFront(f"front stalls, speed {c:.3g}", direction=geo.direction.tolist())
    if ci > cfg.ci_limit * abs(c):
        raise SpeedUnresolved(f"speed {c:.5g} with CI {ci:.3g}", direction=geo.direction.tolist())

    # sampling into (xi, cell point) bins
    ncx = int(round(reaction.cell.L1 / h))
    ncy = int(round(reaction.cell.L2 / h))
    hxi = cfg.xi_step
    t_ref = st.time
    p_ref = series[-1][1]
    half = length
    nb = int(2 * half / hxi) + 1
    acc_n = np.zeros(nb * ncx * ncy)
    acc_xi = np.zeros_like(acc_n)
    acc_u = np.zeros_like(acc_n)
    every = max(1, int(hxi / 4 / (abs(c) * dt)))
    t_sample_end = t_ref + max(cfg.sample_time, 2 * t_period)
    keep = int(round(cfg.margin / h))
    pend = []
    pend_n = 0

    def flush():
        nonlocal pend, pend_n
        if not pend:
            return
        key = np.concatenate([p[0] for p in pend])
        acc_n[:] += np.bincount(key, minlength=acc_n.size)
        acc_xi[:] += np.bincount(key, weights=np.concatenate([p[1] for p in pend]),
                                 minlength=acc_n.size)
        acc_u[:] += np.bincount(key, weights=np.concatenate([p[2] for p in pend]),
                                minlength=acc_n.size)
        pend, pend_n = [], 0

    while st.time < t_sample_end - 0.5 * dt:
        st.run(every)
        fl = st.field()
        g = fl.grid
        Pm, Qm = g.mesh()
        sl = (slice(None), slice(keep, g.ny - keep))
        pp, qq, uu = Pm[sl].ravel(), Qm[sl].ravel(), fl.values[sl].ravel()
        rel = pp * ew[0] + qq * ew[1] - c * (fl.time - t_ref) - p_ref
        ip = np.rint(pp / h).astype(np.int64)
        iq = np.rint(qq / h).astype(np.int64)
        ix, iy = (iq, ip) if geo.transposed else (ip, iq)
        cidx = (ix % ncx) * ncy + (iy % ncy)
        b = np.floor((rel + half) / hxi).astype(np.int64)
        ok = (b >= 0) & (b < nb)
        pend.append((b[ok] * (ncx * ncy) + cidx[ok], rel[ok], uu[ok]))
        pend_n += int(ok.sum())
        if pend_n > 4_000_000:
            flush()
        x_, y_ = _front_q(fl, ew)
        mid = st.grid.y0 + 0.5 * (st.grid.ny - 1) * h
        k = int((y_ - mid) / Lq)
        if k:
            st.shift_window(0, k * q_per)
    flush()
    xi, table = _assemble_table(acc_n.reshape(nb, ncx, ncy), acc_xi.reshape(nb, ncx, ncy),
                                acc_u.reshape(nb, ncx, ncy), hxi, half)
    front = PulsatingFront(
        direction=geo.direction, requested=geo.requested, speed=float(c), speed_ci=float(ci),
        xi=xi, profile=table, cell=(reaction.cell.L1, reaction.cell.L2), spacing=(h, h),
        tail_rates=(float("nan"), float("nan")), slope_floor=float("nan"),
        timeseries=series,
        meta={"width_periods": geo.width_periods, "twist_periods": geo.twist_periods,
              "transposed": geo.transposed, "dt": dt, "t_period": t_period,
              "fit_periods": n_per, "xi_step": hxi})
    mu1, mu2, r = tail_and_slope_report(front, cfg.slope_halfwidth)
    front.tail_rates = (mu1, mu2)
    front.slope_floor = r
    if keep_run:
        front.meta["stepper"] = st
    return front


def _front_q(fl: Field, ew):
    """Mean crossing point of the 1/2 level (p, q) in the working frame."""
    x, y = _crossings_pq(fl, ew)
    ok = np.isfinite(y)
    return float(np.mean(x[ok])), float(np.mean(y[ok]))


def _crossings_pq(fl, ew):
    from .pde_solver import front_crossings
    return front_crossings(fl, ew, 0.5)


def _slope(series, with_error=False):
    t = np.array([s[0] for s in series])
    p = np.array([s[1] for s in series])
    A = np.vstack([t - t.mean(), np.ones_like(t)]).T
    coef, res, *_ = np.linalg.lstsq(A, p, rcond=None)
    if not with_error:
        return float(coef[0])
    resid = p - A @ coef
    dof = max(len(t) - 2, 1)
    s2 = float(resid @ resid) / dof
    se = math.sqrt(s2 / float(((t - t.mean()) ** 2).sum()))
    return float(coef[0]), se


def _assemble_table(cnt, sxi, su, hxi, half):
    """Average each (bin, cell point) and resample onto a uniform xi grid with U(0,0,0) = 1/2."""
    nb, ncx, ncy = cnt.shape
    have = cnt > 0
    full = have.all(axis=(1, 2))
    idx = np.nonzero(full)[0]
    if idx.size < 20:
        raise DiagnosticFailure("profile sampling covered too few bins")
    lo, hi = idx[0], idx[-1]
    sel = slice(lo, hi + 1)
    cnt, sxi, su = cnt[sel], sxi[sel], su[sel]
    with np.errstate(invalid="ignore", divide="ignore"):
        mxi = sxi / cnt
        mu = su / cnt
    centres = -half + (np.arange(lo, hi + 1) + 0.5) * hxi
    raw = np.empty((centres.size, ncx, ncy))
    for i in range(ncx):
        for j in range(ncy):
            ok = cnt[:, i, j] > 0
            raw[:, i, j] = np.interp(centres, mxi[ok, i, j], mu[ok, i, j])
    col = raw[:, 0, 0]
    below = np.nonzero(col < 0.5)[0]
    k = below[0] - 1 if below.size and below[0] > 0 else None
    if k is None:
        raise DiagnosticFailure("profile never crosses 1/2 at the cell origin")
    shift = centres[k] + (col[k] - 0.5) / (col[k] - col[k + 1]) * hxi
    j_lo = math.ceil((centres[0] - shift) / hxi + 1e-9)
    j_hi = math.floor((centres[-1] - shift) / hxi - 1e-9)
    xi = np.arange(j_lo, j_hi + 1) * hxi
    table = np.empty((xi.size, ncx, ncy))
    for i in range(ncx):
        for j in range(ncy):
            table[:, i, j] = np.interp(xi + shift, centres, raw[:, i, j])
    j0 = -j_lo
    table[j0, 0, 0] = 0.5
    xi[j0] = 0.0
    # trim to values strictly inside (0, 1)
    inside = ((table > 0) & (table < 1)).all(axis=(1, 2))
    keep = np.nonzero(inside)[0]
    return xi[keep[0]:keep[-1] + 1], table[keep[0]:keep[-1] + 1]


def tail_and_slope_report(front: PulsatingFront, C: float = 2.0,
                          window=(1e-7, 1e-2)):
    """Exponential tail rates at both ends and the floor of -dU/dxi on |xi| <= C."""
    xi = front.xi
    if xi[0] > -C - 5 or xi[-1] < C + 5:
        raise DiagnosticFailure(f"profile range {front.xi_range} does not cover |xi| <= {C + 5}")
    mean = front.profile.mean(axis=(1, 2))
    mu1 = _tail_rate(xi, mean, window, ahead=True)
    mu2 = _tail_rate(xi, 1.0 - mean, window, ahead=False)
    d = np.gradient(front.profile, xi, axis=0)
    band = np.abs(xi) <= C + 1e-12
    r = float((-d[band]).min())
    if not (mu1 > 0 and mu2 > 0):
        raise DiagnosticFailure(f"negative fitted tail rate ({mu1:.3g}, {mu2:.3g})")
    if not r > 0:
        raise DiagnosticFailure(f"non-positive slope floor {r:.3g}")
    return mu1, mu2, r


def _tail_rate(xi, v, window, ahead):
    side = xi > 0 if ahead else xi < 0
    ok = side & (v > window[0]) & (v < window[1])
    if ok.sum() < 5:
        # fall back to the outer third of that side
        pts = np.nonzero(side & (v > 0))[0]
        pts = pts[2 * len(pts) // 3:] if ahead else pts[: len(pts) // 3]
        ok = np.zeros_like(side)
        ok[pts] = True
    slope = np.polyfit(xi[ok], np.log(v[ok]), 1)[0]
    return float(-slope if ahead else slope)


def sample_profile(front: PulsatingFront, xi, x, y):
    """Bilinear in (x, y) over the cell, linear in xi, exponential tails outside the table."""
    xi, x, y = np.broadcast_arrays(np.asarray(xi, float), np.asarray(x, float),
                                   np.asarray(y, float))
    L1, L2 = front.cell
    ncx, ncy = front.profile.shape[1:]
    sx = np.mod(x / L1, 1.0) * ncx
    sy = np.mod(y / L2, 1.0) * ncy
    i0 = np.floor(sx).astype(np.int64) % ncx
    j0 = np.floor(sy).astype(np.int64) % ncy
    wx = sx - np.floor(sx)
    wy = sy - np.floor(sy)
    i1 = (i0 + 1) % ncx
    j1 = (j0 + 1) % ncy
    lo, hi = front.xi_range
    xc = np.clip(xi, lo, hi)
    s = xc / front.xi_step - front.j_lo
    k0 = np.clip(np.floor(s).astype(np.int64), 0, front.xi.size - 2)
    wk = s - k0
    T = front.profile

    def at(k):
        return ((1 - wx) * (1 - wy) * T[k, i0, j0] + wx * (1 - wy) * T[k, i1, j0]
                + (1 - wx) * wy * T[k, i0, j1] + wx * wy * T[k, i1, j1])

    val = (1 - wk) * at(k0) + wk * at(k0 + 1)
    mu1, mu2 = front.tail_rates
    val = np.where(xi > hi, val * np.exp(-mu1 * (xi - hi)), val)
    val = np.where(xi < lo, 1.0 - (1.0 - val) * np.exp(mu2 * (xi - lo)), val)
    return val


def elliptic_residual(front: PulsatingFront, reaction: ReactionField, interior: float = 3.0):
    """Residual of c U_xi + U_xixi + 2 e.grad U_xi + Lap U + f(x, y, U) on the table.

    Derivatives by centred differences: table spacing in xi, cell spacing in x and y.
    Returns the RMS over table points with xi at least ``interior`` from the table ends.
    """
    U = front.profile
    hxi = front.xi_step
    hx, hy = front.spacing
    e = front.direction
    Uxi = (np.roll(U, -1, 0) - np.roll(U, 1, 0)) / (2 * hxi)
    Uxixi = (np.roll(U, -1, 0) - 2 * U + np.roll(U, 1, 0)) / hxi ** 2
    dx = lambda A: (np.roll(A, -1, 1) - np.roll(A, 1, 1)) / (2 * hx)
    dy = lambda A: (np.roll(A, -1, 2) - np.roll(A, 1, 2)) / (2 * hy)
    lap = ((np.roll(U, -1, 1) - 2 * U + np.roll(U, 1, 1)) / hx ** 2
           + (np.roll(U, -1, 2) - 2 * U + np.roll(U, 1, 2)) / hy ** 2)
    ncx, ncy = U.shape[1:]
    X, Y = np.meshgrid(np.arange(ncx) * hx, np.arange(ncy) * hy, indexing="ij")
    fU = reaction.f(X[None], Y[None], U)
    R = front.speed * Uxi + Uxixi + 2 * (e[0] * dx(Uxi) + e[1] * dy(Uxi)) + lap + fU
    band = (front.xi > front.xi[0] + interior) & (front.xi < front.xi[-1] - interior)
    return float(np.sqrt(np.mean(R[band] ** 2)))


# --------------------------------------------------------------------------- files

def write_profile(path, front: PulsatingFront):
    n_xi, ncx, ncy = front.profile.shape
    vals = [front.direction[0], front.direction[1], front.speed, front.speed_ci,
            front.cell[0], front.cell[1], front.spacing[0], front.spacing[1],
            front.tail_rates[0], front.tail_rates[1], front.slope_floor]
    v = [repr(float(a)) for a in vals]
    head = ("PFPROF 1\n"
            f"{n_xi} {ncx} {ncy}\n"
            f"{' '.join(v[:4])}\n{' '.join(v[4:8])}\n{' '.join(v[8:])}\n")
    with open(path, "wb") as fh:
        fh.write(head.encode("ascii"))
        fh.write(np.ascontiguousarray(front.xi, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(front.profile, dtype="<f8").tobytes())


def read_profile(path) -> PulsatingFront:
    with open(path, "rb") as fh:
        lines = [fh.readline().decode("ascii").strip() for _ in range(5)]
        if lines[0] != "PFPROF 1":
            raise ValueError(f"{path}: not a PFPROF 1 file")
        n_xi, ncx, ncy = (int(v) for v in lines[1].split())
        e0, e1, c, ci = (float(v) for v in lines[2].split())
        L1, L2, hx, hy = (float(v) for v in lines[3].split())
        mu1, mu2, r = (float(v) for v in lines[4].split())
        xi = np.frombuffer(fh.read(8 * n_xi), dtype="<f8").astype(float)
        tab = np.frombuffer(fh.read(), dtype="<f8").astype(float)
    if tab.size != n_xi * ncx * ncy:
        raise ValueError(f"{path}: table size mismatch")
    d = np.array([e0, e1])
    step = float(np.round((xi[-1] - xi[0]) / (n_xi - 1), 12))
    return PulsatingFront(d, d.copy(), c, ci, xi, tab.reshape(n_xi, ncx, ncy), (L1, L2),
                          (hx, hy), (mu1, mu2), r, meta={"xi_step": step})


# --------------------------------------------------------------------------- directions

_PAD = 3


def _bspline_coeffs(arr: np.ndarray, wrap_axes: Sequence[int]) -> np.ndarray:
    c = np.asarray(arr, dtype=float)
    pads = []
    for ax in range(c.ndim):
        mode = "grid-wrap" if ax in wrap_axes else "mirror"
        c = ndimage.spline_filter1d(c, order=3, axis=ax, mode=mode)
        pads.append(mode)
    for ax, mode in enumerate(pads):
        w = [(0, 0)] * c.ndim
        w[ax] = (_PAD, _PAD)
        c = np.pad(c, w, mode="wrap" if mode == "grid-wrap" else "symmetric")
    return c


class DirectionField:
    """Speeds and profiles for directions e = (cos t, sin t) between sampled angles.

    Speeds use monotone piecewise-cubic interpolation in the angle. Profiles,
    aligned so that U(0, 0, 0) = 1/2 for every basis angle, are interpolated by
    a cubic B-spline in (angle, xi, x, y) that is periodic in x and y, so the
    composed barriers are twice continuously differentiable.
    """

    def __init__(self, fronts: Sequence[PulsatingFront]):
        fronts = sorted(fronts, key=lambda f: f.angle)
        if len(fronts) < 2:
            raise ValueError("need at least two basis fronts")
        self.fronts = list(fronts)
        self.angles = np.array([f.angle for f in fronts])
        if np.any(np.diff(self.angles) <= 0):
            raise ValueError("basis angles must be distinct")
        self.speeds = np.array([f.speed for f in fronts])
        self.cell = fronts[0].cell
        self.spacing = fronts[0].spacing
        hxi = fronts[0].xi_step
        j_lo = max(f.j_lo for f in fronts)
        j_hi = min(f.j_lo + f.xi.size - 1 for f in fronts)
        self.j_lo = j_lo
        self.xi = np.arange(j_lo, j_hi + 1) * hxi
        self.hxi = hxi
        tabs = []
        for f in fronts:
            a = j_lo - f.j_lo
            tabs.append(f.profile[a:a + self.xi.size])
        self.tables = np.stack(tabs)
        self.mu1 = np.array([f.tail_rates[0] for f in fronts])
        self.mu2 = np.array([f.tail_rates[1] for f in fronts])
        self._c = PchipInterpolator(self.angles, self.speeds)
        self._dc = self._c.derivative()
        n = len(fronts)
        self._index = CubicSpline(self.angles, np.arange(n, dtype=float))
        probe = np.linspace(self.angles[0], self.angles[-1], 50 * n)
        if np.any(self._index(probe, 1) <= 0):
            self._index = PchipInterpolator(self.angles, np.arange(n, dtype=float))
        self._coef = _bspline_coeffs(self.tables, wrap_axes=(2, 3))
        self._slices = {}

    @property
    def arc(self):
        return float(self.angles[0]), float(self.angles[-1])

    def _check(self, ang):
        ang = np.asarray(ang, dtype=float)
        lo, hi = self.arc
        if np.any(ang < lo - 1e-12) or np.any(ang > hi + 1e-12):
            bad = ang[(ang < lo - 1e-12) | (ang > hi + 1e-12)]
            raise OutOfAtlas(f"angle {float(bad.ravel()[0]):.6f} outside [{lo:.6f}, {hi:.6f}]")
        return np.clip(ang, lo, hi)

    def speed(self, ang):
        ang = self._check(ang)
        out = self._c(ang)
        # exact at basis angles
        for k, a in enumerate(self.angles):
            out = np.where(ang == a, self.speeds[k], out)
        return out

    def dspeed(self, ang):
        return self._dc(self._check(ang))

    def _index_coord(self, ang):
        s = self._index(ang)
        n = len(self.angles)
        for k, a in enumerate(self.angles):
            s = np.where(ang == a, float(k), s)
        return np.clip(s, 0.0, n - 1.0)

    def profile(self, ang, xi, x, y):
        """U_e(xi, x, y) for e = (cos ang, sin ang), vectorized over all arguments."""
        ang, xi, x, y = np.broadcast_arrays(*(np.asarray(a, float) for a in (ang, xi, x, y)))
        shape = ang.shape
        ang = self._check(ang.ravel())
        xi, x, y = xi.ravel(), x.ravel(), y.ravel()
        lo, hi = self.xi[0], self.xi[-1]
        xc = np.clip(xi, lo, hi)
        L1, L2 = self.cell
        ncx, ncy = self.tables.shape[2:]
        coords = np.vstack([
            self._index_coord(ang) + _PAD,
            xc / self.hxi - self.j_lo + _PAD,
            np.mod(x / L1, 1.0) * ncx + _PAD,
            np.mod(y / L2, 1.0) * ncy + _PAD,
        ])
        val = ndimage.map_coordinates(self._coef, coords, order=3, prefilter=False,
                                      mode="nearest")
        val = self._tails(ang, xi, val, lo, hi)
        return val.reshape(shape)

    def _tails(self, ang, xi, val, lo, hi):
        if np.any(xi > hi):
            mu1 = np.interp(ang, self.angles, self.mu1)
            val = np.where(xi > hi, val * np.exp(-mu1 * np.maximum(xi - hi, 0.0)), val)
        if np.any(xi < lo):
            mu2 = np.interp(ang, self.angles, self.mu2)
            val = np.where(xi < lo, 1.0 - (1.0 - val) * np.exp(mu2 * np.minimum(xi - lo, 0.0)),
                           val)
        return val

    def fixed(self, ang: float) -> "FixedDirection":
        key = float(ang)
        if key not in self._slices:
            self._slices[key] = FixedDirection(self, key)
        return self._slices[key]


class FixedDirection:
    """Profile of one direction, fast on grid points whose (x, y) sit on the cell lattice."""

    def __init__(self, field_: DirectionField, ang: float):
        field_._check(ang)
        self.angle = float(ang)
        self.direction = np.array([math.cos(ang), math.sin(ang)])
        self.speed = float(field_.speed(ang))
        self.parent = field_
        n_xi, ncx, ncy = field_.tables.shape[1:]
        xi_g, i_g, j_g = np.meshgrid(np.arange(n_xi), np.arange(ncx), np.arange(ncy),
                                     indexing="ij")
        full = field_.profile(np.full(xi_g.shape, ang), field_.xi[xi_g],
                              i_g * field_.spacing[0], j_g * field_.spacing[1])
        self.table = full
        self.coef = np.pad(ndimage.spline_filter1d(full, order=3, axis=0, mode="mirror"),
                           [(_PAD, _PAD), (0, 0), (0, 0)], mode="symmetric")
        self.mu1 = float(np.interp(ang, field_.angles, field_.mu1))
        self.mu2 = float(np.interp(ang, field_.angles, field_.mu2))

    def on_lattice(self, xi, ix, iy):
        """Evaluate at cell indices (ix, iy) and arbitrary xi (cubic B-spline in xi)."""
        p = self.parent
        lo, hi = p.xi[0], p.xi[-1]
        xc = np.clip(xi, lo, hi)
        s = xc / p.hxi - p.j_lo + _PAD
        k = np.floor(s).astype(np.int64)
        w = s - k
        w0 = (1 - w) ** 3 / 6.0
        w1 = (3 * w ** 3 - 6 * w ** 2 + 4) / 6.0
        w2 = (-3 * w ** 3 + 3 * w ** 2 + 3 * w + 1) / 6.0
        w3 = w ** 3 / 6.0
        C = self.coef
        kmax = C.shape[0] - 1
        val = (w0 * C[np.clip(k - 1, 0, kmax), ix, iy] + w1 * C[np.clip(k, 0, kmax), ix, iy]
               + w2 * C[np.clip(k + 1, 0, kmax), ix, iy] + w3 * C[np.clip(k + 2, 0, kmax), ix, iy])
        val = np.where(xi > hi, val * np.exp(-self.mu1 * np.maximum(xi - hi, 0.0)), val)
        val = np.where(xi < lo, 1.0 - (1.0 - val) * np.exp(self.mu2 * np.minimum(xi - lo, 0.0)),
                       val)
        return val

    def at_grid(self, t: float, grid: Grid2D):
        """Planar front U((x, y).e - c t, x, y) on every point of ``grid``."""
        X, Y = grid.mesh()
        hx, hy = self.parent.spacing
        ncx, ncy = self.table.shape[1:]
        ix = np.rint(X / hx).astype(np.int64) % ncx
        iy = np.rint(Y / hy).astype(np.int64) % ncy
        xi = X * self.direction[0] + Y * self.direction[1] - self.speed * t
        return self.on_lattice(xi, ix, iy)

    def at_points(self, t, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        xi = x * self.direction[0] + y * self.direction[1] - self.speed * t
        return self.parent.profile(np.full(x.shape, self.angle), xi, x, y)


class PlanarFront(FixedDirection):
    """One computed front used as it is, with no blending across angles.

    Cheap where a direction field would be too large (big cells), at the price
    of fixing the direction to the snapped one.
    """

    def __init__(self, front: PulsatingFront):
        self.front = front
        self.angle = front.angle
        self.direction = np.asarray(front.direction, dtype=float)
        self.speed = float(front.speed)
        self.parent = self
        self.xi = front.xi
        self.hxi = front.xi_step
        self.j_lo = front.j_lo
        self.cell = front.cell
        self.spacing = front.spacing
        self.table = front.profile
        self.coef = np.pad(ndimage.spline_filter1d(self.table, order=3, axis=0, mode="mirror"),
                           [(_PAD, _PAD), (0, 0), (0, 0)], mode="symmetric")
        self.mu1, self.mu2 = (float(v) for v in front.tail_rates)
        self._full = None

    def at_points(self, t, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        xi = x * self.direction[0] + y * self.direction[1] - self.speed * t
        if self._full is None:
            self._full = _bspline_coeffs(self.table, wrap_axes=(1, 2))
        lo, hi = self.xi[0], self.xi[-1]
        L1, L2 = self.cell
        ncx, ncy = self.table.shape[1:]
        coords = np.vstack([
            np.clip(xi, lo, hi).ravel() / self.hxi - self.j_lo + _PAD,
            np.mod(x / L1, 1.0).ravel() * ncx + _PAD,
            np.mod(y / L2, 1.0).ravel() * ncy + _PAD,
        ])
        val = ndimage.map_coordinates(self._full, coords, order=3, prefilter=False,
                                      mode="nearest").reshape(x.shape)
        val = np.where(xi > hi, val * np.exp(-self.mu1 * np.maximum(xi - hi, 0.0)), val)
        return np.where(xi < lo, 1.0 - (1.0 - val) * np.exp(self.mu2 * np.minimum(xi - lo, 0.0)),
                        val)


def freeze_direction(fd: FixedDirection) -> PulsatingFront:
    """The lattice table of one direction of a field, as a storable front."""
    p = fd.parent
    d = np.asarray(fd.direction, dtype=float)
    return PulsatingFront(d, d.copy(), float(fd.speed), float("nan"), np.asarray(p.xi, float),
                          np.asarray(fd.table, float), tuple(p.cell), tuple(p.spacing),
                          (float(fd.mu1), float(fd.mu2)), float("nan"),
                          meta={"xi_step": float(p.hxi)})


class PlanarFrontSet:
    """``fixed(angle)`` over a few computed fronts: the front whose snapped angle is nearest."""

    def __init__(self, fronts: Sequence[PulsatingFront], tol: float = 0.05):
        if not fronts:
            raise ValueError("need at least one front")
        self.planar = sorted((PlanarFront(f) for f in fronts), key=lambda p: p.angle)
        self.tol = float(tol)
        self.cell = self.planar[0].cell
        self.spacing = self.planar[0].spacing

    def fixed(self, ang: float) -> PlanarFront:
        best = min(self.planar, key=lambda p: abs(p.angle - ang))
        if abs(best.angle - ang) > self.tol:
            raise OutOfAtlas(f"no front within {self.tol} of angle {ang:.6f}")
        return best

    def speed(self, ang):
        return self.fixed(float(ang)).speed


def build_direction_field(reaction: ReactionField, angles: Sequence[float],
                          cfg: Optional[FrontConfig] = None) -> DirectionField:
    if len(angles) < 5:
        raise ValueError("need at least 5 basis angles")
    fronts = [compute_pulsating_front(reaction, (math.cos(a), math.sin(a)), cfg)
              for a in sorted(angles)]
    return DirectionField(fronts)


class TravelingWaveField:
    """Exact planar waves of the homogeneous cubic u(1 - u)(u - a), same interface as DirectionField.

    U(xi) = (1 - tanh(xi / (2 sqrt 2))) / 2 with speed (1 - 2a) / sqrt 2 in every direction.
    """

    def __init__(self, a: float, cell=(1.0, 1.0)):
        if not 0 < a < 0.5:
            raise ValueError(f"threshold {a} outside (0, 1/2)")
        self.a = float(a)
        self.c = (1.0 - 2.0 * a) / math.sqrt(2.0)
        self.cell = tuple(cell)
        self.k = 1.0 / (2.0 * math.sqrt(2.0))
        self.mu = 1.0 / math.sqrt(2.0)
        self._slices = {}

    @property
    def arc(self):
        return 0.0, math.pi

    def speed(self, ang):
        return np.full(np.shape(ang), self.c)

    def dspeed(self, ang):
        return np.zeros(np.shape(ang))

    def profile(self, ang, xi, x, y):
        ang, xi, x, y = np.broadcast_arrays(*(np.asarray(v, float) for v in (ang, xi, x, y)))
        return 0.5 * (1.0 - np.tanh(self.k * xi))

    def profile_dxi(self, xi):
        return -0.5 * self.k / np.cosh(self.k * np.asarray(xi, float)) ** 2

    def fixed(self, ang: float) -> "_WaveDirection":
        key = float(ang)
        if key not in self._slices:
            self._slices[key] = _WaveDirection(self, key)
        return self._slices[key]


class _WaveDirection:
    def __init__(self, parent: TravelingWaveField, ang: float):
        self.parent = parent
        self.angle = float(ang)
        self.direction = np.array([math.cos(ang), math.sin(ang)])
        self.speed = parent.c

    def at_points(self, t, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        xi = x * self.direction[0] + y * self.direction[1] - self.speed * t
        return self.parent.profile(self.angle, xi, x, y)

    def at_grid(self, t: float, grid: Grid2D):
        X, Y = grid.mesh()
        return self.at_points(t, X, Y)
