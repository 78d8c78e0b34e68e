"""Explicit monotone finite-difference solver for u_t = Laplacian(u) + f(x, y, u).

Forward Euler in time with the 5-point Laplacian. When
dt * (2/hx^2 + 2/hy^2 + M) <= 1 the update is a non-decreasing function of
every input value, so ordered data stay ordered and [0, 1] is invariant.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numba
import numpy as np

from .errors import (FrontLeftWindow, InvalidShift, NumericalBlowup,
                     RejectedConfiguration)
from .media import ReactionField

CLAMP0, CLAMP1, PERIODIC, LINEAR, DIRICHLET = 0, 1, 2, 3, 4
_POLICY_CODES = {"clamp-0": CLAMP0, "clamp-1": CLAMP1, "periodic-wrap": PERIODIC,
                 "linear-extrapolate": LINEAR, "dirichlet": DIRICHLET}


@dataclass(frozen=True)
class Grid2D:
    nx: int
    ny: int
    hx: float
    hy: float
    x0: float = 0.0
    y0: float = 0.0

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3:
            raise RejectedConfiguration("grid needs at least 3 points per axis")
        if not (self.hx > 0 and self.hy > 0):
            raise RejectedConfiguration("grid spacings must be positive")

    @property
    def xs(self):
        return self.x0 + self.hx * np.arange(self.nx)

    @property
    def ys(self):
        return self.y0 + self.hy * np.arange(self.ny)

    def mesh(self):
        return np.meshgrid(self.xs, self.ys, indexing="ij")

    def points_per_period(self, L1: float, L2: float):
        px, py = L1 / self.hx, L2 / self.hy
        if abs(px - round(px)) > 1e-9 * px or abs(py - round(py)) > 1e-9 * py:
            raise RejectedConfiguration(
                f"spacings ({self.hx}, {self.hy}) do not divide the cell ({L1}, {L2})")
        return int(round(px)), int(round(py))

    def shifted(self, dx: float, dy: float) -> "Grid2D":
        return replace(self, x0=self.x0 + dx, y0=self.y0 + dy)


@dataclass
class Field:
    grid: Grid2D
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.shape != (self.grid.nx, self.grid.ny):
            raise ValueError(f"values shape {self.values.shape} does not match grid")

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy(), self.time)


@dataclass(frozen=True)
class BoundaryPolicy:
    """Per-side ghost rule. ``twist_x`` is the y-offset in grid cells applied
    across a periodic x-boundary: u(x + W, y) = u(x, y + twist_x * hy)."""
    left: str = "linear-extrapolate"
    right: str = "linear-extrapolate"
    bottom: str = "clamp-1"
    top: str = "clamp-0"
    twist_x: int = 0
    twist_y: int = 0

    def __post_init__(self):
        for side in (self.left, self.right, self.bottom, self.top):
            if side not in _POLICY_CODES:
                raise RejectedConfiguration(f"unknown boundary policy {side!r}")
        if (self.left == "periodic-wrap") != (self.right == "periodic-wrap"):
            raise RejectedConfiguration("periodic-wrap must be set on both x sides")
        if (self.bottom == "periodic-wrap") != (self.top == "periodic-wrap"):
            raise RejectedConfiguration("periodic-wrap must be set on both y sides")
        if self.left == "periodic-wrap" and self.bottom == "periodic-wrap" and (
                self.twist_x or self.twist_y):
            raise RejectedConfiguration("twisted wrap needs a non-periodic second axis")

    def codes(self):
        return np.array([_POLICY_CODES[s] for s in (self.left, self.right, self.bottom, self.top)],
                        dtype=np.int64)

    def far_value(self, side: str):
        v = getattr(self, side)
        return {"clamp-0": 0.0, "clamp-1": 1.0}.get(v)

    def validate(self, grid: Grid2D, reaction: ReactionField):
        px, py = grid.points_per_period(reaction.cell.L1, reaction.cell.L2)
        if self.left == "periodic-wrap" and grid.nx % px:
            raise RejectedConfiguration("periodic x-wrap needs a whole number of periods")
        if self.bottom == "periodic-wrap" and grid.ny % py:
            raise RejectedConfiguration("periodic y-wrap needs a whole number of periods")
        if self.twist_x % py or self.twist_y % px:
            raise RejectedConfiguration("twist must be a whole number of periods")


def max_stable_dt(grid: Grid2D, reaction: ReactionField) -> float:
    return 1.0 / (2.0 / grid.hx ** 2 + 2.0 / grid.hy ** 2 + reaction.lipschitz_M)


def check_cfl(grid: Grid2D, reaction: ReactionField, dt: float):
    load = dt * (2.0 / grid.hx ** 2 + 2.0 / grid.hy ** 2 + reaction.lipschitz_M)
    if not (dt > 0) or load > 1.0 + 1e-12:
        raise RejectedConfiguration(f"dt={dt} breaks the monotonicity bound (load {load:.6f})")


# --------------------------------------------------------------------------- kernels

@numba.njit(cache=True)
def _fill_ghosts(P, codes, tx, ty, gl, gr, gb, gt):
    nx = P.shape[0] - 2
    ny = P.shape[1] - 2
    lo_far = -1.0
    hi_far = -1.0
    if codes[2] == CLAMP0:
        lo_far = 0.0
    elif codes[2] == CLAMP1:
        lo_far = 1.0
    if codes[3] == CLAMP0:
        hi_far = 0.0
    elif codes[3] == CLAMP1:
        hi_far = 1.0
    # x sides
    for j in range(ny):
        for side in range(2):
            c = codes[side]
            gi = 0 if side == 0 else nx + 1
            if c == CLAMP0:
                P[gi, j + 1] = 0.0
            elif c == CLAMP1:
                P[gi, j + 1] = 1.0
            elif c == LINEAR:
                if side == 0:
                    P[gi, j + 1] = 2.0 * P[1, j + 1] - P[2, j + 1]
                else:
                    P[gi, j + 1] = 2.0 * P[nx, j + 1] - P[nx - 1, j + 1]
            elif c == DIRICHLET:
                P[gi, j + 1] = gl[j] if side == 0 else gr[j]
            else:
                src_i = nx if side == 0 else 1
                jj = j - tx if side == 0 else j + tx
                if jj < 0:
                    P[gi, j + 1] = lo_far if lo_far >= 0.0 else P[src_i, 1]
                elif jj >= ny:
                    P[gi, j + 1] = hi_far if hi_far >= 0.0 else P[src_i, ny]
                else:
                    P[gi, j + 1] = P[src_i, jj + 1]
    lf = -1.0
    rf = -1.0
    if codes[0] == CLAMP0:
        lf = 0.0
    elif codes[0] == CLAMP1:
        lf = 1.0
    if codes[1] == CLAMP0:
        rf = 0.0
    elif codes[1] == CLAMP1:
        rf = 1.0
    for i in range(nx):
        for side in range(2):
            c = codes[2 + side]
            gj = 0 if side == 0 else ny + 1
            if c == CLAMP0:
                P[i + 1, gj] = 0.0
            elif c == CLAMP1:
                P[i + 1, gj] = 1.0
            elif c == LINEAR:
                if side == 0:
                    P[i + 1, gj] = 2.0 * P[i + 1, 1] - P[i + 1, 2]
                else:
                    P[i + 1, gj] = 2.0 * P[i + 1, ny] - P[i + 1, ny - 1]
            elif c == DIRICHLET:
                P[i + 1, gj] = gb[i] if side == 0 else gt[i]
            else:
                src_j = ny if side == 0 else 1
                ii = i - ty if side == 0 else i + ty
                if ii < 0:
                    P[i + 1, gj] = lf if lf >= 0.0 else P[1, src_j]
                elif ii >= nx:
                    P[i + 1, gj] = rf if rf >= 0.0 else P[nx, src_j]
                else:
                    P[i + 1, gj] = P[ii + 1, src_j]


@numba.njit(cache=True)
def _cubic_steps(P, Q, TH, ihx2, ihy2, dt, nsteps, codes, tx, ty, gl, gr, gb, gt):
    nx = P.shape[0] - 2
    ny = P.shape[1] - 2
    for n in range(nsteps):
        _fill_ghosts(P, codes, tx, ty, gl, gr, gb, gt)
        bad = False
        for i in range(1, nx + 1):
            for j in range(1, ny + 1):
                u = P[i, j]
                lap = (P[i - 1, j] + P[i + 1, j] - 2.0 * u) * ihx2 \
                    + (P[i, j - 1] + P[i, j + 1] - 2.0 * u) * ihy2
                th = TH[i - 1, j - 1]
                if u < 0.0:
                    f = -th * u
                elif u > 1.0:
                    f = (th - 1.0) * (u - 1.0)
                else:
                    f = u * (1.0 - u) * (u - th)
                v = u + dt * (lap + f)
                if v != v:
                    bad = True
                Q[i, j] = v
        if bad:
            return n, Q
        P, Q = Q, P
    return -1, P


def _numpy_step(P, reaction, X, Y, ihx2, ihy2, dt, codes, tx, ty, ghosts):
    _fill_ghosts(P, codes, tx, ty, *ghosts)
    u = P[1:-1, 1:-1]
    lap = (P[:-2, 1:-1] + P[2:, 1:-1] - 2.0 * u) * ihx2 + (P[1:-1, :-2] + P[1:-1, 2:] - 2.0 * u) * ihy2
    out = np.empty_like(P)
    out[1:-1, 1:-1] = u + dt * (lap + reaction.f(X, Y, u))
    return out


_EMPTY = np.zeros(0)


class Stepper:
    """Holds padded buffers for repeated advancing of one window.

    Ghost values for ``dirichlet`` sides are supplied per call to :meth:`run`.
    """

    def __init__(self, field: Field, reaction: ReactionField, dt: float, bc: BoundaryPolicy):
        check_cfl(field.grid, reaction, dt)
        bc.validate(field.grid, reaction)
        self.grid = field.grid
        self.reaction = reaction
        self.dt = float(dt)
        self.bc = bc
        self.codes = bc.codes()
        g = field.grid
        self.P = np.zeros((g.nx + 2, g.ny + 2))
        self.P[1:-1, 1:-1] = field.values
        self.Q = np.zeros_like(self.P)
        self.t0 = float(field.time)
        self.steps_done = 0
        self._set_medium()
        self.ghosts = [np.zeros(g.ny), np.zeros(g.ny), np.zeros(g.nx), np.zeros(g.nx)]

    def _set_medium(self):
        X, Y = self.grid.mesh()
        self.X, self.Y = X, Y
        self.cubic = self.reaction.kind != "tabulated"
        self.TH = np.ascontiguousarray(self.reaction.theta(X, Y)) if self.cubic else None

    @property
    def time(self) -> float:
        return self.t0 + self.steps_done * self.dt

    @property
    def values(self) -> np.ndarray:
        return self.P[1:-1, 1:-1]

    def set_values(self, values: np.ndarray):
        self.P[1:-1, 1:-1] = values

    def set_ghosts(self, left=None, right=None, bottom=None, top=None):
        for k, g in enumerate((left, right, bottom, top)):
            if g is not None:
                self.ghosts[k][:] = g

    def run(self, nsteps: int):
        ihx2 = 1.0 / self.grid.hx ** 2
        ihy2 = 1.0 / self.grid.hy ** 2
        tx, ty = self.bc.twist_x, self.bc.twist_y
        if nsteps <= 0:
            return
        if self.cubic:
            bad, out = _cubic_steps(self.P, self.Q, self.TH, ihx2, ihy2, self.dt, int(nsteps),
                                    self.codes, tx, ty, *self.ghosts)
            if out is not self.P:
                self.P, self.Q = self.Q, self.P
            if bad >= 0:
                raise NumericalBlowup(f"NaN at step {self.steps_done + bad}",
                                      step=self.steps_done + bad)
        else:
            for n in range(nsteps):
                self.P = _numpy_step(self.P, self.reaction, self.X, self.Y, ihx2, ihy2,
                                     self.dt, self.codes, tx, ty, self.ghosts)
                if not np.isfinite(self.P[1:-1, 1:-1]).all():
                    raise NumericalBlowup(f"NaN at step {self.steps_done + n}",
                                          step=self.steps_done + n)
        self.steps_done += int(nsteps)

    def shift_window(self, di: int, dj: int):
        """Move the window by (di, dj) grid cells (whole periods)."""
        f = recentre_cells(self.field(), di, dj, self.bc)
        self.grid = f.grid
        # whole-period shifts leave the medium array TH unchanged
        self.P[1:-1, 1:-1] = f.values
        self.X, self.Y = self.grid.mesh()

    def field(self) -> Field:
        return Field(self.grid, self.values.copy(), self.time)


def advance(state: Field, reaction: ReactionField, dt: float, steps: int,
            bc: BoundaryPolicy) -> Field:
    st = Stepper(state, reaction, dt, bc)
    st.run(steps)
    return Field(state.grid, st.values.copy(), state.time + steps * dt)


def recentre_cells(state: Field, di: int, dj: int, bc: BoundaryPolicy) -> Field:
    g = state.grid
    if abs(di) >= g.nx or abs(dj) >= g.ny:
        raise InvalidShift(f"shift ({di}, {dj}) cells is not inside the {g.nx}x{g.ny} window")
    v = state.values
    out = np.empty_like(v)
    if di and bc.left == "periodic-wrap":
        if bc.twist_x:
            raise InvalidShift("cannot shift along a twisted periodic axis")
        v = np.roll(v, -di, axis=0)
        di_eff = 0
    else:
        di_eff = di
    if dj and bc.bottom == "periodic-wrap":
        if bc.twist_y:
            raise InvalidShift("cannot shift along a twisted periodic axis")
        v = np.roll(v, -dj, axis=1)
        dj_eff = 0
    else:
        dj_eff = dj
    out[...] = v
    if di_eff:
        out = _shift_axis(out, di_eff, 0, bc.far_value("left"), bc.far_value("right"))
    if dj_eff:
        out = _shift_axis(out, dj_eff, 1, bc.far_value("bottom"), bc.far_value("top"))
    return Field(g.shifted(di * g.hx, dj * g.hy), out, state.time)


def _shift_axis(v, d, axis, lo_fill, hi_fill):
    out = np.empty_like(v)
    n = v.shape[axis]
    src = [slice(None)] * 2
    dst = [slice(None)] * 2
    if d > 0:
        dst[axis] = slice(0, n - d)
        src[axis] = slice(d, n)
        out[tuple(dst)] = v[tuple(src)]
        fill = [slice(None)] * 2
        fill[axis] = slice(n - d, n)
        if hi_fill is None:
            edge = [slice(None)] * 2
            edge[axis] = slice(n - 1, n)
            out[tuple(fill)] = v[tuple(edge)]
        else:
            out[tuple(fill)] = hi_fill
    else:
        d = -d
        dst[axis] = slice(d, n)
        src[axis] = slice(0, n - d)
        out[tuple(dst)] = v[tuple(src)]
        fill = [slice(None)] * 2
        fill[axis] = slice(0, d)
        if lo_fill is None:
            edge = [slice(None)] * 2
            edge[axis] = slice(0, 1)
            out[tuple(fill)] = v[tuple(edge)]
        else:
            out[tuple(fill)] = lo_fill
    return out


def recentre(state: Field, shift: Sequence[int], reaction: ReactionField,
             bc: Optional[BoundaryPolicy] = None) -> Field:
    """Translate the window by (k1*L1, k2*L2), keeping global coordinates."""
    bc = bc or BoundaryPolicy()
    px, py = state.grid.points_per_period(reaction.cell.L1, reaction.cell.L2)
    k1, k2 = int(shift[0]), int(shift[1])
    return recentre_cells(state, k1 * px, k2 * py, bc)


# --------------------------------------------------------------------------- fronts

def _line_crossings(u: np.ndarray, level: float):
    """Crossing coordinate (in index units along axis 0) for every column.

    Returns an array with NaN where a column has no crossing; columns with
    several crossings report the median one.
    """
    d = u - level
    s = np.signbit(d)
    change = s[:-1] != s[1:]
    n_lines = u.shape[1]
    out = np.full(n_lines, np.nan)
    counts = change.sum(axis=0)
    ii, jj = np.nonzero(change)
    if ii.size == 0:
        return out
    d0 = d[ii, jj]
    d1 = d[ii + 1, jj]
    pos = ii + d0 / (d0 - d1)
    single = counts == 1
    sel = single[jj]
    out[jj[sel]] = pos[sel]
    for j in np.nonzero(counts > 1)[0]:
        out[j] = float(np.median(pos[jj == j]))
    return out


def front_crossings(state: Field, direction, level: float = 0.5):
    """Points on the level set, one per grid line along the axis nearest to ``direction``.

    Diagonal directions scan along y.
    """
    e = np.asarray(direction, dtype=float)
    g = state.grid
    if abs(e[0]) > abs(e[1]):
        cross = _line_crossings(state.values, level)
        x = g.x0 + g.hx * cross
        y = g.ys
    else:
        cross = _line_crossings(state.values.T, level)
        x = g.xs
        y = g.y0 + g.hy * cross
    return x, y


def front_position(state: Field, direction, level: float = 0.5, missing_limit: float = 0.1):
    """Mean and spread of the level crossings projected on ``direction``."""
    e = np.asarray(direction, dtype=float)
    e = e / np.hypot(*e)
    x, y = front_crossings(state, e, level)
    proj = x * e[0] + y * e[1]
    ok = np.isfinite(proj)
    if (~ok).sum() >= missing_limit * proj.size:
        raise FrontLeftWindow(f"{(~ok).sum()} of {proj.size} lines have no crossing")
    p = proj[ok]
    return float(p.mean()), float(p.max() - p.min())


def planar_speed(reaction: ReactionField, length: float = 80.0, width: float = 20.0,
                 h: float = 0.1, start: float = 10.0, burn_in: float = 20.0, fit: float = 40.0,
                 cfl: float = 1.0):
    """Speed of a flat front moving up an x-periodic window ``width`` wide and ``length`` tall.

    Positions are read once per time unit and fitted by least squares over
    [burn_in, burn_in + fit]. Returns (speed, positions).
    """
    L1 = reaction.cell.L1
    nx = int(round(width / h))
    ny = int(round(length / h)) + 1
    grid = Grid2D(nx, ny, h, h, 0.0, 0.0)
    if abs(nx * h - width) > 1e-9 or abs(width / L1 - round(width / L1)) > 1e-9:
        raise RejectedConfiguration("width must be a whole number of periods and grid steps")
    X, Y = grid.mesh()
    u0 = 0.5 * (1.0 - np.tanh((Y - start) / (2.0 * math.sqrt(2.0))))
    dt = cfl * max_stable_dt(grid, reaction)
    bc = BoundaryPolicy("periodic-wrap", "periodic-wrap", "clamp-1", "clamp-0")
    st = Stepper(Field(grid, u0, 0.0), reaction, dt, bc)
    times, pos = [], []
    for k in range(1, int(round(burn_in + fit)) + 1):
        st.run(int(round(k / dt)) - st.steps_done)
        if k >= burn_in:
            times.append(st.time)
            pos.append(front_position(st.field(), (0.0, 1.0))[0])
    speed = float(np.polyfit(times, pos, 1)[0])
    return speed, np.column_stack([times, pos])


# --------------------------------------------------------------------------- files

def write_snapshot(path, state: Field):
    g = state.grid
    hx, hy, x0, y0 = (float(v) for v in (g.hx, g.hy, g.x0, g.y0))
    head = (f"PFSNAP 1\n{g.nx} {g.ny}\n{hx!r} {hy!r}\n{x0!r} {y0!r}\n"
            f"{float(state.time)!r}\n")
    with open(path, "wb") as fh:
        fh.write(head.encode("ascii"))
        fh.write(np.ascontiguousarray(state.values, dtype="<f8").tobytes())


def read_snapshot(path) -> Field:
    with open(path, "rb") as fh:
        lines = [fh.readline().decode("ascii").strip() for _ in range(5)]
        if lines[0] != "PFSNAP 1":
            raise ValueError(f"{path}: not a PFSNAP 1 file")
        nx, ny = (int(v) for v in lines[1].split())
        hx, hy = (float(v) for v in lines[2].split())
        x0, y0 = (float(v) for v in lines[3].split())
        t = float(lines[4])
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != nx * ny:
        raise ValueError(f"{path}: expected {nx * ny} values, found {data.size}")
    return Field(Grid2D(nx, ny, hx, hy, x0, y0), data.reshape(nx, ny).astype(np.float64), t)


def write_timeseries(path, rows):
    buf = io.StringIO()
    buf.write("t,position,spread\n")
    for t, p, s in rows:
        buf.write(f"{float(t)!r},{float(p)!r},{float(s)!r}\n")
    with open(path, "w") as fh:
        fh.write(buf.getvalue())


def read_timeseries(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return [tuple(r) for r in data]
