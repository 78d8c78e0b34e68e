"""Curved-front experiments: construction from two planar fronts, limit shape, apex speed,
stability, three-front merging and interface-distance speeds.

All runs share one window driver. The window is a rectangle aligned with the
period lattice, moves up by whole periods to follow the corner at speed c_ab,
and takes Dirichlet ghost values from the planar-front formula of the initial
data. Ghosts only ever increase, so a discrete subsolution start gives a
solution that is non-decreasing in time.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, asdict
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .barriers import Barrier, TimeShift
from .direction_atlas import AnglePair, TripleSpeeds, axis_condition, h_slope
from .errors import (ConstructionFaulted, DiagnosticFailure, InvalidInitialData, InvalidTriple,
                     RadiiExceedWindow, WindowTooSmall)
from .media import ReactionField
from .pde_solver import (BoundaryPolicy, Field, Grid2D, Stepper, front_crossings,
                         max_stable_dt)


# --------------------------------------------------------------------------- verdicts

@dataclass
class Check:
    name: str
    measured: float
    tolerance: float
    passed: bool


@dataclass
class ExperimentVerdict:
    checks: List[Check] = field(default_factory=list)

    def add(self, name, measured, tolerance, passed):
        self.checks.append(Check(name, float(measured), float(tolerance), bool(passed)))
        return self

    def extend(self, other: "ExperimentVerdict"):
        self.checks.extend(other.checks)
        return self

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def rows(self):
        return [(c.name, repr(c.measured), repr(c.tolerance), "pass" if c.passed else "fail")
                for c in self.checks]


def write_verdict(path, verdict: ExperimentVerdict):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["check", "measured", "tolerance", "pass"])
        w.writerows(verdict.rows())


def read_verdict(path) -> ExperimentVerdict:
    out = ExperimentVerdict()
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            out.add(r["check"], float(r["measured"]), float(r["tolerance"]), r["pass"] == "pass")
    return out


def write_polylines(path, polylines):
    with open(path, "w") as fh:
        fh.write("t,x,y\n")
        for t, xs, ys in polylines:
            for x, y in zip(xs, ys):
                if np.isfinite(y):
                    fh.write(f"{float(t)!r},{float(x)!r},{float(y)!r}\n")


def read_polylines(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    out = []
    for t in np.unique(data[:, 0]):
        m = data[:, 0] == t
        out.append((float(t), data[m, 1], data[m, 2]))
    return out


# --------------------------------------------------------------------------- window driver

@dataclass
class WindowConfig:
    h: float = 0.1
    half_width: float = 20.0      # x in [-half_width, half_width]
    below: float = 15.0           # bottom margin under the lowest interface point
    above: float = 20.0           # top margin over the highest interface point
    cfl: float = 0.9
    ghost_every: int = 20         # steps between ghost refreshes
    record_every: float = 1.0     # interface polylines and in-flight checks
    snapshot_every: float = 5.0   # full fields kept in memory
    comoving: bool = True
    companions: bool = True
    repair_iters: int = 2000
    repair_tol: float = 1e-15     # deficit left in far tails where values are ~1e-13
    edge_margin: float = 3.0      # excluded from time-monotonicity checks
    sandwich_tol: float = 1e-9
    upper_slack: float = 1e-6
    upper_stride: int = 3


def lattice_values(front, t, X, Y):
    """Planar front U((x, y).e - c t, x, y) at lattice-aligned points."""
    if hasattr(front, "on_lattice"):
        hx, hy = front.parent.spacing
        ncx, ncy = front.table.shape[1:]
        ix = np.rint(X / hx).astype(np.int64) % ncx
        iy = np.rint(Y / hy).astype(np.int64) % ncy
        xi = X * front.direction[0] + Y * front.direction[1] - front.speed * t
        return front.on_lattice(xi, ix, iy)
    return front.at_points(t, X, Y)


def envelope(fronts, t, X, Y):
    out = lattice_values(fronts[0], t, X, Y)
    for f in fronts[1:]:
        out = np.maximum(out, lattice_values(f, t, X, Y))
    return out


def line_height(front, t, x):
    """y on the level line (x, y).e = c t."""
    e = front.direction
    return (front.speed * t - x * e[0]) / e[1]


@dataclass(frozen=True)
class WindowFrame:
    """Window placement as a function of time: bottom at floor((drift t + offset) / L2) L2."""
    offset: float
    height: float
    half_width: float
    drift: float
    comoving: bool = True

    def grid_at(self, reaction: ReactionField, t: float, h: float) -> Grid2D:
        L2 = reaction.cell.L2
        base = self.drift * t if self.comoving else 0.0
        y0 = math.floor((base + self.offset) / L2 + 1e-9) * L2
        nx = int(round(2 * self.half_width / h)) + 1
        ny = int(round(self.height / h)) + 1
        return Grid2D(nx, ny, h, h, -self.half_width, y0)


def window_frame(reaction: ReactionField, fronts, t_range, drift: float, cfg: WindowConfig,
                 x_extent=None) -> WindowFrame:
    """Frame that holds the envelope of the level lines over ``t_range`` with the configured
    margins, in the frame moving up at ``drift``."""
    L1, L2 = reaction.cell.L1, reaction.cell.L2
    W = cfg.half_width if x_extent is None else x_extent
    W = math.ceil(W / L1) * L1
    xs = np.linspace(-W, W, 401)
    ts = np.linspace(t_range[0], t_range[1], 41)
    hi, lo = -np.inf, np.inf
    for t in ts:
        env = np.max([line_height(f, t, xs) for f in fronts], axis=0)
        rel = env - drift * t if cfg.comoving else env
        hi, lo = max(hi, rel.max()), min(lo, rel.min())
    offset = lo - cfg.below
    # one extra period absorbs the floor in the bottom placement
    height = math.ceil((hi + cfg.above - offset) / L2 + 1) * L2
    return WindowFrame(offset, height, W, drift, cfg.comoving)


def window_grid(reaction: ReactionField, fronts, t_range, drift: float, cfg: WindowConfig,
                x_extent=None) -> Grid2D:
    """Lattice-aligned window of ``window_frame`` at the start of ``t_range``."""
    fr = window_frame(reaction, fronts, t_range, drift, cfg, x_extent)
    return fr.grid_at(reaction, t_range[0], cfg.h)


class _State:
    def __init__(self, name, fronts, stepper: Stepper):
        self.name = name
        self.fronts = fronts
        self.stepper = stepper
        g = stepper.grid
        self.ghosts = [np.full(g.ny, -np.inf), np.full(g.ny, -np.inf),
                       np.full(g.nx, -np.inf), np.full(g.nx, -np.inf)]


class Window:
    """Several solutions advanced in lockstep on one moving window.

    ``states`` maps a name to the planar fronts whose maximum gives that
    state's initial data and ghost values.
    """

    def __init__(self, reaction: ReactionField, grid: Grid2D, t0: float,
                 states: Dict[str, Sequence], cfg: WindowConfig, drift: float = 0.0,
                 initial: Optional[Dict[str, np.ndarray]] = None, repair: Sequence[str] = (),
                 offset: Optional[float] = None):
        self.reaction = reaction
        self.cfg = cfg
        self.drift = float(drift)
        # a whole number of steps per unit time keeps integer record times exact
        self.dt = 1.0 / math.ceil(1.0 / (cfg.cfl * max_stable_dt(grid, reaction)))
        self.bc = BoundaryPolicy("dirichlet", "dirichlet", "dirichlet", "dirichlet")
        self.py = grid.points_per_period(reaction.cell.L1, reaction.cell.L2)[1]
        self.states: Dict[str, _State] = {}
        initial = initial or {}
        X, Y = grid.mesh()
        for name, fronts in states.items():
            v = initial.get(name)
            if v is None:
                v = envelope(fronts, t0, X, Y)
            st = Stepper(Field(grid, v, t0), reaction, self.dt, self.bc)
            self.states[name] = _State(name, list(fronts), st)
        # window bottom in the moving frame
        self.anchor = float(grid.y0) - self.drift * t0 if offset is None else float(offset)
        self.refresh_ghosts()
        for name in repair:
            self.repair(name)

    # geometry
    @property
    def grid(self) -> Grid2D:
        return next(iter(self.states.values())).stepper.grid

    @property
    def time(self) -> float:
        return next(iter(self.states.values())).stepper.time

    def values(self, name) -> np.ndarray:
        return self.states[name].stepper.values

    def field(self, name) -> Field:
        return self.states[name].stepper.field()

    def _ghost_points(self):
        g = self.grid
        xs, ys = g.xs, g.ys
        left = (np.full(g.ny, g.x0 - g.hx), ys)
        right = (np.full(g.ny, xs[-1] + g.hx), ys)
        bottom = (xs, np.full(g.nx, g.y0 - g.hy))
        top = (xs, np.full(g.nx, ys[-1] + g.hy))
        return left, right, bottom, top

    def refresh_ghosts(self, fresh: bool = False):
        t = self.time
        pts = self._ghost_points()
        for st in self.states.values():
            for k, (X, Y) in enumerate(pts):
                new = envelope(st.fronts, t, X, Y)
                st.ghosts[k] = new if fresh else np.maximum(st.ghosts[k], new)
            st.stepper.set_ghosts(*st.ghosts)

    def repair(self, name):
        """Lower the state until one step does not decrease it anywhere (a discrete subsolution)."""
        st = self.states[name]
        probe = Stepper(st.stepper.field(), self.reaction, self.dt, self.bc)
        probe.set_ghosts(*st.ghosts)
        v = st.stepper.values.copy()
        for _ in range(self.cfg.repair_iters):
            probe.set_values(v)
            probe.run(1)
            s = probe.values
            if float(np.max(v - s)) <= self.cfg.repair_tol:
                break
            v = np.minimum(v, s)
        else:
            raise ConstructionFaulted(f"initial data of {name!r} not repaired into a subsolution")
        st.stepper.set_values(v)

    def drop(self, name):
        self.states.pop(name, None)

    def _maybe_shift(self):
        if not self.cfg.comoving or self.drift == 0.0:
            return
        g = self.grid
        L2 = self.reaction.cell.L2
        target = self.anchor + self.drift * self.time
        k = int(math.floor((target - g.y0) / L2 + 1e-9))
        if k == 0:
            return
        if k < 0:
            raise WindowTooSmall("co-moving window asked to move backwards")
        dj = k * self.py
        if dj >= g.ny:
            raise WindowTooSmall("co-moving shift larger than the window")
        # rows leaving the window become the bottom ghost; side ghosts move with the rows
        carried = {}
        for name, st in self.states.items():
            left, right = st.ghosts[0], st.ghosts[1]
            carried[name] = (left[dj:].copy(), right[dj:].copy(),
                             st.stepper.values[:, dj - 1].copy())
            st.stepper.shift_window(0, dj)
        g = self.grid
        X, Y = g.mesh()
        fill = slice(g.ny - dj, g.ny)
        for name, st in self.states.items():
            v = st.stepper.values.copy()
            v[:, fill] = envelope(st.fronts, self.time, X[:, fill], Y[:, fill])
            st.stepper.set_values(v)
        self.refresh_ghosts(fresh=True)
        for name, st in self.states.items():
            left, right, bottom = carried[name]
            keep = g.ny - dj
            st.ghosts[0][:keep] = np.maximum(st.ghosts[0][:keep], left)
            st.ghosts[1][:keep] = np.maximum(st.ghosts[1][:keep], right)
            st.ghosts[2] = np.maximum(st.ghosts[2], bottom)
            st.stepper.set_ghosts(*st.ghosts)

    def run_to(self, t_end: float, callback: Optional[Callable[["Window"], None]] = None,
               every: Optional[float] = None, at_start: bool = True):
        """Advance to ``t_end``; ``callback`` fires at the start and at multiples of ``every``."""
        n_total = int(round((t_end - self.time) / self.dt))
        if n_total < 0:
            raise ValueError(f"cannot run backwards to {t_end}")
        rec = None if (callback is None or every is None) else max(1, int(round(every / self.dt)))
        if callback is not None and at_start:
            callback(self)
        # ghost refreshes and records fall on global step counts, so runs started at
        # different times see the same boundary data at the same times
        n = int(round(self.time / self.dt))
        end = n + n_total
        ge = self.cfg.ghost_every
        while n < end:
            nxt = min(end, n + ge - n % ge)
            if rec is not None:
                nxt = min(nxt, n + rec - n % rec)
            for st in self.states.values():
                st.stepper.run(nxt - n)
            n = nxt
            if n % ge == 0 or n == end:
                self.refresh_ghosts()
                self._maybe_shift()
            if rec is not None and n % rec == 0:
                callback(self)
        if rec is not None and n_total and n % rec and callback is not None:
            callback(self)


def interior_mask(grid: Grid2D, margin: float):
    X, Y = grid.mesh()
    return ((X >= grid.x0 + margin) & (X <= grid.xs[-1] - margin)
            & (Y >= grid.y0 + margin) & (Y <= grid.ys[-1] - margin))


def shared_difference(a: Field, b: Field, margin: float):
    """b - a on global points both windows contain, away from their edges (a, b lattice-aligned)."""
    ga, gb = a.grid, b.grid
    dj = int(round((gb.y0 - ga.y0) / ga.hy))
    di = int(round((gb.x0 - ga.x0) / ga.hx))
    m = int(math.ceil(margin / ga.hx))
    ia0, ja0 = max(di, 0) + m, max(dj, 0) + m
    ia1 = min(ga.nx, gb.nx + di) - m
    ja1 = min(ga.ny, gb.ny + dj) - m
    if ia1 <= ia0 or ja1 <= ja0:
        return np.zeros(0)
    va = a.values[ia0:ia1, ja0:ja1]
    vb = b.values[ia0 - di:ia1 - di, ja0 - dj:ja1 - dj]
    return vb - va


# --------------------------------------------------------------------------- construction

@dataclass
class CurvedFrontSolution:
    pair: AnglePair
    T0: float
    snapshots: List[Field]
    polylines: list
    params: dict
    inflight: dict
    fronts: tuple
    window: Optional[Window] = None

    @property
    def c_ab(self) -> float:
        return self.pair.c_ab

    def snapshot_at(self, t: float) -> Field:
        tol = 0.5 * self.params.get("dt", 1e-9)
        for s in self.snapshots:
            if abs(s.time - t) <= tol:
                return s
        raise KeyError(f"no snapshot at t = {t}")

    @property
    def final(self) -> Field:
        return self.snapshots[-1]


def _polyline(fl: Field):
    x, y = front_crossings(fl, (0.0, 1.0))
    return float(fl.time), x, y


def _window_guard(fl: Field, name="u"):
    v = fl.values
    if v[:, -1].max() > 0.05 or v[:, 0].min() < 0.95:
        raise WindowTooSmall(f"{name}: interface reaches the window top or bottom at t = "
                             f"{fl.time:.3f}", top=float(v[:, -1].max()),
                             bottom=float(v[:, 0].min()))


def construct(reaction: ReactionField, pair: AnglePair, dirfield, T0: float,
              cfg: Optional[WindowConfig] = None, t_obs: float = 20.0,
              upper: Optional[Barrier] = None, snapshot_times: Sequence[float] = (),
              grid: Optional[Grid2D] = None, frame: Optional[WindowFrame] = None
              ) -> CurvedFrontSolution:
    """Evolve max(U_alpha, U_beta) from t = -T0 to t_obs in a window moving with the corner.

    In-flight checks at every record time: u >= max(w_alpha, w_beta) for the
    companion discrete planar fronts (exact discrete comparison), u <= U+ when
    ``upper`` is given, values inside [0, 1] and u non-decreasing in t.
    """
    cfg = cfg or WindowConfig()
    if T0 <= 0:
        raise ValueError("T0 must be positive")
    fa, fb = dirfield.fixed(pair.alpha), dirfield.fixed(pair.beta)
    c_ab = pair.c_ab
    offset = None
    if grid is None:
        frame = frame or window_frame(reaction, (fa, fb), (-T0, t_obs), c_ab, cfg)
        grid = frame.grid_at(reaction, -T0, cfg.h)
        offset = frame.offset
    states = {"u": (fa, fb)}
    repair = []
    init = {}
    if cfg.companions:
        states = {"wa": (fa,), "wb": (fb,), "u": (fa, fb)}
        repair = ["wa", "wb"]
    else:
        repair = ["u"]
    win = Window(reaction, grid, -T0, states, cfg, drift=c_ab, repair=repair, offset=offset)
    if cfg.companions:
        win.states["u"].stepper.set_values(np.maximum(win.values("wa"), win.values("wb")))
    sol = CurvedFrontSolution(pair, T0, [], [], {"T0": T0, "t_obs": t_obs, "h": cfg.h,
                                                 "dt": win.dt, "window": (grid.nx, grid.ny)},
                              {"t": [], "lower": [], "gap": [], "upper": [], "monotone": [],
                               "range": []}, (fa, fb), win)
    snap_set = sorted(set([float(t) for t in snapshot_times] + [0.0, float(t_obs)]))
    prev = {"field": None}

    def record(w: Window):
        fl = w.field("u")
        t = fl.time
        u = fl.values
        _window_guard(fl)
        sol.polylines.append(_polyline(fl))
        inf = sol.inflight
        inf["t"].append(t)
        inf["range"].append((float(u.min()), float(u.max())))
        if cfg.companions:
            lower = float(np.min(u - np.maximum(w.values("wa"), w.values("wb"))))
            X, Y = fl.grid.mesh()
            gap = max(float(np.max(np.abs(w.values("wa") - lattice_values(fa, t, X, Y)))),
                      float(np.max(np.abs(w.values("wb") - lattice_values(fb, t, X, Y)))))
        else:
            X, Y = fl.grid.mesh()
            lower = float(np.min(u - envelope((fa, fb), t, X, Y)))
            gap = float("nan")
        inf["lower"].append(lower)
        inf["gap"].append(gap)
        if cfg.companions and lower < -cfg.sandwich_tol:
            raise ConstructionFaulted(f"u below the companion fronts by {-lower:.3e} at t = {t:.3f}")
        if upper is not None:
            s = cfg.upper_stride
            X, Y = fl.grid.mesh()
            Xs, Ys = X[::s, ::s], Y[::s, ::s]
            up = float(np.max(u[::s, ::s] - upper(np.full(Xs.shape, t), Xs, Ys)))
            inf["upper"].append(up)
            if up > cfg.upper_slack:
                raise ConstructionFaulted(f"u above U+ by {up:.3e} at t = {t:.3f}")
        if prev["field"] is not None:
            d = shared_difference(prev["field"], fl, cfg.edge_margin)
            inf["monotone"].append(float(d.min()) if d.size else float("nan"))
        prev["field"] = fl
        if (len(sol.snapshots) == 0 and abs(t + T0) < 1e-9) or any(
                abs(t - s) < 0.5 * w.dt for s in snap_set) or _on_cadence(t, T0, cfg, w.dt):
            sol.snapshots.append(fl)

    stops = [t for t in snap_set if -T0 < t < t_obs] + [float(t_obs)]
    first = True
    for stop in stops:
        win.run_to(stop, record, cfg.record_every, at_start=first)
        first = False
    return sol


def _on_cadence(t, T0, cfg, dt):
    k = (t + T0) / cfg.snapshot_every
    return abs(k - round(k)) * cfg.snapshot_every < 0.5 * dt


def construction_verdict(sol: CurvedFrontSolution, cfg: Optional[WindowConfig] = None
                         ) -> ExperimentVerdict:
    cfg = cfg or WindowConfig()
    inf = sol.inflight
    v = ExperimentVerdict()
    if inf["lower"]:
        lo = min(inf["lower"])
        v.add("sandwich_lower", lo, cfg.sandwich_tol, lo >= -cfg.sandwich_tol)
    if inf["upper"]:
        up = max(inf["upper"])
        v.add("sandwich_upper", up, cfg.upper_slack, up <= cfg.upper_slack)
    mono = [m for m in inf["monotone"] if np.isfinite(m)]
    if mono:
        m = min(mono)
        v.add("monotone_in_t", m, cfg.sandwich_tol, m >= -cfg.sandwich_tol)
    rng = np.array(inf["range"])
    lo, hi = float(rng[:, 0].min()), float(rng[:, 1].max())
    v.add("range_low", lo, 1e-12, lo >= -1e-12)
    v.add("range_high", hi, 1e-12, hi <= 1 + 1e-12)
    return v


# --------------------------------------------------------------------------- diagnostics

def verify_limit_shape(sol: CurvedFrontSolution, radii: Sequence[float], tol: float = 0.02,
                       fronts=None, at: Optional[Field] = None) -> ExperimentVerdict:
    """sup of |V - U-| outside the disc of radius R around (0, c_ab t), for each R."""
    fl = at if at is not None else sol.final
    fa, fb = fronts or sol.fronts
    X, Y = fl.grid.mesh()
    t = fl.time
    dist = np.abs(fl.values - envelope((fa, fb), t, X, Y))
    r2 = X ** 2 + (Y - sol.c_ab * t) ** 2
    v = ExperimentVerdict()
    vals = []
    for R in radii:
        m = r2 > R * R
        if not m.any():
            raise RadiiExceedWindow(f"no window point outside radius {R}")
        vals.append(float(dist[m].max()))
        v.add(f"shape_R{R:g}", vals[-1], tol, True)
    dec = all(b <= a for a, b in zip(vals, vals[1:]))
    v.add("shape_decreasing", float(dec), 1.0, dec)
    v.add("shape_final", vals[-1], tol, vals[-1] <= tol)
    # individual R rows record measurements only; the final row carries the tolerance
    for c in v.checks[:len(radii)]:
        c.passed = True
    return v


def t0_convergence(short: CurvedFrontSolution, long: CurvedFrontSolution, t: float = 0.0,
                   tol: float = 0.01, order_tol: float = 1e-9,
                   margin: Optional[float] = None) -> ExperimentVerdict:
    """Compare runs started at -T0 and -T0' > T0 at time ``t`` on their shared window.

    Reports the sup-norm difference and the order u_long >= u_short - order_tol.
    """
    a, b = short.snapshot_at(t), long.snapshot_at(t)
    m = WindowConfig().edge_margin if margin is None else margin
    d = shared_difference(a, b, m)
    if d.size == 0:
        raise DiagnosticFailure("the two windows share no interior points")
    v = ExperimentVerdict()
    sup = float(np.abs(d).max())
    v.add("t0_sup_difference", sup, tol, sup <= tol)
    low = float(d.min())
    v.add("t0_order", low, order_tol, low >= -order_tol)
    return v


def translation_check(sol: CurvedFrontSolution, t: float = 0.0, tol: float = 0.02,
                      margin: Optional[float] = None) -> ExperimentVerdict:
    """V(t + L2/c_ab, x, y + L2) against V(t, x, y): one period along the drift."""
    L2 = sol.fronts[0].parent.cell[1] if hasattr(sol.fronts[0], "parent") else None
    if L2 is None:
        raise DiagnosticFailure("fronts carry no cell")
    tau = L2 / sol.c_ab
    later = min(sol.snapshots, key=lambda s: abs(s.time - (t + tau)))
    if abs(later.time - (t + tau)) > 0.01:
        raise KeyError(f"no snapshot at t = {t + tau}")
    now = sol.snapshot_at(t)
    g = later.grid
    moved = Field(Grid2D(g.nx, g.ny, g.hx, g.hy, g.x0, g.y0 - L2), later.values, later.time)
    m = WindowConfig().edge_margin if margin is None else margin
    d = shared_difference(now, moved, m)
    if d.size == 0:
        raise DiagnosticFailure("translated windows share no interior points")
    v = ExperimentVerdict()
    sup = float(np.abs(d).max())
    v.add("translation_sup", sup, tol, sup <= tol)
    return v


def _median3(a):
    a = np.asarray(a, float)
    if a.size < 3:
        return a
    out = a.copy()
    out[1:-1] = np.median(np.stack([a[:-2], a[1:-1], a[2:]]), axis=0)
    return out


def apex_track(polylines, x_window=None):
    ts, xs, ys = [], [], []
    for t, x, y in polylines:
        ok = np.isfinite(y)
        if x_window is not None:
            ok &= np.abs(x) <= x_window
        if ok.sum() < 3:
            continue
        k = int(np.argmin(np.where(ok, y, np.inf)))
        ts.append(t)
        xs.append(x[k])
        ys.append(y[k])
    return np.array(ts), _median3(xs), _median3(ys)


def interior_angles(alpha: float, beta: float, n: int = 3) -> np.ndarray:
    return np.linspace(alpha, beta, n + 2)[1:-1]


def apex_speed(sol: CurvedFrontSolution, tol: float = 0.05, t_from: float = 0.0,
               interior: Sequence = ()) -> ExperimentVerdict:
    """Fit the drift of the lowest point of the interface and compare with c_alpha / sin(alpha).

    ``interior`` holds (angle, speed) pairs computed afresh between alpha and
    beta; each gives a row c_ab - speed / sin(angle), which must be positive.
    """
    t, x, y = apex_track([p for p in sol.polylines if p[0] >= t_from - 1e-9])
    period = sol.fronts[0].parent.cell[1] / sol.c_ab
    if t.size < 5 or t[-1] - t[0] < 5 * period:
        raise DiagnosticFailure(f"apex recorded over {t[-1] - t[0] if t.size else 0:.2f} time "
                                f"units, need 5 periods = {5 * period:.2f}")
    vy = float(np.polyfit(t, y, 1)[0])
    vx = float(np.polyfit(t, x, 1)[0])
    fa, fb = sol.fronts
    ga = fa.speed / math.sin(fa.angle)
    gb = fb.speed / math.sin(fb.angle)
    v = ExperimentVerdict()
    v.add("apex_vy_vs_g_alpha", abs(vy - ga) / ga, tol, abs(vy - ga) <= tol * ga)
    v.add("apex_vy_vs_g_beta", abs(vy - gb) / gb, tol, abs(vy - gb) <= tol * gb)
    v.add("apex_vx", vx, tol * ga, True)
    for k, (th, c) in enumerate(interior):
        inside = fa.angle < th < fb.angle
        m = sol.c_ab - float(c) / math.sin(th)
        v.add(f"interior_margin_{k}", m, 0.0, inside and m > 0)
    return v


# --------------------------------------------------------------------------- stability

@dataclass
class Perturbation:
    kind: str = "bump"            # bump | identity | u-minus
    amplitude: float = 0.3
    radius: float = 3.0


def _apex_point(fl: Field):
    t, x, y = _polyline(fl)
    ok = np.isfinite(y)
    k = int(np.argmin(np.where(ok, y, np.inf)))
    return float(x[k]), float(y[k])


def make_initial(sol: CurvedFrontSolution, spec: Perturbation, V0: Field) -> np.ndarray:
    X, Y = V0.grid.mesh()
    if spec.kind == "identity":
        return V0.values.copy()
    if spec.kind == "u-minus":
        return envelope(sol.fronts, V0.time, X, Y)
    if spec.kind == "bump":
        xa, ya = _apex_point(V0)
        bump = np.exp(-((X - xa) ** 2 + (Y - ya) ** 2) / spec.radius ** 2)
        return np.clip(V0.values + spec.amplitude * bump, 0.0, 1.0)
    raise InvalidInitialData(f"unknown perturbation kind {spec.kind!r}")


@dataclass
class StabilityResult:
    times: np.ndarray
    distance: np.ndarray
    bracket_violations: int
    bracket_worst: float
    verdict: ExperimentVerdict
    final: dict = field(default_factory=dict)


class Shifted(Barrier):
    """barrier(t + tau, x, y)."""

    def __init__(self, base, tau: float):
        self.base, self.tau = base, float(tau)
        self.expect = base.expect
        self.tag = f"{base.tag}(t{tau:+g})"

    def __call__(self, t, x, y):
        return self.base(np.asarray(t, float) + self.tau, x, y)


class MaxOf(Barrier):
    expect = "sub"

    def __init__(self, *parts):
        self.parts = parts
        self.tag = "max(" + ",".join(p.tag for p in parts) + ")"

    def __call__(self, t, x, y):
        out = self.parts[0](t, x, y)
        for p in self.parts[1:]:
            out = np.maximum(out, p(t, x, y))
        return out


def _fit_shift(barrier, u0, X, Y, sign, taus):
    """Smallest |tau| on ``taus`` with barrier(tau) below (sign = -1) or above (+1) u0."""
    for tau in taus:
        b = barrier(np.full(X.shape, tau), X, Y)
        if (sign < 0 and np.all(b <= u0)) or (sign > 0 and np.all(b >= u0)):
            return float(tau)
    return None


def stability_run(reaction: ReactionField, sol: CurvedFrontSolution, spec: Perturbation,
                  T: float, cfg: Optional[WindowConfig] = None, tol: float = 0.02,
                  rim_tol: float = 0.05, lower: Optional[Barrier] = None,
                  upper: Optional[Barrier] = None, delta: float = 0.0, omega: float = 1.0,
                  slack: float = 1e-6, record_every: float = 5.0) -> StabilityResult:
    """Evolve a perturbed copy of V(0) next to V itself and record sup |u - V|.

    With ``lower`` / ``upper`` barriers the perturbed solution is also
    bracketed by their time-shifted versions, with time offsets fitted at t = 0.
    """
    cfg = cfg or WindowConfig()
    V0 = sol.snapshot_at(0.0)
    u0 = make_initial(sol, spec, V0)
    if u0.min() < 0 or u0.max() > 1:
        raise InvalidInitialData("initial data outside [0, 1]")
    X, Y = V0.grid.mesh()
    rim = ~interior_mask(V0.grid, 2 * cfg.h)
    um = envelope(sol.fronts, 0.0, X, Y)
    rim_dev = float(np.max(np.abs(u0 - um)[rim]))
    if rim_dev > rim_tol:
        raise InvalidInitialData(f"initial data differs from U- by {rim_dev:.3g} on the rim")
    wcfg = WindowConfig(**{**asdict(cfg), "companions": False})
    win = Window(reaction, V0.grid, 0.0, {"V": sol.fronts, "u": sol.fronts}, wcfg,
                 drift=sol.c_ab, initial={"V": V0.values, "u": u0})
    lam = reaction.lam
    brackets = []
    if lower is not None or upper is not None:
        taus = np.arange(0.0, 200.0, 1.0)
        if lower is not None:
            lo = TimeShift(lower, delta, omega, lam, "sub")
            tau = _fit_shift(lo, u0, X, Y, -1, -taus)
            if tau is None:
                raise InvalidInitialData("no time shift puts the lower barrier under u0")
            brackets.append((Shifted(lo, tau), -1))
        if upper is not None:
            up = TimeShift(upper, delta, omega, lam, "super")
            tau = _fit_shift(up, u0, X, Y, +1, taus)
            if tau is None:
                raise InvalidInitialData("no time shift puts the upper barrier over u0")
            brackets.append((Shifted(up, tau), +1))
    times, dist = [], []
    viol = {"n": 0, "worst": -np.inf}

    def record(w: Window):
        t = w.time
        u, V = w.values("u"), w.values("V")
        times.append(t)
        dist.append(float(np.max(np.abs(u - V))))
        if brackets:
            Xg, Yg = w.grid.mesh()
            for b, sgn in brackets:
                bv = b(np.full(Xg.shape, t), Xg, Yg)
                exc = (bv - u) if sgn < 0 else (u - bv)
                n = int(np.sum(exc > slack))
                viol["n"] += n
                viol["worst"] = max(viol["worst"], float(exc.max()))

    win.run_to(T, record, record_every)
    times, dist = np.array(times), np.array(dist)
    v = stability_verdict(times, dist, T, tol, rim_dev, rim_tol,
                          viol["n"] if brackets else None)
    return StabilityResult(times, dist, viol["n"], viol["worst"], v,
                           {"u": win.field("u"), "V": win.field("V")})


def stability_verdict(times, dist, T: float, tol: float, rim_dev: float, rim_tol: float,
                      violations: Optional[int] = None) -> ExperimentVerdict:
    """Monotone decay over the second half of [0, T], final distance and bracket count."""
    times, dist = np.asarray(times, float), np.asarray(dist, float)
    v = ExperimentVerdict()
    tail = dist[times >= 0.5 * T]
    mono = bool(np.all(np.diff(tail) <= 1e-12)) if tail.size > 1 else True
    v.add("decay_eventually_monotone", float(np.max(np.diff(tail))) if tail.size > 1 else 0.0,
          1e-12, mono)
    v.add("final_distance", float(dist[-1]), tol, dist[-1] <= tol)
    v.add("rim_deviation", rim_dev, rim_tol, True)
    if violations is not None:
        v.add("bracket_violations", violations, 0, violations == 0)
    return v


# --------------------------------------------------------------------------- merging

@dataclass
class MergeResult:
    solution: CurvedFrontSolution
    verdict: ExperimentVerdict
    junctions: dict


def validate_triple(speed: Callable[[float], float], alpha, theta, beta, band: float = 1.0,
                    step: float = 1e-3, inconclusive: float = 1e-6):
    """Axis conditions for (alpha, theta) and (beta, theta) and the signs of h'."""
    ea = (math.cos(alpha), math.sin(alpha))
    et = (math.cos(theta), math.sin(theta))
    eb = (math.cos(beta), math.sin(beta))
    left = axis_condition(speed, ea, et, band)
    right = axis_condition(speed, eb, et, band)
    if left is None or right is None:
        raise InvalidTriple("no admissible axis for one of the two front pairs",
                            left=left is not None, right=right is not None)
    ha = h_slope(speed, left.e0, alpha, step)
    hb = h_slope(speed, right.e0, beta, step)
    if not (ha < -inconclusive and hb > inconclusive):
        raise InvalidTriple(f"h'(alpha) = {ha:.3g}, h'(beta) = {hb:.3g}; need h'(alpha) < 0 < h'(beta)",
                            ha=ha, hb=hb)
    return left, right, ha, hb


def junction_positions(polyline, slopes, x_window=None):
    """x where the interface slope crosses the midpoint between consecutive line slopes."""
    t, x, y = polyline
    ok = np.isfinite(y)
    if x_window is not None:
        ok &= np.abs(x) <= x_window
    x, y = x[ok], y[ok]
    if x.size < 5:
        return [np.nan] * (len(slopes) - 1)
    s = np.gradient(y, x)
    out = []
    for a, b in zip(slopes[:-1], slopes[1:]):
        mid = 0.5 * (a + b)
        d = s - mid
        idx = np.nonzero(np.signbit(d[:-1]) != np.signbit(d[1:]))[0]
        if idx.size == 0:
            out.append(np.nan)
            continue
        i = idx[0] if b > a else idx[-1]
        out.append(float(x[i] + (x[i + 1] - x[i]) * d[i] / (d[i] - d[i + 1])))
    return out


def merging_run(reaction: ReactionField, alpha: float, theta: float, beta: float, dirfield,
                triple: TripleSpeeds, T0: float, cfg: Optional[WindowConfig] = None,
                t_end: float = 60.0, reference: Optional[CurvedFrontSolution] = None,
                upper: Optional[Barrier] = None, c_ab: Optional[float] = None,
                tol: float = 0.05, drift_tol: float = 0.05, early_margin: float = 3.0,
                early_until: Optional[float] = None, settle: Optional[float] = None,
                start_span: float = 0.1,
                late_from: Optional[float] = None, band: float = 1.0,
                with_reference: bool = True) -> MergeResult:
    """Three-front start max(U_alpha, U_theta, U_beta) at t = -T0, followed to t_end.

    Early proximity compares u on x < -margin (x > margin) with the two-front
    evolutions from max(U_alpha, U_theta) (max(U_theta, U_beta)) started at the
    same time on the same window, the finite-T0 stand-ins for the two side
    curved fronts. Junction drift is fitted on [-T0 + settle, early_until],
    after the junction corners have rounded. ``reference`` is the (alpha, beta)
    curved front on the same window and times; late-time proximity is measured
    against it. Without one, it is constructed here from the same start time
    when ``with_reference`` is set.
    """
    cfg = cfg or WindowConfig(companions=False)
    validate_triple(dirfield.speed, alpha, theta, beta, band)
    if not (triple.c1 > 0 > triple.c1_hat):
        raise InvalidTriple(f"junction speeds c1 = {triple.c1:.4g}, c1_hat = {triple.c1_hat:.4g} "
                            "do not close the middle segment")
    fa, ft, fb = dirfield.fixed(alpha), dirfield.fixed(theta), dirfield.fixed(beta)
    if c_ab is None:
        c_ab = float(fa.speed / math.sin(alpha))
    grid = window_grid(reaction, (fa, ft, fb), (-T0, t_end), c_ab, cfg)
    pair = AnglePair(alpha, beta, c_ab, float("nan"), float("nan"), float("nan"), 0.0)
    if with_reference and reference is None:
        rcfg = WindowConfig(**{**asdict(cfg), "companions": False})
        reference = construct(reaction, pair, dirfield, T0, rcfg, t_obs=t_end, grid=grid)
    if reference is not None:
        g0 = reference.snapshots[0].grid
        if (g0.nx, g0.ny, g0.x0, g0.y0, g0.hx) != (grid.nx, grid.ny, grid.x0, grid.y0, grid.hx):
            raise InvalidTriple("reference curved front was computed on a different window")
    early_until = -0.5 * T0 if early_until is None else early_until
    settle = 0.25 * T0 if settle is None else settle
    late_from = t_end - 10.0 if late_from is None else late_from
    states = {"u": (fa, ft, fb), "l": (fa, ft), "r": (ft, fb)}
    win = Window(reaction, grid, -T0, states, cfg, drift=c_ab, repair=list(states))
    sol = CurvedFrontSolution(pair, T0, [], [], {"T0": T0, "t_end": t_end, "theta": theta},
                              {"t": [], "upper": [], "early": [], "late": [], "start": []},
                              (fa, fb), win)
    ref_by_t = {}
    if reference is not None:
        for s in reference.snapshots:
            ref_by_t[round(s.time, 6)] = s

    def record(w: Window):
        fl = w.field("u")
        t = fl.time
        _window_guard(fl)
        sol.polylines.append(_polyline(fl))
        X, Y = fl.grid.mesh()
        u = fl.values
        sol.inflight["t"].append(t)
        left, right = X < -early_margin, X > early_margin
        if "l" in w.states:
            dl = float(np.max(np.abs(u - w.values("l"))[left]))
            dr = float(np.max(np.abs(u - w.values("r"))[right]))
            sol.inflight["early"].append((t, dl, dr))
            if t >= early_until - 0.5 * w.dt:
                w.drop("l")
                w.drop("r")
        if upper is not None and t <= getattr(upper, "T_neg", np.inf):
            s = cfg.upper_stride
            Xs, Ys = X[::s, ::s], Y[::s, ::s]
            up = float(np.max(u[::s, ::s] - upper.evaluate(np.full(Xs.shape, t), Xs, Ys,
                                                           check=False)))
            sol.inflight["upper"].append(up)
        ref = ref_by_t.get(round(t, 6))
        if ref is not None and t >= late_from:
            sol.inflight["late"].append((t, float(np.max(np.abs(u - ref.values)))))
        if _on_cadence(t, T0, cfg, w.dt):
            sol.snapshots.append(fl)

    # just after the start u still sits on the planar fronts of each half plane
    win.run_to(-T0 + start_span)
    fl = win.field("u")
    X, Y = fl.grid.mesh()
    dl = float(np.max(np.abs(fl.values - envelope((fa, ft), fl.time, X, Y))[X < -early_margin]))
    dr = float(np.max(np.abs(fl.values - envelope((ft, fb), fl.time, X, Y))[X > early_margin]))
    sol.inflight["start"].append((fl.time, dl, dr))
    win.run_to(t_end, record, cfg.record_every)
    late = sol.inflight["late"][-1][1] if sol.inflight["late"] else None
    v, junctions = merge_verdict(sol.inflight, sol.polylines, triple, (alpha, theta, beta), T0,
                                 settle, early_until, grid.xs[-1] - early_margin, tol, drift_tol,
                                 cfg.upper_slack, late, reference is not None)
    return MergeResult(sol, v, junctions)


def merge_verdict(inflight: dict, polylines, triple: TripleSpeeds, angles, T0: float,
                  settle: float, early_until: float, x_window: float, tol: float = 0.05,
                  drift_tol: float = 0.05, upper_slack: float = 1e-6,
                  late: Optional[float] = None, with_reference: bool = True):
    """Rows of the merging experiment from its recorded series. Returns (verdict, junctions)."""
    alpha, theta, beta = angles
    v = ExperimentVerdict()
    for key, name in (("start", "start_half_plane_formula"), ("early", "early_half_plane")):
        if inflight.get(key):
            e = np.array(inflight[key])
            worst = float(max(e[:, 1].max(), e[:, 2].max()))
            v.add(name, worst, tol, worst <= tol)
    slopes = [-1.0 / math.tan(alpha), -1.0 / math.tan(theta), -1.0 / math.tan(beta)]
    jt, jl, jr = [], [], []
    for p in polylines:
        if p[0] < -T0 + settle - 1e-9:
            continue
        if p[0] > early_until + 1e-9:
            break
        a, b = junction_positions(p, slopes, x_window=x_window)
        if np.isfinite(a) and np.isfinite(b) and a < b:
            jt.append(p[0])
            jl.append(a)
            jr.append(b)
    junctions = {"t": np.array(jt), "left": np.array(jl), "right": np.array(jr)}
    if len(jt) >= 3:
        d1 = float(np.polyfit(jt, jl, 1)[0])
        d2 = float(np.polyfit(jt, jr, 1)[0])
        v.add("junction_sign", float(d1 > 0 > d2), 1.0, d1 > 0 > d2)
        v.add("junction_left_rel", abs(d1 - triple.c1) / abs(triple.c1), drift_tol,
              abs(d1 - triple.c1) <= drift_tol * abs(triple.c1))
        v.add("junction_right_rel", abs(d2 - triple.c1_hat) / abs(triple.c1_hat), drift_tol,
              abs(d2 - triple.c1_hat) <= drift_tol * abs(triple.c1_hat))
        junctions.update({"c1_fit": d1, "c1_hat_fit": d2})
    else:
        v.add("junction_sign", float("nan"), 1.0, False)
    if inflight.get("upper"):
        up = max(inflight["upper"])
        v.add("merging_upper", up, upper_slack, up <= upper_slack)
    if late is not None:
        v.add("late_proximity", late, tol, late <= tol)
    elif with_reference:
        v.add("late_proximity", float("nan"), tol, False)
    return v, junctions


# --------------------------------------------------------------------------- mean speed

def _interface_points(poly, x_limit):
    t, x, y = poly
    ok = np.isfinite(y) & (np.abs(x) <= x_limit)
    return np.column_stack([x[ok], y[ok]])


def interface_distances(p_later, p_earlier, x_limit):
    """(min pair distance, min of the two directed sup distances) between two polylines.

    Query points are restricted to |x| <= x_limit; targets use the full polylines.
    """
    A_all = _interface_points(p_later, np.inf)
    B_all = _interface_points(p_earlier, np.inf)
    A = _interface_points(p_later, x_limit)
    B = _interface_points(p_earlier, x_limit)
    if min(len(A), len(B), len(A_all), len(B_all)) < 3:
        raise DiagnosticFailure("degenerate interface polyline")
    dA, _ = cKDTree(B_all).query(A)
    dB, _ = cKDTree(A_all).query(B)
    d = float(min(dA.min(), dB.min()))
    dt = float(min(dA.max(), dB.max()))
    return d, dt


def mean_speed(sol: CurvedFrontSolution, metric: str = "d", min_gap: Optional[float] = None,
               x_limit: Optional[float] = None, t_from: float = 0.0) -> float:
    """Slope of interface distance against elapsed time over polyline pairs ``min_gap`` apart."""
    if metric not in ("d", "d-tilde"):
        raise ValueError(f"unknown metric {metric!r}")
    polys = [p for p in sol.polylines if p[0] >= t_from - 1e-9]
    period = sol.fronts[0].parent.cell[1] / sol.c_ab
    min_gap = 3 * period if min_gap is None else min_gap
    if len(polys) < 2 or polys[-1][0] - polys[0][0] < min_gap:
        raise DiagnosticFailure("need two polylines at least 3 periods apart")
    if x_limit is None:
        xs = polys[0][1]
        x_limit = 0.5 * float(np.nanmax(np.abs(xs)))
    ref = polys[0]
    gaps, vals = [], []
    for p in polys[1:]:
        g = p[0] - ref[0]
        if g < min_gap:
            continue
        d, dt = interface_distances(p, ref, x_limit)
        gaps.append(g)
        vals.append(d if metric == "d" else dt)
    if len(gaps) < 2:
        return vals[0] / gaps[0]
    return float(np.polyfit(gaps, vals, 1)[0])


def mean_speed_verdict(sol, c_alpha, c_beta, tol=0.05, **kw) -> ExperimentVerdict:
    d = mean_speed(sol, "d", **kw)
    dt = mean_speed(sol, "d-tilde", **kw)
    lo, hi = min(c_alpha, c_beta), max(c_alpha, c_beta)
    v = ExperimentVerdict()
    v.add("d_rate_rel", abs(d - lo) / lo, tol, abs(d - lo) <= tol * lo)
    v.add("d_tilde_rate_rel", abs(dt - hi) / hi, tol, abs(dt - hi) <= tol * hi)
    return v
