"""Command line entry point: one subcommand per experiment over a flat dotted config.

Every subcommand simulates, writes its artifacts, then computes its verdict
from those artifacts alone. ``replay`` runs the same evaluation on a stored
run directory, so a replay is bit-identical unless an artifact changed.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import platform
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from types import SimpleNamespace
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .barriers import (UMinus, build_interface_curve, make_lower_barrier, make_U_plus,
                       read_residual_summary, residual_certify, search_eps_rho, SamplePlan,
                       write_residual_report)
from .curved_front import (CurvedFrontSolution, ExperimentVerdict, Perturbation, WindowConfig,
                           apex_speed, construct, construction_verdict, interior_angles,
                           mean_speed_verdict, merge_verdict, merging_run, read_polylines,
                           read_verdict,
                           stability_run, stability_verdict, t0_convergence, translation_check,
                           verify_limit_shape, window_frame, window_grid, write_polylines,
                           write_verdict)
from .direction_atlas import (AnglePair, TripleSpeeds, build_speed_curve, find_angle_pairs,
                              pair_at_level, read_pairs, read_speed_curve, triple_junction,
                              write_pairs, write_speed_curve)
from .errors import ConfigError, FrontError, MissingArtifact, NoPairs
from .media import build_reaction, verify_assumptions
from .pde_solver import Field, read_snapshot, write_snapshot, write_timeseries
from .pulsating import (DirectionField, FrontConfig, PlanarFront, PlanarFrontSet,
                        TravelingWaveField, compute_pulsating_front, freeze_direction,
                        read_profile, write_profile)

NAN = float("nan")

DEFAULTS: Dict[str, object] = {
    "run.seed": 0,
    "output.dir": "run",
    "output.snapshot_every": 5.0,
    "medium.kind": "homogeneous-cubic",
    "medium.L1": 1.0,
    "medium.L2": 1.0,
    "medium.threshold": 0.25,
    "medium.amp": 0.0,
    "medium.kx": 1,
    "medium.ky": 1,
    "medium.px": 0.0,
    "medium.py": 0.0,
    "medium.diag": 0.0,
    "medium.nx": 32,
    "medium.ny": 32,
    "medium.nu": 64,
    "medium.tolerance": 1e-8,
    "solver.h": 0.1,
    "solver.cfl": 0.9,
    "solver.half_width": 20.0,
    "solver.below": 15.0,
    "solver.above": 20.0,
    "solver.edge_margin": 3.0,
    "solver.record_every": 1.0,
    "solver.ghost_every": 20,
    "solver.sandwich_tol": 1e-9,
    "solver.upper_slack": 1e-6,
    "solver.repair_tol": 1e-15,
    "front.h": 0.1,
    "front.cfl": 1.0,
    "front.length": 40.0,
    "front.max_width_periods": 12,
    "front.xi_step": 0.05,
    "front.burn_in": 30.0,
    "front.fit_time": 30.0,
    "front.ci_limit": 0.02,
    "atlas.field": "computed",
    "atlas.n_angles": 13,
    "atlas.arc_lo": 0.15,
    "atlas.arc_hi": math.pi - 0.15,
    "atlas.angles": (),
    "atlas.levels": (),
    "atlas.level_grid": 8,
    "atlas.match_tol": 0.005,
    "atlas.pair": 0,
    "experiment.angle": math.pi / 2,
    "experiment.speed_tol": 0.02,
    "experiment.tail_tol": 0.05,
    "experiment.g_tol": 0.02,
    "experiment.alpha": NAN,
    "experiment.beta": NAN,
    "experiment.theta": NAN,
    "experiment.alpha1": NAN,
    "experiment.beta1": NAN,
    "experiment.eps": NAN,
    "experiment.varrho": NAN,
    "experiment.eps_grid": (0.05, 0.02, 0.01),
    "experiment.rho_grid": (0.05, 0.02, 0.01),
    "experiment.curve_rho": 0.2,
    "experiment.fd": 0.025,
    "experiment.samples": 100000,
    "experiment.min_samples": 100000,
    "experiment.search_samples": 10000,
    "experiment.order_samples": 200000,
    "experiment.order_tol": 1e-9,
    "experiment.T0": 40.0,
    "experiment.t_obs": 20.0,
    "experiment.radii": (5.0, 10.0, 15.0, 20.0),
    "experiment.shape_tol": 0.02,
    "experiment.apex_tol": 0.05,
    "experiment.apex_from": 0.0,
    "experiment.interior": 3,
    "experiment.upper": True,
    "experiment.upper_eps": 0.01,
    "experiment.upper_varrho": 0.01,
    "experiment.translation": True,
    "experiment.translation_tol": 0.02,
    "experiment.t0_check": False,
    "experiment.t0_tol": 0.01,
    "experiment.perturbation": "bump",
    "experiment.amplitude": 0.3,
    "experiment.radius": 3.0,
    "experiment.T": 200.0,
    "experiment.stab_tol": 0.02,
    "experiment.rim_tol": 0.05,
    "experiment.brackets": True,
    "experiment.bracket_slack": 1e-6,
    "experiment.delta": 0.0,
    "experiment.omega": 1.0,
    "experiment.stab_record": 5.0,
    "experiment.t_end": 40.0,
    "experiment.band": 2.0,
    "experiment.early_margin": 3.0,
    "experiment.early_until": NAN,
    "experiment.settle": NAN,
    "experiment.merge_tol": 0.05,
    "experiment.drift_tol": 0.05,
    "experiment.metric_tol": 0.05,
    "experiment.mean_from": 0.0,
}

COMMANDS = ("verify-medium", "pulsating", "speed-curve", "find-pairs", "barrier-check",
            "curved-front", "stability", "merge", "mean-speed")


# --------------------------------------------------------------------------- config

def parse_config_text(text: str, source: str = "config") -> Dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment. Values stay strings."""
    out: Dict[str, str] = {}
    for n, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{source}:{n}: expected 'key = value'", line=n)
        key, val = (s.strip() for s in body.split("=", 1))
        if key in out:
            raise ConfigError(f"{key}: given twice ({source}:{n})", key=key)
        out[key] = val
    return out


def _coerce(key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false"):
                raise ValueError(raw)
            return low == "true"
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(float(v) for v in raw.split(",") if v.strip())
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot read {raw!r} as {type(default).__name__}",
                          key=key) from None


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(repr(float(x)) for x in v)
    return str(v)


def resolve_config(raw: Dict[str, str], overrides: Sequence[str] = ()) -> Dict[str, object]:
    """Defaults, then ``raw``, then ``key=value`` overrides. Unknown keys are rejected."""
    merged = dict(raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r}: expected key=value", key=item)
        k, v = (s.strip() for s in item.split("=", 1))
        merged[k] = v
    for k in merged:
        if k not in DEFAULTS:
            raise ConfigError(f"{k}: unknown key", key=k)
    cfg = dict(DEFAULTS)
    for k, v in merged.items():
        cfg[k] = _coerce(k, v, DEFAULTS[k])
    return cfg


def serialize_config(cfg: Dict[str, object]) -> str:
    return "".join(f"{k} = {format_value(v)}\n" for k, v in cfg.items())


def load_config(path: Optional[str], overrides: Sequence[str] = (),
                seed: Optional[int] = None) -> Dict[str, object]:
    raw: Dict[str, str] = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"config: cannot read {path}: {exc.strerror}", key="config") from None
        raw = parse_config_text(text, str(path))
    cfg = resolve_config(raw, overrides)
    if seed is not None:
        cfg["run.seed"] = int(seed)
    return cfg


# --------------------------------------------------------------------------- builders

def _reaction(cfg):
    kind = cfg["medium.kind"]
    if kind == "tabulated":
        raise ConfigError("medium.kind: tabulated media are library-only", key="medium.kind")
    try:
        return build_reaction(kind, cfg["medium.L1"], cfg["medium.L2"], cfg["medium.threshold"],
                              cfg["medium.amp"], cfg["medium.kx"], cfg["medium.ky"],
                              cfg["medium.px"], cfg["medium.py"], cfg["medium.diag"])
    except FrontError as exc:
        raise ConfigError(f"medium.kind: {exc}", key="medium.kind") from None


def _homogeneous(cfg) -> bool:
    return cfg["medium.kind"] == "homogeneous-cubic"


def _oracle_speed(cfg) -> float:
    return (1.0 - 2.0 * cfg["medium.threshold"]) / math.sqrt(2.0)


def _front_cfg(cfg) -> FrontConfig:
    return FrontConfig(h=cfg["front.h"], cfl=cfg["front.cfl"],
                       max_width_periods=cfg["front.max_width_periods"],
                       length=cfg["front.length"], burn_in=cfg["front.burn_in"],
                       fit_time=cfg["front.fit_time"], xi_step=cfg["front.xi_step"],
                       ci_limit=cfg["front.ci_limit"])


def _window_cfg(cfg, **kw) -> WindowConfig:
    base = dict(h=cfg["solver.h"], cfl=cfg["solver.cfl"], half_width=cfg["solver.half_width"],
                below=cfg["solver.below"], above=cfg["solver.above"],
                edge_margin=cfg["solver.edge_margin"], record_every=cfg["solver.record_every"],
                ghost_every=cfg["solver.ghost_every"], sandwich_tol=cfg["solver.sandwich_tol"],
                upper_slack=cfg["solver.upper_slack"], repair_tol=cfg["solver.repair_tol"],
                snapshot_every=cfg["output.snapshot_every"])
    base.update(kw)
    return WindowConfig(**base)


def _oracle_field(cfg) -> TravelingWaveField:
    if not _homogeneous(cfg):
        raise ConfigError("atlas.field: the oracle field needs medium.kind = homogeneous-cubic",
                          key="atlas.field")
    return TravelingWaveField(cfg["medium.threshold"], (cfg["medium.L1"], cfg["medium.L2"]))


def _speed_curve(cfg, r):
    angles = cfg["atlas.angles"] or None
    return build_speed_curve(r, cfg["atlas.n_angles"], (cfg["atlas.arc_lo"], cfg["atlas.arc_hi"]),
                             _front_cfg(cfg), angles)


def _oracle_pair(F: TravelingWaveField, alpha: float, beta: float) -> AnglePair:
    c = F.c
    ga, gb = c / math.sin(alpha), c / math.sin(beta)
    dg = lambda s: -c * math.cos(s) / math.sin(s) ** 2
    # g = c / sin is smallest at pi/2, the interior maximum of sin
    inner = 1.0 if alpha < math.pi / 2 < beta else max(math.sin(alpha), math.sin(beta))
    return AnglePair(alpha, beta, ga, dg(alpha), dg(beta), ga - c / inner, abs(ga - gb) / ga)


def _field_and_pair(cfg, d: Path, r):
    """Direction field and (alpha, beta) pair. Writes pair.csv and, when computed, the curve."""
    alpha, beta = cfg["experiment.alpha"], cfg["experiment.beta"]
    if cfg["atlas.field"] == "oracle":
        F = _oracle_field(cfg)
        if not math.isfinite(alpha):
            raise ConfigError("experiment.alpha: required with atlas.field = oracle",
                              key="experiment.alpha")
        beta = math.pi - alpha if not math.isfinite(beta) else beta
        pair = _oracle_pair(F, alpha, beta)
    elif cfg["atlas.field"] == "computed":
        curve = _speed_curve(cfg, r)
        write_speed_curve(d / "speed_curve.csv", curve)
        F = DirectionField([f for f in curve.fronts if f is not None])
        if math.isfinite(alpha):
            level = float(curve.g_at(alpha))
            pair = pair_at_level(curve, level, cfg["atlas.match_tol"])
            if pair is None:
                raise NoPairs(f"no pair at the level g({alpha}) = {level:.6g}")
            if math.isfinite(beta):
                pair = AnglePair(alpha, beta, level, pair.gpa, float(curve.dg_at(beta)),
                                 pair.margin, abs(float(curve.g_at(beta)) - level) / level)
        else:
            pairs = find_angle_pairs(curve, cfg["atlas.level_grid"], cfg["atlas.levels"],
                                     cfg["atlas.match_tol"])
            write_pairs(d / "pairs.csv", pairs)
            k = cfg["atlas.pair"]
            if not 0 <= k < len(pairs):
                raise NoPairs(f"atlas.pair = {k} but {len(pairs)} pairs were found")
            pair = pairs[k]
    else:
        raise ConfigError(f"atlas.field: {cfg['atlas.field']!r} is not computed or oracle",
                          key="atlas.field")
    write_pairs(d / "pair.csv", [pair])
    return F, pair


def _save_fronts(cfg, d: Path, fronts: Dict[str, object]):
    if cfg["atlas.field"] == "oracle":
        return
    (d / "fronts").mkdir(exist_ok=True)
    for name, fr in fronts.items():
        pf = fr.front if isinstance(fr, PlanarFront) else freeze_direction(fr)
        write_profile(d / "fronts" / f"{name}.prof", pf)


def _load_front(cfg, d: Path, name: str, angle: float):
    if cfg["atlas.field"] == "oracle":
        return _oracle_field(cfg).fixed(angle)
    return PlanarFront(read_profile(_need(d, f"fronts/{name}.prof")))


def _upper_barrier(F, pair: AnglePair, cfg):
    cur = build_interface_curve("convex-psi", pair.alpha, pair.beta, rho=cfg["experiment.curve_rho"])
    return make_U_plus(F, cur, cfg["experiment.upper_eps"], cfg["experiment.upper_varrho"],
                       pair.c_ab)


# --------------------------------------------------------------------------- artifact io

def _need(d: Path, name: str) -> Path:
    p = d / name
    if not p.is_file():
        raise MissingArtifact(f"{name} not found in {d}", path=name)
    return p


def _write_rows(path: Path, header: Sequence[str], rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _read_rows(path: Path) -> List[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _write_kv(path: Path, values: dict):
    _write_rows(path, ["key", "value"], [(k, float(v)) for k, v in values.items()])


def _read_kv(path: Path) -> Dict[str, float]:
    return {r["key"]: float(r["value"]) for r in _read_rows(path)}


def _write_snapshots(d: Path, named: Dict[str, Field]):
    (d / "snapshots").mkdir(exist_ok=True)
    rows = []
    for name, fl in named.items():
        write_snapshot(d / "snapshots" / f"{name}.snap", fl)
        rows.append((name, float(fl.time)))
    _write_rows(d / "snapshots.csv", ["name", "t"], rows)


def _read_snapshot(d: Path, name: str) -> Field:
    return read_snapshot(_need(d, f"snapshots/{name}.snap"))


def _write_inflight(path: Path, inf: dict):
    n = len(inf["t"])
    mono = [NAN] * (n - len(inf["monotone"])) + list(inf["monotone"])
    upper = list(inf["upper"]) or [NAN] * n
    rows = [(inf["t"][k], inf["lower"][k], inf["gap"][k], upper[k], mono[k],
             inf["range"][k][0], inf["range"][k][1]) for k in range(n)]
    _write_rows(path, ["t", "lower", "gap", "upper", "monotone", "range_lo", "range_hi"], rows)


def _read_inflight(path: Path) -> dict:
    rows = _read_rows(path)
    col = lambda k: [float(r[k]) for r in rows]
    upper = col("upper")
    return {"t": col("t"), "lower": col("lower"), "gap": col("gap"),
            "upper": [] if all(math.isnan(u) for u in upper) else upper,
            "monotone": col("monotone"),
            "range": list(zip(col("range_lo"), col("range_hi")))}


# --------------------------------------------------------------------------- verify-medium

def run_verify_medium(cfg, d: Path):
    rep = verify_assumptions(_reaction(cfg), cfg["medium.nx"], cfg["medium.ny"], cfg["medium.nu"],
                             cfg["medium.tolerance"])
    vals = {"H1": rep.integral_H1, "zeros": NAN, "lambda": rep.lambda_measured,
            "sigma": rep.sigma_measured, "M": rep.M_measured}
    _write_rows(d / "assumptions.csv", ["check", "value", "pass"],
                [(k, float(vals[k]), "pass" if ok else "fail") for k, ok in rep.passes.items()])
    (d / "report.txt").write_text("".join(line + "\n" for line in rep.lines()))
    for line in rep.lines():
        print(line)


def eval_verify_medium(cfg, d: Path) -> ExperimentVerdict:
    v = ExperimentVerdict()
    tol = {"H1": cfg["medium.tolerance"]}
    for r in _read_rows(_need(d, "assumptions.csv")):
        v.add(r["check"], float(r["value"]), tol.get(r["check"], NAN), r["pass"] == "pass")
    return v


# --------------------------------------------------------------------------- pulsating

def run_pulsating(cfg, d: Path):
    a = cfg["experiment.angle"]
    fr = compute_pulsating_front(_reaction(cfg), (math.cos(a), math.sin(a)), _front_cfg(cfg))
    write_profile(d / "front.prof", fr)
    write_timeseries(d / "timeseries.csv", fr.timeseries)


def eval_pulsating(cfg, d: Path) -> ExperimentVerdict:
    fr = read_profile(_need(d, "front.prof"))
    v = ExperimentVerdict()
    v.add("speed_ci", fr.speed_ci, cfg["front.ci_limit"], fr.speed_ci <= cfg["front.ci_limit"])
    v.add("slope_floor", fr.slope_floor, 0.0, fr.slope_floor > 0)
    j0 = -fr.j_lo
    u0 = float(fr.profile[j0, 0, 0])
    v.add("profile_origin_half", abs(u0 - 0.5), 0.0, u0 == 0.5 and fr.xi[j0] == 0.0)
    if _homogeneous(cfg):
        c0 = _oracle_speed(cfg)
        err = abs(fr.speed - c0) / c0
        v.add("speed_rel_oracle", err, cfg["experiment.speed_tol"], err <= cfg["experiment.speed_tol"])
        mu = 1.0 / math.sqrt(2.0)
        for k, name in enumerate(("mu1", "mu2")):
            e = abs(fr.tail_rates[k] - mu) / mu
            v.add(f"{name}_rel_oracle", e, cfg["experiment.tail_tol"], e <= cfg["experiment.tail_tol"])
    return v


# --------------------------------------------------------------------------- speed curve and pairs

def run_speed_curve(cfg, d: Path):
    curve = _speed_curve(cfg, _reaction(cfg))
    write_speed_curve(d / "speed_curve.csv", curve)
    _write_rows(d / "failures.csv", ["theta", "error"], sorted(curve.failures.items()))


def _grid_step(curve) -> float:
    return float(np.max(np.diff(curve.angles[curve.valid])))


def eval_speed_curve(cfg, d: Path) -> ExperimentVerdict:
    curve = read_speed_curve(_need(d, "speed_curve.csv"))
    v = ExperimentVerdict()
    ok = curve.valid
    v.add("usable_angles", int(ok.sum()), 3, ok.sum() >= 3)
    g = curve.g[ok]
    k = int(np.argmin(g))
    v.add("g_interior_minimum", curve.angles[ok][k], NAN, 0 < k < g.size - 1)
    if _homogeneous(cfg):
        c0 = _oracle_speed(cfg)
        tol = cfg["experiment.g_tol"]
        lo, hi = curve.arc
        for name, th in (("pi/6", math.pi / 6), ("pi/4", math.pi / 4), ("pi/2", math.pi / 2)):
            ref = c0 / math.sin(th)
            e = abs(float(curve.g_at(th)) - ref) / ref if lo <= th <= hi else NAN
            v.add(f"g_rel_oracle_{name}", e, tol, e <= tol)
        a = curve.angles[ok]
        mirror = (math.pi - a >= lo) & (math.pi - a <= hi)
        sym = np.abs(g[mirror] - curve.g_at(math.pi - a[mirror])) / g[mirror]
        s = float(sym.max()) if sym.size else NAN
        v.add("g_mirror_symmetry", s, tol, s <= tol)
    return v


def run_find_pairs(cfg, d: Path):
    curve = _speed_curve(cfg, _reaction(cfg))
    write_speed_curve(d / "speed_curve.csv", curve)
    pairs = find_angle_pairs(curve, cfg["atlas.level_grid"], cfg["atlas.levels"],
                             cfg["atlas.match_tol"])
    write_pairs(d / "pairs.csv", pairs)


def eval_find_pairs(cfg, d: Path) -> ExperimentVerdict:
    curve = read_speed_curve(_need(d, "speed_curve.csv"))
    pairs = read_pairs(_need(d, "pairs.csv"))
    v = ExperimentVerdict()
    v.add("pairs_found", len(pairs), 1, len(pairs) >= 1)
    if pairs:
        s = min(min(-p.gpa, p.gpb) for p in pairs)
        v.add("slope_signs", s, 0.0, s > 0)
        m = min(p.margin for p in pairs)
        v.add("interior_margin", m, 0.0, m > 0)
    if _homogeneous(cfg):
        step = _grid_step(curve)
        a0, b0 = math.pi / 6, 5 * math.pi / 6
        p = pair_at_level(curve, 2 * _oracle_speed(cfg), cfg["atlas.match_tol"])
        e = NAN if p is None else max(abs(p.alpha - a0), abs(p.beta - b0))
        v.add("oracle_pair_at_2c", e, step, e <= step)
        e = min((max(abs(q.alpha - a0), abs(q.beta - b0)) for q in pairs), default=NAN)
        v.add("oracle_pair_listed", e, step, e <= step)
    return v


# --------------------------------------------------------------------------- barrier check

BARRIER_TAGS = ("U+", "U1-", "U2-")


def _barrier_makers(cfg, F, pair: AnglePair):
    a, b = pair.alpha, pair.beta
    lo, hi = F.arc
    a1 = cfg["experiment.alpha1"]
    b1 = cfg["experiment.beta1"]
    a1 = 0.5 * (a + lo) if not math.isfinite(a1) else a1
    b1 = 0.5 * (b + hi) if not math.isfinite(b1) else b1
    rho = cfg["experiment.curve_rho"]
    cp = build_interface_curve("convex-psi", a, b, rho=rho)
    c1 = build_interface_curve("concave-phi1", a, a1, rho=rho)
    c2 = build_interface_curve("concave-phi2", b1, b, rho=rho)
    return {
        "U+": lambda e, r: make_U_plus(F, cp, e, r, pair.c_ab),
        "U1-": lambda e, r: make_lower_barrier(1, F, c1, e, r, pair.c_ab),
        "U2-": lambda e, r: make_lower_barrier(2, F, c2, e, r, pair.c_ab),
    }


def _fname(tag: str) -> str:
    return tag.replace("+", "plus").replace("-", "minus")


def run_barrier_check(cfg, d: Path):
    r = _reaction(cfg)
    F, pair = _field_and_pair(cfg, d, r)
    seed = cfg["run.seed"]
    fd = cfg["experiment.fd"]
    makers = _barrier_makers(cfg, F, pair)
    chosen, built = [], {}
    for tag in BARRIER_TAGS:
        eps, rho = cfg["experiment.eps"], cfg["experiment.varrho"]
        if not (math.isfinite(eps) and math.isfinite(rho)):
            found = search_eps_rho(makers[tag], r, cfg["experiment.eps_grid"],
                                   cfg["experiment.rho_grid"], fd, cfg["experiment.search_samples"],
                                   seed)
            if found is None:
                chosen.append((tag, NAN, NAN))
                continue
            eps, rho = found[0], found[1]
        chosen.append((tag, eps, rho))
        built[tag] = makers[tag](eps, rho)
        plan = SamplePlan(cfg["experiment.samples"], seed)
        for suffix, step in (("fd", fd), ("fd2", fd / 2)):
            rep = residual_certify(built[tag], r, plan, step)
            write_residual_report(d / f"residual_{_fname(tag)}_{suffix}.csv", rep)
    _write_rows(d / "barrier_params.csv", ["barrier", "eps", "varrho"], chosen)
    # ordering on points spread around the corner of U-
    rng = np.random.default_rng(seed + 1)
    n = cfg["experiment.order_samples"]
    rho_min = min(float(p[2]) for p in chosen if math.isfinite(p[2])) if built else 1.0
    span = 6.0 / rho_min
    t = rng.uniform(0.0, r.cell.L2 / pair.c_ab, n)
    x = rng.uniform(-span, span, n)
    base = np.maximum(-x / math.tan(pair.alpha), -x / math.tan(pair.beta))
    y = pair.c_ab * t + base + rng.uniform(-15.0, 15.0, n)
    um = UMinus(F.fixed(pair.alpha), F.fixed(pair.beta))(t, x, y)
    rows = []
    for tag, sign in (("U+", 1.0), ("U1-", -1.0), ("U2-", -1.0)):
        if tag in built:
            gap = sign * (built[tag](t, x, y) - um)
            rows.append((tag, float(gap.min()), n))
    _write_rows(d / "ordering.csv", ["barrier", "min_gap", "samples"], rows)


def eval_barrier_check(cfg, d: Path) -> ExperimentVerdict:
    params = {r["barrier"]: r for r in _read_rows(_need(d, "barrier_params.csv"))}
    order = {r["barrier"]: r for r in _read_rows(_need(d, "ordering.csv"))}
    v = ExperimentVerdict()
    otol = cfg["experiment.order_tol"]
    for tag in BARRIER_TAGS:
        if not math.isfinite(float(params[tag]["eps"])):
            v.add(f"search_{tag}", NAN, NAN, False)
            continue
        s1 = read_residual_summary(_need(d, f"residual_{_fname(tag)}_fd.csv"))
        s2 = read_residual_summary(_need(d, f"residual_{_fname(tag)}_fd2.csv"))
        v.add(f"residual_{tag}", s1["extreme"], s1["slack"], s1["verdict"])
        v.add(f"residual_{tag}_half_fd", s2["extreme"], s2["slack"], s2["verdict"])
        v.add(f"fd_stable_{tag}", float(s1["verdict"] == s2["verdict"]), 1.0,
              s1["verdict"] == s2["verdict"])
        need = cfg["experiment.min_samples"]
        v.add(f"samples_{tag}", s1["samples"], need, s1["samples"] >= need)
        gap = float(order[tag]["min_gap"])
        name = "order_U+_over_U-" if tag == "U+" else f"order_U-_over_{tag}"
        v.add(name, gap, otol, gap >= -otol)
    return v


# --------------------------------------------------------------------------- curved front

def run_curved_front(cfg, d: Path):
    r = _reaction(cfg)
    F, pair = _field_and_pair(cfg, d, r)
    wcfg = _window_cfg(cfg)
    fa, fb = F.fixed(pair.alpha), F.fixed(pair.beta)
    _save_fronts(cfg, d, {"alpha": fa, "beta": fb})
    T0, t_obs = cfg["experiment.T0"], cfg["experiment.t_obs"]
    upper = _upper_barrier(F, pair, cfg) if cfg["experiment.upper"] else None
    tau = r.cell.L2 / pair.c_ab
    times = [tau] if cfg["experiment.translation"] else []
    frame = window_frame(r, (fa, fb), (-T0, t_obs), pair.c_ab, wcfg)
    sol = construct(r, pair, F, T0, wcfg, t_obs, upper, times, frame=frame)
    named = {"start": sol.snapshots[0], "t0": sol.snapshot_at(0.0), "final": sol.final}
    if times:
        named["translated"] = min(sol.snapshots, key=lambda s: abs(s.time - tau))
    if cfg["experiment.t0_check"]:
        long = construct(r, pair, F, 2 * T0, wcfg, 0.0, frame=frame)
        named["long_t0"] = long.snapshot_at(0.0)
    _write_snapshots(d, named)
    write_polylines(d / "polylines.csv", sol.polylines)
    _write_inflight(d / "inflight.csv", sol.inflight)
    _write_kv(d / "run_params.csv", {"T0": T0, "t_obs": t_obs, "dt": sol.params["dt"]})
    fcfg = _front_cfg(cfg)
    rows = []
    for th in interior_angles(pair.alpha, pair.beta, cfg["experiment.interior"]):
        fr = compute_pulsating_front(r, (math.cos(th), math.sin(th)), fcfg)
        rows.append((fr.angle, fr.speed))
    _write_rows(d / "interior.csv", ["angle", "speed"], rows)


def eval_curved_front(cfg, d: Path) -> ExperimentVerdict:
    pair = read_pairs(_need(d, "pair.csv"))[0]
    fronts = (_load_front(cfg, d, "alpha", pair.alpha), _load_front(cfg, d, "beta", pair.beta))
    params = _read_kv(_need(d, "run_params.csv"))
    names = [r["name"] for r in _read_rows(_need(d, "snapshots.csv"))]
    snaps = {n: _read_snapshot(d, n) for n in names}
    main = sorted((s for n, s in snaps.items() if n != "long_t0"), key=lambda s: s.time)
    sol = CurvedFrontSolution(pair, params["T0"], main, read_polylines(_need(d, "polylines.csv")),
                              params, _read_inflight(_need(d, "inflight.csv")), fronts)
    wcfg = _window_cfg(cfg)
    v = construction_verdict(sol, wcfg)
    v.extend(verify_limit_shape(sol, cfg["experiment.radii"], cfg["experiment.shape_tol"],
                                at=snaps["final"]))
    interior = [(float(r["angle"]), float(r["speed"]))
                for r in _read_rows(_need(d, "interior.csv"))]
    v.extend(apex_speed(sol, cfg["experiment.apex_tol"], cfg["experiment.apex_from"], interior))
    if cfg["experiment.translation"]:
        v.extend(translation_check(sol, 0.0, cfg["experiment.translation_tol"], wcfg.edge_margin))
    if cfg["experiment.t0_check"]:
        long = CurvedFrontSolution(pair, 2 * params["T0"], [_read_snapshot(d, "long_t0")], [],
                                   params, {}, fronts)
        v.extend(t0_convergence(sol, long, 0.0, cfg["experiment.t0_tol"],
                                cfg["experiment.order_tol"], wcfg.edge_margin))
    return v


# --------------------------------------------------------------------------- stability

def run_stability(cfg, d: Path):
    r = _reaction(cfg)
    F, pair = _field_and_pair(cfg, d, r)
    wcfg = _window_cfg(cfg)
    fa, fb = F.fixed(pair.alpha), F.fixed(pair.beta)
    _save_fronts(cfg, d, {"alpha": fa, "beta": fb})
    sol = construct(r, pair, F, cfg["experiment.T0"], wcfg, 0.0)
    lower = upper = None
    if cfg["experiment.brackets"]:
        lower = UMinus(fa, fb)
        upper = _upper_barrier(F, pair, cfg) if cfg["experiment.upper"] else None
    spec = Perturbation(cfg["experiment.perturbation"], cfg["experiment.amplitude"],
                        cfg["experiment.radius"])
    res = stability_run(r, sol, spec, cfg["experiment.T"], wcfg, cfg["experiment.stab_tol"],
                        cfg["experiment.rim_tol"], lower, upper, cfg["experiment.delta"],
                        cfg["experiment.omega"], cfg["experiment.bracket_slack"],
                        cfg["experiment.stab_record"])
    _write_snapshots(d, {"V0": sol.snapshot_at(0.0), "u_final": res.final["u"],
                         "V_final": res.final["V"]})
    _write_rows(d / "distance.csv", ["t", "distance"], zip(res.times, res.distance))
    _write_kv(d / "stability.csv", {"rim_deviation": res.verdict["rim_deviation"].measured,
                                    "bracket_violations": res.bracket_violations,
                                    "bracket_worst": res.bracket_worst,
                                    "brackets": float(lower is not None or upper is not None)})


def eval_stability(cfg, d: Path) -> ExperimentVerdict:
    rows = _read_rows(_need(d, "distance.csv"))
    times = np.array([float(r["t"]) for r in rows])
    dist = np.array([float(r["distance"]) for r in rows])
    u, V = _read_snapshot(d, "u_final"), _read_snapshot(d, "V_final")
    # the last sample is recomputed from the stored final fields
    dist[-1] = float(np.max(np.abs(u.values - V.values)))
    st = _read_kv(_need(d, "stability.csv"))
    viol = int(st["bracket_violations"]) if st["brackets"] else None
    return stability_verdict(times, dist, cfg["experiment.T"], cfg["experiment.stab_tol"],
                             st["rim_deviation"], cfg["experiment.rim_tol"], viol)


# --------------------------------------------------------------------------- merge

def _merge_times(cfg):
    T0 = cfg["experiment.T0"]
    until, settle = cfg["experiment.early_until"], cfg["experiment.settle"]
    until = -0.5 * T0 if not math.isfinite(until) else until
    settle = 0.25 * T0 if not math.isfinite(settle) else settle
    return T0, until, settle


def run_merge(cfg, d: Path):
    r = _reaction(cfg)
    F, pair = _field_and_pair(cfg, d, r)
    theta = cfg["experiment.theta"]
    theta = math.pi / 2 if not math.isfinite(theta) else theta
    a, b = pair.alpha, pair.beta
    sp = lambda s: float(F.speed(s))
    tr = triple_junction(sp(a), sp(theta), sp(b), a, theta, b)
    wcfg = _window_cfg(cfg, companions=False)
    T0, until, settle = _merge_times(cfg)
    t_end = cfg["experiment.t_end"]
    fa, ft, fb = F.fixed(a), F.fixed(theta), F.fixed(b)
    grid = window_grid(r, (fa, ft, fb), (-T0, t_end), pair.c_ab, wcfg)
    ref = construct(r, pair, F, T0, wcfg, t_end, grid=grid)
    res = merging_run(r, a, theta, b, F, tr, T0, wcfg, t_end, reference=ref, c_ab=pair.c_ab,
                      tol=cfg["experiment.merge_tol"], drift_tol=cfg["experiment.drift_tol"],
                      early_margin=cfg["experiment.early_margin"], early_until=until,
                      settle=settle, band=cfg["experiment.band"])
    sol = res.solution
    write_polylines(d / "polylines.csv", sol.polylines)
    rows = [("start",) + tuple(e) for e in sol.inflight["start"]]
    rows += [("early",) + tuple(e) for e in sol.inflight["early"]]
    _write_rows(d / "merge_inflight.csv", ["kind", "t", "left", "right"], rows)
    _write_snapshots(d, {"u_final": sol.window.field("u"), "reference_final": ref.final})
    _write_kv(d / "triple.csv", {"alpha": a, "theta": theta, "beta": b, "c1": tr.c1,
                                 "c2": tr.c2, "c1_hat": tr.c1_hat, "c2_hat": tr.c2_hat,
                                 "x_window": grid.xs[-1] - cfg["experiment.early_margin"]})


def eval_merge(cfg, d: Path) -> ExperimentVerdict:
    tp = _read_kv(_need(d, "triple.csv"))
    tr = TripleSpeeds(tp["c1"], tp["c2"], tp["c1_hat"], tp["c2_hat"])
    inf = {"start": [], "early": []}
    for r in _read_rows(_need(d, "merge_inflight.csv")):
        inf[r["kind"]].append((float(r["t"]), float(r["left"]), float(r["right"])))
    u, ref = _read_snapshot(d, "u_final"), _read_snapshot(d, "reference_final")
    late = float(np.max(np.abs(u.values - ref.values))) if u.time == ref.time else None
    T0, until, settle = _merge_times(cfg)
    v, _ = merge_verdict(inf, read_polylines(_need(d, "polylines.csv")), tr,
                         (tp["alpha"], tp["theta"], tp["beta"]), T0, settle, until, tp["x_window"],
                         cfg["experiment.merge_tol"], cfg["experiment.drift_tol"],
                         cfg["solver.upper_slack"], late, True)
    return v


# --------------------------------------------------------------------------- mean speed

def run_mean_speed(cfg, d: Path):
    r = _reaction(cfg)
    a, b = cfg["experiment.alpha"], cfg["experiment.beta"]
    if not (math.isfinite(a) and math.isfinite(b)):
        raise ConfigError("experiment.alpha: mean-speed needs experiment.alpha and experiment.beta",
                          key="experiment.alpha")
    if cfg["atlas.field"] == "oracle":
        F = _oracle_field(cfg)
        fa, fb = F.fixed(a), F.fixed(b)
    else:
        fcfg = _front_cfg(cfg)
        fr = [compute_pulsating_front(r, (math.cos(s), math.sin(s)), fcfg) for s in (a, b)]
        F = PlanarFrontSet(fr)
        fa, fb = F.fixed(fr[0].angle), F.fixed(fr[1].angle)
        _save_fronts(cfg, d, {"alpha": fa, "beta": fb})
    # the corner of the two level lines moves with velocity v, e_a.v = c_a and e_b.v = c_b
    vel = np.linalg.solve(np.array([fa.direction, fb.direction]), [fa.speed, fb.speed])
    pair = AnglePair(fa.angle, fb.angle, float(vel[1]), NAN, NAN, NAN, 0.0)
    write_pairs(d / "pair.csv", [pair])
    wcfg = _window_cfg(cfg)
    sol = construct(r, pair, F, cfg["experiment.T0"], wcfg, cfg["experiment.t_obs"])
    write_polylines(d / "polylines.csv", sol.polylines)
    _write_inflight(d / "inflight.csv", sol.inflight)
    _write_kv(d / "speeds.csv", {"c_alpha": fa.speed, "c_beta": fb.speed, "corner_vx": vel[0],
                                 "corner_vy": vel[1]})


def eval_mean_speed(cfg, d: Path) -> ExperimentVerdict:
    pair = read_pairs(_need(d, "pair.csv"))[0]
    sp = _read_kv(_need(d, "speeds.csv"))
    fronts = (_load_front(cfg, d, "alpha", pair.alpha), _load_front(cfg, d, "beta", pair.beta))
    sol = SimpleNamespace(polylines=read_polylines(_need(d, "polylines.csv")), c_ab=pair.c_ab,
                          fronts=fronts, inflight=_read_inflight(_need(d, "inflight.csv")))
    v = construction_verdict(sol, _window_cfg(cfg))
    v.extend(mean_speed_verdict(sol, sp["c_alpha"], sp["c_beta"], cfg["experiment.metric_tol"],
                                t_from=cfg["experiment.mean_from"]))
    return v


# --------------------------------------------------------------------------- runs and replay

@dataclass(frozen=True)
class Pipeline:
    run: Callable
    evaluate: Callable


PIPELINES: Dict[str, Pipeline] = {
    "verify-medium": Pipeline(run_verify_medium, eval_verify_medium),
    "pulsating": Pipeline(run_pulsating, eval_pulsating),
    "speed-curve": Pipeline(run_speed_curve, eval_speed_curve),
    "find-pairs": Pipeline(run_find_pairs, eval_find_pairs),
    "barrier-check": Pipeline(run_barrier_check, eval_barrier_check),
    "curved-front": Pipeline(run_curved_front, eval_curved_front),
    "stability": Pipeline(run_stability, eval_stability),
    "merge": Pipeline(run_merge, eval_merge),
    "mean-speed": Pipeline(run_mean_speed, eval_mean_speed),
}

MANIFEST = "manifest.json"


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _inventory(d: Path) -> List[dict]:
    out = []
    for p in sorted(d.rglob("*")):
        if p.is_file() and p.name != MANIFEST:
            out.append({"path": p.relative_to(d).as_posix(), "bytes": p.stat().st_size,
                        "sha256": _sha256(p)})
    return out


def _versions() -> dict:
    import numba
    import scipy
    return {"curvedfronts": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__}


def _evaluate(pipe, cfg, d: Path) -> ExperimentVerdict:
    try:
        return pipe.evaluate(cfg, d)
    except ValueError as exc:
        raise MissingArtifact(f"unreadable artifact: {exc}") from None


def run(command: str, cfg: Dict[str, object], out: Path) -> int:
    if out.exists() and any(out.iterdir()):
        raise ConfigError(f"output.dir: {out} is not empty", key="output.dir")
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    pipe = PIPELINES[command]
    error = None
    try:
        pipe.run(cfg, out)
        verdict = _evaluate(pipe, cfg, out)
    except (ConfigError, MissingArtifact):
        raise
    except FrontError as exc:
        error = f"{type(exc).__name__}: {exc}"
        verdict = ExperimentVerdict().add(exc.code, NAN, NAN, False)
    write_verdict(out / "verdict.csv", verdict)
    (out / "config.resolved").write_text(serialize_config(cfg), encoding="utf-8")
    manifest = {
        "command": command,
        "config": {k: format_value(v) for k, v in cfg.items()},
        "artifacts": _inventory(out),
        "versions": _versions(),
        "wall_clock_s": time.perf_counter() - start,
        "verdict": {"passed": verdict.passed, "checks": [list(r) for r in verdict.rows()]},
    }
    if error is not None:
        manifest["error"] = error
    (out / MANIFEST).write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    if error is not None:
        print(f"error: {error}", file=sys.stderr)
    for name, measured, tol, status in verdict.rows():
        print(f"{status:4s} {name}: {measured} (tolerance {tol})")
    return 0 if verdict.passed else 2


def replay(manifest_path: Path) -> int:
    """Re-evaluate a run directory from its artifacts and compare with the stored verdict."""
    try:
        man = json.loads(manifest_path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise MissingArtifact(f"{manifest_path}: {exc.strerror}", path=str(manifest_path)) from None
    d = manifest_path.parent
    cfg = resolve_config(man["config"])
    command = man["command"]
    if command not in PIPELINES:
        raise ConfigError(f"command: unknown subcommand {command!r}", key="command")
    for a in man["artifacts"]:
        if not (d / a["path"]).is_file():
            raise MissingArtifact(f"{a['path']} listed in the manifest is missing", path=a["path"])
    for a in man["artifacts"]:
        got = _sha256(d / a["path"])
        if got != a["sha256"]:
            print(f"drift: artifact {a['path']}: sha256 {a['sha256']} != {got}")
            return 3
    if "error" in man:
        # the pipeline stopped early, so its artifacts do not support an evaluation
        verdict = read_verdict(d / "verdict.csv")
    else:
        try:
            verdict = _evaluate(PIPELINES[command], cfg, d)
        except (ConfigError, MissingArtifact):
            raise
        except FrontError as exc:
            verdict = ExperimentVerdict().add(exc.code, NAN, NAN, False)
    new = [list(r) for r in verdict.rows()]
    old = man["verdict"]["checks"]
    for k in range(max(len(old), len(new))):
        a = old[k] if k < len(old) else None
        b = new[k] if k < len(new) else None
        if a != b:
            print(f"drift: check {k}: manifest {a} != replay {b}")
            return 3
    if man["verdict"]["passed"] != verdict.passed:
        print(f"drift: passed: manifest {man['verdict']['passed']} != replay {verdict.passed}")
        return 3
    print(f"replay identical: {len(new)} checks")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="curvedfronts", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat 'section.key = value' file")
        p.add_argument("--out", help="run directory (default: output.dir)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one key; repeatable")
        p.add_argument("--threads", type=int, help="numba thread count")
        p.add_argument("--seed", type=int, help="overrides run.seed")
    p = sub.add_parser("replay")
    p.add_argument("manifest")
    p.add_argument("--threads", type=int, help="numba thread count")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.threads is not None:
            import numba
            if args.threads < 1:
                raise ConfigError("threads: must be at least 1", key="threads")
            numba.set_num_threads(args.threads)
        if args.command == "replay":
            return replay(Path(args.manifest))
        cfg = load_config(args.config, args.set, args.seed)
        return run(args.command, cfg, Path(args.out or cfg["output.dir"]))
    except (ConfigError, MissingArtifact) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
