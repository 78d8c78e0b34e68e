"""Acceptance criteria, one test each. Every test records a pass/fail line.

The heavy runs go through the command line on the files in configs/, so each
criterion is judged on the same artifacts that ``curvedfronts replay`` checks.
"""
import math
import time
from pathlib import Path

import numpy as np
import pytest

from curvedfronts.cli import main
from curvedfronts.curved_front import read_verdict
from curvedfronts.media import build_reaction
from curvedfronts.pde_solver import (BoundaryPolicy, Field, Grid2D, Stepper, max_stable_dt,
                                     planar_speed)

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
A = 0.25
EXACT_C = (1 - 2 * A) / math.sqrt(2)
_RUNS = {}


@pytest.fixture(scope="session")
def runs_root(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


def cli_run(root, command, config, *extra):
    """Run one subcommand once per session; returns (exit code, run dir, verdict)."""
    key = (command, config) + extra
    if key not in _RUNS:
        out = root / f"{command}-{len(_RUNS)}"
        args = [command, "--config", str(CONFIGS / config), "--out", str(out)]
        for item in extra:
            args += ["--set", item]
        t0 = time.perf_counter()
        code = main(args)
        _RUNS[key] = (code, out, read_verdict(out / "verdict.csv"), time.perf_counter() - t0)
    return _RUNS[key]


def rows(verdict, names):
    return [c for c in verdict.checks if any(c.name.startswith(n) for n in names)]


def describe(checks):
    return ", ".join(f"{c.name}={c.measured:.4g}" for c in checks)


def test_criterion_01_homogeneous_speed(accept):
    reaction = build_reaction("homogeneous-cubic", threshold=A)
    t0 = time.perf_counter()
    c, _ = planar_speed(reaction, length=80.0, width=20.0, h=0.1)
    wall = time.perf_counter() - t0
    err = abs(c - EXACT_C) / EXACT_C
    ok = err <= 0.02 and wall <= 60.0
    accept(1, "homogeneous planar speed", ok,
           f"c={c:.6f} vs {EXACT_C:.6f} (rel {err:.2e}), {wall:.1f} s on an 80x20 window")
    assert ok


def test_criterion_02_homogeneous_profile(accept, runs_root):
    code, _, v, _ = cli_run(runs_root, "pulsating", "homogeneous.cfg")
    picked = rows(v, ["mu1_rel_oracle", "mu2_rel_oracle", "profile_origin_half"])
    ok = len(picked) == 3 and all(c.passed for c in picked)
    accept(2, "tail rates and U(0,0,0) = 1/2", ok, describe(picked))
    assert ok


def test_criterion_03_speed_curve(accept, runs_root):
    code, _, v, _ = cli_run(runs_root, "speed-curve", "homogeneous.cfg")
    picked = rows(v, ["g_rel_oracle_", "g_mirror_symmetry"])
    ok = len(picked) == 4 and all(c.passed for c in picked)
    accept(3, "speed curve against c / sin and its mirror", ok, describe(picked))
    assert ok


def test_criterion_04_angle_pairs(accept, runs_root):
    code, _, v, _ = cli_run(runs_root, "find-pairs", "homogeneous.cfg")
    ok = code == 0 and v.passed
    accept(4, "pair (pi/6, 5pi/6) at level 2c and pair signs", ok,
           describe(rows(v, ["oracle_pair", "slope_signs", "interior_margin", "pairs_found"])))
    assert ok


def test_criterion_05_barriers(accept, runs_root):
    code, _, v, _ = cli_run(runs_root, "barrier-check", "barrier_homogeneous.cfg")
    ok = code == 0 and v.passed
    accept(5, "barrier residual signs, fd halving and ordering", ok,
           describe(rows(v, ["residual_", "samples_", "order"])))
    assert ok


@pytest.fixture(scope="session")
def curved(runs_root):
    return cli_run(runs_root, "curved-front", "curved_front_periodic.cfg")


def test_criterion_06_construction(accept, curved):
    code, _, v, wall = curved
    picked = rows(v, ["sandwich_", "monotone_in_t", "range_", "shape_"])
    names = {c.name for c in picked}
    ok = {"sandwich_lower", "sandwich_upper", "shape_final"} <= names and all(
        c.passed for c in picked)
    accept(6, "sandwich, monotone in t, limit shape", ok,
           describe(picked) + f" ({wall:.0f} s)")
    assert ok


def test_criterion_07_apex_speed(accept, curved):
    code, _, v, _ = curved
    picked = rows(v, ["apex_vy_vs_g_alpha", "interior_margin_"])
    ok = len(picked) == 4 and all(c.passed for c in picked)
    accept(7, "apex drift and interior strictness", ok, describe(picked))
    assert ok


def test_criterion_08_t0_doubling(accept, curved):
    code, _, v, _ = curved
    sup = v["t0_sup_difference"]
    order = v["t0_order"]
    accept(8, "T0 against 2 T0 at t = 0", sup.passed,
           f"sup difference {sup.measured:.4g} (tol {sup.tolerance:g}); "
           f"order {order.measured:.3g} ({'pass' if order.passed else 'fail'})")
    assert sup.passed


def test_criterion_09_stability(accept, runs_root):
    code, _, v, wall = cli_run(runs_root, "stability", "stability_periodic.cfg")
    ok = code == 0 and v.passed
    accept(9, "apex bump decays back to the curved front", ok,
           describe(v.checks) + f" ({wall:.0f} s)")
    assert ok


def test_criterion_10_merging(accept, runs_root):
    code, _, v, wall = cli_run(runs_root, "merge", "merge_periodic.cfg")
    ok = code == 0 and v.passed
    accept(10, "three fronts merge into the (alpha, beta) front", ok,
           describe(v.checks) + f" ({wall:.0f} s)")
    assert ok


def test_criterion_11_mean_speeds(accept, runs_root):
    code, _, v, wall = cli_run(runs_root, "mean-speed", "mean_speed_layered.cfg")
    picked = rows(v, ["d_rate_rel", "d_tilde_rate_rel"])
    ok = len(picked) == 2 and all(c.passed for c in picked)
    accept(11, "distance rates on an asymmetric pair", ok,
           describe(picked) + f" ({wall:.0f} s)")
    assert ok


def comparison_trial(seed, reaction, grid, bc, steps):
    rng = np.random.default_rng(seed)
    lo = rng.uniform(0.0, 1.0, (grid.nx, grid.ny))
    hi = lo + rng.uniform(0.0, 1.0, lo.shape) * (1.0 - lo)
    dt = max_stable_dt(grid, reaction)
    a = Stepper(Field(grid, lo), reaction, dt, bc)
    b = Stepper(Field(grid, hi), reaction, dt, bc)
    a.run(steps)
    b.run(steps)
    va, vb = a.values, b.values
    violations = int(np.sum(va > vb + 1e-12))
    low = min(va.min(), vb.min())
    high = max(va.max(), vb.max())
    return violations, low, high


def test_criterion_12_scheme_and_replay(accept, runs_root):
    reaction = build_reaction("cubic-periodic", threshold=0.25, amp=0.15)
    grid = Grid2D(40, 40, 0.1, 0.1)
    bc = BoundaryPolicy("periodic-wrap", "periodic-wrap", "clamp-1", "clamp-0")
    violations, low, high = 0, 1.0, 0.0
    for seed in range(100):
        n, lo, hi = comparison_trial(seed, reaction, grid, bc, 1000)
        violations += n
        low, high = min(low, lo), max(high, hi)
    scheme_ok = violations == 0 and low >= -1e-12 and high <= 1 + 1e-12
    # a run of its own, so the replay check never runs on an empty session
    cli_run(runs_root, "verify-medium", "homogeneous.cfg")
    replays = {}
    for key, (_, out, _, _) in _RUNS.items():
        replays[out.name] = main(["replay", str(out / "manifest.json")])
    replay_ok = bool(replays) and all(c == 0 for c in replays.values())
    ok = scheme_ok and replay_ok
    accept(12, "comparison, invariant region, replay", ok,
           f"{violations} order violations over 100 pairs x 1000 steps, range "
           f"[{low:.3g}, {high:.3g}]; replay exit codes {replays}")
    assert ok
