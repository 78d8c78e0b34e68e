"""Run every experiment config through the command line and print a summary.

usage: python scripts/run_experiments.py OUTDIR [NAME ...]
"""
import sys
import time
from pathlib import Path

from curvedfronts.cli import main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
PLAN = [
    ("verify-medium", "homogeneous.cfg"),
    ("verify-medium", "balanced.cfg"),
    ("pulsating", "homogeneous.cfg"),
    ("speed-curve", "homogeneous.cfg"),
    ("find-pairs", "homogeneous.cfg"),
    ("barrier-check", "barrier_homogeneous.cfg"),
    ("curved-front", "curved_front_periodic.cfg"),
    ("stability", "stability_periodic.cfg"),
    ("merge", "merge_periodic.cfg"),
    ("mean-speed", "mean_speed_layered.cfg"),
]


def run(root, only):
    results = []
    for command, config in PLAN:
        name = f"{command}-{Path(config).stem}"
        if only and name not in only and command not in only:
            continue
        t0 = time.perf_counter()
        code = main([command, "--config", str(CONFIGS / config), "--out", str(root / name)])
        results.append((name, code, time.perf_counter() - t0))
    for name, code, wall in results:
        print(f"{name:40s} exit {code}  {wall:8.1f} s")
    return max((c for _, c, _ in results), default=0)


if __name__ == "__main__":
    if len(sys.argv) < 2:
        sys.exit(__doc__)
    sys.exit(run(Path(sys.argv[1]), set(sys.argv[2:])))
