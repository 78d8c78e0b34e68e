import json
import math
import shutil

import pytest
from hypothesis import given, settings, strategies as st

from curvedfronts.cli import (DEFAULTS, format_value, main, parse_config_text, resolve_config,
                              serialize_config)
from curvedfronts.direction_atlas import read_speed_curve
from curvedfronts.errors import ConfigError

HOMOG = ["--set", "medium.kind=homogeneous-cubic", "--set", "medium.threshold=0.25"]
ORACLE = HOMOG + ["--set", "atlas.field=oracle", "--set", f"experiment.alpha={math.pi / 6!r}"]
TINY_CF = ORACLE + ["--set", "experiment.T0=6", "--set", "experiment.t_obs=8",
                    "--set", "solver.half_width=8", "--set", "experiment.radii=2,4",
                    "--set", "experiment.interior=0"]
QUICK_FRONT = ["--set", "front.length=30", "--set", "front.burn_in=15",
               "--set", "front.fit_time=15"]


def value_for(default):
    if isinstance(default, bool):
        return st.booleans()
    if isinstance(default, int):
        return st.integers(-10 ** 6, 10 ** 6)
    if isinstance(default, float):
        return st.floats(allow_nan=False, allow_infinity=False)
    if isinstance(default, tuple):
        return st.lists(st.floats(-1e6, 1e6), max_size=4).map(tuple)
    return st.text("abcdefghij-_.", min_size=1, max_size=12)


@st.composite
def configs(draw):
    keys = draw(st.lists(st.sampled_from(sorted(DEFAULTS)), unique=True, max_size=12))
    return {k: draw(value_for(DEFAULTS[k])) for k in keys}


@settings(max_examples=100, deadline=None)
@given(picked=configs())
def test_config_round_trip_is_a_fixed_point(picked):
    cfg = resolve_config({k: format_value(v) for k, v in picked.items()})
    for k, v in picked.items():
        assert cfg[k] == v
    text = serialize_config(cfg)
    again = resolve_config(parse_config_text(text))
    # NaN defaults compare unequal, so compare the formatted values
    assert {k: format_value(v) for k, v in again.items()} == \
        {k: format_value(v) for k, v in cfg.items()}
    assert serialize_config(again) == text


def test_config_parsing_errors():
    with pytest.raises(ConfigError):
        parse_config_text("a = 1\na = 2\n")
    with pytest.raises(ConfigError):
        parse_config_text("no equals sign\n")
    with pytest.raises(ConfigError):
        resolve_config({"solver.nope": "1"})
    with pytest.raises(ConfigError):
        resolve_config({"solver.h": "fast"})
    with pytest.raises(ConfigError):
        resolve_config({"experiment.upper": "yes"})
    assert parse_config_text("# note\nsolver.h = 0.2  # trailing\n") == {"solver.h": "0.2"}


@pytest.mark.parametrize("args", [
    ["--set", "solver.nope=1"],
    ["--set", "solver.h=fast"],
    ["--set", "medium.kind=tabulated"],
    ["--config", "/nonexistent/x.cfg"],
    ["--threads", "0"],
])
def test_config_errors_exit_1(tmp_path, capsys, args):
    assert main(["verify-medium", "--out", str(tmp_path / "r")] + args) == 1
    assert capsys.readouterr().err.startswith("error:")


def test_output_dir_must_be_empty(tmp_path):
    (tmp_path / "r").mkdir()
    (tmp_path / "r" / "x").write_text("")
    assert main(["verify-medium", "--out", str(tmp_path / "r")]) == 1


def test_balanced_medium_exit_2(tmp_path, capsys):
    code = main(["verify-medium", "--out", str(tmp_path / "r"),
                 "--set", "medium.kind=homogeneous-cubic", "--set", "medium.threshold=0.5"])
    out = capsys.readouterr().out
    assert code == 2
    assert "H1: fail, integral 0" in out


def test_verify_medium_passes(tmp_path):
    assert main(["verify-medium", "--out", str(tmp_path / "r")] + HOMOG) == 0
    man = json.loads((tmp_path / "r" / "manifest.json").read_text())
    assert man["command"] == "verify-medium" and man["verdict"]["passed"]
    assert {a["path"] for a in man["artifacts"]} >= {"assumptions.csv", "report.txt",
                                                     "verdict.csv", "config.resolved"}


def test_speed_curve_on_three_angles(tmp_path):
    # three explicit angles keep this quick; the speed is isotropic (1 - 2a) / sqrt 2
    code = main(["speed-curve", "--out", str(tmp_path / "r"), "--set",
                 "atlas.angles=1.2,1.5707963267948966,1.9"] + HOMOG + QUICK_FRONT)
    curve = read_speed_curve(tmp_path / "r" / "speed_curve.csv")
    k = abs(curve.angles - math.pi / 2).argmin()
    assert curve.g[k] == pytest.approx(0.5 / math.sqrt(2), rel=2e-3)
    assert code in (0, 2)


def test_barrier_check_is_deterministic(tmp_path):
    args = ORACLE + ["--set", "experiment.samples=3000", "--set", "experiment.min_samples=3000",
                     "--set", "experiment.search_samples=1000",
                     "--set", "experiment.order_samples=3000"]
    assert main(["barrier-check", "--out", str(tmp_path / "a")] + args) == 0
    assert main(["barrier-check", "--out", str(tmp_path / "b")] + args) == 0
    a = (tmp_path / "a" / "verdict.csv").read_bytes()
    assert a == (tmp_path / "b" / "verdict.csv").read_bytes()
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert [x["sha256"] for x in ma["artifacts"]] == [x["sha256"] for x in mb["artifacts"]]


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("cf") / "run"
    code = main(["curved-front", "--out", str(d)] + TINY_CF)
    return d, code


def test_tiny_run_verdict_matches_exit_code(tiny_run):
    d, code = tiny_run
    man = json.loads((d / "manifest.json").read_text())
    assert code == (0 if man["verdict"]["passed"] else 2)
    names = [r[0] for r in man["verdict"]["checks"]]
    assert names[:2] == ["sandwich_lower", "sandwich_upper"]
    assert "shape_final" in names and "apex_vy_vs_g_alpha" in names


def test_replay_identical(tiny_run, capsys):
    d, _ = tiny_run
    assert main(["replay", str(d / "manifest.json")]) == 0
    assert "replay identical" in capsys.readouterr().out


def copy_run(src, dst):
    shutil.copytree(src, dst)
    return dst


def test_replay_missing_artifact(tiny_run, tmp_path):
    d = copy_run(tiny_run[0], tmp_path / "c")
    (d / "snapshots" / "final.snap").unlink()
    assert main(["replay", str(d / "manifest.json")]) == 1


def test_replay_detects_changed_artifact(tiny_run, tmp_path, capsys):
    d = copy_run(tiny_run[0], tmp_path / "c")
    with open(d / "polylines.csv", "a") as fh:
        fh.write("99.0,0.0,0.0\n")
    assert main(["replay", str(d / "manifest.json")]) == 3
    assert "drift: artifact polylines.csv" in capsys.readouterr().out


def test_replay_detects_changed_verdict(tiny_run, tmp_path, capsys):
    d = copy_run(tiny_run[0], tmp_path / "c")
    man = json.loads((d / "manifest.json").read_text())
    man["verdict"]["checks"][0][1] = "0.5"
    (d / "manifest.json").write_text(json.dumps(man))
    assert main(["replay", str(d / "manifest.json")]) == 3
    assert "drift: check 0" in capsys.readouterr().out


def test_replay_missing_manifest(tmp_path):
    assert main(["replay", str(tmp_path / "none.json")]) == 1
