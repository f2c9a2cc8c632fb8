import json
import subprocess
import sys
from fractions import Fraction

import pytest

from doobmart.cli import main
from doobmart.martingale import MartingaleSpec, rows_spec


def _spec(tmp_path, levels, name="m.json", nonneg=False):
    p = tmp_path / name
    p.write_text(rows_spec(levels, nonneg=nonneg).dumps() + "\n")
    return str(p)


def _run(tmp_path, *argv, name="out.json"):
    out = tmp_path / name
    code = main([*argv, "--out", str(out)])
    return code, out


def _record(out):
    return json.loads(out.with_name(out.name + ".run.json").read_text())


def test_verify_exit_codes(tmp_path):
    good = _spec(tmp_path, [1, 1, 1], "good.json")
    code, out = _run(tmp_path, "verify", "--spec", good)
    assert code == 0 and json.loads(out.read_text())["ok"]

    bad = _spec(tmp_path, [1, 2], "bad.json")
    code, out = _run(tmp_path, "verify", "--spec", bad)
    rep = json.loads(out.read_text())
    assert code == 1 and not rep["ok"] and rep["index"] == 0 and rep["kind"] == "martingale"

    broken = tmp_path / "broken.json"
    broken.write_text('{"chain": ')
    assert main(["verify", "--spec", str(broken)]) == 2
    assert main(["verify", "--spec", str(tmp_path / "missing.json")]) == 2


def test_verify_needs_spec(capsys):
    assert main(["verify"]) == 1


def test_transform_repair_keeps_martingales(tmp_path):
    spec = _spec(tmp_path, [2, 2, 2], nonneg=True)
    code, out = _run(tmp_path, "transform", "repair", "--spec", spec)
    assert code == 0
    assert MartingaleSpec.from_json(json.loads(out.read_text())) == MartingaleSpec.from_json(json.loads(open(spec).read()))
    assert json.loads(out.with_name(out.name + ".verify.json").read_text())["ok"]


def test_transform_repair_fixes_a_drifting_spec(tmp_path):
    spec = _spec(tmp_path, [1, 2, 4])
    code, out = _run(tmp_path, "transform", "repair", "--spec", spec)
    assert code == 0
    levels = MartingaleSpec.from_json(json.loads(out.read_text())).levels
    assert [f.table for f in levels] == [(1,), (1,), (1,)]


def test_transform_upcross_levels_checked(tmp_path):
    spec = _spec(tmp_path, [1, 1])
    assert main(["transform", "upcross", "3", "2", "--spec", spec]) == 1
    with pytest.raises(SystemExit):
        main(["transform", "upcross", "--spec", spec])
    code, out = _run(tmp_path, "transform", "upcross", "1/2", "3/2", "--spec", spec)
    assert code == 0


def test_transform_savings_on_doubling_path(tmp_path):
    # M_n = (3/2)^n on the all-ones array; M doubles first at n = 2
    p = tmp_path / "s.json"
    from doobmart.bitspace import CylinderFunction

    b = [CylinderFunction.bit((r, 0)) for r in range(3)]
    levels = [CylinderFunction.constant(1)]
    for r in range(3):
        levels.append(levels[-1] * (Fraction(1, 2) + b[r]))
    p.write_text(rows_spec(levels, nonneg=True).dumps())
    code, out = _run(tmp_path, "transform", "savings", "--spec", str(p))
    assert code == 0
    N = MartingaleSpec.from_json(json.loads(out.read_text()))
    ones = {(r, 0): 1 for r in range(3)}
    assert [f.evaluate(ones) for f in N.levels] == [1, Fraction(5, 4), Fraction(13, 8), Fraction(65, 32)]


def test_simulate_game_zero_first_row(tmp_path):
    code, out = _run(tmp_path, "simulate", "game", "--scenario", "zero-first-row", "--horizon", "10")
    assert code == 0
    body = json.loads(out.read_text())
    assert body["final"] == ["1024"]
    csv = out.with_name(out.name + ".csv").read_text().splitlines()
    assert csv[0] == "sample,step,value" and csv[-1] == "0,10,1024"


def test_simulate_bm_and_iso(tmp_path):
    code, out = _run(tmp_path, "simulate", "bm-experiment", "--samples", "20000", "--dt", "1/16")
    stats = json.loads(out.read_text())
    assert code == 0 and abs(stats["mean_WT"]) < stats["mean_WT_bound"]
    assert abs(stats["var_WT"] - 1) < 0.05
    code, out = _run(tmp_path, "simulate", "iso-roundtrip", "--depth", "3", "--qbits", "6", "--samples", "50", name="iso.json")
    assert code == 0 and json.loads(out.read_text())["mismatches"] == 0
    assert main(["simulate", "iso-roundtrip", "--qbits", "1"]) == 1


def test_simulate_counterexample(tmp_path):
    code, out = _run(tmp_path, "simulate", "counterexample", "--radius", "4")
    body = json.loads(out.read_text())
    from doobmart.brownian import counterexample_integrals

    assert code == 0
    assert body == counterexample_integrals(4.0).to_json()


def test_simulate_convergence(tmp_path):
    code, out = _run(tmp_path, "simulate", "convergence", "--strategy", "decaying-fraction",
                     "--samples", "500", "--horizons", "8,16", "--width", "8")
    body = json.loads(out.read_text())
    assert code == 0 and body["strategy"]


def test_unknown_strategy_is_rejected(tmp_path):
    assert main(["simulate", "game", "--strategy", "nope"]) == 1


def test_determinism_and_record(tmp_path):
    args = ["simulate", "bm-experiment", "--samples", "300", "--seed", "5"]
    _, a = _run(tmp_path, *args, name="a.json")
    _, b = _run(tmp_path, *args, name="b.json")
    assert a.read_bytes() == b.read_bytes()
    ra, rb = _record(a), _record(b)
    assert sorted(ra) == ["command", "config", "finished", "outputs", "result", "started", "status", "version"]
    assert sorted(ra["outputs"].values()) == sorted(rb["outputs"].values())
    assert ra["config"]["seed"] == 5 and ra["status"] == 0


def test_precedence(tmp_path, monkeypatch):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"seed": 7, "samples": 10}))
    monkeypatch.setenv("DOOB_SEED", "3")
    _, out = _run(tmp_path, "simulate", "bm-experiment", name="env.json")
    assert _record(out)["config"]["seed"] == 3
    _, out = _run(tmp_path, "simulate", "bm-experiment", "--config", str(cfg), name="file.json")
    assert _record(out)["config"]["seed"] == 7 and _record(out)["config"]["samples"] == 10
    _, out = _run(tmp_path, "simulate", "bm-experiment", "--config", str(cfg), "--seed", "9", name="flag.json")
    assert _record(out)["config"]["seed"] == 9
    monkeypatch.setenv("DOOB_SEED", "x")
    assert main(["simulate", "bm-experiment"]) == 1


def test_record_goes_to_stderr_without_out(capsys):
    assert main(["simulate", "counterexample", "--radius", "2"]) == 0
    cap = capsys.readouterr()
    assert json.loads(cap.out)["R"] == 2.0
    assert json.loads(cap.err)["command"] == "simulate"


def test_console_script():
    r = subprocess.run([sys.executable, "-m", "doobmart.cli", "simulate", "counterexample", "--radius", "1"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and json.loads(r.stdout)["R"] == 1.0
