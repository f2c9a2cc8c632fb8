"""Command line front end: ``doobmart verify | transform | simulate``.

Settings resolve as flags, then the ``--config`` JSON file, then the
``DOOB_SEED`` environment variable (seed only), then defaults.  Every run
writes one run record (config, timestamps, version, result and the SHA-256
of each file written) next to its main output, or to stderr when there is
no ``--out``.  Everything except the record's timestamps is a function of
the config.

Exit codes: 0 success, 1 failed check or rejected operation, 2 unreadable
input.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from datetime import datetime, timezone
from fractions import Fraction
from importlib import metadata
from pathlib import Path

import numpy as np

from . import brownian as bm
from . import game
from .bitspace import SupportCapError
from .martingale import (
    MartingaleSpec,
    OracleMartingale,
    SavingsError,
    convert_oracle_martingale,
    extend_to_array,
    repair_spec,
    restrict_rows,
    savings_transform,
    upcrossing_transform,
    verify,
)

ENV_SEED = "DOOB_SEED"

DEFAULTS = {
    "seed": 0,
    "samples": None,
    "horizon": None,
    "support_cap": None,
    "dt": "1/256",
    "T": "1",
    "depth": 4,
    "qbits": 8,
    "radius": 8.0,
    "strategy": "zero-row",
    "scenario": "uniform",
    "scenario_file": None,
    "width": 64,
    "start": "1",
    "horizons": None,
    "eps": 0.1,
    "rows": 2,
    "require_savings": True,
}


class UsageError(Exception):
    """Bad parameters: exit 1."""


class InputError(Exception):
    """Unreadable input: exit 2."""


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def _load_json(path: str):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc


def _load_spec(path: str, cap):
    obj = _load_json(path)
    try:
        return MartingaleSpec.from_json(obj, cap=cap)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: not a martingale spec ({exc})") from exc


def resolve(args: argparse.Namespace) -> dict:
    """Merge flags over the config file over the environment over defaults."""
    cfg = dict(DEFAULTS)
    env_seed = os.environ.get(ENV_SEED)
    if env_seed is not None:
        try:
            cfg["seed"] = int(env_seed)
        except ValueError as exc:
            raise UsageError(f"{ENV_SEED}={env_seed!r} is not an integer") from exc
    if args.config:
        file_cfg = _load_json(args.config)
        if not isinstance(file_cfg, dict):
            raise InputError(f"{args.config}: config must be a JSON object")
        for k, v in file_cfg.items():
            cfg[k.replace("-", "_")] = v
    for k, v in vars(args).items():
        if v is not None and k not in ("func", "config"):
            cfg[k] = v
    for key in ("samples", "depth", "qbits", "width", "rows"):
        if cfg.get(key) is not None and int(cfg[key]) <= 0:
            raise UsageError(f"--{key.replace('_', '-')} must be positive")
    if cfg.get("support_cap") is not None and int(cfg["support_cap"]) <= 0:
        raise UsageError("--support-cap must be positive")
    return cfg


def _frac(x, name: str) -> Fraction:
    try:
        return Fraction(str(x))
    except (ValueError, ZeroDivisionError) as exc:
        raise UsageError(f"--{name}: cannot read {x!r} as a rational") from exc


# ---------------------------------------------------------------------------
# output


class Outputs:
    """Collects written files so the run record can list their digests."""

    def __init__(self, out: str | None):
        self.out = Path(out) if out else None
        self.files: dict[str, str] = {}

    def path(self, suffix: str = "") -> Path | None:
        if self.out is None:
            return None
        return self.out if not suffix else self.out.with_name(self.out.name + suffix)

    def write(self, text: str, suffix: str = "") -> None:
        p = self.path(suffix)
        if p is None:
            sys.stdout.write(text if text.endswith("\n") else text + "\n")
            return
        p.parent.mkdir(parents=True, exist_ok=True)
        data = text.encode()
        p.write_bytes(data)
        self.files[str(p)] = hashlib.sha256(data).hexdigest()

    def record(self, command: str, cfg: dict, started: str, result, status: int) -> None:
        rec = {
            "command": command,
            "config": dict(sorted(cfg.items())),
            "started": started,
            "finished": datetime.now(timezone.utc).isoformat(),
            "version": _version(),
            "status": status,
            "result": result,
            "outputs": self.files,
        }
        p = self.path(".run.json")
        if p is None:
            sys.stderr.write(json.dumps(rec, sort_keys=True, default=str) + "\n")
        else:
            p.write_text(json.dumps(rec, indent=2, sort_keys=True, default=str) + "\n")


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# commands


def cmd_verify(cfg: dict, out: Outputs):
    if not cfg.get("spec"):
        raise UsageError("verify needs --spec")
    M = _load_spec(cfg["spec"], cfg["support_cap"])
    v = verify(M, cfg["horizon"], support_cap=cfg["support_cap"])
    report = v.to_json()
    out.write(_dumps(report))
    return report, 0 if v.ok else 1


def _transform(cfg: dict):
    which = cfg["which"]
    cap = cfg["support_cap"]
    if which == "convert-oracle":
        obj = _load_json(cfg["spec"])
        try:
            N = OracleMartingale.from_json(obj, cap=cap)
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"{cfg['spec']}: not an oracle martingale ({exc})") from exc
        return convert_oracle_martingale(N, cfg["horizon"], require_savings=cfg["require_savings"], support_cap=cap)
    M = _load_spec(cfg["spec"], cap)
    if which == "repair":
        return repair_spec(M, support_cap=cap)
    if which == "upcross":
        a, b = _frac(cfg["a"], "a"), _frac(cfg["b"], "b")
        if not a < b:
            raise UsageError(f"upcross needs A < B, got {a} and {b}")
        return upcrossing_transform(M, a, b, support_cap=cap)
    if which == "savings":
        return savings_transform(M, support_cap=cap)
    if which == "extend":
        return extend_to_array(M)
    if which == "restrict":
        return restrict_rows(M)
    raise UsageError(f"unknown transform {which!r}")


def cmd_transform(cfg: dict, out: Outputs):
    if not cfg.get("spec"):
        raise UsageError("transform needs --spec")
    result = _transform(cfg)
    report = verify(result, support_cap=cfg["support_cap"]).to_json()
    out.write(result.dumps() + "\n")
    out.write(_dumps(report), ".verify.json")
    return {"transform": cfg["which"], "levels": len(result.levels), "verify": report}, 0 if report["ok"] else 1


def _source(cfg: dict) -> game.ScenarioSource:
    kind = cfg["scenario"].replace("-", "_")
    g = None
    if kind == "below_g":
        width = int(cfg.get("g_width", 4))
        g = lambda m: width  # noqa: E731
    try:
        return game.ScenarioSource(kind, int(cfg["seed"]), g, cfg["scenario_file"], int(cfg["width"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _strategy(cfg: dict, steps: int) -> game.RowStrategy:
    name = cfg["strategy"]
    if name not in game.STOCK_STRATEGIES:
        raise UsageError(f"unknown strategy {name!r}; choose from {', '.join(game.STOCK_STRATEGIES)}")
    return game.zero_row_strategy(steps) if name == "zero-row" else game.STOCK_STRATEGIES[name]()


def sim_game(cfg: dict, out: Outputs):
    steps = int(cfg["horizon"] or 10)
    strat = _strategy(cfg, steps)
    src = _source(cfg)
    start = _frac(cfg["start"], "start")
    samples = int(cfg["samples"] or 1)
    finals = []
    lines = ["sample,step,value\n"]
    for i in range(samples):
        t = game.run_game(strat, src, steps, start, i)
        finals.append(t.values[-1])
        lines.extend(f"{i},{n},{_fmt(v)}\n" for n, v in enumerate(t.values))
    out.write("".join(lines), ".csv")
    summary = {
        "strategy": strat.name,
        "scenario": src.kind,
        "steps": steps,
        "start": _fmt(start),
        "final": [_fmt(v) for v in finals],
        "final_over_start": [_fmt(v / start) for v in finals],
    }
    out.write(_dumps(summary))
    return summary, 0


def _fmt(v) -> str:
    v = Fraction(v)
    return str(v.numerator) if v.denominator == 1 else f"{v.numerator}/{v.denominator}"


def sim_convergence(cfg: dict, out: Outputs):
    horizons = cfg["horizons"]
    if horizons is None:
        H = int(cfg["horizon"] or 256)
        horizons = [H // 4, H // 2, H]
    elif isinstance(horizons, str):
        horizons = [int(h) for h in horizons.split(",")]
    strat = _strategy(cfg, max(horizons))
    rep = game.convergence_report(strat, _source(cfg), int(cfg["samples"] or 1000), horizons, float(cfg["eps"]))
    body = rep.to_json()
    body["strategy"] = strat.name
    out.write(_dumps(body))
    return body, 0


def sim_bm(cfg: dict, out: Outputs):
    T, dt = _frac(cfg["T"], "T"), _frac(cfg["dt"], "dt")
    n = int(cfg["samples"] or 1000)
    paths = bm.sample_paths(T, dt, n, int(cfg["seed"]))
    k = paths.shape[1] - 1
    h = k // 2
    wt = paths[:, -1]
    inc1, inc2 = paths[:, h], paths[:, -1] - paths[:, h]
    se = math.sqrt(float(T) / n)
    cov = float(np.mean(inc1 * inc2) - inc1.mean() * inc2.mean())
    stats = {
        "samples": n,
        "T": _fmt(T),
        "dt": _fmt(dt),
        "mean_WT": float(wt.mean()),
        "mean_WT_bound": 4 * se,
        "var_WT": float(wt.var(ddof=1)),
        "var_WT_expected": float(T),
        "half_increment_cov": cov,
        "half_increment_cov_se": float(np.std(inc1 * inc2, ddof=1) / math.sqrt(n)),
    }
    out.write(bm.GridPath(dt, paths[0]).to_csv(), ".csv")
    out.write(_dumps(stats))
    return stats, 0


def sim_counterexample(cfg: dict, out: Outputs):
    rep = bm.counterexample_integrals(float(cfg["radius"]))
    body = rep.to_json()
    out.write(_dumps(body))
    return body, 0


def sim_iso(cfg: dict, out: Outputs):
    L, q, n, rows = int(cfg["depth"]), int(cfg["qbits"]), int(cfg["samples"] or 1000), int(cfg["rows"])
    if q < 2:
        raise UsageError("--qbits must be at least 2")
    rng = np.random.default_rng(int(cfg["seed"]))
    width = 2 ** L * q
    bad = 0
    w1 = np.empty(n)
    for i in range(n):
        bits = rng.integers(0, 2, size=(rows, width), dtype=np.uint8)
        path = bm.bits_to_path(bits, L, q)
        bad += int(not np.array_equal(bm.path_to_bits(path, L, q), bits))
        w1[i] = path.values[2 ** L]
    body = {"depth": L, "qbits": q, "arrays": n, "rows": rows, "mismatches": bad, "var_W1": float(w1.var(ddof=1))}
    out.write(_dumps(body))
    return body, 0 if bad == 0 else 1


SIMULATIONS = {
    "game": sim_game,
    "convergence": sim_convergence,
    "bm-experiment": sim_bm,
    "counterexample": sim_counterexample,
    "iso-roundtrip": sim_iso,
}


def cmd_simulate(cfg: dict, out: Outputs):
    return SIMULATIONS[cfg["kind"]](cfg, out)


# ---------------------------------------------------------------------------
# argument parsing


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of settings (keys as flag names)")
    p.add_argument("--out", help="output file; side files get suffixes such as .csv and .run.json")
    p.add_argument("--seed", type=int, help=f"root seed (fallback: ${ENV_SEED}, then 0)")
    p.add_argument("--samples", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--support-cap", dest="support_cap", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="doobmart", description="Exact martingales on bit arrays and discretized Brownian motion.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="check a martingale spec exactly")
    _common(p)
    p.add_argument("--spec")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("transform", help="apply a transformation to a spec")
    p.add_argument("which", choices=["repair", "upcross", "savings", "extend", "restrict", "convert-oracle"])
    p.add_argument("a", nargs="?", help="lower level (upcross)")
    p.add_argument("b", nargs="?", help="upper level (upcross)")
    _common(p)
    p.add_argument("--spec")
    p.add_argument("--allow-no-savings", dest="require_savings", action="store_const", const=False,
                   help="convert-oracle: skip the savings-property precondition")
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("simulate", help="run a game, Monte Carlo or numeric experiment")
    p.add_argument("kind", choices=list(SIMULATIONS))
    _common(p)
    p.add_argument("--dt")
    p.add_argument("--T", dest="T")
    p.add_argument("--depth", type=int)
    p.add_argument("--qbits", type=int)
    p.add_argument("--radius", type=float)
    p.add_argument("--strategy")
    p.add_argument("--scenario")
    p.add_argument("--scenario-file", dest="scenario_file")
    p.add_argument("--width", type=int)
    p.add_argument("--start")
    p.add_argument("--horizons", help="comma separated, e.g. 64,128,256")
    p.add_argument("--eps", type=float)
    p.add_argument("--rows", type=int)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "transform" and args.which == "upcross" and (args.a is None or args.b is None):
        parser.error("upcross needs A and B")
    func = args.func
    started = datetime.now(timezone.utc).isoformat()
    out = Outputs(args.out)
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    try:
        cfg = resolve(args)
        result, status = func(cfg, out)
    except InputError as exc:
        print(f"doobmart: {exc}", file=sys.stderr)
        return 2
    except (UsageError, SupportCapError, SavingsError, ValueError, IndexError, bm.QuadratureError) as exc:
        print(f"doobmart: {exc}", file=sys.stderr)
        out.record(args.command, cfg, started, {"error": str(exc)}, 1)
        return 1
    out.record(args.command, cfg, started, result, status)
    return status


if __name__ == "__main__":
    sys.exit(main())
