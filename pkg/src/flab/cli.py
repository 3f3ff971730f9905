"""Command-line front end, installed as ``flab``.

Subcommands
-----------
gen        build a family from a config and write it as JSON
check      run one experiment config (its sweep grid, if any, included)
sweep      run a config's parameter grid and report exponent fits
fourier    decompose a random band-limited function into wave packets and audit it
exponents  print the exponent table
report     merge ``report.json`` files into one CSV

Exit codes: 0 on success (or any non-assert mode), 1 when an assert-mode
verdict fails, 2 on a configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import lab, wavepackets
from .errors import ConfigError, FlabError
from .incidence import CSV_COLUMNS

log = logging.getLogger("flab")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config file")
    common.add_argument("--seed", type=int, help="unsigned 64-bit master seed (overrides the config)")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--mode", choices=lab.MODES, help="override the config mode")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for sweep points")

    p = argparse.ArgumentParser(prog="flab", description="Discretized incidence and wave-packet experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", parents=[common], help="build a family and write family.json")
    sub.add_parser("check", parents=[common], help="run an experiment config")
    sub.add_parser("sweep", parents=[common], help="run a parameter grid with exponent fits")
    f = sub.add_parser("fourier", parents=[common], help="wave-packet decomposition audit")
    f.add_argument("--R", type=int, default=64, help="scale, a power of 4")
    f.add_argument("--shadings", type=int, default=0, help="random shadings for the local L^2 ratio")
    f.add_argument("--save-field", action="store_true", help="also write the extension on B_R as field.bin")
    e = sub.add_parser("exponents", parents=[common], help="print the exponent table")
    e.add_argument("--n", type=int, default=3)
    e.add_argument("--s", default="1")
    e.add_argument("--t", default="1")
    e.add_argument("--lam-exp", default="0")
    e.add_argument("--p", default=None)
    e.add_argument("--format", choices=("json", "csv"), default="json")
    r = sub.add_parser("report", parents=[common], help="merge report.json files into a CSV")
    r.add_argument("inputs", nargs="+", type=Path)
    return p


def _config(args) -> dict:
    if args.config is None:
        raise ConfigError("--config is required")
    try:
        raw = json.loads(args.config.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.mode is not None:
        raw["mode"] = args.mode
    return lab.validate_config(raw)


def _emit(text: str, out: Optional[Path], name: str) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text)


def cmd_gen(args) -> int:
    cfg = _config(args)
    F = lab.build_family(cfg["params"], lab.point_seed(cfg["seed"], 0))
    _emit(F.to_json() + "\n", args.out, "family.json")
    return 0


def cmd_check(args) -> int:
    cfg = _config(args)
    res, wall = lab.timed_run(cfg, args.jobs)
    if args.out is None:
        sys.stdout.write(lab.report_csv(res))
    else:
        lab.write_outputs(res, args.out, wall)
    s = res["summary"]
    log.info("%s: %d rows, %d passed, %d failed", cfg["experiment"], s["rows"], s["passed"], s["failed"])
    return lab.exit_code(res)


def cmd_sweep(args) -> int:
    return cmd_check(args)


def cmd_fourier(args) -> int:
    seed = args.seed if args.seed is not None else 0
    cfg = {
        "experiment": "wave_packets",
        "mode": "measure",
        "seed": seed,
        "params": {"R": args.R, "shadings": args.shadings},
    }
    if args.config is not None:
        cfg = _config(args)
    res, wall = lab.timed_run(cfg, 1)
    if args.out is None:
        sys.stdout.write(lab.report_json(res))
    else:
        lab.write_outputs(res, args.out, wall)
        if args.save_field:
            R = res["config"]["params"]["R"]
            h = wavepackets.default_spacing(R)
            f = wavepackets.random_band_limited(R, h, lab.point_seed(res["config"]["seed"], 0) % (2**32))
            W = wavepackets.window(f, R)
            wavepackets.save_field(args.out / "field.bin", W.full_field(), 2, R, h)
    return 0


def cmd_exponents(args) -> int:
    rows = lab.exponent_rows(args.n, args.s, args.t, args.lam_exp, args.p)
    if args.format == "json":
        text = json.dumps(rows, indent=2) + "\n"
    else:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=["name", "value", "grade", "detail"], lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        text = buf.getvalue()
    _emit(text, args.out, "exponents." + args.format)
    return 0


def cmd_report(args) -> int:
    try:
        rows = lab.merge_reports(args.inputs)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read report: {exc}") from exc
    buf = io.StringIO()
    cols = ["experiment", "ref", "mode", *CSV_COLUMNS]
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        p = r.get("params", {})
        flat = {k: p.get(k, "") for k in ("n", "k", "lambda", "m", "eps1", "eps2")}
        v = r.get("verdict")
        flat.update(
            experiment=r.get("experiment", ""),
            ref=r.get("ref", ""),
            mode=r.get("mode", ""),
            name=r.get("name", ""),
            lhs=r.get("lhs", ""),
            rhs=r.get("rhs", ""),
            ratio=r.get("ratio", ""),
            verdict="" if v is None else ("pass" if v else "fail"),
            seed=r.get("seed", ""),
        )
        w.writerow(flat)
    _emit(buf.getvalue(), args.out, "merged.csv")
    return 0


COMMANDS = {
    "gen": cmd_gen,
    "check": cmd_check,
    "sweep": cmd_sweep,
    "fourier": cmd_fourier,
    "exponents": cmd_exponents,
    "report": cmd_report,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    lab.configure_logging()
    args = _parser().parse_args(argv)
    if args.jobs < 1:
        print("flab: --jobs must be at least 1", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"flab: config error: {exc}", file=sys.stderr)
        return 2
    except FlabError as exc:
        print(f"flab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
