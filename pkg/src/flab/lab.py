"""Experiment runner: configs, a registry of experiments, sweeps and report files.

Config format (JSON, schema version 1)::

    {
      "version": 1,
      "experiment": "two_ends_furstenberg_2d",
      "mode": "assert",            # assert | search | measure
      "seed": 12345,               # unsigned 64-bit master seed
      "slack": 0.0,                # extra exponent: verdict is lhs >= rhs * delta**slack
      "polylog_c": 0.0,            # adds c * log log(1/delta) to the slack exponent
      "params": {...},             # experiment parameters, see REGISTRY
      "sweep": {"k": [5, 6, 7]}    # optional Cartesian grid over params
    }

Seeds
-----
Point ``i`` of a run (a configuration of a suite, or a point of a sweep)
draws its seed from ``numpy.random.SeedSequence(master, spawn_key=(i,))``.
The derived seed depends only on ``(master, i)``, so the order or process in
which points execute cannot change any result.

Output
------
``report.csv`` (fixed column order) and ``report.json`` are byte-identical for
identical ``(config, seed)``; wall time goes to the separate ``timing.json``.
"""

from __future__ import annotations

import copy
import itertools
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import exponents, incidence, wavepackets
from .errors import ConfigError, FlabError
from .exponents import mu_thresholds
from .incidence import CSV_COLUMNS, InequalityReport, reports_to_csv
from .refine import excise_high_multiplicity

__all__ = [
    "SCHEMA_VERSION",
    "MODES",
    "REGISTRY",
    "Experiment",
    "point_seed",
    "validate_config",
    "load_config",
    "run",
    "sweep",
    "write_outputs",
    "polylog_slack",
    "build_family",
]

SCHEMA_VERSION = 1
MODES = ("assert", "search", "measure")
log = logging.getLogger("flab")


def configure_logging() -> None:
    """Set the ``flab`` logger level from ``FLAB_LOG`` (name or number, default WARNING)."""
    level = os.environ.get("FLAB_LOG", "WARNING").upper()
    value = int(level) if level.isdigit() else getattr(logging, level, logging.WARNING)
    logging.basicConfig(level=value, format="%(levelname)s %(name)s: %(message)s")
    log.setLevel(value)


def point_seed(master: int, index: int) -> int:
    """Counter-based per-point seed: first 64-bit word of ``SeedSequence(master, spawn_key=(index,))``."""
    ss = np.random.SeedSequence(int(master), spawn_key=(int(index),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def polylog_slack(delta: float, c: float) -> float:
    """Exponent ``c log log (1/delta)``, i.e. the factor ``delta^(-c log log(1/delta))``."""
    if c == 0:
        return 0.0
    return c * math.log(max(math.log(1 / delta), 1.0 + 1e-12))


# ---------------------------------------------------------------------------
# Families
# ---------------------------------------------------------------------------

GENERATORS = {
    "bush": incidence.gen_bush,
    "hairbrush": incidence.gen_hairbrush,
    "random": incidence.gen_random_two_ends,
}


def build_family(params: dict, seed: int):
    """Family from ``{generator, n, count, k, lam_exp, eps1, eps2}`` with ``lambda = delta^lam_exp``."""
    gen = params.get("generator", "random")
    if gen == "well_spaced":
        return incidence.gen_well_spaced(params["n"], params["count"], params["k"], seed, params.get("jitter", False))
    if gen not in GENERATORS:
        raise ConfigError(f"unknown generator {gen!r}; choose from {sorted(GENERATORS) + ['well_spaced']}")
    k = params["k"]
    lam = (2.0**-k) ** params.get("lam_exp", 0.0)
    return GENERATORS[gen](
        params["n"], params["count"], lam, k, seed, params.get("eps1", 0.5), params.get("eps2", 0.2)
    )


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Experiment:
    """Registry entry.

    Attributes
    ----------
    grade : str
        ``"theorem"``, ``"conjecture"`` or ``"measurement"``; only theorem-grade
        experiments may run in assert mode.
    ref : str
        Descriptive tag carried by every report row.
    required : tuple
        Parameter names the config must supply.
    defaults : dict
    runner : callable
        ``runner(params, seed, slack) -> list[InequalityReport]``.
    """

    grade: str
    ref: str
    required: tuple
    defaults: dict
    runner: Callable


def _family_params(p: dict) -> dict:
    return {k: p[k] for k in ("generator", "n", "count", "k", "lam_exp", "eps1", "eps2") if k in p}


def _checker(check):
    def run_(params, seed, slack):
        F = build_family(params, seed)
        rep = check(F, eps=params.get("eps", 0.1), slack=slack, seed=seed)
        rep.extra["family"] = _family_params(params)
        return [rep]

    run_.__name__ = check.__name__
    return run_


def _run_excision(params, seed, slack):
    F = build_family(params, seed)
    d = F.delta
    rule = params.get("rule", "hairbrush")
    rules = mu_thresholds(F.n, 1, params.get("lam_exp", 0.0), F.meta["eps1"])
    if rule not in rules:
        raise ConfigError(f"threshold rule {rule!r} is not defined for n = {F.n}; choose from {sorted(rules)}")
    thr = rules[rule]
    ex = excise_high_multiplicity(F, thr.value(d))
    # the bound reads removed <= delta^removed_exp; as lhs >= rhs that is lhs = delta^removed_exp
    rep = InequalityReport.evaluate(
        "excision",
        {"delta": d, "n": F.n, "k": F.k, "lambda": F.meta["lambda"], "eps1": F.meta["eps1"], "eps2": F.meta["eps2"]},
        lhs=d ** float(thr.removed_exp),
        rhs=ex.removed_fraction,
        slack=slack,
        seed=seed,
        extra={"mu": ex.mu, "removed_fraction": ex.removed_fraction, "threshold": thr.to_dict()},
    )
    return [rep]


def _run_well_spaced(params, seed, slack):
    F = incidence.gen_well_spaced(params["n"], params["count"], params["k"], seed, params.get("jitter", False))
    out = []
    for r in params.get("r", [2, 4, 8]):
        cen = incidence.rich_ball_census(F, r, slack=params.get("census_slack", 0.1))
        # count <= bound * delta^-census_slack, written as bound >= count * delta^census_slack
        rep = InequalityReport.evaluate(
            "well_spaced_census",
            {"delta": F.delta, "n": F.n, "k": F.k, "r": r},
            lhs=cen.bound,
            rhs=cen.count,
            slack=slack + params.get("census_slack", 0.1),
            seed=seed,
            extra={"count": cen.count, "bound": cen.bound, "r": r},
        )
        out.append(rep)
    return out


def _run_lattice(params, seed, slack):
    ex = incidence.gen_lattice_example(params["n"], params["N"], tuple(params["k"]))
    return [
        InequalityReport(
            "lattice_incidences",
            {"delta": 1.0, "n": ex.n, "N": ex.N, "k": list(ex.k)},
            lhs=float(ex.incidences),
            rhs=float(ex.num_points ** (2 / (ex.n + 1)) * ex.num_lines ** (ex.n / (ex.n + 1))),
            grade="measurement",
            seed=seed,
            extra={"points": ex.num_points, "lines": ex.num_lines, "incidences": ex.incidences},
        )
    ]


def _run_sums_diffs(params, seed, slack):
    rng = np.random.default_rng(seed)
    k = params.get("k", 8)
    size = params["size"]
    G = rng.integers(0, 2**k, size=(size, 2, params.get("n", 2) - 1))
    r1, r1p, r2, r2p, s = params.get("slopes", [1.0, 0.5, 2.0, 2.0, 3.0])
    P = incidence.ProjectionSystem(G, k, r1, r1p, r2, r2p, s)
    return [incidence.sums_diffs_check(P, seed=seed)]


def _run_six_slice(params, seed, slack):
    F = build_family(params, seed)
    rep = incidence.six_slice_experiment(F, eps=params.get("eps", 0.1), slack=params.get("six_slice_slack", 0.2), seed=seed)
    out = []
    if rep.bound is not None:
        rep.bound.extra.update({"regime": rep.regime, "matched_lines": rep.matched_lines, "heights": rep.heights})
        out.append(rep.bound)
    if rep.sums is not None:
        out.append(rep.sums)
    if not out:
        out.append(
            InequalityReport(
                "six_slice",
                {"delta": F.delta, "n": F.n, "k": F.k},
                0.0,
                0.0,
                grade="measurement",
                seed=seed,
                extra={"regime": rep.regime, "q_census": rep.q_census},
            )
        )
    return out


def _run_convex_wolff(params, seed, slack):
    F = build_family(params, seed)
    cert = incidence.convex_wolff_deficiency(F, params.get("t", 1.0))
    return [
        InequalityReport(
            "convex_wolff",
            {"delta": F.delta, "n": F.n, "k": F.k, "t": cert.t},
            lhs=cert.C_lower,
            rhs=1.0,
            grade="conjecture",
            seed=seed,
            extra={"witness": cert.witness, "contained": cert.contained, "lower_bound": True},
        )
    ]


def _run_wave_packets(params, seed, slack):
    R = params["R"]
    h = wavepackets.default_spacing(R)
    f = wavepackets.random_band_limited(R, h, seed % (2**32))
    W = wavepackets.decompose(f, R)
    A = wavepackets.audit(W)
    base = {"delta": R**-0.5, "n": 2, "R": R}
    out = [
        InequalityReport("wp_reconstruction", base, A.reconstruction, params.get("tau", 1e-3), grade="measurement", seed=seed),
        InequalityReport("wp_tail_absolute", base, A.tail_absolute, params.get("tau", 1e-3), grade="measurement", seed=seed),
        InequalityReport(
            "wp_tail_relative", base, A.tail_relative, params.get("tau", 1e-3), grade="measurement", seed=seed,
            extra={"significant": A.significant, "worst": list(A.worst)},
        ),
        InequalityReport("wp_kappa_lp", base, A.kappa_lp, 1.0, grade="measurement", seed=seed),
    ]
    shadings = params.get("shadings", 0)
    if shadings:
        lam = R ** params.get("shading_lam_exp", -0.25)
        S = [wavepackets.random_shading(W, lam, point_seed(seed, j)) for j in range(shadings)]
        ratios = wavepackets.local_l2_ratio(W, S)
        out.append(
            InequalityReport("wp_local_l2", base, max(ratios), params.get("l2_bound", 32.0), grade="measurement", seed=seed,
                             extra={"ratios": ratios})
        )
    return out


def _run_khintchine(params, seed, slack):
    R = params["R"]
    L = int(round(R**0.5))
    rng = np.random.default_rng(seed)
    caps = list(range(0, 2 * L + 1))
    tubes = [(c, float(rng.integers(-2, 3) * L)) for c in caps]
    rep = wavepackets.khintchine_kakeya_experiment(tubes, R, params.get("p0", 22 / 7), params.get("trials", 4), seed)
    return [
        InequalityReport(
            "khintchine_overlap",
            {"delta": R**-0.5, "n": 2, "R": R},
            rep.combinatorial["integral"],
            rep.bound,
            grade="measurement",
            seed=seed,
            extra={"khintchine_ratio": rep.khintchine_ratio, "square_function": rep.square_function},
        )
    ]


REGISTRY: dict = {
    "two_ends_furstenberg_2d": Experiment(
        "theorem", "planar two-ends Furstenberg bound", ("n", "count", "k"),
        {"generator": "random", "lam_exp": 0.25, "eps1": 0.5, "eps2": 0.2, "eps": 0.1},
        _checker(incidence.check_two_ends_furstenberg_2d),
    ),
    "hairbrush_3d": Experiment(
        "theorem", "two-ends hairbrush bound in R^3", ("n", "count", "k"),
        {"generator": "hairbrush", "lam_exp": 0.25, "eps1": 0.5, "eps2": 0.2, "eps": 0.1},
        _checker(incidence.check_hairbrush_3d),
    ),
    "bush_nd": Experiment(
        "theorem", "two-ends bush bound", ("n", "count", "k"),
        {"generator": "bush", "lam_exp": 0.25, "eps1": 0.5, "eps2": 0.2, "eps": 0.1},
        _checker(incidence.check_bush_nd),
    ),
    "excision": Experiment(
        "theorem", "high-multiplicity excision", ("n", "count", "k"),
        {"generator": "hairbrush", "lam_exp": 0.25, "eps1": 0.3, "eps2": 0.2, "rule": "hairbrush"},
        _run_excision,
    ),
    "well_spaced_census": Experiment(
        "theorem", "well-spaced rich-cell census", ("n", "count", "k"), {"r": [2, 4, 8], "census_slack": 0.1},
        _run_well_spaced,
    ),
    "six_slice": Experiment(
        "theorem", "slice lower bound via sums and differences", ("n", "count", "k"),
        {"generator": "random", "lam_exp": 0.25, "eps1": 0.5, "eps2": 0.2, "eps": 0.1, "six_slice_slack": 0.2},
        _run_six_slice,
    ),
    "lattice": Experiment("measurement", "lattice incidence numerology", ("n", "N", "k"), {}, _run_lattice),
    "sums_differences": Experiment(
        "measurement", "sums-and-differences projections", ("size",), {"k": 8, "n": 2}, _run_sums_diffs
    ),
    "convex_wolff": Experiment(
        "conjecture", "convex Wolff axiom (lower bound on the error)", ("n", "count", "k"),
        {"generator": "random", "lam_exp": 0.0, "t": 1.0}, _run_convex_wolff,
    ),
    "wave_packets": Experiment(
        "measurement", "wave-packet decomposition audit", ("R",), {"shadings": 0, "tau": 1e-3}, _run_wave_packets
    ),
    "khintchine": Experiment(
        "measurement", "random-sign square function and tube overlap", ("R",), {"p0": 22 / 7, "trials": 4},
        _run_khintchine,
    ),
}


ALIASES = {
    "check_two_ends_furstenberg_2d": "two_ends_furstenberg_2d",
    "check_hairbrush_3d": "hairbrush_3d",
    "check_bush_nd": "bush_nd",
}

MAX_POINTS = 4096
"""Capacity: largest number of points a single config may expand to."""

# ---------------------------------------------------------------------------
# Config validation
# ---------------------------------------------------------------------------

_TOP_KEYS = {"version", "experiment", "mode", "seed", "slack", "polylog_c", "params", "sweep", "points", "out", "jobs"}


def validate_config(cfg: dict) -> dict:
    """Check a config against the registry and fill defaults; returns a normalized copy.

    Raises
    ------
    ConfigError
        Unknown keys or experiment, wrong version, bad mode or seed, assert
        mode on a non-theorem experiment, or missing parameters.
    """
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(cfg) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if cfg.get("version", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise ConfigError(f"unsupported config version {cfg.get('version')!r}; expected {SCHEMA_VERSION}")
    name = ALIASES.get(cfg.get("experiment"), cfg.get("experiment"))
    if name not in REGISTRY:
        raise ConfigError(f"unknown experiment {name!r}; known: {sorted(REGISTRY)}")
    entry = REGISTRY[name]
    mode = cfg.get("mode", "assert" if entry.grade == "theorem" else "measure")
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}")
    if mode == "assert" and entry.grade != "theorem":
        raise ConfigError(f"{name} is {entry.grade}-grade; assert mode is reserved for theorem-grade checkers")
    seed = cfg.get("seed", 0)
    if not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    params = dict(entry.defaults)
    params.update(cfg.get("params", {}))
    sweep_ = cfg.get("sweep", {})
    if not isinstance(sweep_, dict) or not all(isinstance(v, list) for v in sweep_.values()):
        raise ConfigError("sweep must map parameter names to lists")
    points = cfg.get("points")
    if points is not None and not (isinstance(points, list) and all(isinstance(p, dict) for p in points)):
        raise ConfigError("points must be a list of parameter objects")
    missing = [k for k in entry.required if k not in params and k not in sweep_ and not (points and all(k in p for p in points))]
    if missing:
        raise ConfigError(f"{name} needs parameters {missing}")
    size = len(points) if points is not None else math.prod(len(v) for v in sweep_.values())
    if size > MAX_POINTS:
        raise ConfigError(f"config expands to {size} points; capacity is {MAX_POINTS}")
    for key in ("slack", "polylog_c"):
        if not isinstance(cfg.get(key, 0.0), (int, float)):
            raise ConfigError(f"{key} must be a number")
    return {
        "version": SCHEMA_VERSION,
        "experiment": name,
        "mode": mode,
        "seed": seed,
        "slack": float(cfg.get("slack", 0.0)),
        "polylog_c": float(cfg.get("polylog_c", 0.0)),
        "params": params,
        "sweep": sweep_,
        "points": points,
    }


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return validate_config(cfg)


# ---------------------------------------------------------------------------
# Running
# ---------------------------------------------------------------------------


def _grid_points(cfg: dict) -> list:
    base = cfg["params"]
    if cfg.get("points") is not None:
        return [{**base, **p} for p in cfg["points"]]
    keys = sorted(cfg["sweep"])
    if not keys:
        return [dict(base)]
    out = []
    for combo in itertools.product(*(cfg["sweep"][k] for k in keys)):
        p = dict(base)
        p.update(dict(zip(keys, combo)))
        out.append(p)
    return out


def _run_point(args) -> list:
    name, params, seed, slack, polylog_c, mode = args
    entry = REGISTRY[name]
    delta = 2.0 ** -params["k"] if "k" in params and isinstance(params["k"], int) else None
    total_slack = slack + (polylog_slack(delta, polylog_c) if delta else 0.0)
    try:
        reports = entry.runner(params, seed, total_slack)
    except FlabError as exc:
        raise ConfigError(f"{name} at {params}: {exc}") from exc
    rows = []
    for r in reports:
        if mode == "measure":
            r.verdict = None
        d = r.to_dict()
        d["experiment"] = name
        d["ref"] = entry.ref
        d["mode"] = mode
        d["point"] = {k: params[k] for k in sorted(params)}
        rows.append((d, r))
    return rows


def run(cfg: dict, jobs: int = 1) -> dict:
    """Execute every point of a validated config; returns the report dictionary.

    The result holds ``reports`` (dicts, each with ``experiment``, ``ref``,
    ``verdict`` and ``slack_ledger``), ``summary`` (counts and, in search
    mode, the minimal ratio) and ``fits`` for sweeps.
    """
    cfg = validate_config(cfg)
    points = _grid_points(cfg)
    tasks = [
        (cfg["experiment"], p, point_seed(cfg["seed"], i), cfg["slack"], cfg["polylog_c"], cfg["mode"])
        for i, p in enumerate(points)
    ]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_point, tasks))
    else:
        results = [_run_point(t) for t in tasks]
    rows = [d for res in results for d, _ in res]
    reports = [r for res in results for _, r in res]
    verdicts = [d["verdict"] for d in rows if d["verdict"] is not None]
    summary = {
        "points": len(points),
        "rows": len(rows),
        "passed": sum(1 for v in verdicts if v),
        "failed": sum(1 for v in verdicts if not v),
    }
    ratios = [d["ratio"] for d in rows if d["ratio"] is not None and math.isfinite(d["ratio"])]
    if cfg["mode"] == "search" and ratios:
        summary["min_ratio"] = min(ratios)
    out = {
        "schema": SCHEMA_VERSION,
        "experiment": cfg["experiment"],
        "ref": REGISTRY[cfg["experiment"]].ref,
        "grade": REGISTRY[cfg["experiment"]].grade,
        "config": cfg,
        "summary": summary,
        "reports": rows,
        "fits": _fits(cfg, points, rows) if len(points) > 1 else {},
    }
    out["_objects"] = reports
    return out


def _fits(cfg: dict, points: list, rows: list) -> dict:
    """Least-squares fits for sweeps: lattice exponents, and ``log ratio`` against ``log delta``."""
    fits = {}
    if cfg["experiment"] == "lattice":
        exs = [incidence.gen_lattice_example(p["n"], p["N"], tuple(p["k"])) for p in points]
        try:
            fits["lattice"] = incidence.fit_incidence_exponents(exs)
        except FlabError as exc:
            fits["lattice"] = {"error": str(exc)}
        return fits
    pairs = [
        (d["params"]["delta"], d["ratio"])
        for d in rows
        if d["params"].get("delta", 1) < 1 and d["ratio"] and math.isfinite(d["ratio"]) and d["ratio"] > 0
    ]
    deltas = sorted({p[0] for p in pairs})
    if len(deltas) >= 2:
        x = np.log([p[0] for p in pairs])
        y = np.log([p[1] for p in pairs])
        A = np.stack([x, np.ones_like(x)], axis=1)
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        fits["ratio_vs_delta"] = {
            "slope": float(coef[0]),
            "intercept": float(coef[1]),
            "residual": float(np.linalg.norm(A @ coef - y)),
            "points": len(pairs),
        }
    return fits


def sweep(cfg: dict, jobs: int = 1) -> dict:
    """Alias of :func:`run` for configs with a ``sweep`` grid (a single point is a plain run)."""
    return run(cfg, jobs)


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    return str(o)


def report_json(result: dict) -> str:
    clean = {k: v for k, v in result.items() if not k.startswith("_")}
    return json.dumps(clean, indent=2, sort_keys=True, default=_json_default) + "\n"


def report_csv(result: dict) -> str:
    return reports_to_csv(result.get("_objects", []))


def write_outputs(result: dict, out: Optional[os.PathLike], wall_time: Optional[float] = None) -> dict:
    """Write ``report.csv``, ``report.json`` and (if given) ``timing.json`` into ``out``."""
    if out is None:
        return {}
    d = Path(out)
    d.mkdir(parents=True, exist_ok=True)
    paths = {"csv": d / "report.csv", "json": d / "report.json"}
    paths["csv"].write_text(report_csv(result))
    paths["json"].write_text(report_json(result))
    if wall_time is not None:
        paths["timing"] = d / "timing.json"
        paths["timing"].write_text(json.dumps({"wall_time_s": round(wall_time, 3)}) + "\n")
    return paths


def timed_run(cfg: dict, jobs: int = 1) -> tuple:
    t0 = time.perf_counter()
    res = run(cfg, jobs)
    return res, time.perf_counter() - t0


def exit_code(result: dict) -> int:
    """0 unless the run was in assert mode and some verdict failed."""
    if result["config"]["mode"] == "assert" and result["summary"]["failed"]:
        return 1
    return 0


def exponent_rows(n: int, s, t, lam_exp, p=None) -> list:
    return exponents.exponent_table(n, s, t, lam_exp, p)


def merge_reports(paths) -> list:
    """Rows of several ``report.json`` files, for the ``report`` subcommand."""
    rows = []
    for p in paths:
        with open(p) as fh:
            data = json.load(fh)
        for r in data.get("reports", []):
            rows.append(copy.deepcopy(r))
    return rows


CSV_HEADER = ",".join(CSV_COLUMNS)
