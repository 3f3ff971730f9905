"""Incidence oracles, inequality checkers and example generators.

The checkers measure ``|E_L|`` directly from the cell union and compare it
with a right-hand side computed from the family's certified parameters.  The
generators build families with known structure (bushes, hairbrushes, random
two-ends families, well-spaced tube lattices) and certify them with the
validators of :mod:`flab.tubes`.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .dyadic import CellSet
from .errors import CertificateError, DomainError, ParameterError, PreconditionError
from .refine import SlackLedger, dyadic_pigeonhole
from .tubes import (
    DiscreteLine,
    ShadedFamily,
    delta_separated,
    directionally_separated,
    parallelism,
    rasterize_tube,
    two_ends_certificate,
)

__all__ = [
    "CSV_COLUMNS",
    "InequalityReport",
    "reports_to_csv",
    "union_measure",
    "multiplicity_census",
    "certify",
    "check_two_ends_furstenberg_2d",
    "check_hairbrush_3d",
    "check_bush_nd",
    "LatticeExample",
    "gen_lattice_example",
    "count_incidences",
    "fit_incidence_exponents",
    "gen_bush",
    "gen_hairbrush",
    "gen_random_two_ends",
    "gen_well_spaced",
    "well_spaced_ok",
    "tube_family",
    "RichCensus",
    "rich_ball_census",
    "WolffCertificate",
    "convex_wolff_deficiency",
    "ProjectionSystem",
    "sums_diffs_check",
    "SixSliceReport",
    "six_slice_experiment",
]

CSV_COLUMNS = ("name", "n", "k", "lambda", "m", "eps1", "eps2", "lhs", "rhs", "ratio", "verdict", "seed")


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass
class InequalityReport:
    """One evaluated inequality ``lhs >= rhs * delta**slack``.

    Attributes
    ----------
    name : str
    params : dict
        ``delta``, ``n``, ``k`` and whichever of ``lambda, m, eps1, eps2, s, t`` apply.
    lhs, rhs : float
    slack : float
        Exponent of the extra ``delta`` factor allowed by the verdict.
    verdict : bool or None
        ``None`` when the check was only measured (conjectures, skipped preconditions).
    grade : str
        ``"theorem"`` or ``"conjecture"``.
    ledger : list
        Slack ledger entries ``{op, factor}``.
    """

    name: str
    params: dict
    lhs: float
    rhs: float
    slack: float = 0.0
    verdict: Optional[bool] = None
    grade: str = "theorem"
    seed: Optional[int] = None
    ledger: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def ratio(self) -> float:
        return self.lhs / self.rhs if self.rhs > 0 else math.inf

    @classmethod
    def evaluate(cls, name, params, lhs, rhs, slack=0.0, grade="theorem", **kw) -> "InequalityReport":
        delta = params["delta"]
        verdict = bool(lhs >= rhs * delta**slack * (1 - 1e-12)) if grade == "theorem" else None
        return cls(name, dict(params), float(lhs), float(rhs), slack, verdict, grade, **kw)

    def to_row(self) -> dict:
        p = self.params
        return {
            "name": self.name,
            "n": p.get("n", ""),
            "k": p.get("k", ""),
            "lambda": _fmt(p.get("lambda")),
            "m": p.get("m", ""),
            "eps1": _fmt(p.get("eps1")),
            "eps2": _fmt(p.get("eps2")),
            "lhs": _fmt(self.lhs),
            "rhs": _fmt(self.rhs),
            "ratio": _fmt(self.ratio),
            "verdict": "" if self.verdict is None else ("pass" if self.verdict else "fail"),
            "seed": "" if self.seed is None else self.seed,
        }

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "params": {k: _jsonable(v) for k, v in self.params.items()},
            "lhs": self.lhs,
            "rhs": self.rhs,
            "ratio": self.ratio,
            "slack": self.slack,
            "verdict": self.verdict,
            "grade": self.grade,
            "seed": self.seed,
            "slack_ledger": list(self.ledger),
            "extra": {k: _jsonable(v) for k, v in self.extra.items()},
        }


def _fmt(x) -> str:
    if x is None or x == "":
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _jsonable(v):
    if isinstance(v, Fraction):
        return str(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def reports_to_csv(reports: Sequence[InequalityReport]) -> str:
    """CSV text with the fixed column order :data:`CSV_COLUMNS`."""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerow(r.to_row())
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------


def union_measure(F: ShadedFamily) -> Fraction:
    """``|E_L|`` as an exact rational ``delta**n * #cells``."""
    return F.union().measure


def multiplicity_census(F: ShadedFamily) -> dict:
    """Histogram ``{#L(x): number of cells x of E_L}``."""
    _, counts = F.multiplicity()
    return dict(sorted(Counter(counts.tolist()).items()))


def _cell_measure(F: ShadedFamily) -> float:
    return F.delta**F.n


# ---------------------------------------------------------------------------
# Certificates
# ---------------------------------------------------------------------------


def certify(F: ShadedFamily, lam: float, eps1: float, eps2: float, C: float = 1.0) -> dict:
    """Validate density, two-ends, parallelism and separation, and record them in ``F.meta``.

    Raises
    ------
    CertificateError
        If the shading is not ``lam``-dense or some line fails the two-ends test.
    """
    if not 0 < lam <= 1:
        raise ParameterError("lambda must lie in (0, 1]")
    if len(F) and not F.containment_ok():
        raise CertificateError("a shading leaves its tube")
    if len(F) and not F.is_lambda_dense(lam):
        raise CertificateError(f"shading is not {lam}-dense (min density {F.densities().min():.4f})")
    worst = 0.0
    for ln, Y in zip(F.lines, F.shadings):
        cert = two_ends_certificate(Y, ln, eps1, eps2, C)
        if not cert.ok:
            raise CertificateError(f"two-ends fails: fraction {cert.fraction:.4f} > {cert.bound:.4f}")
        worst = max(worst, cert.fraction)
    meta = {
        "lambda": float(lam),
        "eps1": float(eps1),
        "eps2": float(eps2),
        "C": float(C),
        "m": parallelism(F.lines, F.delta),
        "delta_separated": delta_separated(F.lines, F.delta),
        "directionally_separated": directionally_separated(F.lines, F.delta),
        "two_ends_worst": worst,
    }
    F.meta.update(meta)
    return meta


def _require(F: ShadedFamily, n: Optional[Sequence[int]], one_parallel: bool) -> dict:
    if n is not None and F.n not in n:
        raise DomainError(f"checker needs n in {tuple(n)}, got {F.n}")
    missing = [k for k in ("lambda", "eps1", "eps2", "m", "delta_separated") if k not in F.meta]
    if missing:
        raise PreconditionError(f"family lacks certificates: {', '.join(missing)}")
    if not F.meta["delta_separated"]:
        raise PreconditionError("family is not delta-separated")
    if one_parallel and F.meta["m"] > 1:
        raise PreconditionError(f"family is {F.meta['m']}-parallel, not 1-parallel")
    if len(F) == 0:
        raise DomainError("empty family")
    return F.meta


def _params(F: ShadedFamily, meta: dict, eps: float) -> dict:
    return {
        "delta": F.delta,
        "n": F.n,
        "k": F.k,
        "lambda": meta["lambda"],
        "m": meta["m"],
        "eps1": meta["eps1"],
        "eps2": meta["eps2"],
        "eps": eps,
        "lines": len(F),
    }


# ---------------------------------------------------------------------------
# Checkers
# ---------------------------------------------------------------------------


def check_two_ends_furstenberg_2d(F: ShadedFamily, eps: float = 0.1, slack: float = 0.0, seed=None) -> InequalityReport:
    """Planar two-ends Furstenberg inequality ``|E_L| >= delta^eps delta^(eps1/2) lambda^(1/2) sum |Y|``."""
    meta = _require(F, (2,), one_parallel=True)
    d, lam, e1 = F.delta, meta["lambda"], meta["eps1"]
    lhs = float(union_measure(F))
    mass = F.total_mass() * _cell_measure(F)
    rhs = d**eps * d ** (e1 / 2) * lam**0.5 * mass
    return InequalityReport.evaluate("two_ends_furstenberg_2d", _params(F, meta, eps), lhs, rhs, slack, seed=seed)


def check_hairbrush_3d(F: ShadedFamily, eps: float = 0.1, slack: float = 0.0, seed=None) -> InequalityReport:
    """Two-ends hairbrush bound ``|E_L| >= delta^eps delta^(3eps1/4) lambda^(3/4) delta^(1/2) sum |Y|``."""
    meta = _require(F, (3,), one_parallel=True)
    d, lam, e1 = F.delta, meta["lambda"], meta["eps1"]
    lhs = float(union_measure(F))
    mass = F.total_mass() * _cell_measure(F)
    rhs = d**eps * d ** (3 * e1 / 4) * lam**0.75 * d**0.5 * mass
    return InequalityReport.evaluate("hairbrush_3d", _params(F, meta, eps), lhs, rhs, slack, seed=seed)


def check_bush_nd(F: ShadedFamily, eps: float = 0.1, slack: float = 0.0, seed=None) -> InequalityReport:
    """Two-ends bush bound ``|E_L| >= delta^eps delta^(eps1/2) lambda delta^((n-1)/2) (delta^(n-1) #L)^(1/2)``."""
    meta = _require(F, (2, 3), one_parallel=False)
    d, lam, e1, n = F.delta, meta["lambda"], meta["eps1"], F.n
    lhs = float(union_measure(F))
    rhs = d**eps * d ** (e1 / 2) * lam * d ** ((n - 1) / 2) * (d ** (n - 1) * len(F)) ** 0.5
    return InequalityReport.evaluate("bush_nd", _params(F, meta, eps), lhs, rhs, slack, seed=seed)


# ---------------------------------------------------------------------------
# Lattice example
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LatticeExample:
    """Lattice points and lines ``y = a + x b`` with their incidence count.

    Points are ``(x, y)`` with ``x`` in ``[0, N]`` and ``y_j`` in ``[0, k_j N]``;
    lines have ``a_j`` in ``[1, k_j N]`` and ``b_j`` in ``[1, k_j]``.
    """

    n: int
    N: int
    k: tuple
    points: np.ndarray
    a: np.ndarray
    b: np.ndarray
    incidences: int

    @property
    def num_points(self) -> int:
        return len(self.points)

    @property
    def num_lines(self) -> int:
        return len(self.a)


LATTICE_CAPACITY = 2**32


def _lattice(n: int, N: int, k: Sequence[int]):
    if n not in (2, 3):
        raise DomainError("lattice example is built for n in {2, 3}")
    k = tuple(int(x) for x in k)
    if len(k) != n - 1 or N < 1 or any(x < 1 for x in k):
        raise ParameterError("need N >= 1 and n-1 integers k_j >= 1")
    if N**n * math.prod(x * x for x in k) > LATTICE_CAPACITY:
        raise ParameterError("lattice configuration exceeds the 2^32 size guard")
    xs = [np.arange(N + 1)] + [np.arange(kj * N + 1) for kj in k]
    points = np.stack(np.meshgrid(*xs, indexing="ij"), axis=-1).reshape(-1, n)
    a = np.stack(np.meshgrid(*[np.arange(1, kj * N + 1) for kj in k], indexing="ij"), axis=-1).reshape(-1, n - 1)
    b = np.stack(np.meshgrid(*[np.arange(1, kj + 1) for kj in k], indexing="ij"), axis=-1).reshape(-1, n - 1)
    A = np.repeat(a, len(b), axis=0)
    B = np.tile(b, (len(a), 1))
    return k, points, A, B


def count_incidences(points: np.ndarray, a: np.ndarray, b: np.ndarray, chunk: int = 1 << 22) -> int:
    """Exhaustive count of pairs ``(p, l)`` with ``p_y = a_l + p_x b_l``."""
    total = 0
    rows = max(1, chunk // max(len(a), 1))
    for s in range(0, len(points), rows):
        P = points[s : s + rows]
        pred = a[None, :, :] + P[:, None, :1] * b[None, :, :]
        total += int(np.all(pred == P[:, None, 1:], axis=2).sum())
    return total


def gen_lattice_example(n: int, N: int, k: Sequence[int]) -> LatticeExample:
    """Lattice configuration with exhaustively counted incidences."""
    k, points, A, B = _lattice(n, N, k)
    return LatticeExample(n, N, k, points, A, B, count_incidences(points, A, B))


def fit_incidence_exponents(examples: Sequence[LatticeExample]) -> dict:
    """Least-squares fit of ``log I = c + alpha log #P + beta log #L``.

    The sweep must vary both ``N`` and ``k``: along a sweep in ``N`` alone
    ``log #P`` and ``log #L`` are affine in ``log N`` and the two exponents
    are not identifiable.

    Returns
    -------
    dict
        ``alpha``, ``beta``, ``intercept``, the residual norm, the target
        ``(2/(n+1), n/(n+1))`` and the sup-distance to it.

    Raises
    ------
    DomainError
        If the design matrix is rank deficient.
    """
    if not examples:
        raise DomainError("need at least one example")
    n = examples[0].n
    X = np.array([[math.log(e.num_points), math.log(e.num_lines), 1.0] for e in examples])
    y = np.array([math.log(max(e.incidences, 1)) for e in examples])
    if len({e.N for e in examples}) < 2 or len({e.k for e in examples}) < 2 or np.linalg.matrix_rank(X) < 3:
        raise DomainError("sweep does not identify both exponents; vary N and k")
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = float(np.linalg.norm(X @ coef - y))
    target = (2 / (n + 1), n / (n + 1))
    return {
        "alpha": float(coef[0]),
        "beta": float(coef[1]),
        "intercept": float(coef[2]),
        "residual": resid,
        "target": target,
        "distance": float(max(abs(coef[0] - target[0]), abs(coef[1] - target[1]))),
    }


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------


def _grid_slopes(rng, n: int, k: int, count: int, bound: float) -> np.ndarray:
    """``count`` distinct slopes on the ``delta``-grid inside ``[-bound, bound]^(n-1)``."""
    side = 1 << k
    m = int(math.floor(bound * side))
    per_axis = 2 * m + 1
    capacity = per_axis ** (n - 1)
    if count > capacity:
        raise ParameterError(f"at most {capacity} direction-separated slopes fit, asked for {count}")
    flat = rng.choice(capacity, size=count, replace=False)
    idx = np.stack(np.unravel_index(flat, (per_axis,) * (n - 1)), axis=1) - m
    return idx / side


def _spread_rows(rng, side: int, lam: float) -> np.ndarray:
    """Stratified random row selection: one row per block of ``floor(1/lam)`` rows."""
    step = max(1, int(math.floor(1 / lam)))
    starts = np.arange(0, side, step)
    picks = starts + rng.integers(0, step, size=len(starts))
    return np.unique(np.minimum(picks, side - 1))


def _shade(rng, T: CellSet, lam: float) -> CellSet:
    side = T.side
    rows = T.indices[:, -1]
    chosen = _spread_rows(rng, side, lam)
    mask = np.isin(rows, chosen)
    # top up with whole rows until the density reaches lam
    spare = [r for r in rng.permutation(np.unique(rows)) if r not in set(chosen.tolist())]
    while mask.sum() < lam * len(T) and spare:
        mask |= rows == spare.pop()
    return T.take(mask)


def _lam_value(lam: float) -> float:
    if not 0 < lam <= 1:
        raise ParameterError(f"lambda must lie in (0, 1], got {lam}")
    return float(lam)


def _finish(lines, k, lam, eps1, eps2, rng, C=1.0, name="", seed=None, n=None) -> ShadedFamily:
    d = 2.0**-k
    shadings = [_shade(rng, rasterize_tube(ln, d), lam) for ln in lines]
    F = ShadedFamily(list(lines), k, shadings, {}, n)
    if lines:
        certify(F, lam, eps1, eps2, C)
    F.meta.update({"generator": name, "seed": seed})
    return F


def gen_bush(n: int, count: int, lam: float, k: int, seed: int, eps1: float = 0.5, eps2: float = 0.25) -> ShadedFamily:
    """``count`` lines through the centre cell with distinct grid slopes and spread shadings."""
    lam = _lam_value(lam)
    rng = np.random.default_rng(seed)
    d = 2.0**-k
    centre = np.full(n, 0.5 + d / 2)
    slopes = _grid_slopes(rng, n, k, count, 0.5)
    lines = [DiscreteLine(tuple(centre[:-1] - centre[-1] * s), tuple(s)) for s in slopes]
    F = _finish(lines, k, lam, eps1, eps2, rng, name="bush", seed=seed, n=n)
    F.meta["root"] = centre.tolist()
    return F


def gen_hairbrush(n: int, count: int, lam: float, k: int, seed: int, eps1: float = 0.5, eps2: float = 0.2) -> ShadedFamily:
    """Lines meeting a vertical stem at random heights, with distinct grid slopes.

    For ``n = 2`` this is the planar projection of a hairbrush: lines crossing
    one common line at spread-out points.
    """
    lam = _lam_value(lam)
    rng = np.random.default_rng(seed)
    d = 2.0**-k
    stem = np.full(n - 1, 0.5 + d / 2)
    slopes = _grid_slopes(rng, n, k, count, 0.5)
    heights = rng.uniform(0.1, 0.9, size=len(slopes))
    lines = [DiscreteLine(tuple(stem - z * s), tuple(s)) for z, s in zip(heights, slopes)]
    F = _finish(lines, k, lam, eps1, eps2, rng, name="hairbrush", seed=seed, n=n)
    F.meta["stem"] = DiscreteLine(tuple(stem), (0.0,) * (n - 1)).to_dict()
    return F


def gen_random_two_ends(
    n: int, count: int, lam: float, k: int, seed: int, eps1: float = 0.5, eps2: float = 0.2
) -> ShadedFamily:
    """Random lines with distinct grid slopes in ``[-1/4, 1/4]`` and stratified two-ends shadings."""
    lam = _lam_value(lam)
    if count < 0:
        raise ParameterError("count must be non-negative")
    rng = np.random.default_rng(seed)
    if count == 0:
        return ShadedFamily([], k, [], {"generator": "random_two_ends", "seed": seed}, n)
    slopes = _grid_slopes(rng, n, k, count, 0.25)
    base = rng.uniform(0.25, 0.75, size=(count, n - 1))
    lines = [DiscreteLine(tuple(a), tuple(s)) for a, s in zip(base, slopes)]
    return _finish(lines, k, lam, eps1, eps2, rng, name="random_two_ends", seed=seed, n=n)


def gen_well_spaced(n: int, count: int, k: int, seed: int = 0, jitter: bool = False) -> ShadedFamily:
    """Well-spaced tubes: one line per cell of a ``W^(2(n-1))`` grid of parameter space.

    Parameter space is ``a`` in ``[0,1]^(n-1)`` times ``b`` in
    ``[-1/2,1/2]^(n-1)``, cut into boxes of side ``1/W`` with
    ``W^(2(n-1)) = count``.  Each box holds one line, at its centre (the
    lattice) or, with ``jitter``, at a uniform point of the box.  Shadings are
    the full tubes.
    """
    if n not in (2, 3):
        raise DomainError("well-spaced families are built for n in {2, 3}")
    W = round(count ** (1 / (2 * (n - 1))))
    if W < 1 or W ** (2 * (n - 1)) != count:
        raise ParameterError(f"count must be W^{2 * (n - 1)} for an integer W")
    if W > (1 << k):
        raise ParameterError("boxes finer than delta")
    rng = np.random.default_rng(seed)
    grid = np.stack(np.meshgrid(*([np.arange(W)] * (2 * (n - 1))), indexing="ij"), axis=-1).reshape(-1, 2 * (n - 1))
    off = rng.uniform(0, 1, size=grid.shape) if jitter else np.full(grid.shape, 0.5)
    pts = (grid + off) / W
    lines = [DiscreteLine(tuple(p[: n - 1]), tuple(p[n - 1 :] - 0.5)) for p in pts]
    F = tube_family(lines, k)
    F.meta.update({"generator": "well_spaced", "W": W, "seed": seed})
    if not well_spaced_ok(F.lines, W):
        raise CertificateError("well-spaced census failed on generated family")
    return F


def well_spaced_ok(lines: Sequence[DiscreteLine], W: int) -> bool:
    """Each of the ``W^(2(n-1))`` parameter boxes holds exactly one line."""
    if not lines:
        return W == 0
    n = lines[0].n
    p = np.array([list(ln.a) + [x + 0.5 for x in ln.b] for ln in lines])
    box = np.clip(np.floor(p * W).astype(np.int64), 0, W - 1)
    keys = Counter(map(tuple, box.tolist()))
    return len(keys) == W ** (2 * (n - 1)) and all(v == 1 for v in keys.values()) and len(lines) == len(keys)


def tube_family(lines: Sequence[DiscreteLine], k: int) -> ShadedFamily:
    """Family whose shadings are the full rasterized tubes."""
    d = 2.0**-k
    return ShadedFamily(list(lines), k, [rasterize_tube(ln, d) for ln in lines])


# ---------------------------------------------------------------------------
# Rich cells
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RichCensus:
    """Number of ``r``-rich cells and the well-spaced bound ``(#T)^(n/(n-1)) / r^((n+1)/(n-1))``."""

    r: int
    count: int
    bound: float
    slack: float
    delta: float

    @property
    def ok(self) -> bool:
        return self.count <= self.bound * self.delta**-self.slack * (1 + 1e-12)

    @property
    def ratio(self) -> float:
        return self.count / self.bound


def rich_ball_census(F: ShadedFamily, r: int, slack: float = 0.1) -> RichCensus:
    """Exact count of cells lying in at least ``r`` shadings, against the well-spaced bound."""
    if F.n not in (2, 3):
        raise DomainError("census is defined for n in {2, 3}")
    if r < 1:
        raise ParameterError("richness must be at least 1")
    _, counts = F.multiplicity()
    n = F.n
    bound = len(F) ** (n / (n - 1)) / r ** ((n + 1) / (n - 1))
    return RichCensus(r, int((counts >= r).sum()), bound, slack, F.delta)


# ---------------------------------------------------------------------------
# Convex Wolff axiom
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WolffCertificate:
    """Largest ``#T[U] / (|U|^t #T)`` over the witness dictionary; a lower bound on the true error."""

    C_lower: float
    witness: str
    contained: int
    volume: float
    t: float
    examined: int
    lower_bound: bool = True


def _all_centres(n: int, k: int) -> np.ndarray:
    side = 1 << k
    idx = np.stack(np.meshgrid(*([np.arange(side)] * n), indexing="ij"), axis=-1).reshape(-1, n)
    return (idx + 0.5) / side


def convex_wolff_deficiency(F: ShadedFamily, t: float, widths: Optional[Sequence[float]] = None) -> WolffCertificate:
    """Scan a finite dictionary of convex sets for ``max #T[U] / (|U|^t #T)``.

    Dictionary (every set rasterized to the cells whose centres it contains):

    * the unit cube (the only dyadic cube that can contain a unit-height tube);
    * slabs ``|x_j - c| < w`` normal to each horizontal axis, and tilted slabs
      ``|x_j - b_j x_n - a_j| < w`` through each line of the family, for
      dyadic ``w`` from ``delta`` to ``1/2`` and ``c`` on the ``w``-grid;
    * tubes of radius ``1.5 delta 2^i`` around each line of the family.

    A tube belongs to ``T[U]`` when all cells of its rasterization lie in ``U``.
    """
    if F.n != 3:
        raise DomainError("convex Wolff scan is implemented for n = 3")
    if not 0 < t < 2:
        raise ParameterError("t must lie in (0, 2)")
    if len(F) == 0:
        raise DomainError("empty family")
    k, d = F.k, F.delta
    X = _all_centres(3, k)
    side = 1 << k
    tubes = [rasterize_tube(ln, d).flat for ln in F.lines]
    total = len(F)
    best = (0.0, "", 0, 0.0)
    examined = 0

    def consider(mask: np.ndarray, label: str):
        nonlocal best, examined
        examined += 1
        vol = mask.sum() * d**3
        if vol == 0:
            return
        inside = sum(1 for T in tubes if mask[T].all())
        if inside == 0:
            return
        val = inside / (vol**t * total)
        if val > best[0]:
            best = (val, label, inside, vol)

    consider(np.ones(side**3, dtype=bool), "cube")
    ws = list(widths) if widths is not None else [2.0**-j for j in range(1, k + 1)]
    for w in ws:
        for j in (0, 1):
            for c in np.arange(w / 2, 1, w):
                consider(np.abs(X[:, j] - c) < w, f"slab x{j + 1}={c:.4f} w={w}")
            for i, ln in enumerate(F.lines):
                consider(np.abs(X[:, j] - ln.b[j] * X[:, 2] - ln.a[j]) < w, f"tilted slab {j + 1} line {i} w={w}")
    radii = [1.5 * d * 2**i for i in range(0, k + 1) if 1.5 * d * 2**i <= 1]
    for i, ln in enumerate(F.lines):
        dist = ln.distance(X)
        for rad in radii:
            consider(dist < rad, f"tube line {i} r={rad}")
    val, label, inside, vol = best
    return WolffCertificate(val, label, inside, vol, t, examined)


# ---------------------------------------------------------------------------
# Sums and differences
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProjectionSystem:
    """Pairs ``(a, b)`` on the ``delta``-grid with the six slopes ``0, r1, r1', r2, r2', inf``.

    Attributes
    ----------
    G : numpy.ndarray
        Integer array of shape ``(N, 2, n-1)``; the pair is ``delta * G[i]``.
    k : int
        ``delta = 2**-k``.
    r1, r1p, r2, r2p : float
    s : float
        Must satisfy ``s = r_j + r_j / r_j'`` within ``tol`` (default ``delta``) for ``j = 1, 2``.
    """

    G: np.ndarray
    k: int
    r1: float
    r1p: float
    r2: float
    r2p: float
    s: float
    tol: Optional[float] = None

    def __post_init__(self):
        G = np.asarray(self.G, dtype=np.int64)
        if G.ndim == 2:
            G = G[:, :, None]
        if G.ndim != 3 or G.shape[1] != 2:
            raise ParameterError("G must have shape (N, 2, n-1)")
        object.__setattr__(self, "G", G)
        tol = 2.0**-self.k if self.tol is None else self.tol
        for r, rp in ((self.r1, self.r1p), (self.r2, self.r2p)):
            if r == 0 or rp == 0 or abs(r + r / rp - self.s) > tol * (1 + 1e-9):
                raise ParameterError(f"slope constraint s = r + r/r' violated for ({r}, {rp})")

    @property
    def delta(self) -> float:
        return 2.0**-self.k

    @property
    def slopes(self) -> dict:
        return {"0": 0.0, "r1": self.r1, "r1'": self.r1p, "r2": self.r2, "r2'": self.r2p, "inf": math.inf}

    def projection_count(self, t: float) -> int:
        """``#pi_t(G)`` with values binned to the ``delta``-grid; ``t = inf`` is the ``b`` projection."""
        if len(self.G) == 0:
            return 0
        a, b = self.G[:, 0, :], self.G[:, 1, :]
        if math.isinf(t):
            v = b
        elif t == 0:
            v = a
        elif t == -1:
            v = a - b
        else:
            v = np.floor(a + t * b + 1e-9).astype(np.int64)
        return int(len(np.unique(v, axis=0)))


def sums_diffs_check(P: ProjectionSystem, seed=None) -> InequalityReport:
    """Measure ``#pi_{-1}(G)`` against ``sup_t #pi_t(G)^(7/4)`` over the six slopes.

    The report's ``lhs`` is the supremum to the power ``7/4`` and ``rhs`` is
    ``#pi_{-1}(G)``, so ``ratio = 1 / (#pi_{-1} / sup^(7/4))``; the
    ``extra`` field carries all counts and ``diff_ratio = #pi_{-1}/sup^(7/4)``.
    The trivial bounds ``#pi_t <= #G`` and ``#pi_{-1} <= #pi_0 #pi_inf`` are asserted.
    """
    counts = {name: P.projection_count(t) for name, t in P.slopes.items()}
    diff = P.projection_count(-1)
    N = len(np.unique(P.G.reshape(len(P.G), -1), axis=0)) if len(P.G) else 0
    if any(c > N for c in counts.values()) or diff > N:
        raise CertificateError("a projection has more values than G has points")
    if diff > counts["0"] * counts["inf"]:
        raise CertificateError("#pi_-1 exceeds #pi_0 * #pi_inf")
    sup = max(counts.values()) if counts else 0
    ratio = diff / sup**1.75 if sup else 0.0
    rep = InequalityReport(
        "sums_differences",
        {"delta": P.delta, "k": P.k, "n": P.G.shape[2] + 1, "s": P.s, "size": N},
        lhs=float(sup) ** 1.75,
        rhs=float(diff),
        verdict=None,
        grade="measurement",
        seed=seed,
        extra={"counts": counts, "pi_minus_1": diff, "diff_ratio": ratio},
    )
    return rep


# ---------------------------------------------------------------------------
# Six-slice experiment
# ---------------------------------------------------------------------------


@dataclass
class SixSliceReport:
    """Outcome of :func:`six_slice_experiment`.

    Attributes
    ----------
    regime : str
        ``"ran"``, ``"skipped"`` (density below the threshold) or ``"measure-only"``
        (no two-ends certificate).
    heights : dict
        Row indices ``t1 .. t6`` that were selected.
    q_census : dict
        Median and minimum of ``#Q_{t1,t2}(l)`` over lines, and ``lambda^2 N^2``.
    matched_lines : int
        ``#L'``: lines whose shading meets all six heights.
    sums : InequalityReport or None
        Sums-and-differences report on the assembled ``G``.
    bound : InequalityReport or None
        ``|E_L|`` against ``lambda^((2n+10)/7) delta^((3n-3)/7) (sum |Y|)^(4/7)``.
    """

    regime: str
    heights: dict
    q_census: dict
    matched_lines: int
    sums: Optional[InequalityReport]
    bound: Optional[InequalityReport]
    ledger: list


def six_slice_experiment(
    F: ShadedFamily,
    eps: float = 0.1,
    slack: float = 0.2,
    separation: float = 0.125,
    seed=None,
) -> SixSliceReport:
    """Slice-based lower bound for ``|E_L|`` following the sums-and-differences sketch.

    Heights are rows of the grid.  A line ``x' = a + z b`` meets heights
    ``z1, z2`` at ``u = a + z1 b`` and ``v = a + z2 b``; at any other height
    its position is ``(1 - theta) pi_r(u, v)`` with ``r = (z - z1)/(z2 - z)``,
    so slice sizes are projection counts of ``G = {(u, v)}``.

    Steps
    -----
    1. Pigeonhole rows by slice size ``#(E_L)_z``; keep that band of heights.
    2. Pick ``t1 < t2`` in the band, at least ``1/2`` apart, met by the most lines.
    3. ``Q(l)``: pairs ``(t3, t4)`` of rows of ``Y(l)`` with all six pairwise
       distances at least ``separation``; reported as median and minimum over lines.
    4. Bin ``s(t3, t4) = r3 + r3/r4`` at resolution ``delta`` and pick two pairs in one
       bin with ``|t3 - t5| >= separation * lambda^2`` maximising the number of lines meeting all
       six heights.
    5. Run :func:`sums_diffs_check` on ``G`` of those lines.
    """
    if F.n not in (2, 3):
        raise DomainError("six-slice experiment is implemented for n in {2, 3}")
    ledger = SlackLedger()
    d, k, n, side = F.delta, F.k, F.n, 1 << F.k
    lam = F.meta.get("lambda")
    two_ends = all(key in F.meta for key in ("lambda", "eps1", "eps2"))
    if len(F) == 0:
        raise DomainError("empty family")
    if two_ends and lam < d ** (0.5 - eps):
        return SixSliceReport("skipped", {}, {}, 0, None, None, [])

    E = F.union()
    rows_E = E.indices[:, -1]
    slice_sizes = np.bincount(rows_E, minlength=side)
    occupied = np.flatnonzero(slice_sizes)
    ph = dyadic_pigeonhole(occupied.tolist(), weight=lambda z: float(slice_sizes[z]))
    ledger.add("six_slice:height_band", ph.factor)
    band = np.array(ph.subset)

    R = np.zeros((len(F), side), dtype=bool)
    for i, Y in enumerate(F.shadings):
        R[i, np.unique(Y.indices[:, -1])] = True
    Rf = R.astype(np.int64)
    pair_lines = Rf.T @ Rf  # lines meeting both rows

    z = (np.arange(side) + 0.5) * d
    best = None
    for t1, t2 in itertools.combinations(band.tolist(), 2):
        if abs(z[t2] - z[t1]) >= 0.5 and (best is None or pair_lines[t1, t2] > best[0]):
            best = (int(pair_lines[t1, t2]), t1, t2)
    if best is None or best[0] == 0:
        return SixSliceReport("measure-only", {}, {}, 0, None, None, ledger.to_list())
    _, t1, t2 = best
    z1, z2 = z[t1], z[t2]
    if pair_lines[t1, t2] < len(F):
        ledger.add("six_slice:t1_t2_lines", len(F) / pair_lines[t1, t2])

    far = np.abs(z[:, None] - z[None, :]) >= separation
    ok_row = far[t1] & far[t2]
    valid = far & ok_row[:, None] & ok_row[None, :]
    carriers = R[:, [t1, t2]].all(axis=1)
    q = np.array([int(valid[np.ix_(R[i], R[i])].sum()) for i in np.flatnonzero(carriers)])
    q_census = {
        "median": float(np.median(q)) if len(q) else 0.0,
        "min": int(q.min()) if len(q) else 0,
        "lambda2N2": (lam or 0.0) ** 2 * side**2,
    }

    def r_of(zz):
        return (zz - z1) / (z2 - zz)

    cand = np.argwhere(np.triu(valid, 1) | np.tril(valid, -1))
    if len(cand) == 0:
        return SixSliceReport("measure-only", {"t1": t1, "t2": t2}, q_census, 0, None, None, ledger.to_list())
    r3, r4 = r_of(z[cand[:, 0]]), r_of(z[cand[:, 1]])
    svals = r3 + r3 / r4
    weight = pair_lines[cand[:, 0], cand[:, 1]]
    bins = np.floor(svals / d).astype(np.int64)
    min_gap = separation * (lam or 1.0) ** 2
    chosen = None
    order = np.lexsort((-weight, bins))
    groups = np.split(order, np.flatnonzero(np.diff(bins[order])) + 1)
    for g in groups:
        top = g[:24]
        for p, qq in itertools.combinations(top, 2):
            a3, a4 = cand[p]
            a5, a6 = cand[qq]
            if abs(z[a3] - z[a5]) < min_gap or a3 == a5:
                continue
            if abs(svals[p] - svals[qq]) > d:
                continue
            lines = np.flatnonzero(carriers & R[:, a3] & R[:, a4] & R[:, a5] & R[:, a6])
            if chosen is None or len(lines) > len(chosen[1]):
                chosen = ((int(a3), int(a4), int(a5), int(a6)), lines, float(svals[p]))
    heights = {"t1": int(t1), "t2": int(t2)}
    if chosen is None or len(chosen[1]) == 0:
        return SixSliceReport("measure-only", heights, q_census, 0, None, None, ledger.to_list())
    (a3, a4, a5, a6), Lp, s = chosen
    heights.update({"t3": a3, "t4": a4, "t5": a5, "t6": a6})
    ledger.add("six_slice:matched_lines", len(F) / len(Lp))

    G = []
    for i in Lp:
        ln = F.lines[i]
        u = np.floor((np.array(ln.a) + z1 * np.array(ln.b)) / d + 1e-9).astype(np.int64)
        v = np.floor((np.array(ln.a) + z2 * np.array(ln.b)) / d + 1e-9).astype(np.int64)
        G.append([u, v])
    G = np.array(G, dtype=np.int64)
    r1, r1p, r2, r2p = r_of(z[a3]), r_of(z[a4]), r_of(z[a5]), r_of(z[a6])
    P = ProjectionSystem(G, k, r1, r1p, r2, r2p, r1 + r1 / r1p)
    sums = sums_diffs_check(P, seed=seed)
    sums.ledger = ledger.to_list()

    bound = None
    if two_ends:
        lhs = float(union_measure(F))
        mass = F.total_mass() * d**n
        rhs = d**eps * lam ** ((2 * n + 10) / 7) * d ** ((3 * n - 3) / 7) * mass ** (4 / 7)
        params = _params(F, F.meta, eps) if "m" in F.meta else {"delta": d, "n": n, "k": k, "lambda": lam}
        bound = InequalityReport.evaluate("six_slice_katz_tao", params, lhs, rhs, slack, seed=seed, ledger=ledger.to_list())
    regime = "ran" if two_ends else "measure-only"
    return SixSliceReport(regime, heights, q_census, len(Lp), sums, bound, ledger.to_list())
