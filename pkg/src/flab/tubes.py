"""Discretized lines and tubes, shadings, two-ends conditions and point-line duality.

A non-horizontal line in ``R^n`` is written ``l_(a,b) = (a, 0) + R (b, 1)``
with ``a, b`` in ``R^(n-1)``; the last coordinate is the line parameter.  A
cell of the ``delta``-grid belongs to the tube around ``l`` when its centre is
at Euclidean distance strictly less than ``1.5 delta`` from ``l``.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .branching import is_uniform
from .dyadic import CellSet
from .errors import DomainError, NormalizationError, ParameterError

__all__ = [
    "TUBE_WIDTH",
    "DiscreteLine",
    "ShadedFamily",
    "dualize",
    "dualize_line",
    "dual_distance",
    "ThickenedIncidence",
    "thickened_incidence",
    "rasterize_tube",
    "TwoEndsCertificate",
    "two_ends_certificate",
    "covering_count_along",
    "ReductionScale",
    "two_ends_reduction_scale",
    "parallelism",
    "directionally_separated",
    "delta_separated",
    "Tube",
    "line_tube_distance",
    "angle_between",
    "lines_near_tube",
]

TUBE_WIDTH = 1.5
"""Cell membership radius of a tube, in units of ``delta``."""


@dataclass(frozen=True)
class DiscreteLine:
    """The line ``(a, 0) + R (b, 1)`` in ``R^n``, ``n = len(a) + 1``.

    Parameters
    ----------
    a : sequence of float
        Intercept with the hyperplane ``x_n = 0``.
    b : sequence of float
        Slope; ``|b|_2 <= 1`` keeps the direction within ``pi/4`` of vertical.
    """

    a: tuple
    b: tuple

    def __post_init__(self) -> None:
        a = tuple(float(v) for v in np.atleast_1d(self.a))
        b = tuple(float(v) for v in np.atleast_1d(self.b))
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        if len(a) != len(b) or len(a) not in (1, 2):
            raise ParameterError("a and b must both have n-1 entries with n in {2, 3}")
        if math.hypot(*b) > 1 + 1e-12:
            raise NormalizationError(f"direction (b, 1) with b={b} is more than pi/4 from vertical")

    @property
    def n(self) -> int:
        return len(self.a) + 1

    @property
    def direction(self) -> np.ndarray:
        d = np.array(self.b + (1.0,))
        return d / np.linalg.norm(d)

    @property
    def base(self) -> np.ndarray:
        return np.array(self.a + (0.0,))

    def point_at(self, t: float) -> np.ndarray:
        """The point of the line with last coordinate ``t``."""
        return np.array([ai + t * bi for ai, bi in zip(self.a, self.b)] + [t])

    def distance(self, points: np.ndarray) -> np.ndarray:
        """Euclidean distance from each row of ``points`` to the line."""
        w = np.atleast_2d(points) - self.base
        u = self.direction
        return np.linalg.norm(w - np.outer(w @ u, u), axis=1)

    def arclength(self, points: np.ndarray) -> np.ndarray:
        """Signed position of the orthogonal projection of each point along the line."""
        return (np.atleast_2d(points) - self.base) @ self.direction

    def snapped(self, delta: float) -> "DiscreteLine":
        """Round ``a`` and ``b`` to the nearest multiples of ``delta``."""
        r = lambda v: tuple(round(x / delta) * delta for x in v)  # noqa: E731
        return DiscreteLine(r(self.a), r(self.b))

    def to_dict(self) -> dict:
        return {"a": list(self.a), "b": list(self.b)}

    @classmethod
    def from_dict(cls, data: dict) -> "DiscreteLine":
        return cls(tuple(data["a"]), tuple(data["b"]))


# ---------------------------------------------------------------------------
# Duality (plane only)
# ---------------------------------------------------------------------------


def dualize(x: Sequence[float]) -> DiscreteLine:
    """Dual line of a point of the plane: ``{(a, b) : a = x1 - x2 b}``.

    A point ``x`` lies on ``l_(a,b)`` exactly when ``(a, b)`` lies on
    ``dualize(x)``.
    """
    x1, x2 = (float(v) for v in x)
    return DiscreteLine((x1,), (-x2,))


def dualize_line(line: DiscreteLine) -> tuple[float, float]:
    """Parameter point ``(a, b)`` of a planar line."""
    if line.n != 2:
        raise DomainError("duality is implemented in the plane only")
    return (line.a[0], line.b[0])


def dual_distance(x: Sequence[float], line: DiscreteLine) -> float:
    """Distance from the parameter point of ``line`` to the dual line of ``x``."""
    return float(dualize(x).distance(np.array([dualize_line(line)]))[0])


@dataclass(frozen=True)
class ThickenedIncidence:
    """Both directions of the thickened duality check for one (cell, tube) pair.

    ``primal_meets``: the cell belongs to the tube (centre within ``1.5 delta``).
    ``dual_close``: the tube's parameter point is within ``slack * delta`` of
    the dual line of the cell centre.  ``dual_meets`` and ``primal_close``
    are the same two tests with the roles exchanged.
    """

    primal_meets: bool
    dual_close: bool
    dual_meets: bool
    primal_close: bool

    @property
    def ok(self) -> bool:
        return (not self.primal_meets or self.dual_close) and (not self.dual_meets or self.primal_close)


def thickened_incidence(
    centre: Sequence[float], line: DiscreteLine, delta: float, slack: float = 4.0
) -> ThickenedIncidence:
    """Evaluate the thickened incidence equivalence for a cell centre and a tube."""
    primal = float(line.distance(np.array([centre]))[0])
    dual = dual_distance(centre, line)
    return ThickenedIncidence(
        primal_meets=primal < TUBE_WIDTH * delta,
        dual_close=dual <= slack * delta,
        dual_meets=dual < TUBE_WIDTH * delta,
        primal_close=primal <= slack * delta,
    )


# ---------------------------------------------------------------------------
# Rasterization
# ---------------------------------------------------------------------------


def _as_k(delta: float) -> int:
    k = round(-math.log2(delta))
    if k < 0 or 2.0**-k != delta:
        raise ParameterError(f"delta must be a dyadic scale 2^-k, got {delta}")
    return k


def rasterize_tube(line: DiscreteLine, delta: float) -> CellSet:
    """Cells of the ``delta``-grid of ``[0,1]^n`` whose centres lie within ``1.5 delta`` of ``line``."""
    k = _as_k(delta)
    n = line.n
    side = 1 << k
    b = np.array(line.b)
    a = np.array(line.a)
    reach = int(math.ceil(TUBE_WIDTH * math.sqrt(1 + float(b @ b)))) + 1
    rows = np.arange(side)
    z = (rows + 0.5) * delta
    core = a[None, :] + z[:, None] * b[None, :]  # (side, n-1)
    base = np.floor(core / delta).astype(np.int64)
    offs = np.stack(
        np.meshgrid(*([np.arange(-reach, reach + 1)] * (n - 1)), indexing="ij"), axis=-1
    ).reshape(-1, n - 1)
    cand = base[:, None, :] + offs[None, :, :]  # (side, m, n-1)
    row_idx = np.broadcast_to(rows[:, None, None], cand.shape[:2] + (1,))
    idx = np.concatenate([cand, row_idx], axis=2).reshape(-1, n)
    inside = np.all((idx >= 0) & (idx < side), axis=1)
    idx = idx[inside]
    if idx.size == 0:
        return CellSet(n, k)
    d = line.distance((idx + 0.5) * delta)
    return CellSet(n, k, idx[d < TUBE_WIDTH * delta])


# ---------------------------------------------------------------------------
# Shaded families
# ---------------------------------------------------------------------------


@dataclass
class ShadedFamily:
    """Lines with per-line shadings ``Y(l)`` at scale ``delta = 2**-k``.

    Parameters
    ----------
    lines : list of DiscreteLine
    k : int
        Scale exponent.
    shadings : list of CellSet
        ``Y(l)``, each contained in the rasterized tube of its line.
    meta : dict
        Certified parameters (``lambda``, ``eps1``, ``eps2``, ``C``) once they
        have been checked; absent keys mean "not certified".
    dim : int, optional
        Ambient dimension; only needed for an empty family.
    """

    lines: list
    k: int
    shadings: list
    meta: dict = field(default_factory=dict)
    dim: Optional[int] = None

    def __post_init__(self) -> None:
        if len(self.lines) != len(self.shadings):
            raise ParameterError("need one shading per line")
        ns = {ln.n for ln in self.lines} | {Y.n for Y in self.shadings}
        if len(ns) > 1:
            raise ParameterError("lines and shadings must share one dimension")
        if any(Y.k != self.k for Y in self.shadings):
            raise ParameterError("every shading must live at scale 2^-k")
        if self.dim is not None and ns and ns != {self.dim}:
            raise ParameterError("declared dimension does not match the lines")
        self._n = ns.pop() if ns else (self.dim or 2)

    @property
    def n(self) -> int:
        return self._n

    @property
    def delta(self) -> float:
        return 2.0**-self.k

    def __len__(self) -> int:
        return len(self.lines)

    def tube(self, i: int) -> CellSet:
        return rasterize_tube(self.lines[i], self.delta)

    def containment_ok(self) -> bool:
        """Every ``Y(l)`` is contained in the rasterized tube of ``l``."""
        return all(Y.issubset(self.tube(i)) for i, Y in enumerate(self.shadings))

    def densities(self) -> np.ndarray:
        """``|Y(l)| / |N_delta(l)|`` for every line."""
        return np.array([len(Y) / max(len(self.tube(i)), 1) for i, Y in enumerate(self.shadings)])

    def is_lambda_dense(self, lam: float) -> bool:
        return bool(np.all(self.densities() >= lam * (1 - 1e-12)))

    def total_mass(self) -> int:
        """``sum_l #Y(l)`` in cells."""
        return int(sum(len(Y) for Y in self.shadings))

    def union(self) -> CellSet:
        """``E_{L,Y}``."""
        if not self.shadings:
            return CellSet(self.n, self.k)
        return CellSet(self.n, self.k, np.concatenate([Y.flat for Y in self.shadings]))

    def multiplicity(self) -> tuple[np.ndarray, np.ndarray]:
        """Cells of ``E_L`` (flat indices) and ``#L_Y(x)`` for each."""
        if not self.shadings:
            return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
        return np.unique(np.concatenate([Y.flat for Y in self.shadings]), return_counts=True)

    def incidence_lists(self) -> dict:
        """Map from flat cell index to the list of line positions whose shading contains it."""
        out: dict[int, list[int]] = {}
        for i, Y in enumerate(self.shadings):
            for c in Y.flat.tolist():
                out.setdefault(c, []).append(i)
        return out

    def subfamily(self, positions: Iterable[int], shadings: Optional[Sequence[CellSet]] = None) -> "ShadedFamily":
        pos = list(positions)
        shade = [self.shadings[i] for i in pos] if shadings is None else list(shadings)
        return ShadedFamily([self.lines[i] for i in pos], self.k, shade, {}, self.n)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "k": self.k,
            "lines": [ln.to_dict() for ln in self.lines],
            "shadings": [Y.to_dict() for Y in self.shadings],
            "meta": dict(self.meta),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, data: dict) -> "ShadedFamily":
        return cls(
            [DiscreteLine.from_dict(d) for d in data["lines"]],
            int(data["k"]),
            [CellSet.from_dict(d) for d in data["shadings"]],
            dict(data.get("meta", {})),
            int(data["n"]),
        )

    @classmethod
    def from_json(cls, text: str) -> "ShadedFamily":
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# Two-ends
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TwoEndsCertificate:
    """Outcome of :func:`two_ends_certificate`.

    ``segment`` is the arclength interval ``[t, t + delta^eps1]`` of the
    heaviest window and ``fraction`` its share of the shading.
    """

    ok: bool
    fraction: float
    bound: float
    segment: tuple


def _projections(Y: CellSet, line: DiscreteLine) -> np.ndarray:
    if Y.n != line.n:
        raise ParameterError("shading and line have different dimensions")
    return np.sort(line.arclength(Y.centers))


def _max_window(t: np.ndarray, r: float) -> tuple[int, int]:
    """Largest number of sorted values in a closed window of length ``r`` and its first index."""
    hi = np.searchsorted(t, t + r * (1 + 1e-12), side="right")
    counts = hi - np.arange(len(t))
    i = int(np.argmax(counts))
    return int(counts[i]), i


def two_ends_certificate(
    Y: CellSet, line: DiscreteLine, eps1: float, eps2: float, C: float = 1.0
) -> TwoEndsCertificate:
    """Check ``|Y ∩ J| <= C delta^eps2 |Y|`` for every ``delta x delta^eps1`` segment ``J`` of the tube.

    Segments are windows of length ``delta^eps1`` along the line, applied to
    the orthogonal projections of the cell centres; the maximum over all
    window positions is exact.
    """
    if not 0 < eps2 < eps1 < 1:
        raise ParameterError("two-ends parameters need 0 < eps2 < eps1 < 1")
    if C <= 0:
        raise ParameterError("C must be positive")
    if len(Y) == 0:
        raise DomainError("two-ends condition of an empty shading is undefined")
    delta = Y.delta
    r = delta**eps1
    t = _projections(Y, line)
    count, i = _max_window(t, r)
    frac = count / len(t)
    bound = C * delta**eps2
    return TwoEndsCertificate(frac <= bound * (1 + 1e-12), frac, bound, (float(t[i]), float(t[i] + r)))


def covering_count_along(Y: CellSet, line: DiscreteLine, r: float) -> int:
    """``|Y|_r``: least number of length-``r`` segments of the tube covering ``Y``.

    Computed by the greedy cover of the sorted projections, which is optimal
    for intervals on a line.
    """
    t = _projections(Y, line)
    count = 0
    i = 0
    while i < len(t):
        count += 1
        i = int(np.searchsorted(t, t[i] + r * (1 + 1e-12), side="right"))
    return count


@dataclass(frozen=True)
class ReductionScale:
    """``rho`` from the two-ends reduction; ``never_qualified`` marks the default ``rho = 1``."""

    rho: float
    never_qualified: bool
    counts: dict


def two_ends_reduction_scale(
    Y: CellSet,
    line: DiscreteLine,
    v: float,
    C: float = 1.0,
    two_ends: Optional[tuple] = None,
) -> ReductionScale:
    """Least dyadic ``r`` in ``[delta, 1]`` with ``|Y|_r < r^(-v) / C``.

    If no ``r`` qualifies the result is ``rho = 1`` with ``never_qualified``
    set.  When ``two_ends = (eps1, eps2)`` is given, ``v < eps2`` and ``Y`` is
    ``(eps1, eps2, C)``-two-ends, the result is asserted to satisfy
    ``rho >= delta^eps1``.
    """
    if not 0 < v < 1:
        raise ParameterError("v must lie in (0, 1)")
    if C < 1:
        raise ParameterError("C must be at least 1")
    if len(Y) == 0:
        raise DomainError("empty shading")
    rows = CellSet(1, Y.k, Y.indices[:, -1])
    if not is_uniform(rows):
        warnings.warn("shading is not uniform along the tube", stacklevel=2)
    counts = {}
    rho = None
    for j in range(Y.k, -1, -1):
        r = 2.0**-j
        c = covering_count_along(Y, line, r)
        counts[r] = c
        if rho is None and c < r**-v / C:
            rho = r
    flag = rho is None
    if flag:
        rho = 1.0
    if two_ends is not None:
        eps1, eps2 = two_ends
        if v < eps2 and two_ends_certificate(Y, line, eps1, eps2, C).ok and not flag:
            assert rho >= Y.delta**eps1 * (1 - 1e-12), "two-ends shading with rho below delta^eps1"
    return ReductionScale(rho, flag, counts)


# ---------------------------------------------------------------------------
# Directions and separation
# ---------------------------------------------------------------------------


def _slopes(L: Sequence[DiscreteLine]) -> np.ndarray:
    return np.array([ln.b for ln in L], dtype=float).reshape(len(L), -1)


def parallelism(L: Sequence[DiscreteLine], delta: float) -> int:
    """Largest number of lines (with multiplicity) whose slopes share a ``delta``-cell of direction space."""
    if not L:
        return 0
    bins = np.floor(_slopes(L) / delta + 1e-9).astype(np.int64)
    _, counts = np.unique(bins, axis=0, return_counts=True)
    return int(counts.max())


def directionally_separated(L: Sequence[DiscreteLine], delta: float) -> bool:
    """Slopes pairwise at least ``delta`` apart in sup norm."""
    b = _slopes(L)
    if len(b) < 2:
        return True
    d = np.abs(b[:, None, :] - b[None, :, :]).max(axis=2)
    np.fill_diagonal(d, np.inf)
    return bool(d.min() >= delta * (1 - 1e-12))


def delta_separated(L: Sequence[DiscreteLine], delta: float) -> bool:
    """Parameter points ``(a, b)`` pairwise at least ``delta`` apart in sup norm."""
    if len(L) < 2:
        return True
    p = np.array([ln.a + ln.b for ln in L], dtype=float)
    d = np.abs(p[:, None, :] - p[None, :, :]).max(axis=2)
    np.fill_diagonal(d, np.inf)
    return bool(d.min() >= delta * (1 - 1e-12))


@dataclass(frozen=True)
class Tube:
    """Tube of cross-section radius ``radius`` around the unit-height segment of ``core``."""

    core: DiscreteLine
    radius: float


def line_tube_distance(line: DiscreteLine, core: DiscreteLine) -> float:
    """Distance from ``line`` to the segment of ``core`` with last coordinate in ``[0, 1]``."""
    u = line.direction
    p0 = core.point_at(0.0) - line.base
    p1 = core.point_at(1.0) - core.point_at(0.0)
    w0 = p0 - (p0 @ u) * u
    w1 = p1 - (p1 @ u) * u
    denom = float(w1 @ w1)
    t = 0.0 if denom == 0 else min(max(-float(w0 @ w1) / denom, 0.0), 1.0)
    return float(np.linalg.norm(w0 + t * w1))


def angle_between(l1: DiscreteLine, l2: DiscreteLine) -> float:
    """Angle in ``[0, pi/2]`` between the directions of two lines."""
    c = abs(float(l1.direction @ l2.direction))
    return math.acos(min(c, 1.0))


def lines_near_tube(L: Sequence[DiscreteLine], T: Tube, delta: Optional[float] = None) -> list[int]:
    """Positions of the lines that meet ``T`` and make angle at most ``T.radius`` with its core."""
    if delta is not None and T.radius < delta:
        raise ParameterError("tube radius must be at least delta")
    return [
        i
        for i, ln in enumerate(L)
        if angle_between(ln, T.core) <= T.radius + 1e-12
        and line_tube_distance(ln, T.core) <= T.radius + 1e-12
    ]
