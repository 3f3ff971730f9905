"""Uniform sets, branching functions and the multi-scale decomposition.

Everything lives on the dyadic ladder ``rho_j = 2**-j``, ``j = 0..k`` for a
set at scale ``delta = 2**-k``.  A branching function is sampled at
``x_j = j/k`` with ``beta(x_j) = log_{1/delta} |E|_{rho_j}``; its slopes are
``log2`` of consecutive covering-count ratios and therefore lie in ``[0, n]``.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .dyadic import CellSet, covering_set
from .errors import CertificateError, DomainError, ParameterError, PreconditionError
from .setclasses import frostman_deficiency

__all__ = [
    "UniformizationReport",
    "uniformize",
    "uniformize_report",
    "uniformity_errors",
    "is_uniform",
    "BranchingFunction",
    "branching_function",
    "ClusterResult",
    "cluster_branching",
    "MultiScalePlan",
    "lipschitz_partition",
    "check_partition",
    "eta0",
    "BlockCertificate",
    "MultiScaleReport",
    "multiscale_decompose",
]

_TOL = Fraction(1, 10**9)


# ---------------------------------------------------------------------------
# Uniformization
# ---------------------------------------------------------------------------


def _level_masses(E: CellSet, j: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Level-``j`` owner of every cell, the occupied level-``j`` cells and their masses."""
    coarse = E.indices >> (E.k - j)
    side = 1 << j
    owner = np.zeros(len(E), dtype=np.int64)
    for axis in range(E.n):
        owner = owner * side + coarse[:, axis]
    cells, counts = np.unique(owner, return_counts=True)
    return owner, cells, counts


@dataclass(frozen=True)
class UniformizationReport:
    """Result of :func:`uniformize_report`.

    Attributes
    ----------
    E : CellSet
        The uniform refinement.
    ratio : float
        ``#E' / #E``.
    bands : tuple of int
        Number of occupied dyadic mass bands at each level ``j = 0..k``
        at the moment that level was processed.
    bound : float
        The guaranteed lower bound ``prod_j 1/(2 bands_j)`` for ``ratio``.
    """

    E: CellSet
    ratio: float
    bands: tuple
    bound: float


def uniformize_report(E: CellSet) -> UniformizationReport:
    """Uniform refinement by dyadic pigeonholing, with bookkeeping.

    Levels are processed from the finest to the coarsest.  At level ``j``
    the occupied cells are sorted into bands ``[2**m, 2**(m+1))`` by their
    current mass and every cell outside the heaviest band is discarded
    together with all its descendants.  Removing whole cells leaves the
    masses of surviving cells at finer levels unchanged, so when the sweep
    ends every level has all masses inside one band: the output is uniform
    with error 2 at every scale.  Each level keeps at least ``1/bands_j`` of
    the remaining mass.
    """
    if len(E) == 0:
        raise DomainError("cannot uniformize the empty set")
    cur = E
    bands = [1] * (E.k + 1)
    for j in range(E.k - 1, -1, -1):
        owner, cells, counts = _level_masses(cur, j)
        band = np.floor(np.log2(counts)).astype(np.int64)
        weights = np.bincount(band, weights=counts)
        occupied = np.flatnonzero(weights)
        bands[j] = len(occupied)
        # heaviest band; ties go to the band of larger cells
        best = occupied[np.lexsort((occupied, weights[occupied]))[-1]]
        keep_cells = cells[band == best]
        cur = cur.take(np.isin(owner, keep_cells))
    bound = float(np.prod([1.0 / (2 * b) for b in bands]))
    return UniformizationReport(cur, len(cur) / len(E), tuple(bands), bound)


def uniformize(E: CellSet) -> CellSet:
    """Return a uniform refinement ``E' ⊆ E`` with error 2 at every scale.

    See :func:`uniformize_report` for the construction and the loss.
    """
    return uniformize_report(E).E


def uniformity_errors(E: CellSet) -> list[float]:
    """Ratio ``max / min`` of the masses of occupied level-``j`` cells, for ``j = 0..k``."""
    if len(E) == 0:
        raise DomainError("uniformity of the empty set is undefined")
    out = []
    for j in range(E.k + 1):
        _, _, counts = _level_masses(E, j)
        out.append(float(counts.max() / counts.min()))
    return out


def is_uniform(E: CellSet, C: float = 2.0) -> bool:
    """True when at every level the occupied cells have masses within a factor ``C``.

    With ``C = 2`` the comparison is strict, matching the half-open bands
    produced by :func:`uniformize`.
    """
    errs = uniformity_errors(E)
    if C == 2.0:
        return all(e < 2.0 for e in errs)
    return all(e <= C for e in errs)


# ---------------------------------------------------------------------------
# Branching functions
# ---------------------------------------------------------------------------


def _as_fraction(v) -> Fraction:
    if isinstance(v, Fraction):
        return v
    if isinstance(v, int):
        return Fraction(v)
    return Fraction(float(v))


@dataclass(frozen=True)
class BranchingFunction:
    """Piecewise-linear branching function sampled at ``0 = x_0 < ... < x_N = 1``.

    Samples are stored as exact fractions (floats are converted exactly), so
    every inequality evaluated on them is decided without rounding.

    Parameters
    ----------
    x : sequence
        Sample abscissae, strictly increasing from 0 to 1.
    beta : sequence
        Values, with ``beta[0] = 0`` and slopes in ``[0, n]``.
    n : int
        Ambient dimension, the Lipschitz constant.
    """

    x: tuple
    beta: tuple
    n: int = 1

    def __post_init__(self) -> None:
        xs = tuple(_as_fraction(v) for v in self.x)
        bs = tuple(_as_fraction(v) for v in self.beta)
        object.__setattr__(self, "x", xs)
        object.__setattr__(self, "beta", bs)
        if len(xs) != len(bs) or len(xs) < 2:
            raise ParameterError("need at least two samples with matching lengths")
        if xs[0] != 0 or xs[-1] != 1:
            raise ParameterError("samples must start at 0 and end at 1")
        if bs[0] != 0:
            raise ParameterError("beta(0) must be 0")
        for i in range(len(xs) - 1):
            dx = xs[i + 1] - xs[i]
            if dx <= 0:
                raise ParameterError("sample abscissae must be strictly increasing")
            slope = (bs[i + 1] - bs[i]) / dx
            if slope < -_TOL or slope > self.n + _TOL:
                raise ParameterError(f"slope {float(slope):.6g} on segment {i} is outside [0, {self.n}]")

    @classmethod
    def from_function(cls, f: Callable, N: int, n: int = 1) -> "BranchingFunction":
        """Sample ``f`` at ``j/N`` for ``j = 0..N``; ``f`` should return exact values where possible."""
        xs = [Fraction(j, N) for j in range(N + 1)]
        return cls(tuple(xs), tuple(f(x) for x in xs), n)

    @property
    def slopes(self) -> list[Fraction]:
        return [
            (self.beta[i + 1] - self.beta[i]) / (self.x[i + 1] - self.x[i])
            for i in range(len(self.x) - 1)
        ]

    def __call__(self, t: float) -> float:
        return float(np.interp(t, [float(v) for v in self.x], [float(v) for v in self.beta]))

    def normalized(self) -> "BranchingFunction":
        """Divide by ``n`` to obtain a non-decreasing 1-Lipschitz function on ``[0, 1]``."""
        return BranchingFunction(self.x, tuple(b / self.n for b in self.beta), 1)

    def distance(self, other: "BranchingFunction") -> float:
        """Sup-distance over the common samples."""
        if self.x != other.x:
            raise ParameterError("branching functions are sampled on different ladders")
        return float(max(abs(a - b) for a, b in zip(self.beta, other.beta)))

    def to_dict(self) -> dict:
        return {"n": self.n, "x": [float(v) for v in self.x], "beta": [float(v) for v in self.beta]}


def branching_function(E: CellSet) -> BranchingFunction:
    """Branching function of ``E`` on the dyadic ladder.

    ``beta(j/k) = log2(|E|_{2^-j}) / k``; a warning is issued if ``E`` is not
    uniform with error 2.
    """
    if len(E) == 0:
        raise DomainError("branching function of the empty set is undefined")
    if E.k == 0:
        raise DomainError("a single-scale set has no branching function")
    if not is_uniform(E):
        warnings.warn("branching_function called on a set that is not uniform", stacklevel=2)
    counts = [len(covering_set(E, 2.0**-j)) for j in range(E.k + 1)]
    xs = [Fraction(j, E.k) for j in range(E.k + 1)]
    beta = [math.log2(c) / E.k for c in counts]
    beta[0] = 0.0
    return BranchingFunction(tuple(xs), tuple(beta), E.n)


@dataclass(frozen=True)
class ClusterResult:
    """Largest cluster of branching functions.

    Attributes
    ----------
    members : list of int
        Positions (in the input family) of the selected sets.
    representative : BranchingFunction
        Branching function of the cluster centre.
    centre : int
        Position of the cluster centre.
    eps : float
        Cluster radius ``1/|ln delta|``.
    size_bound : float
        ``#family / (n ln2 |ln delta|)^k``, the guaranteed size.
    """

    members: list
    representative: BranchingFunction
    centre: int
    eps: float
    size_bound: float


def cluster_branching(family: Sequence[CellSet]) -> ClusterResult:
    """Select a large subfamily sharing one branching function up to ``1/|ln delta|``.

    Every member is tried as a centre; the subfamily is the members whose
    branching functions lie within ``eps/2`` of it (sup over samples), and
    the largest such subfamily wins (ties go to the earliest centre).  With
    radius ``eps/2`` each member is within ``eps`` of the representative and
    members are pairwise within ``eps`` of each other.
    """
    if len(family) == 0:
        raise DomainError("cannot cluster an empty family")
    k, n = family[0].k, family[0].n
    if any(E.k != k or E.n != n for E in family):
        raise ParameterError("all members must share the same scale and dimension")
    betas = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for E in family:
            betas.append(branching_function(E))
    vec = np.array([[float(b) for b in bf.beta] for bf in betas])
    eps = 1.0 / (k * math.log(2))
    dist = np.abs(vec[:, None, :] - vec[None, :, :]).max(axis=2)
    within = dist <= eps / 2 + 1e-12
    sizes = within.sum(axis=1)
    centre = int(np.argmax(sizes))
    members = [int(i) for i in np.flatnonzero(within[centre])]
    bound = len(family) / (n * math.log(2) * k * math.log(2)) ** k
    return ClusterResult(members, betas[centre], centre, eps, bound)


# ---------------------------------------------------------------------------
# Lipschitz partition
# ---------------------------------------------------------------------------


def eta0(eta: float) -> float:
    """``eta ** (2 / eta)``."""
    return float(eta) ** (2.0 / float(eta))


@dataclass(frozen=True)
class MultiScalePlan:
    """Partition ``0 = A_1 < ... < A_{H+1} = 1`` with strictly increasing slopes.

    Slopes are in the units of the function that was partitioned: ``[0, 1]``
    for a normalized branching function, ``[0, n]`` for a raw one.
    """

    eta: float
    A: tuple
    slopes: tuple

    def __post_init__(self) -> None:
        object.__setattr__(self, "A", tuple(_as_fraction(a) for a in self.A))
        object.__setattr__(self, "slopes", tuple(_as_fraction(s) for s in self.slopes))
        if len(self.A) != len(self.slopes) + 1 or not self.slopes:
            raise ParameterError("need H >= 1 slopes and H+1 endpoints")
        if self.A[0] != 0 or self.A[-1] != 1:
            raise ParameterError("partition must run from 0 to 1")
        if any(b <= a for a, b in zip(self.A, self.A[1:])):
            raise ParameterError("partition must be strictly increasing")
        if any(t <= s for s, t in zip(self.slopes, self.slopes[1:])):
            raise ParameterError("slopes must be strictly increasing")

    @property
    def H(self) -> int:
        return len(self.slopes)

    @property
    def eta0(self) -> float:
        return eta0(self.eta)

    def blocks(self):
        """Iterate over ``(A_h, A_{h+1}, s_h)``."""
        return zip(self.A[:-1], self.A[1:], self.slopes)

    def to_dict(self) -> dict:
        return {
            "eta": self.eta,
            "blocks": [
                {"A_lo": float(a), "A_hi": float(b), "slope": float(s)} for a, b, s in self.blocks()
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "MultiScalePlan":
        blocks = data["blocks"]
        A = [Fraction(str(b["A_lo"])).limit_denominator(10**6) for b in blocks]
        A.append(Fraction(str(blocks[-1]["A_hi"])).limit_denominator(10**6))
        return cls(float(data["eta"]), tuple(A), tuple(Fraction(b["slope"]) for b in blocks))

    @classmethod
    def from_json(cls, text: str) -> "MultiScalePlan":
        return cls.from_dict(json.loads(text))


def _convex_minorant_vertices(xs: Sequence[Fraction], fs: Sequence[Fraction]) -> list[int]:
    """Indices of the vertices of the greatest convex minorant (lower hull), exact arithmetic."""
    hull: list[int] = []
    for i in range(len(xs)):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            # drop b if it lies on or above the segment a -> i
            if (fs[b] - fs[a]) * (xs[i] - xs[a]) >= (fs[i] - fs[a]) * (xs[b] - xs[a]):
                hull.pop()
            else:
                break
        hull.append(i)
    return hull


def check_partition(beta: BranchingFunction, plan: MultiScalePlan) -> list[str]:
    """Evaluate the four partition conclusions on the sample grid.

    Returns a list of human-readable violations (empty when all hold).  Block
    endpoints must be sample points; between samples both sides are linear,
    so checking at the samples is exact.
    """
    xs, fs = beta.x, beta.beta
    pos = {x: i for i, x in enumerate(xs)}
    eta = _as_fraction(plan.eta)
    problems = []
    min_len = eta0(plan.eta) / plan.eta
    for h, (a, b, s) in enumerate(plan.blocks(), start=1):
        if a not in pos or b not in pos:
            problems.append(f"block {h}: endpoints are not sample points")
            continue
        ia, ib = pos[a], pos[b]
        if b - a < min_len:
            problems.append(f"block {h}: length {float(b - a):.4g} < eta0/eta")
        slack = eta * (b - a)
        for i in range(ia, ib + 1):
            if fs[i] < fs[ia] + s * (xs[i] - a) - slack:
                problems.append(f"block {h}: lower chord bound fails at x={float(xs[i]):.4g}")
                break
        if fs[ib] > fs[ia] + (s + 3 * eta) * (b - a):
            problems.append(f"block {h}: upper endpoint bound fails")
    if plan.slopes[0] < 0:
        problems.append("s_1 < 0")
    if plan.slopes[-1] < fs[-1] - fs[0] - eta:
        problems.append("s_H < f(1) - f(0) - eta")
    return problems


def _partition(beta: BranchingFunction, eta: Fraction, min_len: float) -> MultiScalePlan:
    xs, fs = beta.x, beta.beta
    hull = _convex_minorant_vertices(xs, fs)
    total = fs[-1] - fs[0]

    def slope(i: int, j: int) -> Fraction:
        return (fs[j] - fs[i]) / (xs[j] - xs[i])

    # Each hull piece satisfies every conclusion with zero slack.  Greedily
    # merge consecutive pieces while the merged block keeps the slope of its
    # first piece and still satisfies the upper endpoint bound (and, for the
    # final block, the bound on s_H).
    A = [0]
    S = []
    p = 0
    while p < len(hull) - 1:
        start = hull[p]
        s = slope(start, hull[p + 1])
        q = p + 1
        while q < len(hull) - 1:
            end = hull[q + 1]
            if fs[end] - fs[start] > (s + 3 * eta) * (xs[end] - xs[start]):
                break
            if end == hull[-1] and s < total - eta:
                break
            q += 1
        # a block shorter than eta0/eta must absorb its successor
        while xs[hull[q]] - xs[start] < min_len and q < len(hull) - 1:
            q += 1
        A.append(hull[q])
        S.append(s)
        p = q
    plan = MultiScalePlan(float(eta), tuple(xs[i] for i in A), tuple(S))
    return plan


def lipschitz_partition(beta: BranchingFunction, eta: float) -> MultiScalePlan:
    """Partition a non-decreasing 1-Lipschitz function into nearly linear blocks.

    The blocks are built from the greatest convex minorant of the samples:
    each linear piece of the minorant touches the function at its ends and
    lies below it in between, and the minorant's slopes increase strictly.
    Consecutive pieces are merged while the merged block still meets the
    upper endpoint bound with the slope of its first piece.  All four
    conclusions are then verified exactly on the samples.

    Parameters
    ----------
    beta : BranchingFunction
        Must have ``n == 1`` (use :meth:`BranchingFunction.normalized`).
    eta : float
        Tolerance in ``(0, 1/10]``.

    Returns
    -------
    MultiScalePlan
        Slopes in ``[0, 1]``.

    Raises
    ------
    CertificateError
        If the verification fails, which indicates a bug in the construction.
    """
    if not 0 < eta <= 0.1:
        raise ParameterError("eta must lie in (0, 1/10]")
    if beta.n != 1 or beta.beta[-1] > 1:
        raise PreconditionError("lipschitz_partition needs a normalized 1-Lipschitz function")
    plan = _partition(beta, _as_fraction(eta), eta0(eta) / eta)
    problems = check_partition(beta, plan)
    if problems:
        raise CertificateError("partition construction failed: " + "; ".join(problems))
    return plan


# ---------------------------------------------------------------------------
# Multi-scale decomposition of a family
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BlockCertificate:
    """Checks of one member on one block.

    Attributes
    ----------
    member : int
        Position of the member in the family.
    block : int
        Block number ``h`` (1-based).
    log_ratio : float
        ``log_{1/delta}(|E|_{delta^{A_{h+1}}} / |E|_{delta^{A_h}})``.
    log_ratio_bound : float
        ``(s_h + 4 eta)(A_{h+1} - A_h)``.
    frostman_C : float
        Largest Frostman constant at exponent ``s_h`` over the rescaled blocks.
    frostman_bound : float
        ``delta^(-4 eta (A_{h+1} - A_h)) * 4**n``.
    """

    member: int
    block: int
    log_ratio: float
    log_ratio_bound: float
    frostman_C: float
    frostman_bound: float

    @property
    def ok_ratio(self) -> bool:
        return self.log_ratio <= self.log_ratio_bound + 1e-12

    @property
    def ok_frostman(self) -> bool:
        return self.frostman_C <= self.frostman_bound * (1 + 1e-12)


@dataclass(frozen=True)
class MultiScaleReport:
    """Plan plus per-member certificates from :func:`multiscale_decompose`."""

    plan: MultiScalePlan
    certificates: list
    top_exponent: list
    precondition_ok: bool
    failures: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def _block_frostman(E: CellSet, a: int, b: int, s: float) -> float:
    """Largest Frostman constant of the ``delta^{-A_h}``-dilates of ``(E)_{2^-b}`` inside level-``a`` cells."""
    fine = covering_set(E, 2.0**-b)
    if s <= 0:
        return 1.0
    shift = b - a
    if shift == 0:
        return 1.0
    parent = fine.indices >> shift
    local = fine.indices - (parent << shift)
    order = np.lexsort(parent.T[::-1])
    parent, local = parent[order], local[order]
    breaks = np.flatnonzero(np.any(np.diff(parent, axis=0) != 0, axis=1)) + 1
    worst = 0.0
    for chunk in np.split(local, breaks):
        sub = CellSet(E.n, shift, chunk)
        worst = max(worst, frostman_deficiency(sub, min(s, E.n)).C_min)
    return worst


def multiscale_decompose(family: Sequence[CellSet], eta: float) -> MultiScaleReport:
    """Multi-scale decomposition of a family sharing a branching function.

    The representative branching function of the family (the cluster centre
    from :func:`cluster_branching`) is partitioned in its native units,
    slopes in ``[0, n]``, with the greatest-convex-minorant construction of
    :func:`lipschitz_partition`.  Block slopes are then raised where a member
    needs it for the covering-ratio bound or the final-slope bound, and
    neighbouring blocks are merged until the slopes increase strictly.  For
    every member and block the covering-ratio bound, the rescaled Frostman
    bound and the final-slope bound are computed and any violation is
    reported.

    The guarantee of the underlying proposition needs
    ``|ln delta| * eta0(eta) > 2``; ``precondition_ok`` records whether it
    holds, and the checks are run either way.
    """
    if not family:
        raise DomainError("empty family")
    if not 0 < eta < 1:
        raise ParameterError("eta must lie in (0, 1)")
    E0 = family[0]
    k, n = E0.k, E0.n
    if any(E.k != k or E.n != n for E in family):
        raise ParameterError("all members must share the same scale and dimension")
    cluster = cluster_branching(family)
    rep = cluster.representative
    eta_f = _as_fraction(eta)
    base = _partition(rep, eta_f, eta0(eta) / eta)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        betas = [branching_function(E) for E in family]
    levels = [int(a * k) for a in base.A]
    top = [float(b.beta[-1]) for b in betas]

    def needed(lo: int, hi: int, s: Fraction, last: bool) -> Fraction:
        width = Fraction(hi - lo, k)
        req = s
        for bf in betas:
            rise = bf.beta[hi] - bf.beta[lo]
            req = max(req, rise / width - 4 * eta_f)
            if last:
                req = max(req, bf.beta[-1] - eta_f)
        return req

    def rep_slope(lo: int, hi: int) -> Fraction:
        width = [Fraction(i - lo, k) for i in range(lo + 1, hi + 1)]
        return min((rep.beta[i] - rep.beta[lo]) / w for i, w in zip(range(lo + 1, hi + 1), width))

    ends = list(levels)
    slopes = [needed(ends[i], ends[i + 1], s, i == len(ends) - 2) for i, s in enumerate(base.slopes)]
    changed = True
    while changed:
        changed = False
        for i in range(len(slopes) - 1):
            if slopes[i] >= slopes[i + 1]:
                del ends[i + 1]
                lo, hi = ends[i], ends[i + 1]
                last = i + 1 == len(ends) - 1
                merged = needed(lo, hi, rep_slope(lo, hi), last)
                slopes[i : i + 2] = [merged]
                changed = True
                break
    slopes = [min(s, Fraction(n)) for s in slopes]
    plan = MultiScalePlan(float(eta), tuple(Fraction(e, k) for e in ends), tuple(slopes))

    certificates = []
    failures = []
    for m, (E, bf) in enumerate(zip(family, betas)):
        for h, (lo, hi, s) in enumerate(zip(ends[:-1], ends[1:], slopes), start=1):
            width = (hi - lo) / k
            cert = BlockCertificate(
                member=m,
                block=h,
                log_ratio=float(bf.beta[hi] - bf.beta[lo]),
                log_ratio_bound=float((s + 4 * eta_f) * Fraction(hi - lo, k)),
                frostman_C=_block_frostman(E, lo, hi, float(s)),
                frostman_bound=2.0 ** (4 * eta * width * k) * 4.0**n,
            )
            certificates.append(cert)
            if hi - lo < k * eta0(eta) / eta:
                failures.append(f"member {m}, block {h}: item (1) block length")
            if not cert.ok_ratio:
                failures.append(
                    f"member {m}, block {h}: item (2) log ratio {cert.log_ratio:.4g} > {cert.log_ratio_bound:.4g}"
                )
            if not cert.ok_frostman:
                failures.append(
                    f"member {m}, block {h}: item (3) Frostman C {cert.frostman_C:.4g} > {cert.frostman_bound:.4g}"
                )
        if float(slopes[-1]) < top[m] - eta - 1e-12:
            failures.append(f"member {m}: item (4) s_H={float(slopes[-1]):.4g} < {top[m] - eta:.4g}")
    precondition = k * math.log(2) * eta0(eta) > 2
    return MultiScaleReport(plan, certificates, top, precondition, failures)
