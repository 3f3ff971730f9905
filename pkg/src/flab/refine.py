"""Pigeonholing and refinement subroutines for shaded line families.

Every lossy step records an explicit multiplicative factor in a
:class:`SlackLedger`, so the total loss of a chain of refinements can be read
off and bounded instead of being hidden in a ``polylog`` symbol.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

import numpy as np

from .dyadic import CellSet
from .errors import CertificateError, DomainError, ParameterError, PreconditionError
from .tubes import ShadedFamily

__all__ = [
    "SlackLedger",
    "PigeonholeResult",
    "dyadic_pigeonhole",
    "RichnessProfile",
    "rich_point_refinement",
    "BroadNarrow",
    "broad_narrow",
    "Excision",
    "excise_high_multiplicity",
]


@dataclass
class SlackLedger:
    """Ordered record of the multiplicative losses taken by refinements."""

    entries: list = field(default_factory=list)

    def add(self, op: str, factor: float) -> float:
        if not factor >= 1:
            raise ParameterError(f"a slack factor is at least 1, got {factor}")
        self.entries.append({"op": op, "factor": float(factor)})
        return float(factor)

    def extend(self, other: "SlackLedger") -> None:
        self.entries.extend(dict(e) for e in other.entries)

    @property
    def total(self) -> float:
        return math.prod(e["factor"] for e in self.entries)

    def to_list(self) -> list:
        return [dict(e) for e in self.entries]

    @classmethod
    def from_list(cls, data: Sequence[dict]) -> "SlackLedger":
        return cls([{"op": str(e["op"]), "factor": float(e["factor"])} for e in data])


# ---------------------------------------------------------------------------
# Dyadic pigeonholing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PigeonholeResult:
    """Outcome of :func:`dyadic_pigeonhole`.

    Attributes
    ----------
    band : tuple of float
        The half-open band ``[w, 2w)`` of keys that was kept.
    positions : numpy.ndarray
        Positions (into the input list) of the kept items.
    subset : list
        The kept items themselves.
    kept, total : float
        Weight of the kept items and of all items.
    bands : int
        Number of dyadic bands spanned by the keys, ``floor(log2 max) - floor(log2 min) + 1``.
    """

    band: tuple
    positions: np.ndarray
    subset: list
    kept: float
    total: float
    bands: int

    @property
    def factor(self) -> float:
        """Guaranteed loss factor ``2 * bands``."""
        return 2.0 * self.bands

    def __iter__(self):
        yield self.band
        yield self.subset


def dyadic_pigeonhole(
    items: Sequence[Any],
    weight: Callable[[Any], float],
    key: Optional[Callable[[Any], float]] = None,
) -> PigeonholeResult:
    """Keep the heaviest dyadic band of items.

    Parameters
    ----------
    items : sequence
    weight : callable
        Positive mass of an item.
    key : callable, optional
        Value that decides the band of an item; defaults to ``weight``.

    Returns
    -------
    PigeonholeResult
        Unpacks as ``(band, subset)``.  The kept weight is at least
        ``total / bands``, which is at least ``total / (2 bands)``.
    """
    if len(items) == 0:
        raise DomainError("cannot pigeonhole an empty list")
    key = weight if key is None else key
    w = np.array([float(weight(it)) for it in items])
    v = np.array([float(key(it)) for it in items])
    if np.any(w <= 0) or np.any(v <= 0):
        raise ParameterError("weights and keys must be positive")
    # frexp is exact, so band membership never suffers from log2 rounding
    _, ex = np.frexp(v)
    level = ex.astype(np.int64) - 1
    levels, inv = np.unique(level, return_inverse=True)
    mass = np.bincount(inv, weights=w)
    best = int(np.flatnonzero(mass == mass.max())[-1])
    pos = np.flatnonzero(inv == best)
    lo = math.ldexp(1.0, int(levels[best]))
    bands = int(levels[-1] - levels[0] + 1)
    total = float(w.sum())
    kept = float(mass[best])
    assert kept * 2 * bands >= total * (1 - 1e-12)
    return PigeonholeResult((lo, 2 * lo), pos, [items[i] for i in pos], kept, total, bands)


# ---------------------------------------------------------------------------
# Rich points
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RichnessProfile:
    """Multiplicity data of a family and the rich set ``E^mu``.

    Attributes
    ----------
    mu : int
        Lower end of the multiplicity band: ``#L(x)`` lies in ``[mu, 2 mu)`` on ``E_mu``.
    E_mu : CellSet
    cells, counts : numpy.ndarray
        Flat cells of ``E_L`` and ``#L_Y(x)`` for each, for the input family.
    ledger : SlackLedger
    """

    mu: int
    E_mu: CellSet
    cells: np.ndarray
    counts: np.ndarray
    ledger: SlackLedger

    def multiplicity(self, flat: int) -> int:
        i = np.searchsorted(self.cells, flat)
        if i < len(self.cells) and self.cells[i] == flat:
            return int(self.counts[i])
        return 0

    def to_dict(self) -> dict:
        return {
            "mu": self.mu,
            "E_mu": self.E_mu.to_dict(),
            "slack": self.ledger.to_list(),
        }


def rich_point_refinement(F: ShadedFamily) -> tuple[RichnessProfile, ShadedFamily]:
    """Pass to a refinement on which every point has comparable multiplicity.

    The cells of ``E_L`` are pigeonholed by ``#L(x)`` with mass ``#L(x)``;
    the kept band defines ``E^mu``.  Each shading is cut to
    ``Y'(l) = E^mu ∩ Y(l)`` and the lines whose retained fraction is at least
    half the average one are kept.

    Returns
    -------
    (RichnessProfile, ShadedFamily)
        The refined family keeps the input's ``meta`` under ``"parent_meta"``.

    Raises
    ------
    DomainError
        If every shading is empty.
    CertificateError
        If any of the four guaranteed properties fails (a bug, never expected).
    """
    cells, counts = F.multiplicity()
    if len(cells) == 0:
        raise DomainError("rich-point refinement needs a nonempty shading")
    ledger = SlackLedger()
    ph = dyadic_pigeonhole(np.arange(len(cells)), weight=lambda i: counts[i])
    ledger.add("rich_point:multiplicity_band", ph.factor)
    mu = int(ph.band[0])
    E_mu = CellSet(F.n, F.k, cells[ph.positions])

    Yp = [Y.intersection(E_mu) for Y in F.shadings]
    old = np.array([len(Y) for Y in F.shadings], dtype=float)
    new = np.array([len(Y) for Y in Yp], dtype=float)
    ratio = new.sum() / old.sum()
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(old > 0, new / np.where(old > 0, old, 1), 0.0)
    keep = np.flatnonzero((new > 0) & (frac >= ratio / 2))
    ledger.add("rich_point:line_refinement", 2.0)
    out = F.subfamily(keep.tolist(), [Yp[i] for i in keep])
    out.meta = {"parent_meta": dict(F.meta), "mu": mu, "slack": ledger.to_list()}

    profile = RichnessProfile(mu, E_mu, cells, counts, ledger)
    _check_rich(F, Yp, keep, profile, ratio)
    return profile, out


def _check_rich(F, Yp, keep, profile: RichnessProfile, ratio: float) -> None:
    mu, E_mu = profile.mu, profile.E_mu
    # (1) each kept Y'(l) carries at least half the average retained fraction of Y(l)
    for i in keep:
        if not (Yp[i].issubset(F.shadings[i]) and 2 * len(Yp[i]) >= ratio * len(F.shadings[i]) * (1 - 1e-12)):
            raise CertificateError(f"line {i}: Y' is not a refinement of Y")
    # (2) every x in E_{L,Y'} has #L_{Y'}(x) in [mu, 2 mu)
    if any(len(Y) for Y in Yp):
        c2, m2 = np.unique(np.concatenate([Y.flat for Y in Yp]), return_counts=True)
        if not (np.all(m2 >= mu) and np.all(m2 < 2 * mu)):
            raise CertificateError("multiplicity left the band [mu, 2mu)")
        if not np.array_equal(c2, E_mu.flat):
            raise CertificateError("E_{L,Y'} differs from E^mu")
    # (3) Y'(l) = E^mu ∩ Y(l)
    for i in keep:
        expect = F.shadings[i].flat[np.isin(F.shadings[i].flat, E_mu.flat)]
        if not np.array_equal(Yp[i].flat, expect):
            raise CertificateError(f"line {i}: Y' is not E^mu ∩ Y")
    # (4) mu ~ |E^mu|^-1 sum over the kept lines of |Y'(l)|
    mass = sum(len(Yp[i]) for i in keep)
    avg = mass / len(E_mu)
    if not (mu / 2 <= avg * (1 + 1e-12) and avg < 2 * mu):
        raise CertificateError(f"average multiplicity {avg} is not comparable to mu={mu}")


# ---------------------------------------------------------------------------
# Broad-narrow
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BroadNarrow:
    """Result of :func:`broad_narrow` at one cell.

    Attributes
    ----------
    rho : float
        Side of the final direction cap, in ``[10 delta, 1]``.
    cap : tuple
        Lower corner of the final cap in slope space.
    cap_side : float
        Side of that cap; equals ``rho`` except in the degenerate case, where
        it is at most ``2 rho``.
    L_prime, L1, L2 : list of int
        Line positions; ``L1`` and ``L2`` are disjoint subsets of ``L_prime``.
    c : float
        Lines of ``L1`` and ``L2`` have slope differences (sup norm) in ``[c rho, rho]``.
    degenerate : bool
        Set when the descent was stopped by the ``10 delta`` floor or fewer
        than two lines pass through the cell; ``L1``/``L2`` may then be empty.
    threshold : float
        Fraction of lines a half-size cap needed to hold for the descent to continue.
    A : int
        The cap-counting constant ``10 * 2**n``.
    ledger : SlackLedger
    """

    rho: float
    cap: tuple
    cap_side: float
    L_prime: list
    L1: list
    L2: list
    c: float
    degenerate: bool
    threshold: float
    A: int
    ledger: SlackLedger

    def angles(self, F: ShadedFamily) -> tuple[float, float]:
        """Smallest and largest sup-norm slope difference between ``L1`` and ``L2``."""
        if not self.L1 or not self.L2:
            return (math.nan, math.nan)
        b = np.array([F.lines[i].b for i in range(len(F))], dtype=float).reshape(len(F), -1)
        d = np.abs(b[self.L1][:, None, :] - b[self.L2][None, :, :]).max(axis=2)
        return float(d.min()), float(d.max())


def _half_caps(dim: int):
    return itertools.product((0.0, 0.25, 0.5), repeat=dim)


def broad_narrow(F: ShadedFamily, x: int) -> BroadNarrow:
    """Find the scale at which the lines through a cell stop clustering in direction.

    Directions live in slope space (the ``b`` coordinate of ``l_(a,b)``,
    sup norm).  Starting from the unit cap, the search moves to a half-size
    cap placed at a quarter offset whenever that cap still holds a fraction
    ``1 - 1/k`` of the current lines, where ``delta = 2**-k``.  When no such
    cap exists the cap is cut into ``8**(n-1)`` sub-caps and the two heaviest
    sub-caps that are separated by at least one sub-cap width give ``L1`` and
    ``L2``.

    Parameters
    ----------
    F : ShadedFamily
    x : int
        Flat index of a cell.

    Returns
    -------
    BroadNarrow
    """
    through = [i for i, Y in enumerate(F.shadings) if x in Y]
    dim = F.n - 1
    delta = F.delta
    k = max(F.k, 2)
    tau = 1.0 - 1.0 / k
    A = 10 * 2**F.n
    ledger = SlackLedger()
    b = np.array([F.lines[i].b for i in through], dtype=float).reshape(len(through), dim)
    side = 1.0 if (len(b) == 0 or np.abs(b).max() <= 0.5) else 2.0
    lo = np.full(dim, -side / 2)
    members = np.arange(len(through))
    floor_hit = False
    if len(through) < 2:
        return BroadNarrow(side if side <= 1 else 1.0, tuple(lo), side, through, [], [], 1 / 8, True, tau, A, ledger)
    steps = 0
    while True:
        half = side / 2
        best = None
        for off in _half_caps(dim):
            o = lo + np.array(off) * side
            inside = members[np.all((b[members] >= o - 1e-12) & (b[members] <= o + half + 1e-12), axis=1)]
            if best is None or len(inside) > len(best[1]):
                best = (o, inside)
        if len(best[1]) >= tau * len(members):
            if half < 10 * delta:
                floor_hit = True
                break
            lo, members, side = best[0], best[1], half
            steps += 1
        else:
            break
    if steps:
        ledger.add("broad_narrow:descent", (1 / tau) ** steps)
    L_prime = [through[i] for i in members]
    rho = max(min(side, 1.0), 10 * delta)
    if floor_hit:
        rho = 10 * delta
        return BroadNarrow(rho, tuple(lo), side, L_prime, [], [], 1 / 8, True, tau, A, ledger)

    w = side / 8
    idx = np.clip(np.floor((b[members] - lo) / w + 1e-9).astype(np.int64), 0, 7)
    keys, inv = np.unique(idx, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    cnt = np.bincount(inv)
    best_pair, best_min = None, -1
    for p in range(len(keys)):
        for q in range(p + 1, len(keys)):
            if np.abs(keys[p] - keys[q]).max() >= 2:
                m = min(cnt[p], cnt[q])
                if m > best_min:
                    best_pair, best_min = (p, q), m
    if best_pair is None:
        raise CertificateError("no separated sub-caps although the descent stopped")
    L1 = [through[members[i]] for i in np.flatnonzero(inv == best_pair[0])]
    L2 = [through[members[i]] for i in np.flatnonzero(inv == best_pair[1])]
    ledger.add("broad_narrow:split", len(L_prime) / best_min)
    return BroadNarrow(rho, tuple(lo), side, L_prime, L1, L2, 1 / 8, False, tau, A, ledger)


# ---------------------------------------------------------------------------
# High-multiplicity excision
# ---------------------------------------------------------------------------

_REQUIRED = ("lambda", "eps1", "eps2")


@dataclass(frozen=True)
class Excision:
    """Result of :func:`excise_high_multiplicity`; unpacks as ``(E_mu, removed_fraction)``.

    Attributes
    ----------
    E_mu : CellSet
    removed_fraction : float
        ``|E_L minus E_mu| / |E_L|``.
    mu : float
    slack : float
        Polylog factor allowed on top of ``mu``.
    realized : float
        ``max #L(x) / mu`` over ``E_mu``, the constant actually used.
    """

    E_mu: CellSet
    removed_fraction: float
    mu: float
    slack: float
    realized: float

    def __iter__(self):
        yield self.E_mu
        yield self.removed_fraction

    def within(self, delta: float, eps1: float) -> bool:
        """Whether the removed fraction is at most ``delta**eps1``."""
        return self.removed_fraction <= delta**eps1 * (1 + 1e-12)


def excise_high_multiplicity(F: ShadedFamily, mu: float, slack: float = 1.0) -> Excision:
    """Remove the cells covered by more than ``mu * slack`` shadings.

    Parameters
    ----------
    F : ShadedFamily
        Must carry ``lambda``, ``eps1`` and ``eps2`` in ``meta``.
    mu : float
        Multiplicity threshold, typically from :func:`flab.exponents.mu_thresholds`.
    slack : float
        Extra factor allowed above ``mu``.

    Raises
    ------
    PreconditionError
        If a certificate is missing from ``F.meta``.
    """
    missing = [key for key in _REQUIRED if key not in F.meta]
    if missing:
        raise PreconditionError(f"family lacks certificates: {', '.join(missing)}")
    if mu <= 0 or slack < 1:
        raise ParameterError("need mu > 0 and slack >= 1")
    cells, counts = F.multiplicity()
    if len(cells) == 0:
        return Excision(CellSet(F.n, F.k), 0.0, mu, slack, 0.0)
    keep = counts <= mu * slack
    E_mu = CellSet(F.n, F.k, cells[keep])
    removed = 1.0 - keep.sum() / len(cells)
    realized = float(counts[keep].max() / mu) if keep.any() else 0.0
    return Excision(E_mu, float(removed), float(mu), float(slack), realized)
