"""Non-concentration classes: (delta, s, C)-sets, their windowed form and Katz-Tao sets.

Frostman constants are found by an exact scan.  Centres ``x`` range over
all cell centres of the grid and radii over the dyadic values ``2**-j`` in
the admissible window; ``B(x, r)`` is the closed sup-norm ball and a cell
belongs to it when its centre does.  The continuous supremum over ``(x, r)``
exceeds the scanned value by at most a factor ``2**s * 2**n``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dyadic import CellSet, ScaleLike, as_scale
from .errors import DomainError, ParameterError, ProbabilisticFailure

__all__ = [
    "FrostmanCertificate",
    "frostman_deficiency",
    "box_counts",
    "RefinementFrostmanVerdict",
    "refinement_preserves_frostman",
    "katz_tao_constant",
    "SparsificationResult",
    "sparsify_katz_tao",
    "sparsify_katz_tao_once",
]

VARIANTS = ("standard", "katz_tao", "windowed")


@dataclass(frozen=True)
class FrostmanCertificate:
    """Least admissible constant for one of the non-concentration definitions.

    Attributes
    ----------
    s : float
        Exponent.
    variant : str
        ``"standard"``, ``"katz_tao"`` or ``"windowed"``.
    C_min : float
        The least ``C`` for which the scanned inequalities all hold.
    x : tuple of float
        Centre of a witnessing ball.
    r : float
        Radius of a witnessing ball.
    window : float or None
        Lower radius ``Delta`` for the windowed variant.
    """

    s: float
    variant: str
    C_min: float
    x: tuple
    r: float
    window: Optional[float] = None
    scan_slack: float = field(default=0.0)

    def variant_label(self) -> str:
        if self.variant == "windowed":
            return f"windowed({self.window!r})"
        return self.variant

    def to_dict(self) -> dict:
        return {
            "s": self.s,
            "variant": self.variant_label(),
            "C_min": self.C_min,
            "witness": {"x": list(self.x), "r": self.r},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "FrostmanCertificate":
        label = data["variant"]
        window = None
        variant = label
        if label.startswith("windowed("):
            variant = "windowed"
            window = float(label[len("windowed(") : -1])
        n = len(data["witness"]["x"])
        s = float(data["s"])
        return cls(
            s=s,
            variant=variant,
            C_min=float(data["C_min"]),
            x=tuple(float(v) for v in data["witness"]["x"]),
            r=float(data["witness"]["r"]),
            window=window,
            scan_slack=2.0**s * 2.0**n,
        )


def _window_sum(arr: np.ndarray, m: int, axis: int) -> np.ndarray:
    """Sum of ``arr`` over index windows ``[i - m, i + m]`` along ``axis`` (clipped at the edges)."""
    N = arr.shape[axis]
    pad = [(0, 0)] * arr.ndim
    pad[axis] = (1, 0)
    prefix = np.pad(np.cumsum(arr, axis=axis), pad)
    hi = np.minimum(np.arange(N) + m + 1, N)
    lo = np.maximum(np.arange(N) - m, 0)
    return np.take(prefix, hi, axis=axis) - np.take(prefix, lo, axis=axis)


def box_counts(E: CellSet, m: int) -> np.ndarray:
    """For every grid cell, the number of cells of ``E`` whose index differs by at most ``m`` in sup norm.

    With ``m = r / delta`` this is ``#(E ∩ B(c, r))`` for the cell centre ``c``.
    """
    counts = E.occupancy().astype(np.int64)
    for axis in range(E.n):
        counts = _window_sum(counts, m, axis)
    return counts


def frostman_deficiency(
    E: CellSet,
    s: float,
    variant: str = "standard",
    window: Optional[ScaleLike] = None,
) -> FrostmanCertificate:
    """Least constant ``C`` for which ``E`` is a set of the requested class.

    ``standard``:  ``|E ∩ B(x,r)|_delta <= C r^s |E|_delta`` for ``r`` in ``[delta, 1]``.

    ``katz_tao``:  ``#(E ∩ B(x,r)) <= C (r/delta)^s`` for ``r`` in ``[delta, 1]``.

    ``windowed``:  the standard inequality for ``r`` in ``[window, 1]`` only.
    """
    if len(E) == 0:
        raise DomainError("the Frostman constant of the empty set is undefined")
    if not 0 < s <= E.n:
        raise ParameterError(f"exponent s must lie in (0, {E.n}], got {s}")
    if variant not in VARIANTS:
        raise ParameterError(f"unknown variant {variant!r}")
    j_max = E.k
    win_value = None
    if variant == "windowed":
        if window is None:
            raise ParameterError("the windowed variant needs a window scale Delta")
        w = as_scale(window)
        if w.k > E.k:
            raise ParameterError("window Delta must satisfy delta <= Delta <= 1")
        j_max = w.k
        win_value = w.value
    elif window is not None:
        raise ParameterError("window is only meaningful for the windowed variant")

    total = len(E)
    best = (-1.0, None, None)
    for j in range(0, j_max + 1):
        m = 1 << (E.k - j)
        r = 2.0**-j
        counts = box_counts(E, m)
        pos = int(np.argmax(counts))
        top = int(counts.flat[pos])
        if variant == "katz_tao":
            value = top / (r / E.delta) ** s
        else:
            value = top / (r**s * total)
        if value > best[0]:
            best = (value, pos, r)
    value, pos, r = best
    centre = (np.array(np.unravel_index(pos, (E.side,) * E.n)) + 0.5) * E.delta
    return FrostmanCertificate(
        s=float(s),
        variant=variant,
        C_min=float(value),
        x=tuple(float(c) for c in centre),
        r=float(r),
        window=win_value,
        scan_slack=2.0**s * 2.0**E.n,
    )


@dataclass(frozen=True)
class RefinementFrostmanVerdict:
    ok: bool
    C_refined: float
    bound: float


def refinement_preserves_frostman(
    E: CellSet,
    E2: CellSet,
    s: float,
    variant: str = "standard",
    window: Optional[ScaleLike] = None,
) -> RefinementFrostmanVerdict:
    """Check ``C_min(E2) <= C_min(E) * #E / #E2`` for a subset ``E2`` of ``E``."""
    if not E2.issubset(E):
        raise DomainError("E2 must be contained in E")
    c_big = frostman_deficiency(E, s, variant, window).C_min
    c_small = frostman_deficiency(E2, s, variant, window).C_min
    if variant == "katz_tao":
        bound = c_big
    else:
        bound = c_big * len(E) / len(E2)
    return RefinementFrostmanVerdict(c_small <= bound * (1 + 1e-12), c_small, bound)


# ---------------------------------------------------------------------------
# Point sets and random sparsification
# ---------------------------------------------------------------------------


def katz_tao_constant(points: np.ndarray, scale: float, s: float) -> float:
    """Least ``C`` with ``#(P ∩ B(x, r)) <= C (r/scale)^s`` for ``x`` in ``P`` and dyadic ``r`` in ``[scale, 1]``.

    ``B`` is the closed sup-norm ball.  An empty set has constant 0.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] == 0 or pts.size == 0:
        return 0.0
    dist = np.abs(pts[:, None, :] - pts[None, :, :]).max(axis=2)
    best = 0.0
    r = 1.0
    while r >= scale * (1 - 1e-12):
        top = int((dist <= r * (1 + 1e-12)).sum(axis=1).max())
        best = max(best, top / (r / scale) ** s)
        r /= 2
    return best


@dataclass(frozen=True)
class SparsificationResult:
    """Output of one sparsification attempt together with its checks."""

    points: np.ndarray
    seed: int
    p: float
    separation: float
    required: int
    C_prime: float
    C_prime_max: float

    @property
    def ok_mass(self) -> bool:
        return len(self.points) >= self.required

    @property
    def ok_katz_tao(self) -> bool:
        return self.C_prime <= self.C_prime_max

    @property
    def ok(self) -> bool:
        return self.ok_mass and self.ok_katz_tao


def sparsify_katz_tao_once(
    points: np.ndarray,
    delta: float,
    rho: float,
    s: float,
    C: float,
    seed: int,
    log_factor: Optional[float] = None,
    kappa: float = 1 / 8,
    C_prime_max: float = 8.0,
) -> SparsificationResult:
    """One attempt of the random sparsification: sample, then keep a maximal separated subset.

    Points are kept independently with probability
    ``p = (delta/rho)^s / (L C)`` where ``L = log_factor`` (default
    ``|log delta|``).  The sample is thinned greedily, in sampling order, to a
    maximal ``rho L^2``-separated subset (sup norm).

    Checked afterwards:

    (a) ``#E' >= floor(kappa delta^s #E / (rho^s L^(1+2s) C))``, the integer
        form of ``rho^s #E' >~ delta^s #E``; it is vacuous when the right side
        rounds to zero;
    (b) ``E'`` is a Katz-Tao ``(rho, s, C')``-set with ``C' <= C_prime_max``.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if not 0 < delta < rho <= 1:
        raise ParameterError("need 0 < delta < rho <= 1")
    if C <= 0 or s <= 0:
        raise ParameterError("C and s must be positive")
    L = abs(math.log(delta)) if log_factor is None else float(log_factor)
    if L <= 0:
        raise ParameterError("log_factor must be positive")
    p = min(1.0, (delta / rho) ** s / (L * C))
    sep = rho * L * L
    rng = np.random.default_rng(seed)
    n_pts = pts.shape[0] if pts.size else 0
    keep_mask = rng.random(n_pts) < p
    order = rng.permutation(np.flatnonzero(keep_mask))
    kept: list[int] = []
    for i in order:
        if not kept or np.abs(pts[kept] - pts[i]).max(axis=1).min() >= sep:
            kept.append(int(i))
    kept.sort()
    out = pts[kept] if kept else pts[:0]
    required = math.floor(kappa * delta**s * n_pts / (rho**s * L ** (1 + 2 * s) * C) + 1e-12)
    C_prime = katz_tao_constant(out, rho, s)
    return SparsificationResult(out, seed, p, sep, required, C_prime, C_prime_max)


def sparsify_katz_tao(
    points: np.ndarray,
    delta: float,
    rho: float,
    s: float,
    C: float,
    seed: int,
    log_factor: Optional[float] = None,
    kappa: float = 1 / 8,
    C_prime_max: float = 8.0,
    retries: int = 16,
) -> SparsificationResult:
    """Retry :func:`sparsify_katz_tao_once` on seeds ``seed, seed+1, ...`` until (a) and (b) hold.

    Raises
    ------
    ProbabilisticFailure
        If all ``retries`` attempts fail.
    """
    last = None
    for attempt in range(retries):
        last = sparsify_katz_tao_once(
            points, delta, rho, s, C, seed + attempt, log_factor, kappa, C_prime_max
        )
        if last.ok:
            return last
    raise ProbabilisticFailure(
        f"sparsification failed on {retries} seeds: last kept {len(last.points)} points "
        f"(need {last.required}), C'={last.C_prime:.4g} (max {last.C_prime_max})"
    )
