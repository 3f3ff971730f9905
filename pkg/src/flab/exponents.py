"""Exact rational calculators for restriction and Furstenberg-type exponents.

Every quantity is a :class:`fractions.Fraction`.  Floats are accepted as
inputs and converted through their decimal representation, so ``3.2`` means
``16/5`` and never the nearest binary double.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from numbers import Rational
from typing import Optional, Sequence, Union

from .errors import DomainError, ParameterError

__all__ = [
    "Q",
    "ExponentValue",
    "PExponent",
    "p_of_n",
    "kakeya_dim_from_restriction",
    "restriction_from_kakeya_dim",
    "interpolate_holder",
    "dense_case_interpolation",
    "furstenberg_exponent",
    "REGIMES",
    "MuThreshold",
    "mu_thresholds",
    "exponent_table",
]

Number = Union[int, float, str, Fraction]


def Q(x: Number) -> Fraction:
    """Exact rational from an int, Fraction, decimal string or float (via its repr)."""
    if isinstance(x, bool):
        raise ParameterError("booleans are not exponents")
    if isinstance(x, (Fraction, int)) or isinstance(x, Rational):
        return Fraction(x)
    if isinstance(x, float):
        return Fraction(repr(x))
    if isinstance(x, str):
        return Fraction(x.strip())
    raise ParameterError(f"cannot read {x!r} as a rational")


@dataclass(frozen=True)
class ExponentValue:
    """A min-of-affine exponent evaluated on every branch.

    Attributes
    ----------
    value : Fraction
        The minimum over branches.
    branches : dict
        Label to value, in the order the formula lists them.
    argmin : tuple of str
        Every label attaining the minimum.
    grade : str
        ``"theorem"`` or ``"conjecture"``.
    """

    value: Fraction
    branches: dict
    argmin: tuple
    grade: str
    name: str = ""

    @property
    def conjectural(self) -> bool:
        return self.grade == "conjecture"

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "value": str(self.value),
            "branches": {k: str(v) for k, v in self.branches.items()},
            "argmin": list(self.argmin),
            "grade": self.grade,
        }


def _min_of(name: str, branches: dict, grade: str) -> ExponentValue:
    best = min(branches.values())
    return ExponentValue(best, dict(branches), tuple(k for k, v in branches.items() if v == best), grade, name)


# ---------------------------------------------------------------------------
# Restriction exponent
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PExponent:
    """Restriction exponent for dimension ``n``.

    Attributes
    ----------
    n : int
    p : Fraction
        Threshold exponent: the estimate holds for every exponent above it.
    case1, case2 : Fraction or None
        The two high-dimensional cases; ``p`` is the larger, which is ``case1``.
    residual : Fraction
        ``p - (2 + 28/(11 n))``, of order ``n**-2``.
    """

    n: int
    p: Fraction
    case1: Optional[Fraction]
    case2: Optional[Fraction]
    residual: Fraction

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "p": str(self.p),
            "case1": None if self.case1 is None else str(self.case1),
            "case2": None if self.case2 is None else str(self.case2),
            "residual": str(self.residual),
        }


ASYMPTOTIC_COEFFICIENT = Fraction(28, 11)


def p_of_n(n: int) -> PExponent:
    """Restriction exponent in dimension ``n >= 3``.

    ``n = 3`` gives ``22/7``.  For ``n >= 4`` the dense case gives
    ``(154n+6)/(77n-95)`` and the sparse case ``(22n+6)/(11(n-1))``; the
    proved exponent is the larger of the two.

    Raises
    ------
    DomainError
        For ``n <= 2``; the planar exponent is 4 and is not produced by this formula.
    """
    if not isinstance(n, int) or n <= 2:
        raise DomainError("p_of_n needs an integer n >= 3 (the planar case p >= 4 is separate)")
    tail = 2 + ASYMPTOTIC_COEFFICIENT / n
    if n == 3:
        p = Fraction(22, 7)
        return PExponent(n, p, None, None, p - tail)
    c1 = Fraction(154 * n + 6, 77 * n - 95)
    c2 = Fraction(22 * n + 6, 11 * (n - 1))
    p = max(c1, c2)
    return PExponent(n, p, c1, c2, p - tail)


# ---------------------------------------------------------------------------
# Kakeya dimension from a restriction exponent
# ---------------------------------------------------------------------------


def kakeya_dim_from_restriction(p0: Number) -> Fraction:
    """Kakeya dimension ``(6 - p0)/(p0 - 2)`` implied in three dimensions.

    ``p0`` ranges over ``(2, 6]``; the right endpoint is the continuous limit 0.
    """
    p = Q(p0)
    if not (2 < p <= 6):
        raise DomainError(f"p0 must lie in (2, 6], got {p}")
    return (6 - p) / (p - 2)


def restriction_from_kakeya_dim(s: Number) -> Fraction:
    """Inverse of :func:`kakeya_dim_from_restriction`: ``p0 = (6 + 2s)/(1 + s)``."""
    s = Q(s)
    if s < 0:
        raise DomainError("dimension must be non-negative")
    return (6 + 2 * s) / (1 + s)


# ---------------------------------------------------------------------------
# Holder interpolation
# ---------------------------------------------------------------------------

Exp = Union[Number, Sequence[Number]]


def _vec(e: Exp) -> tuple:
    if isinstance(e, (list, tuple)):
        return tuple(Q(x) for x in e)
    return (Q(e),)


def interpolate_holder(
    p1: Number,
    exp1: Exp,
    p2: Number,
    exp2: Exp,
    weights: Optional[Sequence[Number]] = None,
    target: Optional[Number] = None,
):
    """Combine two estimates ``int |F|^p_i <~ X^{e_i}`` with Holder weights.

    Parameters
    ----------
    p1, p2 : rational
        Lebesgue exponents.
    exp1, exp2 : rational or tuple of rationals
        Exponents of the powers that multiply each bound (for example of
        ``lambda R``, or a ``(lambda, R)`` pair).
    weights : pair of rationals, optional
        ``(w1, w2)`` in ``[0, 1]`` summing to 1.
    target : rational, optional
        Instead of weights, the combined (scalar) exponent to hit.

    Returns
    -------
    (p, exponent, weights)
        ``exponent`` is a Fraction for scalar inputs and a tuple otherwise.

    Raises
    ------
    DomainError
        If the target cannot be met with weights in ``[0, 1]``.
    """
    p1, p2 = Q(p1), Q(p2)
    if p1 == p2:
        raise ParameterError("interpolation needs p1 != p2")
    e1, e2 = _vec(exp1), _vec(exp2)
    if len(e1) != len(e2):
        raise ParameterError("exponent vectors must have equal length")
    scalar = not isinstance(exp1, (list, tuple))
    if (weights is None) == (target is None):
        raise ParameterError("give exactly one of weights and target")
    if weights is not None:
        w1, w2 = (Q(w) for w in weights)
        if w1 + w2 != 1 or not (0 <= w1 <= 1):
            raise ParameterError("weights must lie in [0,1] and sum to 1")
    else:
        if len(e1) != 1:
            raise ParameterError("a target exponent needs scalar exponents")
        tgt = Q(target)
        if e1[0] == e2[0]:
            if tgt != e1[0]:
                raise DomainError("target unreachable: both exponents equal and differ from it")
            w1 = Fraction(1, 2)
        else:
            w1 = (tgt - e2[0]) / (e1[0] - e2[0])
        if not (0 <= w1 <= 1):
            raise DomainError(f"target {tgt} needs weight {w1} outside [0,1]")
        w2 = 1 - w1
    p = w1 * p1 + w2 * p2
    e = tuple(w1 * a + w2 * b for a, b in zip(e1, e2))
    return p, (e[0] if scalar else e), (w1, w2)


def dense_case_interpolation(n: int):
    """The high-dimensional dense-case interpolation, reproducing ``p_of_n(n).case1``.

    Interpolates the ``L^2`` bound ``lambda^1 R^1`` with the endpoint bound at
    ``p_n = 2(n+1)/(n-1)``, ``lambda^{-2(2n+7)/(7(n-1))} R^{-4/7}``, with
    weight ``t = 49(n-1)/(77n-95)`` on the latter.
    """
    if n < 4:
        raise DomainError("the dense-case interpolation is for n >= 4")
    t = Fraction(49 * (n - 1), 77 * n - 95)
    pn = Fraction(2 * (n + 1), n - 1)
    lpn = (Fraction(-2 * (2 * n + 7), 7 * (n - 1)), Fraction(-4, 7))
    return interpolate_holder(2, (1, 1), pn, lpn, weights=(1 - t, t))


# ---------------------------------------------------------------------------
# Furstenberg-type exponents
# ---------------------------------------------------------------------------


def _furstenberg_plane(s: Fraction, t: Fraction, **_) -> ExponentValue:
    if not (0 < t <= 2 and 0 < s <= 1):
        raise DomainError("need t in (0,2] and s in (0,1]")
    return _min_of(
        "furstenberg_plane",
        {"bush": t, "lattice": (s + t) / 2, "hyperplane": Fraction(1)},
        "theorem",
    )


def _furstenberg_r3(s: Fraction, t: Fraction, **_) -> ExponentValue:
    if not (0 < t < 2 and 0 < s <= 1):
        raise DomainError("need t in (0,2) and s in (0,1]")
    return _min_of(
        "furstenberg_r3", {"bush": s + 2 * t, "lattice": t + 2 * s, "hyperplane": 2 + s}, "conjecture"
    )


def _furstenberg_rn(s: Fraction, t: Fraction, n: int, **_) -> ExponentValue:
    if not isinstance(n, int) or n < 4:
        raise DomainError("the n-dimensional Furstenberg numerology is stated for n >= 4")
    if not (0 < t < 2 and 0 < s <= 1):
        raise DomainError("need t in (0,2) and s in (0,1]")
    return _min_of(
        "furstenberg_rn",
        {
            "bush": s + (n - 1) * t,
            "lattice": Fraction(n - 1, 2) * t + Fraction(n + 1, 2) * s,
            "hyperplane": n - 1 + s,
        },
        "conjecture",
    )


def _two_ends_kakeya(n: int, **_) -> ExponentValue:
    if not isinstance(n, int) or n < 2:
        raise DomainError("need an integer n >= 2")
    return _min_of("two_ends_kakeya", {"lambda_power": Fraction(n - 1, 2)}, "conjecture")


REGIMES = {
    "furstenberg_plane": _furstenberg_plane,
    "furstenberg_r3": _furstenberg_r3,
    "furstenberg_rn": _furstenberg_rn,
    "two_ends_kakeya": _two_ends_kakeya,
}
"""Named exponent formulas; each entry's ``grade`` marks whether it is proved."""


def furstenberg_exponent(regime: str, **params) -> ExponentValue:
    """Evaluate a Furstenberg-type exponent on all branches.

    Parameters
    ----------
    regime : str
        One of :data:`REGIMES`.
    **params
        ``s`` and ``t`` (and ``n`` where relevant), as rationals.

    Examples
    --------
    >>> furstenberg_exponent("furstenberg_rn", n=4, s="1/2", t=1).value
    Fraction(11, 4)
    """
    if regime not in REGIMES:
        raise DomainError(f"unknown regime {regime!r}; expected one of {sorted(REGIMES)}")
    args = {}
    for key, val in params.items():
        args[key] = val if key == "n" else Q(val)
    try:
        return REGIMES[regime](**args)
    except TypeError as exc:
        raise ParameterError(f"missing parameter for {regime}: {exc}") from None


# ---------------------------------------------------------------------------
# Multiplicity thresholds
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MuThreshold:
    """``mu = m * delta**delta_exp``; the removed fraction is at most ``delta**removed_exp``.

    Attributes
    ----------
    rule : str
        ``"hairbrush"`` (three dimensions), ``"high_d"`` (case split on the
        density) or ``"bush"`` (density-free bound).
    case : str
        For ``high_d``: ``"dense"`` when ``lambda >= delta^(1/4)``, else ``"sparse"``.
    """

    rule: str
    delta_exp: Fraction
    m: Fraction
    removed_exp: Fraction
    case: str = ""

    def value(self, delta: float) -> float:
        return float(self.m) * delta ** float(self.delta_exp)

    def to_dict(self) -> dict:
        return {
            "rule": self.rule,
            "case": self.case,
            "delta_exp": str(self.delta_exp),
            "m": str(self.m),
            "removed_exp": str(self.removed_exp),
        }


def mu_thresholds(n: int, m: Number, lam_exp: Number, eps1: Number) -> dict:
    """Multiplicity thresholds for a two-ends, ``lambda``-dense, ``m``-parallel family.

    Parameters
    ----------
    n : int
        Dimension, at least 2.
    m : rational
        Parallelism.
    lam_exp : rational
        ``lambda = delta**lam_exp`` with ``lam_exp >= 0``.
    eps1 : rational
        Two-ends exponent.

    Returns
    -------
    dict
        ``rule -> MuThreshold``; ``"hairbrush"`` is present only for ``n = 3``.

    Examples
    --------
    >>> mu_thresholds(3, 1, "1/2", 0)["hairbrush"].delta_exp
    Fraction(-7, 8)
    """
    if not isinstance(n, int) or n < 2:
        raise DomainError("need an integer n >= 2")
    m, a, e1 = Q(m), Q(lam_exp), Q(eps1)
    if a < 0:
        raise DomainError("lambda = delta^lam_exp must be at most 1")
    out = {}
    if n == 3:
        out["hairbrush"] = MuThreshold("hairbrush", -2 * e1 - Fraction(3, 4) * a - Fraction(1, 2), m, e1)
    sparse = -2 * e1 - Fraction(n - 1, 2)
    if a <= Fraction(1, 4):
        dense = -2 * e1 - Fraction(2 * n + 7, 7) * a - Fraction(3 * n - 3, 7)
        out["high_d"] = MuThreshold("high_d", dense, m, e1, "dense")
    else:
        out["high_d"] = MuThreshold("high_d", sparse, m, e1, "sparse")
    out["bush"] = MuThreshold("bush", sparse, m, Fraction(3, 2) * e1)
    return out


# ---------------------------------------------------------------------------
# Table
# ---------------------------------------------------------------------------


def exponent_table(n: int = 3, s: Number = 1, t: Number = 1, lam_exp: Number = 0, p: Optional[Number] = None) -> list:
    """Rows ``{name, value, grade, detail}`` of every named exponent at the given parameters.

    Rows whose parameters fall outside the formula's range carry ``value=None``
    and the reason in ``detail``.
    """
    rows = []

    def add(name, fn):
        try:
            value, grade, detail = fn()
        except (DomainError, ParameterError) as exc:
            value, grade, detail = None, "", str(exc)
        rows.append({"name": name, "value": None if value is None else str(value), "grade": grade, "detail": detail})

    def pn():
        r = p_of_n(n)
        return r.p, "theorem", f"residual={r.residual}"

    add("p(n)", pn)
    add("s(p0)", lambda: (kakeya_dim_from_restriction(p if p is not None else p_of_n(3).p), "theorem", ""))
    for regime in REGIMES:
        def ev(regime=regime):
            r = furstenberg_exponent(regime, n=n, s=s, t=t)
            return r.value, r.grade, "argmin=" + ",".join(r.argmin)

        add(regime, ev)
    for rule, thr in (mu_thresholds(n, 1, lam_exp, 0).items() if n >= 2 else []):
        rows.append(
            {
                "name": f"mu:{rule}",
                "value": str(thr.delta_exp),
                "grade": "theorem",
                "detail": f"power of delta with m=1, eps1=0{', ' + thr.case if thr.case else ''}",
            }
        )
    return rows
