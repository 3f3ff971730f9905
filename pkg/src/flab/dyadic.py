"""Dyadic grids, cell sets and covering numbers.

A set ``E`` at scale ``delta = 2**-k`` is stored as the sorted array of
row-major flat indices of the half-open dyadic cells
``[i_1 delta, (i_1+1) delta) x ... x [i_n delta, (i_n+1) delta)`` that it
contains.  Coarsening to ``rho = 2**-j`` is an integer shift of every index,
so covering counts are exact integers.

The dyadic cover replaces the minimal cover by metric balls of radius
``rho``; the two counts agree up to a factor ``4**n``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, NamedTuple, Union

import numpy as np

from .errors import DomainError, ParameterError

__all__ = [
    "DyadicScale",
    "CellSet",
    "RefinementVerdict",
    "as_scale",
    "covering_count",
    "covering_set",
    "is_refinement",
]

MAX_DIM = 3


@dataclass(frozen=True, order=True)
class DyadicScale:
    """The scale ``2**-k``.

    ``k = 0`` (the unit scale) is allowed so that coarsenings all the way up
    to ``rho = 1`` can be expressed; cell sets themselves normally use
    ``k >= 1``.
    """

    k: int

    def __post_init__(self) -> None:
        if not isinstance(self.k, (int, np.integer)) or isinstance(self.k, bool):
            raise ParameterError(f"scale exponent must be an integer, got {self.k!r}")
        if self.k < 0:
            raise ParameterError(f"scale exponent must be non-negative, got {self.k}")
        object.__setattr__(self, "k", int(self.k))

    @property
    def value(self) -> float:
        return 2.0 ** (-self.k)

    @property
    def fraction(self) -> Fraction:
        return Fraction(1, 2**self.k)

    @property
    def side(self) -> int:
        """Number of cells along one axis of ``[0,1]``."""
        return 1 << self.k

    @classmethod
    def from_value(cls, rho: Union[float, Fraction, int]) -> "DyadicScale":
        """Parse ``rho`` as ``2**-j``; anything else is a parameter error."""
        fr = Fraction(rho)
        if fr <= 0 or fr > 1 or fr.numerator != 1 or fr.denominator & (fr.denominator - 1):
            raise ParameterError(f"{rho!r} is not a dyadic scale 2^-j in (0,1]")
        return cls(fr.denominator.bit_length() - 1)

    def __repr__(self) -> str:
        return f"DyadicScale(2^-{self.k})"


ScaleLike = Union[DyadicScale, float, Fraction, int]


def as_scale(rho: ScaleLike) -> DyadicScale:
    """Coerce a scale given as :class:`DyadicScale` or as a number ``2**-j``."""
    if isinstance(rho, DyadicScale):
        return rho
    return DyadicScale.from_value(rho)


class CellSet:
    """An immutable union of dyadic cells of side ``2**-k`` in ``[0,1]**n``.

    Parameters
    ----------
    n : int
        Ambient dimension, 1 to 3.  ``n = 1`` is used for one-dimensional
        profiles of a shading along its tube.
    k : int
        Scale exponent.
    cells : iterable of int or array of shape (m, n)
        Either flat row-major indices or integer multi-indices.

    Notes
    -----
    Duplicates are merged.  Out-of-range indices raise
    :class:`~flab.errors.ParameterError`.
    """

    __slots__ = ("_n", "_k", "_flat")

    def __init__(self, n: int, k: int, cells: Union[Iterable[int], np.ndarray] = ()):
        if n not in range(1, MAX_DIM + 1):
            raise ParameterError(f"dimension must be 1, 2 or 3, got {n}")
        scale = DyadicScale(k)
        arr = np.asarray(list(cells) if not isinstance(cells, np.ndarray) else cells)
        side = scale.side
        if arr.size == 0:
            flat = np.empty(0, dtype=np.int64)
        elif arr.ndim == 2:
            if arr.shape[1] != n:
                raise ParameterError(f"multi-indices must have {n} columns, got {arr.shape[1]}")
            flat = _ravel(arr.astype(np.int64), side)
        elif arr.ndim == 1:
            flat = arr.astype(np.int64)
            if np.any(flat < 0) or np.any(flat >= side**n):
                raise ParameterError("flat cell index outside the grid")
        else:
            raise ParameterError("cells must be flat indices or an (m, n) index array")
        flat = np.unique(flat)
        flat.setflags(write=False)
        self._n = n
        self._k = scale.k
        self._flat = flat

    # -- construction helpers -------------------------------------------------

    @classmethod
    def full(cls, n: int, k: int) -> "CellSet":
        return cls(n, k, np.arange((1 << k) ** n, dtype=np.int64))

    @classmethod
    def from_mask(cls, mask: np.ndarray) -> "CellSet":
        """Build from a dense boolean occupancy array of shape ``(2**k,)*n``."""
        mask = np.asarray(mask, dtype=bool)
        side = mask.shape[0]
        k = side.bit_length() - 1
        if side != 1 << k or any(s != side for s in mask.shape):
            raise ParameterError("occupancy array must be a cube of side 2^k")
        return cls(mask.ndim, k, np.flatnonzero(mask.ravel()))

    @classmethod
    def from_points(cls, points: np.ndarray, k: int) -> "CellSet":
        """Cells containing the given points of ``[0,1]**n`` (points on the upper face are clamped)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        side = 1 << k
        idx = np.clip(np.floor(pts * side).astype(np.int64), 0, side - 1)
        return cls(pts.shape[1], k, idx)

    # -- basic accessors ------------------------------------------------------

    @property
    def n(self) -> int:
        return self._n

    @property
    def k(self) -> int:
        return self._k

    @property
    def scale(self) -> DyadicScale:
        return DyadicScale(self._k)

    @property
    def delta(self) -> float:
        return 2.0 ** (-self._k)

    @property
    def side(self) -> int:
        return 1 << self._k

    @property
    def flat(self) -> np.ndarray:
        """Sorted, read-only array of flat row-major indices."""
        return self._flat

    @property
    def indices(self) -> np.ndarray:
        """Multi-indices, shape ``(#cells, n)``."""
        return _unravel(self._flat, self.side, self._n)

    @property
    def centers(self) -> np.ndarray:
        return (self.indices + 0.5) * self.delta

    def __len__(self) -> int:
        return int(self._flat.size)

    def __bool__(self) -> bool:
        return self._flat.size > 0

    def __iter__(self):
        return iter(self._flat.tolist())

    def __contains__(self, flat_index: int) -> bool:
        i = np.searchsorted(self._flat, flat_index)
        return bool(i < self._flat.size and self._flat[i] == flat_index)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CellSet):
            return NotImplemented
        return (
            self._n == other._n
            and self._k == other._k
            and np.array_equal(self._flat, other._flat)
        )

    def __hash__(self) -> int:
        return hash((self._n, self._k, self._flat.tobytes()))

    def __repr__(self) -> str:
        return f"CellSet(n={self._n}, k={self._k}, #cells={len(self)})"

    @property
    def measure(self) -> Fraction:
        """Lebesgue measure ``delta**n * #cells`` as an exact rational."""
        return Fraction(len(self), (1 << self._k) ** self._n)

    @property
    def measure_pair(self) -> tuple[int, int]:
        """The ``(k, count)`` pair from which :attr:`measure` is derived."""
        return (self._k, len(self))

    def occupancy(self) -> np.ndarray:
        """Dense boolean array of shape ``(2**k,)*n``."""
        mask = np.zeros(self.side**self._n, dtype=bool)
        mask[self._flat] = True
        return mask.reshape((self.side,) * self._n)

    # -- set algebra ----------------------------------------------------------

    def _check_compatible(self, other: "CellSet") -> None:
        if self._n != other._n or self._k != other._k:
            raise ParameterError(
                f"scale/dimension mismatch: (n={self._n}, k={self._k}) vs (n={other._n}, k={other._k})"
            )

    def union(self, *others: "CellSet") -> "CellSet":
        for o in others:
            self._check_compatible(o)
        return CellSet(self._n, self._k, np.concatenate([self._flat, *(o._flat for o in others)]))

    def intersection(self, other: "CellSet") -> "CellSet":
        self._check_compatible(other)
        return CellSet(self._n, self._k, np.intersect1d(self._flat, other._flat, assume_unique=True))

    def difference(self, other: "CellSet") -> "CellSet":
        self._check_compatible(other)
        return CellSet(self._n, self._k, np.setdiff1d(self._flat, other._flat, assume_unique=True))

    def issubset(self, other: "CellSet") -> bool:
        self._check_compatible(other)
        return bool(np.isin(self._flat, other._flat, assume_unique=True).all())

    __or__ = union
    __and__ = intersection
    __sub__ = difference

    def take(self, mask_or_positions) -> "CellSet":
        """Sub-set selected by a boolean mask or integer positions into :attr:`flat`."""
        return CellSet(self._n, self._k, self._flat[np.asarray(mask_or_positions)])

    def at_scale(self, k_fine: int) -> "CellSet":
        """Re-express at the finer scale ``2**-k_fine`` (every cell split into children)."""
        if k_fine < self._k:
            raise ParameterError("at_scale only refines; use covering_set to coarsen")
        shift = k_fine - self._k
        if shift == 0:
            return self
        idx = self.indices << shift
        offs = np.stack(
            np.meshgrid(*([np.arange(1 << shift)] * self._n), indexing="ij"), axis=-1
        ).reshape(-1, self._n)
        fine = (idx[:, None, :] + offs[None, :, :]).reshape(-1, self._n)
        return CellSet(self._n, k_fine, fine)

    # -- serialization --------------------------------------------------------

    def to_dict(self) -> dict:
        return {"n": self._n, "k": self._k, "cells": self._flat.tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, data: dict) -> "CellSet":
        try:
            return cls(int(data["n"]), int(data["k"]), np.asarray(data["cells"], dtype=np.int64))
        except KeyError as exc:
            raise ParameterError(f"CellSet JSON is missing field {exc}") from None

    @classmethod
    def from_json(cls, text: str) -> "CellSet":
        return cls.from_dict(json.loads(text))


def _ravel(idx: np.ndarray, side: int) -> np.ndarray:
    if idx.size and (idx.min() < 0 or idx.max() >= side):
        raise ParameterError("cell index outside the grid")
    flat = np.zeros(idx.shape[0], dtype=np.int64)
    for d in range(idx.shape[1]):
        flat = flat * side + idx[:, d]
    return flat


def _unravel(flat: np.ndarray, side: int, n: int) -> np.ndarray:
    out = np.empty((flat.size, n), dtype=np.int64)
    rest = flat.copy()
    for d in range(n - 1, -1, -1):
        out[:, d] = rest % side
        rest //= side
    return out


def _coarse_exponent(E: CellSet, rho: ScaleLike) -> int:
    j = as_scale(rho).k
    if j > E.k:
        raise ParameterError(f"coarsening scale 2^-{j} is finer than the set's scale 2^-{E.k}")
    return j


def covering_set(E: CellSet, rho: ScaleLike) -> CellSet:
    """The union ``(E)_rho`` of dyadic ``rho``-cells meeting ``E``, as a CellSet at scale ``rho``."""
    j = _coarse_exponent(E, rho)
    return CellSet(E.n, j, E.indices >> (E.k - j))


def covering_count(E: CellSet, rho: ScaleLike) -> int:
    """Number of dyadic ``rho``-cells meeting ``E`` (the dyadic version of ``|E|_rho``)."""
    j = _coarse_exponent(E, rho)
    if j == E.k:
        return len(E)
    return int(np.unique(_ravel(E.indices >> (E.k - j), 1 << j)).size)


class RefinementVerdict(NamedTuple):
    ok: bool
    ratio: float


def is_refinement(E2: CellSet, E1: CellSet, c: float) -> RefinementVerdict:
    """Whether ``E2`` is a ``c``-refinement of ``E1``: ``E2 ⊆ E1`` and ``#E2 >= c #E1``."""
    if E2.n != E1.n or E2.k != E1.k:
        raise ParameterError("refinement requires equal scale and dimension")
    if c <= 0:
        raise ParameterError("refinement constant must be positive")
    if len(E1) == 0:
        raise DomainError("cannot refine the empty set")
    ratio = len(E2) / len(E1)
    return RefinementVerdict(bool(E2.issubset(E1) and len(E2) >= c * len(E1)), ratio)
