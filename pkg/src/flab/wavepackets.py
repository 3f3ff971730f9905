"""Extension operator for the parabola and its wave-packet decomposition.

Conventions
-----------
The surface is ``Phi(xi) = |xi|^2`` and the extension operator is

    E f(x) = int_{|xi| <= 1} f(xi) exp(2 pi i (x' . xi + x_n |xi|^2)) d xi,

evaluated by the trapezoid rule on the grid ``xi_j = j h``.  With the
``2 pi`` in the phase, Plancherel reads ``int |E f(x', x_n)|^2 dx' = ||f||_2^2``
for every height, so ``||E f||_{L^2(B_R)}^2 <= 2 R ||f||_2^2``.

Packets
-------
For a scale ``R`` (a power of 4) caps ``theta`` have radius ``a = R^(-1/2)``
and centres ``c in a Z``; ``phi_theta(xi) = cos^2(pi (xi - c) / (2a))`` on
``|xi - c| < a`` is an exact partition of unity.  Spatial translates are
``v = m R^(1/2)``; ``psi_v`` has Fourier transform
``R^(1/2) cos^2(pi w / (2a)) exp(-2 pi i v w)`` so that ``sum_v psi_v = 1``
by Poisson summation.  The packet ``f_{theta,v} = (f phi_theta) * hat psi_v``
is supported in ``[c - 2a, c + 2a]`` and ``E f_{theta,v}`` concentrates on
the tube ``|x' - (v - 2 c x_n)| < 3 R^(1/2)``, ``|x_n| <= R``.

Physical-space fields are sampled at unit spacing on the square window
``|x'|, |x_n| <= 3R/2``.  The weight is ``w_{B_R}(x) = (1 + dist(x, B_R)/R)^(-100)``:
equal to 1 on ``B_R`` and below ``1.5^-100`` outside the window.

Only ``n = 2`` is supported by the decomposition; :func:`extension` also
accepts ``n = 3``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Optional, Sequence

import numpy as np

from .errors import DomainError, ParameterError, PreconditionError
from .refine import dyadic_pigeonhole

__all__ = [
    "FrequencyFunction",
    "extension",
    "richardson_check",
    "Packet",
    "WavePacketSet",
    "decompose",
    "window",
    "default_spacing",
    "PacketAudit",
    "audit",
    "random_band_limited",
    "cap_bump_function",
    "tube_cells",
    "random_shading",
    "local_l2_ratio",
    "comparable_packets",
    "refined_decoupling_ratio",
    "parseval_ratio",
    "KhintchineReport",
    "khintchine_kakeya_experiment",
    "overlap_integral",
    "save_field",
    "load_field",
]

WEIGHT_POWER = 100
TUBE_RADIUS = 3.0  # in units of R^(1/2)
WINDOW = 1.5  # half-width of the sampled window in both coordinates, in units of R
_CHUNK = 8
DY = 2  # spacing of the x' samples; |E f_T|^2 has x'-band at most 1/4, so this is exact for line integrals


# ---------------------------------------------------------------------------
# Frequency functions and the extension operator
# ---------------------------------------------------------------------------


def _grid_1d(h: float) -> np.ndarray:
    M = round(1 / h)
    if not math.isclose(M * h, 1.0, rel_tol=1e-12):
        raise ParameterError("1/h must be an integer")
    return np.arange(-M, M + 1) * h


@dataclass
class FrequencyFunction:
    """Samples of ``f`` on the grid ``xi_j = j h`` covering ``[-1, 1]^(n-1)``.

    Attributes
    ----------
    values : numpy.ndarray
        Complex samples; shape ``(2M+1,)`` for ``n = 2`` and ``(2M+1, 2M+1)``
        for ``n = 3`` with ``M = 1/h``.  Samples outside the unit ball must vanish.
    h : float
    n : int
    """

    values: np.ndarray
    h: float
    n: int = 2

    def __post_init__(self) -> None:
        if self.n not in (2, 3):
            raise DomainError("frequency functions are defined for n in {2, 3}")
        xi = _grid_1d(self.h)
        shape = (len(xi),) * (self.n - 1)
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != shape:
            raise ParameterError(f"values must have shape {shape}, got {self.values.shape}")
        if self.n == 3:
            r2 = xi[:, None] ** 2 + xi[None, :] ** 2
            if np.any(self.values[r2 > 1 + 1e-12] != 0):
                raise ParameterError("samples outside the unit ball must vanish")

    @classmethod
    def from_callable(cls, fn: Callable[[np.ndarray], np.ndarray], h: float, n: int = 2) -> "FrequencyFunction":
        """Sample ``fn`` on the grid; ``fn`` receives an array of shape ``(..., n-1)``."""
        xi = _grid_1d(h)
        if n == 2:
            pts = xi[:, None]
            vals = np.asarray(fn(pts), dtype=complex).reshape(len(xi))
        else:
            pts = np.stack(np.meshgrid(xi, xi, indexing="ij"), axis=-1)
            vals = np.asarray(fn(pts), dtype=complex).reshape(len(xi), len(xi))
            vals = np.where((pts**2).sum(axis=-1) <= 1 + 1e-12, vals, 0)
        return cls(vals, h, n)

    @classmethod
    def zeros(cls, h: float, n: int = 2) -> "FrequencyFunction":
        m = len(_grid_1d(h))
        return cls(np.zeros((m,) * (n - 1), dtype=complex), h, n)

    @property
    def grid(self) -> np.ndarray:
        return _grid_1d(self.h)

    def weights(self) -> np.ndarray:
        """Trapezoid weights (including the ``h^(n-1)`` factor)."""
        w1 = np.full(len(self.grid), self.h)
        w1[0] = w1[-1] = self.h / 2
        return w1 if self.n == 2 else np.outer(w1, w1)

    def norm2(self) -> float:
        """``||f||_2`` by the trapezoid rule."""
        return float(math.sqrt(np.sum(self.weights() * np.abs(self.values) ** 2)))

    def to_bytes(self, R: float = 0.0) -> bytes:
        return field_to_bytes(self.values, self.n, R, self.h)


def extension(f: FrequencyFunction, X: np.ndarray, R: Optional[float] = None, chunk: int = 256) -> np.ndarray:
    """Trapezoid-rule values of ``E f`` at the rows of ``X``.

    Parameters
    ----------
    f : FrequencyFunction
    X : array_like, shape (m, n)
    R : float, optional
        Scale the grid must resolve; defaults to ``max(1, max |x|)``.

    Raises
    ------
    PreconditionError
        If ``h > 1 / (10 R)``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != f.n:
        raise ParameterError(f"points must have {f.n} coordinates")
    if R is None:
        R = max(1.0, float(np.abs(X).max(initial=0.0)))
    if f.h > 1 / (10 * R) * (1 + 1e-12):
        raise PreconditionError(f"grid spacing {f.h} is too coarse for R = {R}; need h <= 1/(10R)")
    wf = (f.weights() * f.values).ravel()
    keep = wf != 0
    if not keep.any():
        return np.zeros(len(X), dtype=complex)
    xi = f.grid
    if f.n == 2:
        Xi = xi[:, None][keep]
    else:
        Xi = np.stack(np.meshgrid(xi, xi, indexing="ij"), axis=-1).reshape(-1, 2)[keep]
    wf = wf[keep]
    q = (Xi**2).sum(axis=1)
    out = np.empty(len(X), dtype=complex)
    for s in range(0, len(X), chunk):
        P = X[s : s + chunk]
        phase = P[:, :-1] @ Xi.T + P[:, -1:] * q[None, :]
        # numpy's reductions use pairwise summation, so results are reproducible bit-for-bit
        out[s : s + chunk] = np.sum(wf[None, :] * np.exp(2j * np.pi * phase), axis=1)
    return out


def richardson_check(
    fn: Callable[[np.ndarray], np.ndarray], X: np.ndarray, h: float, n: int = 2, R: Optional[float] = None
) -> dict:
    """Compare the quadrature at ``h`` and ``h/2``.

    Returns
    -------
    dict
        ``coarse``, ``fine`` and ``extrapolated = (4 fine - coarse) / 3`` values,
        and ``rel_change = max |fine - coarse| / max |fine|``.
    """
    coarse = extension(FrequencyFunction.from_callable(fn, h, n), X, R)
    fine = extension(FrequencyFunction.from_callable(fn, h / 2, n), X, R)
    scale = max(float(np.abs(fine).max(initial=0.0)), 1e-300)
    return {
        "coarse": coarse,
        "fine": fine,
        "extrapolated": (4 * fine - coarse) / 3,
        "rel_change": float(np.abs(fine - coarse).max(initial=0.0) / scale),
    }


# ---------------------------------------------------------------------------
# Test functions
# ---------------------------------------------------------------------------


def _cos2(u: np.ndarray, w: float) -> np.ndarray:
    return np.where(np.abs(u) < w, np.cos(np.pi * u / (2 * w)) ** 2, 0.0)


def random_band_limited(R: int, h: float, seed: int, atoms: int = 12) -> FrequencyFunction:
    """A smooth ``f`` whose spatial profile sits in ``|x'| <= R/2`` at ``x_n = 0``.

    ``f(xi) = cos^2(pi xi / 2) sum_j c_j exp(-2 pi i y_j xi)`` with Gaussian
    ``c_j`` and ``y_j`` uniform in ``[-R/2, R/2]``.
    """
    rng = np.random.default_rng(seed)
    ys = rng.uniform(-R / 2, R / 2, atoms)
    cs = rng.normal(size=atoms) + 1j * rng.normal(size=atoms)
    xi = _grid_1d(h)
    vals = _cos2(xi, 1.0) * (np.exp(-2j * np.pi * np.outer(xi, ys)) @ cs)
    return FrequencyFunction(vals, h, 2)


def cap_bump_function(R: int, h: float, caps: Sequence[int], shifts: Optional[Sequence[float]] = None) -> FrequencyFunction:
    """``sum phi_theta(xi) exp(-2 pi i y_theta xi)`` over the listed cap indices.

    With no shifts every packet is centred at the origin at height 0, so the
    tubes form a bush through the origin.
    """
    a = R**-0.5
    xi = _grid_1d(h)
    vals = np.zeros(len(xi), dtype=complex)
    shifts = [0.0] * len(caps) if shifts is None else list(shifts)
    for i, y in zip(caps, shifts):
        c = -1 + i * a
        vals += _cos2(xi - c, a) * np.exp(-2j * np.pi * y * xi)
    vals[np.abs(xi) > 1] = 0
    return FrequencyFunction(vals, h, 2)


# ---------------------------------------------------------------------------
# Decomposition
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Packet:
    """One wave packet ``f_{theta,v}``.

    Attributes
    ----------
    cap : int
        Index ``i`` of the cap centred at ``c = -1 + i a``.
    c : float
    m : int
        Translate index; ``v = m R^(1/2)``.
    v : float
    start : int
        Grid index (``xi = start * h``) of the first coefficient.
    coef : numpy.ndarray
        Samples of ``f_{theta,v}`` on ``start .. start + len(coef) - 1``.
    energy : float
        ``||f_{theta,v}||_2^2``.
    """

    cap: int
    c: float
    m: int
    v: float
    start: int
    coef: np.ndarray = field(repr=False)
    energy: float

    def center(self, xn: np.ndarray) -> np.ndarray:
        """Tube core ``x' = v - 2 c x_n``."""
        return self.v - 2 * self.c * np.asarray(xn)


@dataclass
class WavePacketSet:
    """Packets of a frequency function at scale ``R``; see :func:`decompose`."""

    R: int
    h: float
    f: FrequencyFunction
    packets: list
    dropped_energy: float
    caps: np.ndarray

    @property
    def a(self) -> float:
        return self.R**-0.5

    @property
    def L(self) -> int:
        return int(round(self.R**0.5))

    def __len__(self) -> int:
        return len(self.packets)

    # -- sampling window ---------------------------------------------------

    @property
    def xn(self) -> np.ndarray:
        X = int(math.ceil(WINDOW * self.R))
        return np.arange(-X, X + 1, dtype=float)

    @property
    def y(self) -> np.ndarray:
        Y = DY * int(math.ceil(WINDOW * self.R / DY))
        return np.arange(-Y, Y + 1, DY, dtype=float)

    @property
    def dA(self) -> float:
        """Area element of the sampling grid."""
        return float(DY)

    def ball_mask(self) -> np.ndarray:
        return self.y[None, :] ** 2 + self.xn[:, None] ** 2 <= self.R**2

    def weight(self) -> np.ndarray:
        r = np.sqrt(self.y[None, :] ** 2 + self.xn[:, None] ** 2)
        return (1 + np.maximum(r - self.R, 0) / self.R) ** (-WEIGHT_POWER)

    def tube_mask(self, P: Packet) -> np.ndarray:
        return np.abs(self.y[None, :] - P.center(self.xn)[:, None]) < TUBE_RADIUS * self.L

    # -- fields ------------------------------------------------------------

    def _field(self, start: int, coefs: np.ndarray) -> np.ndarray:
        """``sum_j coef_j exp(2 pi i (y xi_j + x_n xi_j^2))``, ``xi_j = (start + j) h``; shape ``(k, #xn, #y)``.

        One FFT per height: ``y = DY q`` and ``xi_j = j h`` give the kernel
        ``exp(2 pi i q j / NY)`` with ``NY = 1 / (DY h)``, so coefficients are
        folded onto ``j mod NY`` (exact aliasing) before the inverse FFT.
        """
        coefs = np.atleast_2d(coefs)
        K = coefs.shape[1]
        j = start + np.arange(K)
        xi = j * self.h
        NY = round(1 / (DY * self.h))
        cols = j % NY
        q = np.round(self.y / DY).astype(np.int64) % NY
        chirp = np.exp(2j * np.pi * np.outer(self.xn, xi**2))  # (#xn, K)
        out = np.empty((len(coefs), len(self.xn), len(self.y)), dtype=complex)
        for r, c in enumerate(coefs):
            buf = np.zeros((len(self.xn), NY), dtype=complex)
            if len(np.unique(cols)) == K:
                buf[:, cols] = chirp * c[None, :]
            else:
                np.add.at(buf, (slice(None), cols), chirp * c[None, :])
            out[r] = (np.fft.ifft(buf, axis=1) * NY)[:, q]
        return out

    def packet_fields(self, indices: Optional[Iterable[int]] = None) -> Iterator[tuple]:
        """Yield ``(index, E f_T)`` on the window, packets of one cap evaluated together."""
        idx = list(range(len(self.packets))) if indices is None else list(indices)
        groups: dict = {}
        for i in idx:
            P = self.packets[i]
            groups.setdefault((P.start, len(P.coef)), []).append(i)
        for (start, _), members in groups.items():
            for s in range(0, len(members), _CHUNK):
                part = members[s : s + _CHUNK]
                F = self._field(start, np.stack([self.packets[i].coef for i in part]))
                for i, Fi in zip(part, F):
                    yield i, self.h * Fi

    def full_field(self) -> np.ndarray:
        """``E f`` on the window, as the sum of ``E (f phi_theta)`` over caps."""
        wf = self.f.weights() * self.f.values
        M = round(1 / self.h)
        m = round(self.a / self.h)
        xi = self.f.grid
        out = np.zeros((len(self.xn), len(self.y)), dtype=complex)
        for c in self.caps:
            j0 = round(c / self.h)
            lo, hi = max(j0 - m, -M), min(j0 + m, M)
            seg = wf[lo + M : hi + M + 1] * _cos2(xi[lo + M : hi + M + 1] - c, self.a)
            if np.any(seg):
                out += self._field(lo, seg)[0]
        return out

    def field_of(self, indices: Iterable[int]) -> np.ndarray:
        out = np.zeros((len(self.xn), len(self.y)), dtype=complex)
        for _, F in self.packet_fields(indices):
            out += F
        return out


def _check_scale(R: int, h: float) -> None:
    if R < 4 or R > 2**10 or round(math.log(R, 4)) != math.log(R, 4):
        raise ParameterError("R must be a power of 4 in [4, 2^10]")
    if h > 1 / (10 * R) * (1 + 1e-12):
        raise PreconditionError(f"grid spacing {h} is too coarse for R = {R}; need h <= 1/(10R)")
    m = R**-0.5 / h
    if abs(m - round(m)) > 1e-9:
        raise ParameterError("R^(-1/2)/h must be an integer")


def window(f: FrequencyFunction, R: int) -> WavePacketSet:
    """An empty packet set carrying the sampling window of scale ``R`` for ``f``."""
    _check_scale(R, f.h)
    a = R**-0.5
    return WavePacketSet(R, f.h, f, [], 0.0, -1 + a * np.arange(0, int(round(2 / a)) + 1))


def default_spacing(R: int) -> float:
    """Largest ``h = 2^-q`` with ``h <= 1/(10R)``."""
    return 2.0 ** -math.ceil(math.log2(10 * R))


def decompose(f: FrequencyFunction, R: int, keep: float = 1e-10) -> WavePacketSet:
    """Wave-packet decomposition ``f = sum_{theta,v} f_{theta,v}``.

    Packets whose tube misses the sampling window are not formed, and
    packets with ``||f_T||^2 < keep ||f||^2`` are dropped; the dropped energy
    is recorded.  Grid-support containment ``supp f_T in 3 theta`` is
    asserted for every packet.
    """
    if f.n != 2:
        raise DomainError("decomposition is implemented for n = 2")
    _check_scale(R, f.h)
    h, a, L = f.h, R**-0.5, int(round(R**0.5))
    m = round(a / h)
    M = round(1 / h)
    caps = -1 + a * np.arange(0, int(round(2 / a)) + 1)
    wf = f.weights() * f.values / h  # quadrature-weighted samples, so sum packets = E_h f
    xi = f.grid
    total = f.norm2() ** 2
    om = np.arange(-m, m + 1) * h
    psihat = L * _cos2(om, a)
    packets, dropped = [], 0.0
    if total == 0:
        return WavePacketSet(R, h, f, [], 0.0, caps)
    for i, c in enumerate(caps):
        j0 = int(round(c / h))
        idx = np.arange(j0 - m, j0 + m + 1)
        inside = (idx >= -M) & (idx <= M)
        seg = np.zeros(2 * m + 1, dtype=complex)
        seg[inside] = wf[idx[inside] + M] * _cos2(xi[idx[inside] + M] - c, a)
        if not np.any(seg):
            continue
        vmax = int(math.ceil((WINDOW * R * (1 + 2 * abs(c)) + (TUBE_RADIUS + 1) * L) / L))
        for mv in range(-vmax, vmax + 1):
            v = mv * L
            g = h * np.convolve(seg, psihat * np.exp(-2j * np.pi * v * om))
            start = j0 - 2 * m
            # supp f_T inside 3 theta, checked on the grid
            if start < j0 - 3 * m or start + len(g) - 1 > j0 + 3 * m:
                raise AssertionError(f"packet ({i}, {mv}) leaves 3 theta")
            e = h * float(np.sum(np.abs(g) ** 2))
            if e < keep * total:
                dropped += e
                continue
            packets.append(Packet(i, float(c), mv, float(v), start, g, e))
    return WavePacketSet(R, h, f, packets, dropped, caps)


# ---------------------------------------------------------------------------
# Audit: tails, reconstruction, norms
# ---------------------------------------------------------------------------


@dataclass
class PacketAudit:
    """Numerical checks of a decomposition on ``B_R``.

    Attributes
    ----------
    reconstruction : float
        ``||sum_T E f_T - E f||_{L^2(B_R)} / ||E f||_{L^2(B_R)}``.
    tail_relative : float
        Max over packets carrying at least ``significant`` of ``||E f||^2_{B_R}``
        of (mass of ``E f_T`` in ``B_R`` off its tube) / (mass of ``E f_T`` in ``B_R``).
    tail_absolute : float
        Max over all packets of the off-tube mass over ``||E f||^2_{B_R}``.
    kappa_lp : float
        Max over the same significant packets of ``||E f_T||_{L^p(w)} / (R^{(1/p-1/2)(n+1)/2} ||E f_T||_{L^2(w)})`` at ``p = 6``.
    kappa_orth : float
        Max over caps of ``sum_{T in theta} ||E f_T||^2 / ||E f_theta||^2`` on ``B_R``.
    worst : tuple
        ``(cap, m)`` of the packet attaining ``tail_relative``.
    """

    reconstruction: float
    tail_relative: float
    tail_absolute: float
    kappa_lp: float
    kappa_orth: float
    worst: tuple
    significant: float
    packets: int

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


def audit(W: WavePacketSet, significant: float = 1e-4, p: float = 6.0) -> PacketAudit:
    """One pass over all packets computing the checks of :class:`PacketAudit`."""
    ball = W.ball_mask()
    wt = W.weight()
    Ef = W.full_field()
    ref = float(np.sum(np.abs(Ef) ** 2 * ball))
    if ref == 0:
        return PacketAudit(0.0, 0.0, 0.0, 0.0, 0.0, (), significant, len(W))
    acc = np.zeros_like(Ef)
    cap_acc: dict = {}
    cap_mass: dict = {}
    rel, absolute, kap, worst = 0.0, 0.0, 0.0, ()
    scale = W.R ** ((1 / p - 0.5) * 3 / 2)
    for i, F in W.packet_fields():
        P = W.packets[i]
        acc += F
        cap_acc.setdefault(P.cap, np.zeros_like(Ef))
        cap_acc[P.cap] += F
        dens = np.abs(F) ** 2
        mass = float(np.sum(dens * ball))
        off = float(np.sum(dens * ball * ~W.tube_mask(P)))
        cap_mass[P.cap] = cap_mass.get(P.cap, 0.0) + mass
        absolute = max(absolute, off / ref)
        if mass >= significant * ref and off / mass > rel:
            rel, worst = off / mass, (P.cap, P.m)
        if mass >= significant * ref:
            l2 = math.sqrt(float(np.sum(dens * wt)))
            lp = float(np.sum(dens ** (p / 2) * wt)) ** (1 / p)
            kap = max(kap, lp / (scale * l2))
    recon = math.sqrt(float(np.sum(np.abs(acc - Ef) ** 2 * ball)) / ref)
    orth = 0.0
    for cap, F in cap_acc.items():
        mass = float(np.sum(np.abs(F) ** 2 * ball))
        if mass > 1e-12 * ref:
            orth = max(orth, cap_mass[cap] / mass)
    return PacketAudit(recon, rel, absolute, kap, orth, worst, significant, len(W))


def parseval_ratio(W: WavePacketSet) -> float:
    """``||E f||^2_{L^2(w_{B_R})} / (R ||f||_2^2)``."""
    Ef = W.full_field()
    num = float(np.sum(np.abs(Ef) ** 2 * W.weight())) * W.dA
    den = W.R * W.f.norm2() ** 2
    return num / den if den else 0.0


# ---------------------------------------------------------------------------
# Shadings and the local L^2 estimate
# ---------------------------------------------------------------------------


def _cell_index(W: WavePacketSet):
    """Cell ids of the ``R^(1/2)`` grid on the window (``-1`` outside ``B_R``), cached on ``W``."""
    cache = W.__dict__.setdefault("_cache", {})
    if "cells" not in cache:
        L, R = W.L, W.R
        iy = np.floor((W.y + R) / L).astype(np.int64)
        it = np.floor((W.xn + R) / L).astype(np.int64)
        ncol = int(iy.max()) + 1
        ids = np.where(W.ball_mask(), it[:, None] * ncol + iy[None, :], -1)
        flat = ids.ravel()
        order = np.argsort(flat, kind="stable")
        bounds = np.searchsorted(flat[order], np.arange(int(flat.max()) + 2))
        cache["cells"] = (ids, ncol, order, bounds)
    return cache["cells"]


def _cell_pixels(W: WavePacketSet, cells: np.ndarray) -> np.ndarray:
    """Flat window indices of the samples lying in the given cells."""
    _, _, order, bounds = _cell_index(W)
    cells = np.asarray(cells, dtype=np.int64)
    cells = cells[(cells >= 0) & (cells < len(bounds) - 1)]
    if not len(cells):
        return np.array([], dtype=np.int64)
    return np.concatenate([order[bounds[c] : bounds[c + 1]] for c in cells])


def tube_cells(W: WavePacketSet, P: Packet) -> np.ndarray:
    """Ids of the ``R^(1/2)``-cells of ``B_R`` that meet the tube of ``P``."""
    ids = _cell_index(W)[0]
    return np.unique(ids[W.tube_mask(P) & (ids >= 0)])


def random_shading(W: WavePacketSet, lam: float, seed: int, indices: Optional[Sequence[int]] = None) -> dict:
    """For each packet, ``floor(lam R^(1/2))`` random cells of its tube (all if fewer)."""
    if not 0 < lam:
        raise ParameterError("lambda must be positive")
    rng = np.random.default_rng(seed)
    size = max(1, int(math.floor(lam * W.L)))
    idx = range(len(W)) if indices is None else indices
    out = {}
    for i in idx:
        cells = tube_cells(W, W.packets[i])
        if len(cells) > size:
            cells = np.sort(rng.choice(cells, size=size, replace=False))
        out[i] = cells
    return out


def local_l2_ratio(W: WavePacketSet, shadings, lam: Optional[float] = None):
    """``int_X |sum_T E f_T 1_{Y(T)}|^2 / (lam R ||f||_2^2)``.

    Parameters
    ----------
    W : WavePacketSet
    shadings : dict or list of dict
        Maps packet index to an array of cell ids (see :func:`tube_cells`).
        Several shadings are evaluated in one pass over the packets.
    lam : float, optional
        Defaults to ``max_T #Y(T) / R^(1/2)`` for each shading.

    Raises
    ------
    PreconditionError
        If some ``Y(T)`` contains a cell its tube does not meet.
    """
    single = isinstance(shadings, dict)
    shadings = [shadings] if single else list(shadings)
    norm = W.f.norm2() ** 2
    needed = sorted({i for S in shadings for i, cells in S.items() if len(cells)})
    allowed = {i: tube_cells(W, W.packets[i]) for i in needed}
    for S in shadings:
        for i, cells in S.items():
            if len(cells) and not np.isin(cells, allowed[i]).all():
                raise PreconditionError(f"shading of packet {i} leaves its tube")
    accs = [np.zeros(len(W.xn) * len(W.y), dtype=complex) for _ in shadings]
    for i, F in W.packet_fields(needed):
        Ff = F.ravel()
        for S, acc in zip(shadings, accs):
            cells = S.get(i)
            if cells is not None and len(cells):
                pix = _cell_pixels(W, cells)
                acc[pix] += Ff[pix]
    out = []
    for S, acc in zip(shadings, accs):
        sizes = [len(c) for c in S.values()]
        lam_S = lam if lam is not None else (max(sizes) / W.L if sizes else 0.0)
        integral = float(np.sum(np.abs(acc) ** 2)) * W.dA
        if integral == 0 or norm == 0:
            out.append(0.0)
        else:
            out.append(integral / (lam_S * W.R * norm))
    return out[0] if single else out


# ---------------------------------------------------------------------------
# Refined decoupling
# ---------------------------------------------------------------------------


def comparable_packets(W: WavePacketSet, p: float = 6.0, indices: Optional[Sequence[int]] = None) -> list:
    """Packets whose ``||E f_T||_{L^p(w)}`` lie in one dyadic band (the heaviest by ``p``-th power)."""
    idx = list(range(len(W))) if indices is None else list(indices)
    if not idx:
        return []
    wt = W.weight()
    norms = {}
    for i, F in W.packet_fields(idx):
        norms[i] = float(np.sum(np.abs(F) ** p * wt)) ** (1 / p)
    pos = [i for i in idx if norms[i] > 0]
    if not pos:
        return []
    res = dyadic_pigeonhole(pos, weight=lambda i: norms[i] ** p, key=lambda i: norms[i])
    return sorted(res.subset)


def refined_decoupling_ratio(
    W: WavePacketSet, X: Optional[np.ndarray] = None, p: float = 6.0, indices: Optional[Sequence[int]] = None
) -> dict:
    """``||E f||^p_{L^p(X)} / (M^{2/(n-1)} sum_T ||E f_T||^p_{L^p(w)})`` for the chosen packets.

    ``X`` is a list of ``R^(1/2)``-cell ids (default: every cell of ``B_R``),
    ``f`` is the sum of the chosen packets and ``M`` is the largest number of
    their tubes meeting one cell of ``X``.

    Raises
    ------
    PreconditionError
        If the packets' ``L^p(w)`` norms spread over more than a factor 2.
    """
    idx = list(range(len(W))) if indices is None else list(indices)
    ids = _cell_index(W)[0]
    if X is None:
        X = np.unique(ids[ids >= 0])
    if not idx:
        return {"ratio": 0.0, "M": 0, "spread": 1.0, "packets": 0}
    wt = W.weight()
    inX = np.isin(ids, X)
    total = np.zeros((len(W.xn), len(W.y)), dtype=complex)
    norms = []
    meet = {}
    for i, F in W.packet_fields(idx):
        total += F
        norms.append(float(np.sum(np.abs(F) ** p * wt)))
        for cid in tube_cells(W, W.packets[i]):
            meet[cid] = meet.get(cid, 0) + 1
    spread = (max(norms) / min(norms)) ** (1 / p) if min(norms) > 0 else math.inf
    if spread > 2:
        raise PreconditionError(f"packet L^p norms spread by a factor {spread:.3g} > 2; pigeonhole first")
    M = max((meet.get(int(c), 0) for c in X), default=0)
    num = float(np.sum(np.abs(total) ** p * inX))
    den = M ** 2 * sum(norms)  # M^{2/(n-1)} with n = 2
    return {"ratio": num / den if den else 0.0, "M": M, "spread": spread, "packets": len(idx)}


# ---------------------------------------------------------------------------
# Khintchine / Kakeya experiment
# ---------------------------------------------------------------------------


def overlap_integral(
    tubes: Sequence[tuple],
    R: int,
    power: float,
    n: int = 2,
    spacing: Optional[float] = None,
    radius: Optional[float] = None,
    half_length: Optional[float] = None,
) -> dict:
    """``int (sum_T 1_T)^power`` over all of space, on a grid of the given spacing.

    Tubes are ``(c, v)`` pairs with core ``x' = v - 2 c x_n`` (``c`` and ``v``
    scalars for ``n = 2`` and pairs for ``n = 3``).  By default a tube is the
    ``R^(1/2) x ... x R^(1/2) x R`` box-like set ``|x' - core| < R^(1/2)/2``,
    ``|x_n| <= R/2``.  The grid is a cube large enough to hold every tube, so
    the count is exact on the grid.  Returns the integral, the maximal
    overlap and a grid point where it is attained.
    """
    if n not in (2, 3):
        raise DomainError("overlap census is defined for n in {2, 3}")
    L = R**0.5
    rad = L / 2 if radius is None else radius
    half = R / 2 if half_length is None else half_length
    s = spacing if spacing is not None else (1.0 if n == 2 else L / 4)
    geo = [(np.atleast_1d(np.asarray(c, dtype=float)), np.atleast_1d(np.asarray(v, dtype=float))) for c, v in tubes]
    extent = max([half] + [float(np.abs(v).max() + 2 * np.abs(c).max() * half + rad) for c, v in geo])
    ax_h = np.arange(-extent + s / 2, extent, s)
    ax_n = np.arange(-half + s / 2, half, s)
    grids = np.meshgrid(*([ax_h] * (n - 1) + [ax_n]), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    count = np.zeros(len(pts), dtype=np.int64)
    for c, v in geo:
        core = v[None, :] - 2 * pts[:, -1:] * c[None, :]
        count += (np.sqrt(((pts[:, :-1] - core) ** 2).sum(axis=1)) < rad).astype(np.int64)
    integral = float(np.sum(count.astype(float) ** power) * s**n)
    j = int(np.argmax(count)) if len(count) else 0
    return {"integral": integral, "max": int(count.max(initial=0)), "argmax": pts[j].tolist() if len(pts) else []}


@dataclass
class KhintchineReport:
    """Random-sign experiment for ``int (sum_theta |E f_theta|^2)^{p0/2}``.

    Attributes
    ----------
    square_function : float
        ``int_{B_R} (sum_theta |E f_theta|^2)^{p0/2}``.
    random_sign : list
        ``int_{B_R} |sum_theta a_theta E f_theta|^{p0}`` per trial.
    combinatorial : dict
        :func:`overlap_integral` of the tubes at power ``p0/2``.
    bound : float
        ``R^{p0}``.
    """

    R: int
    p0: float
    tubes: list
    square_function: float
    random_sign: list
    combinatorial: dict
    bound: float
    seed: Optional[int]

    @property
    def khintchine_ratio(self) -> float:
        return float(np.mean(self.random_sign)) / self.square_function if self.square_function else 0.0


def khintchine_kakeya_experiment(
    tubes: Sequence[tuple], R: int, p0: float, trials: int = 8, seed: Optional[int] = None, h: Optional[float] = None
) -> KhintchineReport:
    """Packets realizing the tubes (one per cap), random signs, and the overlap census.

    Parameters
    ----------
    tubes : sequence of (cap index, v)
        At most one tube per cap (direction-separated).
    """
    caps = [int(t[0]) for t in tubes]
    if len(set(caps)) != len(caps):
        raise ParameterError("tubes must be direction-separated: one per cap")
    h = default_spacing(R) if h is None else h
    a = R**-0.5
    fields = []
    W = None
    for cap, v in tubes:
        f = cap_bump_function(R, h, [cap], [v])
        W = window(f, R)
        fields.append(W.full_field())
    ball = W.ball_mask() if W is not None else None
    rng = np.random.default_rng(seed)
    if not fields:
        return KhintchineReport(R, p0, [], 0.0, [], overlap_integral([], R, p0 / 2), R**p0, seed)
    F = np.stack(fields)
    # normalise each packet to |E f_theta| ~ 1 on its tube
    F /= np.abs(F).reshape(len(F), -1).max(axis=1)[:, None, None]
    sq = float(np.sum((np.abs(F) ** 2).sum(axis=0) ** (p0 / 2) * ball))
    runs = []
    for _ in range(trials):
        signs = rng.choice([-1.0, 1.0], size=len(F))
        runs.append(float(np.sum(np.abs(np.tensordot(signs, F, axes=1)) ** p0 * ball)))
    geo = [(-1 + cap * a, v) for cap, v in tubes]
    comb = overlap_integral(geo, R, p0 / 2)
    return KhintchineReport(R, p0, list(tubes), sq, runs, comb, R**p0, seed)


# ---------------------------------------------------------------------------
# Binary grid format
# ---------------------------------------------------------------------------

_MAGIC = b"FLBG"
_HEADER = struct.Struct("<4sHBBddI")


def field_to_bytes(values: np.ndarray, n: int, R: float, h: float) -> bytes:
    """Header ``(magic, version, n, 0, R, h, ndim)``, the dims as uint32, then complex64 LE row-major."""
    arr = np.ascontiguousarray(values, dtype="<c8")
    head = _HEADER.pack(_MAGIC, 1, n, 0, float(R), float(h), arr.ndim)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + dims + arr.tobytes(order="C")


def field_from_bytes(data: bytes) -> dict:
    magic, version, n, _, R, h, ndim = _HEADER.unpack_from(data, 0)
    if magic != _MAGIC or version != 1:
        raise ParameterError("not a grid file of version 1")
    off = _HEADER.size
    dims = struct.unpack_from(f"<{ndim}I", data, off)
    off += 4 * ndim
    count = int(np.prod(dims)) if ndim else 1
    if len(data) - off != 8 * count:
        raise ParameterError("payload size does not match the header")
    values = np.frombuffer(data, dtype="<c8", count=count, offset=off).reshape(dims)
    return {"n": n, "R": R, "h": h, "values": values}


def save_field(path, values: np.ndarray, n: int, R: float, h: float) -> None:
    with open(path, "wb") as fh:
        fh.write(field_to_bytes(values, n, R, h))


def load_field(path) -> dict:
    with open(path, "rb") as fh:
        return field_from_bytes(fh.read())
