"""Slow, independent reference implementations used only by the tests.

None of these share code paths with the library: covering numbers are
computed by geometric containment of boxes, Frostman constants by scanning a
finer (x, r) lattice with explicit distance matrices, and so on.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def cell_boxes(indices: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    lo = indices.astype(float) * 2.0**-k
    return lo, lo + 2.0**-k


def brute_covering_count(indices: np.ndarray, k: int, j: int) -> int:
    """Minimal number of dyadic 2^-j cells needed to cover the given 2^-k cells.

    Dyadic cells of one generation are disjoint and every finer cell sits in
    exactly one of them, so the minimum cover is the set of coarse cells that
    contain at least one fine cell.  Containment is tested geometrically.
    """
    n = indices.shape[1]
    lo, hi = cell_boxes(indices, k)
    rho = 2.0**-j
    count = 0
    for corner in itertools.product(range(2**j), repeat=n):
        Lo = np.array(corner, dtype=float) * rho
        Hi = Lo + rho
        inside = np.all((lo >= Lo) & (hi <= Hi), axis=1)
        count += bool(inside.any())
    return count


def brute_frostman(indices: np.ndarray, k: int, s: float, variant: str = "standard") -> float:
    """sup over half-grid points x and radii r in (delta/2)Z ∩ [delta, 1].

    Membership uses closed sup-norm balls tested on cell centres, matching the
    library's convention, but the (x, r) lattice is strictly finer.
    """
    n = indices.shape[1]
    delta = 2.0**-k
    centers = (indices + 0.5) * delta
    axis = np.arange(2 ** (k + 1) + 1) * (delta / 2)
    xs = np.array(list(itertools.product(axis, repeat=n)))
    radii = np.arange(2, 2 ** (k + 1) + 1) * (delta / 2)
    total = len(indices)
    best = 0.0
    for start in range(0, len(xs), 4096):
        chunk = xs[start : start + 4096]
        dist = np.abs(chunk[:, None, :] - centers[None, :, :]).max(axis=2)
        for r in radii:
            cnt = (dist <= r + 1e-12).sum(axis=1)
            m = cnt.max()
            if variant == "katz_tao":
                val = m / (r / delta) ** s
            else:
                val = m / (r**s * total)
            best = max(best, val)
    return best


def point_line_distance_2d(p: np.ndarray, a: float, b: float) -> float:
    """Euclidean distance from p=(x1,x2) to the line {(a + t b, t)}."""
    return abs(p[0] - a - b * p[1]) / math.hypot(1.0, b)


def brute_level_masses(indices: np.ndarray, k: int, j: int) -> list[int]:
    """Masses of the occupied level-j dyadic cells, by dictionary counting of index tuples."""
    counts: dict[tuple, int] = {}
    for row in indices.tolist():
        key = tuple(v // 2 ** (k - j) for v in row)
        counts[key] = counts.get(key, 0) + 1
    return sorted(counts.values())


def brute_lower_hull_slopes(xs, fs):
    """Slope of the greatest convex minorant on each sample segment, by O(N^3) enumeration.

    The minorant at x_i equals the min over pairs (a <= i <= b) of the chord
    value at x_i; its slope on [x_i, x_{i+1}] is then read off directly.
    """
    N = len(xs)
    g = []
    for i in range(N):
        best = fs[i]
        for a in range(i + 1):
            for b in range(i, N):
                if a == b:
                    continue
                val = fs[a] + (fs[b] - fs[a]) * (xs[i] - xs[a]) / (xs[b] - xs[a])
                best = min(best, val)
        g.append(best)
    return [(g[i + 1] - g[i]) / (xs[i + 1] - xs[i]) for i in range(N - 1)], g


def brute_rasterize(a, b, k, width=1.5):
    """All cells (as index tuples) whose centres are within width*delta of l_(a,b), by full-grid scan."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    n = len(a) + 1
    delta = 2.0**-k
    grid = np.array(list(itertools.product(range(2**k), repeat=n)))
    c = (grid + 0.5) * delta
    # distance via the closest point: minimize |c - (a + t b, t)| over t in closed form
    d = np.append(b, 1.0)
    base = np.append(a, 0.0)
    t = ((c - base) @ d) / (d @ d)
    foot = base[None, :] + t[:, None] * d[None, :]
    dist = np.linalg.norm(c - foot, axis=1)
    return {tuple(int(v) for v in row) for row in grid[dist < width * delta]}
