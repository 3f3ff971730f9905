"""Acceptance gate: twelve criteria at their stated tolerances and time budgets.

Each test records its outcome in :mod:`acceptance_log`; the terminal summary
prints one pass/fail line per criterion.  Where the library computes a
quantity, the test recomputes it through an independent route (closed-form
distances, set-of-tuples coverings, exact rational interpolation) before
comparing against the bound.
"""

import math
import warnings
from fractions import Fraction

import numpy as np
import pytest

from acceptance_log import criterion
from flab.branching import BranchingFunction, cluster_branching, eta0, lipschitz_partition, multiscale_decompose, uniformize
from flab.dyadic import CellSet, covering_count
from flab.exponents import (
    ASYMPTOTIC_COEFFICIENT,
    dense_case_interpolation,
    interpolate_holder,
    kakeya_dim_from_restriction,
    mu_thresholds,
    p_of_n,
)
from flab.incidence import (
    ProjectionSystem,
    check_bush_nd,
    check_hairbrush_3d,
    check_two_ends_furstenberg_2d,
    fit_incidence_exponents,
    gen_bush,
    gen_hairbrush,
    gen_lattice_example,
    gen_random_two_ends,
    gen_well_spaced,
    rich_ball_census,
    sums_diffs_check,
    union_measure,
)
from flab.refine import excise_high_multiplicity
from flab.setclasses import frostman_deficiency
from flab.tubes import DiscreteLine, rasterize_tube, thickened_incidence
from flab.wavepackets import (
    audit,
    decompose,
    default_spacing,
    local_l2_ratio,
    random_band_limited,
    random_shading,
    richardson_check,
)

from oracles import brute_covering_count, brute_frostman

F = Fraction


# ---------------------------------------------------------------------------
# 1. duality


def test_criterion_01_duality_fidelity():
    with criterion(1, "thickened point-line duality, 1000 pairs at delta=2^-7", budget=5) as rec:
        k = 7
        delta = 2.0**-k
        rng = np.random.default_rng(20240101)
        checked = met = 0
        for i in range(1000):
            a, b = rng.uniform(0, 1), rng.uniform(-0.5, 0.5)
            ln = DiscreteLine((a,), (b,))
            if i % 2:
                tube = rasterize_tube(ln, delta)
                centre = tube.centers[rng.integers(len(tube))]
            else:
                centre = (rng.integers(0, 2**k, 2) + 0.5) * delta
            x1, x2 = centre
            # closed forms: distance from x to l_(a,b), and from (a,b) to the dual line of x
            primal = abs(x1 - a - b * x2) / math.hypot(1.0, b)
            dual = abs(a + x2 * b - x1) / math.hypot(1.0, x2)
            if primal < 1.5 * delta:
                assert dual <= 4 * delta, (i, primal, dual)
                met += 1
            if dual < 1.5 * delta:
                assert primal <= 4 * delta, (i, primal, dual)
            lib = thickened_incidence(centre, ln, delta)
            assert lib.ok
            assert lib.primal_meets == (primal < 1.5 * delta)
            checked += 1
        assert checked == 1000 and met >= 400
        rec["note"] = f"{checked} pairs, {met} incident"


# ---------------------------------------------------------------------------
# 2. covering and Frostman oracles


def test_criterion_02_covering_oracle():
    with criterion(2, "covering_count exact and Frostman scan within 2^s 2^n, 200 sets", budget=60) as rec:
        k, n = 4, 2
        rng = np.random.default_rng(77)
        worst = 0.0
        for i in range(200):
            size = int(rng.integers(1, 2 ** (n * k) + 1))
            E = CellSet(n, k, rng.choice(2 ** (n * k), size, replace=False))
            for j in range(k + 1):
                assert covering_count(E, 2.0**-j) == brute_covering_count(E.indices, k, j)
            s = (0.5, 1.0, 1.5, 2.0)[i % 4]
            for variant in ("standard", "katz_tao"):
                scan = frostman_deficiency(E, s, variant).C_min
                brute = brute_frostman(E.indices, k, s, variant)
                assert scan <= brute * (1 + 1e-9)
                assert brute <= scan * 2**s * 2**n * (1 + 1e-9)
                worst = max(worst, brute / scan)
        rec["note"] = f"largest brute/scan {worst:.2f}"


# ---------------------------------------------------------------------------
# 3. Lipschitz partition


def _interp(xs, fs, x):
    """Exact value at ``x`` of the piecewise-linear interpolant of the samples."""
    for i in range(len(xs) - 1):
        if xs[i] <= x <= xs[i + 1]:
            return fs[i] + (fs[i + 1] - fs[i]) * (x - xs[i]) / (xs[i + 1] - xs[i])
    raise ValueError(x)


def _random_lipschitz(rng):
    N = int(rng.integers(2, 40))
    inner = sorted({F(int(v), 997) for v in rng.integers(1, 997, N - 1)})
    xs = [F(0), *inner, F(1)]
    fs = [F(0)]
    for a, b in zip(xs, xs[1:]):
        fs.append(fs[-1] + F(int(rng.integers(0, 13)), 12) * (b - a))
    return BranchingFunction(tuple(xs), tuple(fs), 1)


def test_criterion_03_lipschitz_partition():
    with criterion(3, "partition conclusions exact, 100 functions x eta in {0.1, 0.05}", budget=10) as rec:
        rng = np.random.default_rng(11)
        blocks = 0
        for _ in range(100):
            bf = _random_lipschitz(rng)
            xs, fs = bf.x, bf.beta
            for eta in (0.1, 0.05):
                plan = lipschitz_partition(bf, eta)
                e = F(eta)
                A, S = plan.A, plan.slopes
                assert A[0] == 0 and A[-1] == 1 and all(p < q for p, q in zip(A, A[1:]))
                assert 0 <= S[0] and S[-1] <= 1 and all(p < q for p, q in zip(S, S[1:]))
                for a, b, s in zip(A, A[1:], S):
                    assert b - a >= eta0(eta) / eta
                    fa, fb = _interp(xs, fs, a), _interp(xs, fs, b)
                    # both sides are linear between consecutive breakpoints
                    pts = [a, b, *[x for x in xs if a < x < b]]
                    for x in pts:
                        assert _interp(xs, fs, x) >= fa + s * (x - a) - e * (b - a)
                    assert fb <= fa + (s + 3 * e) * (b - a)
                    blocks += 1
                assert S[-1] >= fs[-1] - fs[0] - e
        rec["note"] = f"{blocks} blocks checked"


# ---------------------------------------------------------------------------
# 4. multi-scale decomposition


def _cover_tuples(E, j):
    return {tuple(row) for row in (E.indices >> (E.k - j)).tolist()}


def _cantor(rng, k, children):
    """Uniform set: every level-j cell keeps ``children[j]`` random children of its four."""
    cells = np.zeros((1, 2), dtype=np.int64)
    for c in children:
        kids = []
        for x, y in cells.tolist():
            for q in rng.choice(4, c, replace=False):
                kids.append([2 * x + (q >> 1), 2 * y + (q & 1)])
        cells = np.array(kids)
    return CellSet(2, k, cells)


def test_criterion_04_multiscale_decomposition():
    with criterion(4, "multi-scale items 1-4 on 20 uniformized families at delta=2^-6", budget=120) as rec:
        k, n, eta = 6, 2, 0.1
        blocks = multi = 0
        for fam_id in range(20):
            rng = np.random.default_rng(500 + fam_id)
            if fam_id % 2:
                children = [int(c) for c in rng.integers(1, 5, k)]
                members = [_cantor(rng, k, children) for _ in range(3)]
            else:
                density = 0.15 + 0.035 * fam_id
                members = [uniformize(CellSet.from_mask(rng.random((2**k, 2**k)) < density)) for _ in range(4)]
            cl = cluster_branching(members)
            family = [members[i] for i in cl.members]
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                rep = multiscale_decompose(family, eta)
            assert rep.ok, rep.failures
            plan = rep.plan
            multi += plan.H > 1
            levels = [int(a * k) for a in plan.A]
            assert all(p < q for p, q in zip(plan.slopes, plan.slopes[1:]))
            assert plan.slopes[0] >= 0 and plan.slopes[-1] <= n
            for E in family:
                for lo, hi, s in zip(levels, levels[1:], plan.slopes):
                    w = (hi - lo) / k
                    # item 1
                    assert w >= eta0(eta) / eta
                    # item 2, counts by an independent set-of-tuples cover
                    ratio = math.log2(len(_cover_tuples(E, hi)) / len(_cover_tuples(E, lo))) / k
                    assert ratio <= (float(s) + 4 * eta) * w + 1e-12
                    # item 3, blocks rebuilt from tuples and rescaled
                    bound = 2.0 ** (4 * eta * w * k) * 4.0**n
                    groups = {}
                    for row in _cover_tuples(E, hi):
                        parent = tuple(v >> (hi - lo) for v in row)
                        groups.setdefault(parent, []).append([v - (p << (hi - lo)) for v, p in zip(row, parent)])
                    if float(s) > 0 and hi > lo:
                        for cells in groups.values():
                            sub = CellSet(n, hi - lo, np.array(cells))
                            assert frostman_deficiency(sub, min(float(s), n)).C_min <= bound
                    blocks += 1
                # item 4
                assert float(plan.slopes[-1]) >= math.log2(len(E)) / k - eta - 1e-12
        rec["note"] = f"{blocks} member-blocks, {multi} families with several blocks"


# ---------------------------------------------------------------------------
# 5-7. desk checks of the incidence bounds

GENS = (gen_bush, gen_hairbrush, gen_random_two_ends)


def _union_oracle(Fam):
    cells = set()
    for Y in Fam.shadings:
        cells |= set(Y.flat.tolist())
    return len(cells) * Fam.delta**Fam.n


def test_criterion_05_two_ends_furstenberg():
    with criterion(5, "planar two-ends Furstenberg, 50 configurations", budget=300) as rec:
        ratios = []
        for i in range(50):
            gen = GENS[i % 3]
            lam_exp = (0.5, 0.25)[(i // 3) % 2]
            k = (6, 7)[(i // 6) % 2]
            d = 2.0**-k
            count = {gen_bush: round(d**-0.5) + i % 5, gen_hairbrush: 16 + i % 9, gen_random_two_ends: 16 + i % 13}[gen]
            Fam = gen(2, count, d**lam_exp, k, seed=1000 + i, eps1=0.5, eps2=0.2)
            rep = check_two_ends_furstenberg_2d(Fam, eps=0.1)
            lhs = _union_oracle(Fam)
            assert lhs == pytest.approx(float(union_measure(Fam)), rel=1e-12)
            mass = sum(len(Y) for Y in Fam.shadings) * d**2
            rhs = d**0.1 * d**0.25 * (d**lam_exp) ** 0.5 * mass
            assert lhs >= rhs, (i, gen.__name__, lhs, rhs)
            assert rep.verdict
            ratios.append(lhs / rhs)
        rec["note"] = f"min ratio {min(ratios):.2f}"


def test_criterion_06_hairbrush_and_bush():
    with criterion(6, "hairbrush and bush bounds in R^3 at delta=2^-5", budget=300) as rec:
        k, n = 5, 3
        d = 2.0**-k
        checks = 0
        worst = math.inf
        for i in range(30):
            gen = GENS[i % 3]
            lam_exp = (0.5, 0.25)[(i // 3) % 2]
            lam = d**lam_exp
            Fam = gen(n, 20 + i % 11, lam, k, seed=2000 + i, eps1=0.5, eps2=0.2)
            lhs = _union_oracle(Fam)
            mass = sum(len(Y) for Y in Fam.shadings) * d**n
            bush_rhs = d**0.1 * d**0.25 * lam * d ** ((n - 1) / 2) * (d ** (n - 1) * len(Fam)) ** 0.5
            assert lhs >= bush_rhs and check_bush_nd(Fam).verdict
            worst = min(worst, lhs / bush_rhs)
            checks += 1
            if Fam.meta["m"] == 1:
                hb_rhs = d**0.1 * d ** (3 * 0.5 / 4) * lam**0.75 * d**0.5 * mass
                assert lhs >= hb_rhs and check_hairbrush_3d(Fam).verdict
                worst = min(worst, lhs / hb_rhs)
                checks += 1
        rec["note"] = f"{checks} inequalities, min ratio {worst:.2f}"


def test_criterion_07_excision():
    with criterion(7, "high-multiplicity excision removes at most delta^eps1, eps1=0.3", budget=120) as rec:
        k, n, eps1 = 5, 3, 0.3
        d = 2.0**-k
        runs = 0
        peak = 0.0
        for i in range(30):
            gen = GENS[i % 3]
            lam_exp = (0.5, 0.25)[(i // 3) % 2]
            Fam = gen(n, 20 + i % 11, d**lam_exp, k, seed=2000 + i, eps1=eps1, eps2=0.15)
            cells, counts = Fam.multiplicity()
            for rule, thr in mu_thresholds(n, Fam.meta["m"], lam_exp, eps1).items():
                mu = thr.value(d)
                ex = excise_high_multiplicity(Fam, mu)
                removed = float(np.mean(counts > mu)) if len(counts) else 0.0
                assert ex.removed_fraction == pytest.approx(removed, abs=1e-15)
                assert removed <= d**eps1
                peak = max(peak, counts.max() / mu)
                runs += 1
        rec["note"] = f"{runs} excisions, largest multiplicity/mu {peak:.3f}"


# ---------------------------------------------------------------------------
# 8. lattice numerology


def test_criterion_08_lattice_numerology():
    with criterion(8, "lattice incidence exponents within tolerance", budget=120) as rec:
        two = [gen_lattice_example(2, N, (k,)) for N in (8, 16, 32) for k in (2, 4)]
        fit2 = fit_incidence_exponents(two)
        assert abs(fit2["alpha"] - 2 / 3) <= 0.15 and abs(fit2["beta"] - 2 / 3) <= 0.15
        three = [gen_lattice_example(3, N, (k, k)) for N in (4, 8) for k in (2, 4)]
        fit3 = fit_incidence_exponents(three)
        assert abs(fit3["alpha"] - 1 / 2) <= 0.2 and abs(fit3["beta"] - 3 / 4) <= 0.2
        rec["note"] = (
            f"n=2 ({fit2['alpha']:.3f}, {fit2['beta']:.3f}), n=3 ({fit3['alpha']:.3f}, {fit3['beta']:.3f})"
        )


# ---------------------------------------------------------------------------
# 9. well-spaced census


@pytest.mark.xfail(strict=True, reason="bound with unit constant is below the exact census at #T=64; see the ledger")
def test_criterion_09_well_spaced_census():
    with criterion(9, "well-spaced rich-cell census at delta=2^-6", budget=60, expected_failure=True) as rec:
        Fam = gen_well_spaced(2, 64, 6)
        counts = {r: rich_ball_census(Fam, r, slack=0.1) for r in (2, 4, 8)}
        rec["note"] = ", ".join(
            f"r={r}: {c.count} vs {c.bound * c.delta ** -c.slack:.1f}" for r, c in counts.items()
        )
        for r, c in counts.items():
            assert c.count <= len(Fam) ** 2 / r**3 * (2.0**-6) ** -0.1, rec["note"]


# ---------------------------------------------------------------------------
# 10. sums and differences


def test_criterion_10_sums_and_differences():
    with criterion(10, "product-set identities and difference-ratio growth", budget=60) as rec:
        k = 10

        def system(G):
            return ProjectionSystem(np.asarray(G), k, 1.0, 0.5, 2.0, 2.0, 3.0)

        rng = np.random.default_rng(3)
        for size in (4, 16, 32):
            A = rng.choice(2**k, size, replace=False)
            B = rng.choice(2**k, size // 2 + 1, replace=False)
            c = sums_diffs_check(system([[a, b] for a in A for b in B])).extra["counts"]
            assert c["0"] == len(A) and c["inf"] == len(B)
        worst = 0.0
        for seed in range(5):
            rng = np.random.default_rng(100 + seed)
            ratios = []
            for e in range(4, 11):
                G = rng.integers(0, 2**k, size=(2**e, 2))
                ratios.append(sums_diffs_check(system(G)).extra["diff_ratio"])
            growth = [b / a for a, b in zip(ratios, ratios[1:])]
            assert max(growth) <= 2
            worst = max(worst, max(growth))
        rec["note"] = f"largest growth per doubling {worst:.3f}"


# ---------------------------------------------------------------------------
# 11. wave packets


def _smooth(R, seed, atoms=6):
    rng = np.random.default_rng(seed)
    ys = rng.uniform(-R / 2, R / 2, atoms)
    cs = rng.normal(size=atoms) + 1j * rng.normal(size=atoms)

    def fn(xi):
        x = xi[..., 0]
        win = np.where(np.abs(x) < 1, np.cos(np.pi * x / 2) ** 2, 0.0)
        return win * (np.exp(-2j * np.pi * np.multiply.outer(x, ys)) @ cs)

    return fn


def test_criterion_11_wave_packets():
    with criterion(11, "wave packets at R=256", budget=600) as rec:
        R = 256
        h = default_spacing(R)
        W = decompose(random_band_limited(R, h, seed=2024), R)
        A = audit(W)
        assert A.reconstruction <= 1e-3
        assert A.tail_absolute <= 1e-3
        m = round(W.a / h)
        for P in W.packets:
            j0 = round(P.c / h)
            assert j0 - 3 * m <= P.start and P.start + len(P.coef) - 1 <= j0 + 3 * m
        ratios = local_l2_ratio(W, [random_shading(W, R**-0.25, s) for s in range(20)])
        assert max(ratios) <= 32
        X = np.random.default_rng(5).uniform(-R / 2, R / 2, size=(8, 2))
        rich = richardson_check(_smooth(R, 5), X, h, R=R)
        assert rich["rel_change"] <= 1e-6
        rec["note"] = (
            f"{len(W)} packets, reconstruction {A.reconstruction:.1e}, off-tube {A.tail_absolute:.1e} "
            f"(relative {A.tail_relative:.1e}), local L2 max {max(ratios):.3f}, Richardson {rich['rel_change']:.1e}"
        )


# ---------------------------------------------------------------------------
# 12. exponent calculus


def test_criterion_12_exponent_calculus():
    with criterion(12, "exact exponent identities", budget=1) as rec:
        assert p_of_n(3).p == F(22, 7)
        assert kakeya_dim_from_restriction(F(22, 7)) == F(5, 2)
        assert kakeya_dim_from_restriction(F("3.2")) == F(7, 3)
        assert ASYMPTOTIC_COEFFICIENT == F(28, 11)
        n = 10**6
        assert abs(n * (p_of_n(n).p - 2) - F(28, 11)) < F(1, 10**4)
        p, e, _ = interpolate_holder(4, F(-3, 4), 2, 1, weights=(F(4, 7), F(3, 7)))
        assert (p, e) == (F(22, 7), 0)
        for n in range(4, 13):
            # closed form of the dense case, computed without the library
            expected = max(F(154 * n + 6, 77 * n - 95), F(22 * n + 6, 11 * (n - 1)))
            assert p_of_n(n).p == expected == 2 + F(196, 77 * n - 95)
            assert dense_case_interpolation(n)[0] == expected
        rec["note"] = "p(3)=22/7, s(22/7)=5/2, s(3.2)=7/3, 28/11, weights (4/7,3/7), n=4..12"


def test_acceptance_registry_complete():
    # runs last in file order; every criterion recorded an outcome
    import acceptance_log

    if set(acceptance_log.RESULTS) != set(range(1, 13)):
        pytest.skip("only part of the acceptance gate was selected")
    for k, r in acceptance_log.RESULTS.items():
        assert r["status"] == "PASS" or r["xfail"], (k, r)
