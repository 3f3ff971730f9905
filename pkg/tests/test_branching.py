import json
import warnings
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flab.branching import (
    BranchingFunction,
    MultiScalePlan,
    _convex_minorant_vertices,
    branching_function,
    check_partition,
    cluster_branching,
    is_uniform,
    lipschitz_partition,
    multiscale_decompose,
    uniformity_errors,
    uniformize,
    uniformize_report,
)
from flab.dyadic import CellSet, covering_count
from flab.errors import CertificateError, DomainError, ParameterError, PreconditionError

from oracles import brute_level_masses, brute_lower_hull_slopes

F = Fraction


def line_cells(k, slope=Fraction(2, 5), intercept=Fraction(3, 10)):
    """Cells of the 2^-k grid met by the segment y = intercept + slope * x, 0 <= x <= 1."""
    xs = np.linspace(0, 1, 64 * 2**k)
    ys = float(intercept) + float(slope) * xs
    pts = np.c_[np.minimum(xs, 1 - 1e-12), ys]
    return CellSet.from_points(pts, k)


def random_set(seed, k=6, density=0.5):
    rng = np.random.default_rng(seed)
    return CellSet.from_mask(rng.random((2**k, 2**k)) < density)


# --------------------------------------------------------------------- uniformize


def test_full_grid_is_fixed():
    E = CellSet.full(2, 5)
    assert uniformize(E) == E
    assert is_uniform(E)


def test_majority_band_wins():
    left = [(i, j) for i in range(16) for j in range(32)]
    E = CellSet(2, 5, np.array(left + [(20, 5)]))
    assert uniformize(E) == CellSet(2, 5, np.array(left))


def test_random_set_uniformized():
    E = random_set(0)
    rep = uniformize_report(E)
    assert rep.E.issubset(E)
    assert max(uniformity_errors(rep.E)) < 2
    assert rep.ratio >= rep.bound
    # #E' >= #E / polylog: here the loss per level is a constant factor
    assert rep.ratio >= 1 / (2 * 6 * 6)


def test_uniformize_empty():
    with pytest.raises(DomainError):
        uniformize(CellSet(2, 3))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([1, 2, 3]), st.floats(0.05, 0.9))
def test_uniformize_property(seed, n, density):
    k = {1: 8, 2: 4, 3: 3}[n]
    rng = np.random.default_rng(seed)
    mask = rng.random((2**k,) * n) < density
    if not mask.any():
        mask.flat[0] = True
    E = CellSet.from_mask(mask)
    rep = uniformize_report(E)
    assert rep.E.issubset(E) and len(rep.E) > 0
    assert rep.ratio >= rep.bound
    for j in range(k + 1):
        masses = brute_level_masses(rep.E.indices, k, j)
        assert masses[-1] < 2 * masses[0]
    bf = branching_function(rep.E)
    assert all(0 <= s <= n + 1e-9 for s in bf.slopes)


# --------------------------------------------------------------- branching function


def test_branching_full_grid():
    bf = branching_function(CellSet.full(2, 5))
    assert all(abs(b - 2 * x) < 1e-12 for x, b in zip(bf.x, bf.beta))


def test_branching_single_cell():
    bf = branching_function(CellSet(2, 5, [77]))
    assert all(b == 0 for b in bf.beta)


def test_branching_line():
    E = line_cells(6)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        bf = branching_function(E)
    assert all(abs(float(b - x)) <= 1 / 6 for x, b in zip(bf.x, bf.beta))


def test_branching_warns_on_nonuniform():
    E = CellSet(2, 5, np.array([(i, j) for i in range(16) for j in range(32)] + [(20, 5)]))
    with pytest.warns(UserWarning):
        branching_function(E)


def test_branching_validation():
    with pytest.raises(ParameterError):
        BranchingFunction((0, 1), (0, 2), 1)
    with pytest.raises(ParameterError):
        BranchingFunction((0, F(1, 2), 1), (0, F(1, 2), F(1, 4)), 1)
    with pytest.raises(ParameterError):
        BranchingFunction((0, 1), (F(1, 10), 1), 1)


# --------------------------------------------------------------------- clustering


def test_cluster_identical_copies():
    E = uniformize(random_set(1, k=5))
    res = cluster_branching([E] * 10)
    assert res.members == list(range(10))


def test_cluster_separates_outlier():
    fam = [CellSet.full(2, 5)] * 8 + [CellSet(2, 5, [3])]
    res = cluster_branching(fam)
    assert res.members == list(range(8))
    assert len(res.members) >= res.size_bound


def test_cluster_random_family_close():
    fam = [uniformize(random_set(s, k=5)) for s in range(12)]
    res = cluster_branching(fam)
    betas = [branching_function(fam[i]) for i in res.members]
    for a in betas:
        assert a.distance(res.representative) <= res.eps
        for b in betas:
            assert a.distance(b) <= res.eps + 1e-12


def test_cluster_empty():
    with pytest.raises(DomainError):
        cluster_branching([])


# ------------------------------------------------------------- Lipschitz partition


def test_partition_linear():
    plan = lipschitz_partition(BranchingFunction.from_function(lambda x: x, 10), 0.1)
    assert plan.H == 1 and plan.A == (0, 1)
    assert plan.slopes[0] >= 1 - F(1, 10)


def test_partition_concave_example():
    # slope 1 then 1/2: the function is concave, so no admissible plan has
    # two blocks with s_1 < s_2; the construction returns the single chord
    bf = BranchingFunction.from_function(lambda x: x / 2 + min(x, F(1, 2)) / 2, 20)
    plan = lipschitz_partition(bf, 0.05)
    assert plan.H == 1
    assert plan.slopes == (F(3, 4),)
    assert check_partition(bf, plan) == []


def test_partition_concave_example_has_no_two_block_plan():
    # For a cut at c, the endpoint bound on block 1 gives s_1 >= f(c)/c - 3 eta
    # and the chord bound on block 2 at x=1 gives s_2 <= (f(1)-f(c))/(1-c) + eta,
    # so s_1 < s_2 needs the two average slopes to differ by less than 4 eta.
    bf = BranchingFunction.from_function(lambda x: x / 2 + min(x, F(1, 2)) / 2, 40)
    eta = F(1, 20)
    for i in range(1, len(bf.x) - 1):
        c, fc = bf.x[i], bf.beta[i]
        avg1 = fc / c
        avg2 = (bf.beta[-1] - fc) / (1 - c)
        assert avg1 - avg2 >= 4 * eta


def test_partition_zero():
    plan = lipschitz_partition(BranchingFunction.from_function(lambda x: 0 * x, 10), 0.1)
    assert plan.H == 1 and plan.slopes == (0,)


def test_partition_convex_two_blocks():
    bf = BranchingFunction.from_function(lambda x: max(x / 4, x - F(1, 2)), 12)
    plan = lipschitz_partition(bf, 0.05)
    assert plan.H == 2
    assert plan.slopes[0] < plan.slopes[1]
    assert check_partition(bf, plan) == []


def test_partition_preconditions():
    bf = BranchingFunction.from_function(lambda x: 2 * x, 4, n=2)
    with pytest.raises(PreconditionError):
        lipschitz_partition(bf, 0.1)
    with pytest.raises(ParameterError):
        lipschitz_partition(bf.normalized(), 0.2)
    assert lipschitz_partition(bf.normalized(), 0.1).slopes == (1,)


def test_plan_json_round_trip():
    plan = MultiScalePlan(0.05, (0, F(1, 4), 1), (F(1, 8), F(3, 4)))
    data = json.loads(plan.to_json())
    assert data == {
        "eta": 0.05,
        "blocks": [
            {"A_lo": 0.0, "A_hi": 0.25, "slope": 0.125},
            {"A_lo": 0.25, "A_hi": 1.0, "slope": 0.75},
        ],
    }
    assert MultiScalePlan.from_json(plan.to_json()) == plan
    with pytest.raises(ParameterError):
        MultiScalePlan(0.05, (0, F(1, 2), 1), (F(1, 2), F(1, 2)))


@st.composite
def lipschitz_functions(draw):
    N = draw(st.integers(1, 24))
    steps = draw(st.lists(st.integers(0, 8), min_size=N, max_size=N))
    vals = [F(0)]
    for s in steps:
        vals.append(vals[-1] + F(s, 8 * N))
    return BranchingFunction(tuple(F(j, N) for j in range(N + 1)), tuple(vals), 1)


@given(lipschitz_functions(), st.sampled_from([0.01, 0.03, 0.05, 0.1]))
def test_partition_conclusions(bf, eta):
    plan = lipschitz_partition(bf, eta)
    assert check_partition(bf, plan) == []
    assert 0 <= plan.slopes[0] and plan.slopes[-1] <= 1
    assert all(a < b for a, b in zip(plan.slopes, plan.slopes[1:]))


@given(lipschitz_functions())
def test_convex_minorant_matches_enumeration(bf):
    hull = _convex_minorant_vertices(bf.x, bf.beta)
    slopes, g = brute_lower_hull_slopes(bf.x, bf.beta)
    for i in hull:
        assert g[i] == bf.beta[i]
    for a, b in zip(hull, hull[1:]):
        chord = (bf.beta[b] - bf.beta[a]) / (bf.x[b] - bf.x[a])
        assert all(s == chord for s in slopes[a:b])


def test_check_partition_detects_violation():
    bf = BranchingFunction.from_function(lambda x: x, 10)
    bad = MultiScalePlan(0.05, (0, 1), (F(1, 2),))
    assert any("upper endpoint" in p for p in check_partition(bf, bad))


def test_construction_failure_is_reported(monkeypatch):
    import flab.branching as br

    bf = BranchingFunction.from_function(lambda x: x, 10)
    monkeypatch.setattr(br, "_partition", lambda *a: MultiScalePlan(0.05, (0, 1), (F(1, 2),)))
    with pytest.raises(CertificateError):
        br.lipschitz_partition(bf, 0.05)


# ------------------------------------------------------------------ multi-scale


def test_multiscale_full_grid():
    rep = multiscale_decompose([CellSet.full(2, 6)], 0.1)
    assert rep.ok
    assert rep.plan.H == 1
    assert abs(float(rep.plan.slopes[0]) - 2) <= 0.1


def test_multiscale_line():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = multiscale_decompose([uniformize(line_cells(6))], 0.1)
    assert rep.ok, rep.failures
    assert abs(float(rep.plan.slopes[-1]) - 1) <= 0.3


def test_multiscale_random_family():
    fam = [uniformize(random_set(s)) for s in range(6)]
    cl = cluster_branching(fam)
    sub = [fam[i] for i in cl.members]
    rep = multiscale_decompose(sub, 0.1)
    assert rep.ok, rep.failures
    assert not rep.precondition_ok
    assert len(rep.certificates) == len(sub) * rep.plan.H


def test_multiscale_frostman_implies_ratio_lower_bound():
    fam = [uniformize(random_set(s)) for s in range(4)]
    rep = multiscale_decompose(fam, 0.1)
    k = 6
    for cert in rep.certificates:
        a, b, s = list(rep.plan.blocks())[cert.block - 1]
        # each rescaled block holds at least (delta')^-s / C cells, so the
        # covering ratio is at least that large
        implied = float(s * (b - a)) - np.log2(cert.frostman_C) / k
        assert cert.log_ratio >= implied - 1e-9


def test_multiscale_reports_failures():
    fam = [CellSet.full(2, 5), CellSet(2, 5, [0])]
    rep = multiscale_decompose(fam, 0.1)
    assert not rep.ok
    assert any("member" in f for f in rep.failures)
    with pytest.raises(DomainError):
        multiscale_decompose([], 0.1)


def test_counts_consistent_with_covering():
    E = uniformize(random_set(2))
    bf = branching_function(E)
    for j, b in enumerate(bf.beta):
        assert abs(float(b) - np.log2(covering_count(E, 2.0**-j)) / 6) < 1e-12
