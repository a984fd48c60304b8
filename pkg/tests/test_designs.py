from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from postsampling.designs import (
    DesignAllocation,
    InclusionProbabilities,
    Lpm2Sampler,
    design_allocation_from_sample,
    largest_remainder,
    lpm2_sample,
    pps_allocation,
    scale_allocation,
    srs_sample,
)
from postsampling.domain import GeoPoint
from postsampling.errors import DataError
from postsampling.sim import generate_sar


# --- SRS


def test_srs_exhaustive(rng):
    assert srs_sample(7, 7, rng).tolist() == list(range(7))


def test_srs_bounds(rng):
    with pytest.raises(DataError):
        srs_sample(3, 4, rng)
    with pytest.raises(DataError):
        srs_sample(3, 0, rng)


def test_srs_uniform_single_draw():
    rng = np.random.default_rng(77)
    counts = np.bincount([srs_sample(4, 1, rng)[0] for _ in range(100_000)], minlength=4)
    # 6 sigma band: 6 * sqrt(0.25 * 0.75 / 1e5) = 0.0082
    assert np.all(np.abs(counts / 100_000 - 0.25) <= 0.01)


def test_srs_deterministic():
    a = srs_sample(1000, 20, np.random.default_rng(5))
    b = srs_sample(1000, 20, np.random.default_rng(5))
    assert np.array_equal(a, b)


# --- PPS allocation


def test_pps_quadrant_strata():
    # quotas 64, 4.8, 4.8, 6.4 -> floors 64, 4, 4, 6 -> two leftovers to the 0.8 remainders
    assert pps_allocation([800, 60, 60, 80], 80) == [64, 5, 5, 6]


def test_pps_equal_and_single():
    assert pps_allocation([50, 50, 50, 50], 80) == [20, 20, 20, 20]
    assert pps_allocation([123], 17) == [17]


def test_pps_zero_allocations_allowed():
    assert pps_allocation([1000, 1], 3) == [3, 0]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(1, 10_000), min_size=1, max_size=12), st.integers(0, 500))
def test_pps_sums_and_stays_within_one_of_quota(sizes, N):
    m = pps_allocation(sizes, N)
    assert sum(m) == N
    total = sum(sizes)
    for mi, s in zip(m, sizes):
        assert abs(Fraction(mi) - Fraction(N * s, total)) < 1


def test_largest_remainder_ties_to_smallest_index():
    assert largest_remainder([Fraction(1, 2), Fraction(1, 2)], 1) == [1, 0]


def test_scale_allocation():
    assert scale_allocation({"a": 1, "b": 2, "c": 1}, 320) == {"a": 80, "b": 160, "c": 80}
    with pytest.raises(DataError):
        scale_allocation({"a": 0}, 5)


# --- LPM2


def test_lpm2_two_units_half_each():
    sampler = Lpm2Sampler(np.array([[0.0, 0.0], [1.0, 0.0]]))
    pi = InclusionProbabilities(np.array([0.5, 0.5]))
    rng = np.random.default_rng(2012)
    hits = np.zeros(2)
    for _ in range(100_000):
        s = sampler.sample(pi, rng)
        assert s.size == 1
        hits[s] += 1
    assert np.all(np.abs(hits / 100_000 - 0.5) <= 0.01)


def test_lpm2_certain_units():
    pts = np.random.default_rng(0).uniform(size=(12, 2))
    sel = lpm2_sample(pts, InclusionProbabilities(np.ones(12)), np.random.default_rng(1))
    assert sel.tolist() == list(range(12))


def test_lpm2_rejects_fractional_total():
    pts = np.random.default_rng(0).uniform(size=(5, 2))
    with pytest.raises(DataError):
        lpm2_sample(pts, InclusionProbabilities(np.full(5, 0.3)), np.random.default_rng(1))


def test_lpm2_duplicate_points_warn():
    pts = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0], [2.0, 2.0]])
    with pytest.warns(RuntimeWarning):
        sel = lpm2_sample(pts, InclusionProbabilities(np.full(4, 0.5)), np.random.default_rng(3))
    assert sel.size == 2


def test_lpm2_accepts_wgs84_points():
    r = np.random.default_rng(4)
    pts = [GeoPoint.from_latlon(10 + r.uniform(), 7 + r.uniform()) for _ in range(16)]
    sel = lpm2_sample(pts, InclusionProbabilities.equal(16, 8), np.random.default_rng(5))
    assert sel.size == 8


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 40), st.integers(0, 2**32 - 1), st.data())
def test_lpm2_conserves_total_and_size(n_units, seed, data):
    n = data.draw(st.integers(1, n_units))
    r = np.random.default_rng(seed)
    # unequal probabilities with an integer total
    raw = r.uniform(0.05, 1, n_units)
    pi = raw / raw.sum() * n
    while pi.max() > 1:
        pi = np.minimum(pi, 1)
        free = pi < 1
        pi[free] *= (n - pi[~free].sum()) / pi[free].sum()
    pts = r.uniform(size=(n_units, 2))
    steps = []

    def check(p):
        steps.append(1)
        assert abs(p.sum() - pi.sum()) <= 1e-12
        assert np.all((p >= 0) & (p <= 1))

    sel = lpm2_sample(pts, InclusionProbabilities(pi), np.random.default_rng(seed + 1), on_update=check)
    assert sel.size == n
    assert len(steps) <= n_units


def test_lpm2_deterministic():
    pts = np.random.default_rng(8).uniform(size=(50, 2))
    pi = InclusionProbabilities.equal(50, 10)
    a = lpm2_sample(pts, pi, np.random.default_rng(99))
    b = lpm2_sample(pts, pi, np.random.default_rng(99))
    assert np.array_equal(a, b)


def test_lpm2_more_balanced_than_srs_on_sar_field():
    """Equal-weight sample mean varies less under LPM2 than under SRS."""
    rng = np.random.default_rng(31)
    xy = rng.uniform(-0.5, 0.5, size=(1000, 2))
    y = generate_sar(xy, 0.7, rng).y
    n, reps = 80, 1000
    pi = InclusionProbabilities.equal(1000, n)
    sampler = Lpm2Sampler(xy)
    lpm = [y[sampler.sample(pi, rng)].mean() for _ in range(reps)]
    srs = [y[srs_sample(1000, n, rng)].mean() for _ in range(reps)]
    assert np.var(lpm) / np.var(srs) < 1


# --- allocations


def test_allocation_single_stratum():
    a = design_allocation_from_sample([0, 3, 5], {0: "A", 3: "A", 5: "A"}, "srs")
    assert a.counts == {"A": 3}
    assert a.total == 3


def test_allocation_from_pps_counts():
    assignment = np.repeat([0, 1, 2, 3], [800, 60, 60, 80])
    quotas = pps_allocation([800, 60, 60, 80], 80)
    r = np.random.default_rng(0)
    chosen = np.concatenate([r.choice(np.flatnonzero(assignment == h), m, replace=False) for h, m in enumerate(quotas)])
    a = design_allocation_from_sample(chosen, list(assignment), "stratified-pps")
    assert [a.counts[h] for h in range(4)] == [64, 5, 5, 6]


def test_allocation_lpm2_on_markets(kaduna_markets):
    from postsampling.cluster import kmeans

    pts = list(kaduna_markets.values())
    labels = kmeans(pts, 4, seed=1).labels
    chosen = lpm2_sample(pts, InclusionProbabilities.equal(16, 8), np.random.default_rng(11))
    a = design_allocation_from_sample(chosen, list(labels), "lpm2", strata=[0, 1, 2, 3], unit="location",
                                      ids=list(kaduna_markets))
    assert a.total == 8
    assert a.counts == {c: int(np.sum(labels[chosen] == c)) for c in range(4)}
    assert a.selected == [list(kaduna_markets)[i] for i in chosen]


def test_allocation_unassigned_unit():
    with pytest.raises(DataError):
        design_allocation_from_sample([0, 9], {0: "A"}, "srs")


def test_allocation_json_roundtrip():
    a = DesignAllocation({"C0": 3, "C1": 0}, "lpm2", seed=4, unit="location", selected=["M01"])
    b = DesignAllocation.from_dict(a.to_dict())
    assert b.counts == a.counts and b.design_tag == "lpm2" and b.selected == ["M01"]
    with pytest.raises(DataError):
        DesignAllocation({"x": -1}, "srs")
    with pytest.raises(DataError):
        DesignAllocation({"x": 1}, "cube")


def test_inclusion_probabilities_validation():
    with pytest.raises(DataError):
        InclusionProbabilities(np.array([0.5, 1.5]))
    assert InclusionProbabilities.equal(10, 3).target_n == pytest.approx(3, abs=1e-12)
