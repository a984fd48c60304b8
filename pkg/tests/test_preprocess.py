import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from postsampling.domain import NeighborRule, build_distance_matrix, build_weight_matrix, weights_from_xy
from postsampling.errors import DataError
from postsampling.preprocess import (
    OutlierReport,
    detect_global_outliers,
    detect_spatial_outliers,
    impute_missing,
    impute_series,
    replace_spatial_outliers,
)


def grid_weights(pts, k=4):
    return build_weight_matrix(build_distance_matrix(pts), NeighborRule.knn(k))


# --- global outliers


def test_global_constant_warns():
    with pytest.warns(RuntimeWarning):
        flags = detect_global_outliers([10, 10, 10, 10, 10])
    assert not flags.any()


def test_global_zscore_five_values():
    # median 10, MAD 1 -> robust scale 1.4826; |1000 - 10| / 1.4826 = 668
    flags = detect_global_outliers([10, 11, 9, 10, 1000], "zscore", t=3)
    assert flags.tolist() == [False, False, False, False, True]


def test_classic_zscore_cannot_reach_three_on_five_values():
    # with n = 5 the largest possible |z| is (n - 1) / sqrt(n) = 1.789
    assert not detect_global_outliers([10, 11, 9, 10, 1000], "zscore", t=3, robust=False).any()
    assert detect_global_outliers([10, 11, 9, 10, 1000], "zscore", t=1.7, robust=False)[4]


def test_global_iqr():
    # Q1 = 2, Q3 = 4, IQR = 2 -> fences [-1, 7]
    flags = detect_global_outliers([1, 2, 3, 4, 100], "iqr", c=1.5)
    assert flags.tolist() == [False, False, False, False, True]


def test_global_ignores_nan_and_needs_four():
    flags = detect_global_outliers([10, np.nan, 11, 9, 10, 1000])
    assert flags.tolist() == [False, False, False, False, False, True]
    with pytest.raises(DataError):
        detect_global_outliers([1, 2, np.nan])


def test_global_mad_zero_falls_back():
    flags = detect_global_outliers([10, 10, 10, 10, 10, 11, 500])
    assert flags[-1] and not flags[:-1].any()


# --- spatial outliers


def test_spatial_constant_field():
    W = weights_from_xy(np.random.default_rng(0).uniform(size=(30, 2)), NeighborRule.knn(5))
    for r in (0.1, 1, 3):
        assert not detect_spatial_outliers(np.full(30, 42.0), W, r).flags.any()


def test_spatial_grid_centre(grid9):
    pts, values = grid9
    W = grid_weights(pts)
    res = detect_spatial_outliers(values, W, r=3)
    assert np.flatnonzero(res.flags).tolist() == [4]
    assert res.skipped == ()
    cleaned = replace_spatial_outliers(values, W, res.flags)
    assert cleaned.tolist() == [100.0] * 9
    # re-detection on the cleaned field finds nothing, so cleaning is idempotent
    again = detect_spatial_outliers(cleaned, W, r=3)
    assert not again.flags.any()
    assert np.array_equal(replace_spatial_outliers(cleaned, W, again.flags), cleaned)


def test_spatial_skips_small_neighbourhoods():
    pts = np.array([[0, 0], [0.1, 0], [0.2, 0], [5, 5]])
    from postsampling.domain import DistanceMatrix

    d = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(axis=2))
    W = build_weight_matrix(DistanceMatrix(d, "euclidean"), NeighborRule.threshold(0.15))
    res = detect_spatial_outliers([1.0, 2.0, 3.0, 4.0], W, 3)
    assert res.skipped == (0, 2, 3)


def test_replace_no_flags_identity(grid9):
    pts, values = grid9
    W = grid_weights(pts)
    out = replace_spatial_outliers(values, W, np.zeros(9, bool))
    assert np.array_equal(out, values)


def test_replace_is_single_pass():
    pts = np.array([[0, 0], [1, 0], [2, 0], [3, 0]], dtype=float)
    W = weights_from_xy(pts, NeighborRule.knn(1))
    values = np.array([1.0, 50.0, 90.0, 4.0])
    flags = np.array([False, True, True, False])
    out = replace_spatial_outliers(values, W, flags)
    # unit 1 -> unit 0 (tie 0/2 goes to 0); unit 2 -> unit 1, using its ORIGINAL 50
    assert out.tolist() == [1.0, 1.0, 50.0, 4.0]
    # replacing one flag at a time from the original field gives the same cells
    for i in np.flatnonzero(flags):
        one = np.zeros(4, bool)
        one[i] = True
        assert replace_spatial_outliers(values, W, one)[i] == out[i]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([0.125, 0.5, 2.0, 8.0, 1024.0]))
def test_spatial_flags_scale_invariant(seed, scale):
    # power-of-two factors keep the arithmetic exact
    r = np.random.default_rng(seed)
    W = weights_from_xy(r.uniform(size=(25, 2)), NeighborRule.knn(4))
    v = r.normal(size=25)
    v[r.integers(25)] += 8
    base = detect_spatial_outliers(v, W, 2.0).flags
    assert np.array_equal(detect_spatial_outliers(v * scale, W, 2.0).flags, base)


def test_spatial_shift_invariance_exact_on_integers():
    r = np.random.default_rng(3)
    W = weights_from_xy(r.uniform(size=(25, 2)), NeighborRule.knn(4))
    v = r.integers(0, 20, 25).astype(float)
    v[7] = 90
    base = detect_spatial_outliers(v, W, 2).flags
    assert base[7]
    for shift in (-15.0, 1000.0, 2.0**20):
        assert np.array_equal(detect_spatial_outliers(v + shift, W, 2).flags, base)


def test_global_and_spatial_commute_on_disjoint_flags():
    # 5x5 grid with an east-west gradient, a globally extreme but spatially
    # coherent patch in the north-east and a local bump on the west edge
    xy = np.array([(x, y) for y in range(5) for x in range(5)], float)
    W = weights_from_xy(xy, NeighborRule.knn(4))
    v = 100 + 10 * xy[:, 0] + np.array([0.5 * ((7 * i) % 5) for i in range(25)])
    v[[19, 23, 24]] = 1000.0
    v[10] = 135.0
    g = detect_global_outliers(v, "iqr")
    s = detect_spatial_outliers(v, W, 3).flags
    assert np.flatnonzero(g).tolist() == [19, 23, 24]
    assert np.flatnonzero(s).tolist() == [10]

    # global first: excluded values stand in at the median of the rest
    a = v.copy()
    a[g] = np.median(v[~g])
    global_first = set(np.flatnonzero(g)) | set(np.flatnonzero(detect_spatial_outliers(a, W, 3).flags))
    # spatial first: replaced field goes through the global screen
    b = replace_spatial_outliers(v, W, s)
    spatial_first = set(np.flatnonzero(s)) | set(np.flatnonzero(detect_global_outliers(b, "iqr")))
    assert global_first == spatial_first == {10, 19, 23, 24}


def test_impute_no_gaps_identity(rng):
    s = np.array([200.0, 201.0, 199.0])
    assert np.array_equal(impute_series(s, rng), s)


def test_impute_zero_sd():
    out = impute_series([200.0, np.nan, 200.0, 200.0], np.random.default_rng(0))
    assert out[1] == 200.0


def test_impute_too_few_observed(caplog):
    out = impute_series([np.nan, 5.0, np.nan], np.random.default_rng(0))
    assert np.isnan(out[0]) and np.isnan(out[2])
    filled, unfilled = impute_missing({"a": np.array([np.nan, 5.0]), "b": np.array([1.0, 2.0, np.nan])}, seed=1)
    assert unfilled == ["a"]
    assert not np.isnan(filled["b"]).any()


def test_impute_clt_band():
    # 40 observed values with mean 211.6 and sample sd 15 exactly
    z = np.random.default_rng(9).normal(size=40)
    z = (z - z.mean()) / z.std(ddof=1)
    observed = 211.6 + 15 * z
    series = np.concatenate([observed, np.full(1000, np.nan)])
    out = impute_series(series, np.random.default_rng(2024))
    fills = out[40:]
    assert abs(fills.mean() - 211.6) <= 3 * 15 / np.sqrt(1000)


def test_impute_truncates_at_zero():
    out = impute_series(np.concatenate([[0.5, 3.0], np.full(500, np.nan)]), np.random.default_rng(1))
    assert np.all(out > 0)


def test_impute_deterministic():
    panel = {"x": np.array([1.0, np.nan, 3.0, np.nan]), "y": np.array([np.nan, 10.0, 12.0])}
    a, _ = impute_missing(panel, seed=7)
    b, _ = impute_missing(dict(reversed(list(panel.items()))), seed=7)
    for k in panel:
        assert a[k].tobytes() == b[k].tobytes()


def test_outlier_report_tags():
    rep = OutlierReport()
    rep.tag("a", "clean")
    rep.tag("b", "spatial-outlier")
    rep.replaced_values["b"] = (500.0, 100.0)
    d = rep.to_dict()
    assert d["counts"]["spatial-outlier"] == 1
    assert d["replaced_values"]["b"] == {"old": 500.0, "new": 100.0}
    with pytest.raises(ValueError):
        rep.tag("c", "weird")
