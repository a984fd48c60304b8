import json

import pytest

from postsampling.data import synthetic_kaduna
from postsampling.errors import DataError
from postsampling.io import ingest, load_config
from postsampling.pipeline import clean_observations, run_pipeline

ARTIFACTS = ("rejects.csv", "outliers.json", "cleaned.csv", "clusters.csv", "design.json",
             "weights.json", "estimate.json", "manifest.json")


def _run(tmp_path, text=None, name="o", **overrides):
    src = tmp_path / f"{name}.csv"
    src.write_text(text if text is not None else synthetic_kaduna())
    cfg = load_config(None, {"input": str(src), "seed": 11, "out_dir": str(tmp_path / name), **overrides})
    return run_pipeline(cfg)


def test_artifacts_and_manifest(tmp_path):
    report, manifest = _run(tmp_path)
    out = tmp_path / "o"
    for a in ARTIFACTS:
        assert (out / a).exists(), a
    m = json.loads((out / "manifest.json").read_text())
    assert m["status"] == "ok"
    assert m["stage_order"] == ["ingest", "clean", "cluster", "design", "ratios", "estimate"]
    assert m["config"]["seed"] == 11
    est = json.loads((out / "estimate.json").read_text())
    assert est["point_estimate"] == pytest.approx(report.point_estimate, rel=1e-9)
    assert report.relative_change != 0


def test_byte_identical_reruns(tmp_path):
    _run(tmp_path, name="a")
    _run(tmp_path, name="b")
    for art in ARTIFACTS:
        a, b = (tmp_path / "a" / art).read_bytes(), (tmp_path / "b" / art).read_bytes()
        if art == "manifest.json":
            strip = lambda d: {k: {kk: vv for kk, vv in v.items() if kk != "seconds"} for k, v in d["stages"].items()}
            a, b = strip(json.loads(a)), strip(json.loads(b))
            # outputs identical; input paths differ only by file name
            assert [s["outputs"] for s in a.values()] == [s["outputs"] for s in b.values()]
        else:
            assert a == b, art


def test_different_seed_changes_design(tmp_path):
    _run(tmp_path, name="a")
    _run(tmp_path, name="b", seed=12)
    da = json.loads((tmp_path / "a" / "design.json").read_text())
    db = json.loads((tmp_path / "b" / "design.json").read_text())
    assert da["selected"] != db["selected"]


def test_observed_design_is_no_correction(tmp_path):
    report, _ = _run(tmp_path, design="observed", mode="observation-weighted")
    assert report.point_estimate == pytest.approx(report.uncorrected_mean, rel=1e-12)
    w = json.loads((tmp_path / "o" / "weights.json").read_text())
    assert {loc["ps"] for loc in w["locations"].values()} == {1.0}


def test_stratified_pps_allocates_crowd_total(tmp_path):
    _run(tmp_path, design="stratified-pps")
    d = json.loads((tmp_path / "o" / "design.json").read_text())
    assert d["total"] == 320


@pytest.mark.parametrize("spike", [(0, 5, 3.0), (12, 3, 10.0), (15, 19, 0.3)])
def test_single_spike_barely_moves_estimate(tmp_path, spike):
    base, _ = _run(tmp_path, name="base")
    cleaned, _ = _run(tmp_path, synthetic_kaduna(spike=spike), name="clean")
    raw, _ = _run(tmp_path, synthetic_kaduna(spike=spike), name="raw", clean=False)
    shift = abs(cleaned.point_estimate - base.point_estimate)
    assert shift < 0.001 * base.point_estimate
    assert shift < abs(raw.point_estimate - base.point_estimate)
    flags = json.loads((tmp_path / "clean" / "outliers.json").read_text())["flags"]
    m, t, _ = spike
    assert flags[f"m{m + 1:02d}-w{t + 1:02d}"] in ("global-outlier", "spatial-outlier")


def test_clean_data_flag_rate(tmp_path, kaduna_csv):
    obs = ingest(kaduna_csv).observations
    cfg = load_config(None, {"input": str(kaduna_csv), "seed": 1})
    res = clean_observations(obs, cfg, seed=1)
    counts = res.report.counts()
    flagged = counts.get("global-outlier", 0) + counts.get("spatial-outlier", 0)
    assert flagged <= len(obs) / 100
    assert counts["missing"] == 8
    assert all(v is not None for v in res.values.values())


def test_no_clean_keeps_values(tmp_path):
    _run(tmp_path, clean=False)
    rep = json.loads((tmp_path / "o" / "outliers.json").read_text())
    assert set(rep["flags"].values()) <= {"clean", "missing"}


def test_failure_writes_partial_manifest(tmp_path):
    with pytest.raises(DataError, match="design"):
        _run(tmp_path, design_n=40)
    m = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert m["status"] == "failed"
    assert m["error"].startswith("design:")
    assert m["stage_order"] == ["ingest", "clean", "cluster"]
