"""End-to-end run: ingest, clean, stratify, benchmark design, reweight."""

from __future__ import annotations

import logging
import time
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .cluster import kmeans
from .designs import (
    DesignAllocation,
    InclusionProbabilities,
    lpm2_sample,
    pps_allocation,
    scale_allocation,
    srs_sample,
)
from .domain import (
    GreatCircleProvider,
    NeighborRule,
    _csv_text,
    atomic_write_text,
    build_distance_matrix,
    build_weight_matrix,
    sha256_file,
)
from .errors import DataError, PostSamplingError
from .io import PipelineConfig, ingest, observations_csv, write_json
from .poststrat import EstimateReport, post_sampling_ratios, weighted_estimate
from .preprocess import (
    GLOBAL_OUTLIER,
    MISSING,
    SPATIAL_OUTLIER,
    OutlierReport,
    detect_global_outliers,
    detect_spatial_outliers,
    impute_series,
    replace_spatial_outliers,
)

logger = logging.getLogger(__name__)

# one RNG stream per randomised stage, derived from the master seed
_STREAMS = {"impute": 1, "cluster": 2, "design": 3}


def stage_rng(seed: int, stage: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_STREAMS[stage],)))


@dataclass
class RunManifest:
    config: dict
    version: str = __version__
    stages: dict = field(default_factory=dict)
    status: str = "running"
    error: str = ""

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "version": self.version,
            "stages": self.stages,
            "stage_order": list(self.stages),
            "status": self.status,
            "error": self.error,
        }


@dataclass
class CleaningResult:
    values: dict
    report: OutlierReport


def _panel(observations):
    """Market x date grid of observation ids."""
    markets = sorted({o.location_id for o in observations})
    dates = sorted({o.timestamp for o in observations})
    cells = defaultdict(list)
    for o in observations:
        cells[(o.location_id, o.timestamp)].append(o)
    return markets, dates, cells


def market_points(observations) -> dict:
    pts = {}
    for o in observations:
        pts.setdefault(o.location_id, o.point)
    return dict(sorted(pts.items()))


def clean_observations(observations, cfg: PipelineConfig, seed: int) -> CleaningResult:
    """Global screening, gap imputation, then spatial screening per date.

    Global outliers and empty values become gaps that are filled from each
    market's own observed distribution. The spatial test then runs across
    markets for every date; flagged cells take the neighbourhood mean.
    """
    report = OutlierReport(thresholds_used={
        "global_method": cfg.global_method,
        "global_t": cfg.global_t,
        "global_c": cfg.global_c,
        "spatial_r": cfg.spatial_r,
        "neighbor_rule": cfg.neighbor_rule,
        "k_neighbors": cfg.k_neighbors,
        "threshold_km": cfg.threshold_km,
        "enabled": cfg.clean,
    })
    values = {o.obs_id: o.value for o in observations}
    for o in observations:
        report.tag(o.obs_id, MISSING if o.value is None else "clean")

    if cfg.clean:
        ids = [o.obs_id for o in observations if o.value is not None]
        flags = detect_global_outliers([values[i] for i in ids], cfg.global_method,
                                       t=cfg.global_t, c=cfg.global_c)
        for i, f in zip(ids, flags):
            if f:
                report.tag(i, GLOBAL_OUTLIER)
                report.replaced_values[i] = (values[i], None)
                values[i] = None

    markets, dates, cells = _panel(observations)
    rng = stage_rng(seed, "impute")
    grid = np.full((len(markets), len(dates)), np.nan)
    for a, m in enumerate(markets):
        for b, d in enumerate(dates):
            v = [values[o.obs_id] for o in cells.get((m, d), []) if values[o.obs_id] is not None]
            if v:
                grid[a, b] = np.mean(v)
        filled = impute_series(grid[a], rng)
        if np.isnan(filled).any():
            report.skipped.append({"location_id": m, "reason": "fewer than 2 observed values"})
        for b, d in enumerate(dates):
            for o in cells.get((m, d), []):
                if values[o.obs_id] is None and not np.isnan(filled[b]):
                    old = report.replaced_values.get(o.obs_id, (None, None))[0]
                    values[o.obs_id] = float(filled[b])
                    report.replaced_values[o.obs_id] = (old, float(filled[b]))
        grid[a] = filled

    if cfg.clean and len(markets) > 2:
        pts = market_points(observations)
        W = build_weight_matrix(
            build_distance_matrix(list(pts.values()), GreatCircleProvider(), labels=list(pts)),
            NeighborRule.knn(min(cfg.k_neighbors, len(markets) - 1)) if cfg.neighbor_rule == "knn"
            else NeighborRule.threshold(1000.0 * cfg.threshold_km),
        )
        for b, d in enumerate(dates):
            col = grid[:, b]
            if np.isnan(col).any():
                report.skipped.append({"date": d.date().isoformat(), "reason": "incomplete after imputation"})
                continue
            res = detect_spatial_outliers(col, W, r=cfg.spatial_r)
            if res.skipped:
                report.skipped.append({"date": d.date().isoformat(),
                                       "locations": [markets[i] for i in res.skipped],
                                       "reason": "fewer than 2 neighbours"})
            new = replace_spatial_outliers(col, W, res.flags)
            for a in np.flatnonzero(res.flags):
                for o in cells.get((markets[a], d), []):
                    old = report.replaced_values.get(o.obs_id, (values[o.obs_id], None))[0]
                    report.tag(o.obs_id, SPATIAL_OUTLIER)
                    report.replaced_values[o.obs_id] = (old, float(new[a]))
                    values[o.obs_id] = float(new[a])
    return CleaningResult(values=values, report=report)


def benchmark_allocation(cfg: PipelineConfig, pts: dict, strata: dict, crowd_counts: dict,
                         seed: int) -> DesignAllocation:
    """Required observations per stratum under the benchmark design.

    For ``srs``/``lpm2`` the design selects ``design_n`` markets; the
    per-stratum share of selected markets is then scaled to the crowd
    total. ``stratified-pps`` allocates the crowd total proportionally to
    the number of markets per stratum; ``observed`` reproduces the crowd
    counts (no correction).
    """
    ids = list(pts)
    labels = sorted(set(strata.values()), key=str)
    total = sum(crowd_counts.values())
    if cfg.design == "observed":
        return DesignAllocation(dict(crowd_counts), "observed", seed=cfg.seed, unit="location")
    if cfg.design == "stratified-pps":
        sizes = [sum(1 for m in ids if strata[m] == s) for s in labels]
        return DesignAllocation(dict(zip(labels, pps_allocation(sizes, total))), "stratified-pps",
                                seed=cfg.seed, unit="location")
    if cfg.design_n > len(ids):
        raise DataError(f"design_n={cfg.design_n} exceeds the {len(ids)} markets available")
    rng = stage_rng(seed, "design")
    if cfg.design == "srs":
        chosen = srs_sample(len(ids), cfg.design_n, rng)
    else:
        chosen = lpm2_sample(list(pts.values()), InclusionProbabilities.equal(len(ids), cfg.design_n), rng)
    selected = [ids[i] for i in chosen]
    raw = {s: sum(1 for m in selected if strata[m] == s) for s in labels}
    return DesignAllocation(scale_allocation(raw, total), cfg.design, seed=cfg.seed,
                            unit="location", selected=selected)


def run_pipeline(cfg: PipelineConfig):
    """Run every stage, writing artifacts to ``cfg.out_dir``.

    Returns ``(EstimateReport, RunManifest)``. On failure the manifest is
    written with the failing stage and the error is re-raised.
    """
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(config=cfg.snapshot())
    state = {}

    def stage(name, inputs, outputs, fn):
        t0 = time.perf_counter()
        try:
            fn()
        except PostSamplingError as exc:
            manifest.status = "failed"
            manifest.error = f"{name}: {exc}"
            _write_manifest(out, manifest)
            raise type(exc)(f"stage {name!r} failed: {exc}") from exc
        manifest.stages[name] = {
            "inputs": {Path(p).name: sha256_file(p) for p in inputs},
            "outputs": {Path(p).name: sha256_file(out / p) for p in outputs},
            "seconds": round(time.perf_counter() - t0, 4),
        }

    def do_ingest():
        res = ingest(cfg.input, cfg.format)
        state["obs"] = res.observations
        atomic_write_text(out / "rejects.csv", res.rejects_csv())

    def do_clean():
        res = clean_observations(state["obs"], cfg, cfg.seed)
        state["values"] = res.values
        write_json(out / "outliers.json", res.report.to_dict())
        atomic_write_text(out / "cleaned.csv",
                          observations_csv(state["obs"], res.values, res.report.flags))

    def do_cluster():
        pts = market_points(state["obs"])
        state["pts"] = pts
        if cfg.clusters > 0:
            res = kmeans(list(pts.values()), cfg.clusters, seed=int(stage_rng(cfg.seed, "cluster").integers(2**31)),
                         restarts=cfg.cluster_restarts)
            state["strata"] = {m: f"C{int(c)}" for m, c in zip(pts, res.labels)}
            state["inertia"] = res.inertia
        else:
            state["strata"] = {m: m for m in pts}
        rows = [["location_id", "lat", "lon", "cluster"]]
        rows += [[m, f"{p.lat:.6f}", f"{p.lon:.6f}", state["strata"][m]] for m, p in pts.items()]
        atomic_write_text(out / "clusters.csv", _csv_text(rows))

    def do_design():
        groups = defaultdict(list)
        for o in state["obs"]:
            v = state["values"][o.obs_id]
            if v is not None:
                groups[state["strata"][o.location_id]].append(v)
        labels = sorted(set(state["strata"].values()), key=str)
        state["groups"] = {s: groups.get(s, []) for s in labels}
        state["crowd"] = {s: len(state["groups"][s]) for s in labels}
        alloc = benchmark_allocation(cfg, state["pts"], state["strata"], state["crowd"], cfg.seed)
        state["alloc"] = alloc
        write_json(out / "design.json", alloc.to_dict())

    def do_weights():
        state["weights"] = post_sampling_ratios(state["crowd"], state["alloc"])
        write_json(out / "weights.json", state["weights"].to_dict())

    def do_estimate():
        rep = weighted_estimate(state["groups"], state["weights"], cfg.mode)
        state["report"] = rep
        write_json(out / "estimate.json", rep.to_dict())

    stage("ingest", [cfg.input], ["rejects.csv"], do_ingest)
    stage("clean", [cfg.input], ["outliers.json", "cleaned.csv"], do_clean)
    stage("cluster", [out / "cleaned.csv"], ["clusters.csv"], do_cluster)
    stage("design", [out / "cleaned.csv", out / "clusters.csv"], ["design.json"], do_design)
    stage("ratios", [out / "design.json"], ["weights.json"], do_weights)
    stage("estimate", [out / "cleaned.csv", out / "weights.json"], ["estimate.json"], do_estimate)
    manifest.status = "ok"
    _write_manifest(out, manifest)
    return state["report"], manifest


def _write_manifest(out: Path, manifest: RunManifest) -> None:
    write_json(out / "manifest.json", manifest.to_dict())


def report_lines(report: EstimateReport) -> str:
    return report.summary()
