"""Command line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import __version__
from .cluster import kmeans
from .data import DEMO_CONFIG, FIXTURE
from .designs import (
    DESIGN_TAGS,
    DesignAllocation,
    InclusionProbabilities,
    design_allocation_from_sample,
    lpm2_sample,
    pps_allocation,
    scale_allocation,
    srs_sample,
)
from .domain import GeoPoint, _csv_text, atomic_write_text
from .errors import ConfigError, DataError, PostSamplingError
from .io import PipelineConfig, ingest, load_config, observations_csv, write_json
from .pipeline import clean_observations, run_pipeline
from .poststrat import MODES, OBSERVATION_WEIGHTED, post_sampling_ratios, weighted_estimate
from .sim import efficiency_histogram_csv, quadrant_spec, run_monte_carlo

logger = logging.getLogger("postsampling")

SCREEN_K = 8


def _read_locations(path):
    """location_id -> (GeoPoint, stratum or None) from any CSV with location_id, lat, lon."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"input file not found: {path}")
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        for c in ("location_id", "lat", "lon"):
            if c not in cols:
                raise DataError(f"missing required column {c!r} in {path}")
        strat_col = next((c for c in ("cluster", "stratum") if c in cols), None)
        for rec in reader:
            loc = rec["location_id"].strip()
            if loc in out:
                continue
            try:
                pt = GeoPoint.from_latlon(float(rec["lat"]), float(rec["lon"]))
            except ValueError:
                raise DataError(f"bad coordinates for location {loc!r}") from None
            out[loc] = (pt, rec[strat_col].strip() if strat_col else None)
    if len(out) < 1:
        raise DataError(f"no locations in {path}")
    return dict(sorted(out.items()))


def cmd_validate(args):
    cfg = PipelineConfig(
        input=args.input, seed=args.seed, out_dir=args.out_dir, k_neighbors=args.k_neighbors,
        spatial_r=args.spatial_r, global_method=args.global_method,
    ).validate()
    res = ingest(cfg.input)
    cleaned = clean_observations(res.observations, cfg, cfg.seed)
    out = Path(cfg.out_dir)
    write_json(out / "outliers.json", cleaned.report.to_dict())
    atomic_write_text(out / "cleaned.csv", observations_csv(res.observations, cleaned.values, cleaned.report.flags))
    atomic_write_text(out / "rejects.csv", res.rejects_csv())
    counts = cleaned.report.counts()
    print(f"{len(res.observations)} observations, {len(res.rejects)} rejects; "
          + ", ".join(f"{k}={v}" for k, v in counts.items()))


def cmd_cluster(args):
    locs = _read_locations(args.input)
    res = kmeans([p for p, _ in locs.values()], args.k, seed=args.seed, restarts=args.restarts)
    rows = [["location_id", "lat", "lon", "cluster"]]
    rows += [[loc, f"{p.lat:.6f}", f"{p.lon:.6f}", f"C{int(c)}"] for (loc, (p, _)), c in zip(locs.items(), res.labels)]
    atomic_write_text(args.out, _csv_text(rows))
    print(f"k={args.k} inertia={res.inertia:.6g} m^2 written to {args.out}")


def cmd_design(args):
    locs = _read_locations(args.input)
    ids = list(locs)
    strata = {loc: (s if s is not None else loc) for loc, (_, s) in locs.items()}
    labels = sorted(set(strata.values()), key=str)
    rng = np.random.default_rng(args.seed)
    if args.design == "stratified-pps":
        sizes = [sum(1 for m in ids if strata[m] == s) for s in labels]
        alloc = DesignAllocation(dict(zip(labels, pps_allocation(sizes, args.n))), "stratified-pps",
                                 seed=args.seed, unit="location")
    elif args.design in ("srs", "lpm2"):
        if args.design == "srs":
            chosen = srs_sample(len(ids), args.n, rng)
        else:
            chosen = lpm2_sample([p for p, _ in locs.values()], InclusionProbabilities.equal(len(ids), args.n), rng)
        alloc = design_allocation_from_sample(chosen, [strata[m] for m in ids], args.design, seed=args.seed,
                                              strata=labels, unit="location", ids=ids)
    else:
        raise ConfigError("the 'observed' design has no standalone sampling step")
    if args.scale_to:
        alloc = DesignAllocation(scale_allocation(alloc.counts, args.scale_to), alloc.design_tag,
                                 seed=alloc.seed, unit=alloc.unit, selected=alloc.selected)
    write_json(args.out, alloc.to_dict())
    print(f"{args.design}: " + ", ".join(f"{k}={v}" for k, v in alloc.counts.items()))


def cmd_estimate(args):
    res = ingest(args.input)
    strata = {}
    if args.clusters:
        strata = {loc: s for loc, (_, s) in _read_locations(args.clusters).items() if s is not None}
    groups = defaultdict(list)
    for o in res.observations:
        if o.value is None:
            continue
        groups[strata.get(o.location_id, o.location_id)].append(o.value)
    path = Path(args.design)
    if not path.exists():
        raise DataError(f"design file not found: {path}")
    alloc = DesignAllocation.from_dict(json.loads(path.read_text()))
    crowd = {s: len(groups.get(s, [])) for s in alloc.counts}
    stray = set(groups) - set(alloc.counts)
    if stray:
        raise DataError(f"observations in strata absent from the design: {sorted(stray)}")
    weights = post_sampling_ratios(crowd, alloc)
    report = weighted_estimate({s: groups.get(s, []) for s in alloc.counts}, weights, args.mode)
    out = Path(args.out_dir)
    write_json(out / "weights.json", weights.to_dict())
    write_json(out / "estimate.json", report.to_dict())
    print(report.summary())


def cmd_simulate(args):
    spec = quadrant_spec(sar_lambda=args.lambda_, k_neighbors=args.k_neighbors, level=args.level)
    result = run_monte_carlo(spec, replications=args.replications, master_seed=args.seed,
                             redraw_population=args.redraw_population, workers=args.workers)
    out = Path(args.out_dir)
    write_json(out / "mc_result.json", result.to_dict())
    atomic_write_text(out / "efficiency_hist.csv", efficiency_histogram_csv(result, args.block))
    for name, s in result.to_dict(include_traces=False)["strategies"].items():
        print(f"{name:14s} mean={s['mean']:.5f} var={s['variance']:.3e} "
              f"|rel.bias|={s['abs_relative_bias']:.4f} rel.eff={s['relative_efficiency']:.3f}")


def cmd_pipeline(args):
    config = args.config or (DEMO_CONFIG if args.demo else None)
    overrides = {
        "input": args.input,
        "seed": args.seed,
        "out_dir": args.out_dir,
        "k_neighbors": args.k_neighbors,
        "spatial_r": args.spatial_r,
        "global_method": args.global_method,
        "clusters": args.clusters,
        "design": args.design,
        "design_n": args.design_n,
        "mode": args.mode,
        "clean": None if args.clean is None else args.clean,
    }
    if config is None and args.input is None:
        raise ConfigError("give --config, --demo or --input")
    cfg = load_config(config, overrides)
    report, _ = run_pipeline(cfg)
    print(report.summary())


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="postsampling", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="screen and clean observations")
    v.add_argument("input")
    v.add_argument("--seed", type=int, required=True)
    v.add_argument("--spatial-r", type=float, default=3.0)
    v.add_argument("--global-method", choices=("zscore", "iqr"), default="zscore")
    v.add_argument("--k-neighbors", type=int, default=SCREEN_K)
    v.add_argument("--out-dir", default="out")
    v.set_defaults(func=cmd_validate)

    c = sub.add_parser("cluster", help="k-means strata from location coordinates")
    c.add_argument("input")
    c.add_argument("--k", type=int, default=4)
    c.add_argument("--seed", type=int, required=True)
    c.add_argument("--restarts", type=int, default=10)
    c.add_argument("--out", default="clusters.csv")
    c.set_defaults(func=cmd_cluster)

    d = sub.add_parser("design", help="draw a benchmark design over locations")
    d.add_argument("input")
    d.add_argument("--design", choices=[t for t in DESIGN_TAGS if t != "observed"], default="lpm2")
    d.add_argument("--n", type=int, required=True)
    d.add_argument("--seed", type=int, required=True)
    d.add_argument("--scale-to", type=int, default=None,
                   help="rescale the per-stratum counts to this total (e.g. the crowd total)")
    d.add_argument("--out", default="design.json")
    d.set_defaults(func=cmd_design)

    e = sub.add_parser("estimate", help="post-sampling weighted estimate")
    e.add_argument("input")
    e.add_argument("--design", required=True)
    e.add_argument("--clusters", default=None, help="CSV mapping location_id to cluster")
    e.add_argument("--mode", choices=MODES, default=OBSERVATION_WEIGHTED)
    e.add_argument("--out-dir", default="out")
    e.set_defaults(func=cmd_estimate)

    s = sub.add_parser("simulate", help="Monte Carlo comparison of estimation strategies")
    s.add_argument("--replications", type=int, default=1000)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--lambda", dest="lambda_", type=float, default=0.7)
    s.add_argument("--k-neighbors", type=int, default=5)
    s.add_argument("--level", type=float, default=20.0)
    s.add_argument("--redraw-population", action="store_true")
    s.add_argument("--block", type=int, default=50)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out-dir", default="out")
    s.set_defaults(func=cmd_simulate)

    q = sub.add_parser("pipeline", help="run every stage end to end")
    q.add_argument("--config", default=None)
    q.add_argument("--demo", action="store_true", help=f"use the bundled dataset ({FIXTURE.name})")
    q.add_argument("--input", default=None)
    q.add_argument("--seed", type=int, default=None)
    q.add_argument("--out-dir", default=None)
    q.add_argument("--k-neighbors", type=int, default=None)
    q.add_argument("--spatial-r", type=float, default=None)
    q.add_argument("--global-method", choices=("zscore", "iqr"), default=None)
    q.add_argument("--clusters", type=int, default=None)
    q.add_argument("--design", choices=DESIGN_TAGS, default=None)
    q.add_argument("--design-n", type=int, default=None)
    q.add_argument("--mode", choices=MODES, default=None)
    q.add_argument("--no-clean", dest="clean", action="store_false", default=None)
    q.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except PostSamplingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
