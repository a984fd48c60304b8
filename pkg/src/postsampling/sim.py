"""Synthetic populations and the Monte Carlo comparison of estimation strategies.

Three strategies are compared on a stratified population observed through
a crowdsourcing-like sample (SRS of a fixed number of units per stratum):

* ``naive``: unweighted mean of the sample, i.e. HT with equal inclusion
  probabilities;
* ``ps-stratified``: post-sampling weights against a proportional
  (PPS) stratified allocation;
* ``ps-lpm2``: post-sampling weights against the per-stratum counts of
  an LPM2 draw of the same size over the whole population.
"""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .designs import InclusionProbabilities, Lpm2Sampler, pps_allocation, srs_sample
from .domain import NeighborRule, weights_from_xy
from .errors import DataError, NumericError
from .poststrat import OBSERVATION_WEIGHTED, post_sampling_ratios, weighted_estimate

logger = logging.getLogger(__name__)

STRATEGIES = ("naive", "ps-stratified", "ps-lpm2")

SAR_RESIDUAL_TOL = 1e-8

# stratum order: NW, NE, SW, SE quadrants of the unit square centred at 0
QUADRANTS = (
    ((-0.5, 0.0), (0.0, 0.5)),
    ((0.0, 0.5), (0.0, 0.5)),
    ((-0.5, 0.0), (-0.5, 0.0)),
    ((0.0, 0.5), (-0.5, 0.0)),
)
QUADRANT_COUNTS = (800, 60, 60, 80)


@dataclass(frozen=True)
class PopulationSpec:
    """Stratified CSR population with a SAR response.

    ``level`` is added to the SAR field so that relative biases are
    defined; the field itself has mean zero.
    """

    strata: tuple
    sar_lambda: float = 0.7
    k_neighbors: int = 5
    row_standardized: bool = True
    level: float = 20.0
    seed: int = 0

    def __post_init__(self):
        if not abs(self.sar_lambda) < 1:
            raise DataError("SAR parameter must satisfy |lambda| < 1")
        rects = []
        for (xr, yr), count in self.strata:
            if count <= 0:
                raise DataError("stratum counts must be positive")
            if not (xr[0] < xr[1] and yr[0] < yr[1]):
                raise DataError(f"degenerate rectangle {xr, yr}")
            rects.append((xr, yr))
        for a in range(len(rects)):
            for b in range(a + 1, len(rects)):
                (ax, ay), (bx, by) = rects[a], rects[b]
                if ax[0] < bx[1] and bx[0] < ax[1] and ay[0] < by[1] and by[0] < ay[1]:
                    raise DataError(f"strata {a} and {b} overlap")

    @property
    def counts(self) -> tuple:
        return tuple(c for _, c in self.strata)

    @property
    def size(self) -> int:
        return sum(self.counts)


def quadrant_spec(sar_lambda: float = 0.7, k_neighbors: int = 5, level: float = 20.0, seed: int = 0,
               counts=QUADRANT_COUNTS) -> PopulationSpec:
    """Four quadrants of the unit square with 800/60/60/80 units."""
    return PopulationSpec(
        strata=tuple(zip(QUADRANTS, counts)),
        sar_lambda=sar_lambda,
        k_neighbors=k_neighbors,
        level=level,
        seed=seed,
    )


def generate_csr(spec: PopulationSpec, rng: np.random.Generator):
    """Uniform points per stratum rectangle. Returns ``(xy, stratum)``."""
    xy, lab = [], []
    for h, (((x0, x1), (y0, y1)), c) in enumerate(spec.strata):
        xy.append(np.column_stack([rng.uniform(x0, x1, c), rng.uniform(y0, y1, c)]))
        lab.append(np.full(c, h))
    return np.vstack(xy), np.concatenate(lab)


@dataclass(frozen=True)
class SarField:
    y: np.ndarray
    eps: np.ndarray
    w: sp.csr_matrix
    residual: float


def sar_weights(xy, k: int = 5, row_standardized: bool = True) -> sp.csr_matrix:
    W = weights_from_xy(xy, NeighborRule.knn(k))
    if row_standardized:
        return W.row_standardized()
    return sp.csr_matrix(W.w, dtype=float)


def generate_sar(xy, sar_lambda: float, rng: np.random.Generator, k: int = 5, w=None) -> SarField:
    """Draw ``Y = (I - lambda W)^-1 eps`` with standard normal ``eps``.

    ``w`` defaults to the row-standardised k-nearest-neighbour matrix of
    ``xy``.
    """
    if not abs(sar_lambda) < 1:
        raise DataError("SAR parameter must satisfy |lambda| < 1")
    W = sar_weights(xy, k) if w is None else sp.csr_matrix(w)
    n = W.shape[0]
    eps = rng.standard_normal(n)
    if sar_lambda == 0:
        return SarField(y=eps.copy(), eps=eps, w=W, residual=0.0)
    A = (sp.identity(n, format="csc") - sar_lambda * W).tocsc()
    y = spla.spsolve(A, eps)
    if not np.all(np.isfinite(y)):
        raise NumericError("SAR system is singular")
    residual = float(np.max(np.abs(y - sar_lambda * (W @ y) - eps)))
    if residual >= SAR_RESIDUAL_TOL:
        raise NumericError(f"SAR solve residual {residual:.3e} exceeds {SAR_RESIDUAL_TOL}")
    return SarField(y=y, eps=eps, w=W, residual=residual)


def morans_i(y, w) -> float:
    z = np.asarray(y, dtype=float) - np.mean(y)
    W = sp.csr_matrix(w)
    return float(len(z) / W.sum() * (z @ (W @ z)) / (z @ z))


@dataclass(frozen=True)
class Population:
    xy: np.ndarray
    stratum: np.ndarray
    y: np.ndarray
    spec: PopulationSpec

    @property
    def mean(self) -> float:
        return float(self.y.mean())

    @property
    def stratum_members(self) -> list:
        return [np.flatnonzero(self.stratum == h) for h in range(len(self.spec.strata))]


def make_population(spec: PopulationSpec, rng: np.random.Generator) -> Population:
    xy, stratum = generate_csr(spec, rng)
    W = sar_weights(xy, spec.k_neighbors, spec.row_standardized)
    field_ = generate_sar(xy, spec.sar_lambda, rng, w=W)
    return Population(xy=xy, stratum=stratum, y=field_.y + spec.level, spec=spec)


def _stream(master_seed: int, *key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=key))


@dataclass
class StrategySummary:
    mean: float
    variance: float
    abs_relative_bias: float
    mse: float


@dataclass
class McResult:
    traces: dict
    true_means: np.ndarray
    replications: int
    master_seed: int
    config: dict = field(default_factory=dict)

    def errors(self, name) -> np.ndarray:
        return self.traces[name] - self.true_means

    def summary(self, name) -> StrategySummary:
        est = self.traces[name]
        err = self.errors(name)
        return StrategySummary(
            mean=float(est.mean()),
            variance=float(err.var(ddof=1)),
            abs_relative_bias=float(abs(np.mean(err / self.true_means))),
            mse=float(np.mean(err**2)),
        )

    def relative_efficiency(self, name) -> float:
        return self.summary(STRATEGIES[0]).variance / self.summary(name).variance

    def to_dict(self, include_traces: bool = True) -> dict:
        out = {
            "replications": self.replications,
            "master_seed": self.master_seed,
            "config": self.config,
            "population_mean": float(np.mean(self.true_means)),
            "strategies": {},
        }
        for name in self.traces:
            s = self.summary(name)
            out["strategies"][name] = {
                "mean": s.mean,
                "variance": s.variance,
                "abs_relative_bias": s.abs_relative_bias,
                "mse": s.mse,
                "relative_efficiency": self.relative_efficiency(name),
            }
        if include_traces:
            out["traces"] = {k: v.tolist() for k, v in self.traces.items()}
            out["true_means"] = self.true_means.tolist()
        return out


def _replicate(pop: Population, members, sampler, pi, design_m, per_stratum, rng):
    groups = {}
    for h, idx in enumerate(members):
        take = srs_sample(idx.size, per_stratum, rng)
        groups[h] = pop.y[idx[take]]
    crowd_n = {h: per_stratum for h in groups}
    naive = float(np.mean(np.concatenate(list(groups.values()))))

    ps = post_sampling_ratios(crowd_n, dict(enumerate(design_m)))
    stratified = weighted_estimate(groups, ps, OBSERVATION_WEIGHTED).point_estimate

    chosen = sampler.sample(pi, rng)
    m_lpm = np.bincount(pop.stratum[chosen], minlength=len(members))
    ps = post_sampling_ratios(crowd_n, {h: int(c) for h, c in enumerate(m_lpm)})
    lpm2 = weighted_estimate(groups, ps, OBSERVATION_WEIGHTED).point_estimate
    return naive, stratified, lpm2


def run_monte_carlo(spec: PopulationSpec, n_total: int = 80, per_stratum: int = 20,
                    replications: int = 1000, master_seed: int = 0,
                    redraw_population: bool = False, workers: int = 1) -> McResult:
    """Monte Carlo comparison of the three strategies.

    By default one population is drawn from ``(master_seed, 0)`` and kept
    fixed while the samples are redrawn; replication ``r`` uses stream
    ``(master_seed, 1, r)``. With ``redraw_population`` replication ``r``
    also draws its own population from ``(master_seed, 0, r)``.
    """
    n_strata = len(spec.strata)
    if per_stratum * n_strata != n_total:
        raise DataError(f"per_stratum * strata ({per_stratum}*{n_strata}) must equal n_total ({n_total})")
    if any(c < per_stratum for c in spec.counts):
        raise DataError("a stratum is smaller than the per-stratum sample")
    design_m = pps_allocation(spec.counts, n_total)
    pi = InclusionProbabilities.equal(spec.size, n_total)

    fixed = None
    if not redraw_population:
        pop = make_population(spec, _stream(master_seed, 0))
        fixed = (pop, pop.stratum_members, Lpm2Sampler(pop.xy))

    def one(r):
        if fixed is None:
            pop = make_population(spec, _stream(master_seed, 0, r))
            ctx = (pop, pop.stratum_members, Lpm2Sampler(pop.xy))
        else:
            ctx = fixed
        est = _replicate(*ctx, pi, design_m, per_stratum, _stream(master_seed, 1, r))
        return est, ctx[0].mean

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(one, range(replications)))
    else:
        rows = [one(r) for r in range(replications)]

    est = np.array([r[0] for r in rows])
    return McResult(
        traces={name: est[:, s] for s, name in enumerate(STRATEGIES)},
        true_means=np.array([r[1] for r in rows]),
        replications=replications,
        master_seed=master_seed,
        config={
            "strata_counts": list(spec.counts),
            "sar_lambda": spec.sar_lambda,
            "k_neighbors": spec.k_neighbors,
            "level": spec.level,
            "n_total": n_total,
            "per_stratum": per_stratum,
            "design_allocation": design_m,
            "redraw_population": redraw_population,
        },
    )


def efficiency_histogram(result: McResult, block: int = 50) -> list:
    """Relative efficiency of each post-sampling strategy per block of replications.

    Returns rows ``(block_index, re_ps_stratified, re_ps_lpm2)``; trailing
    replications that do not fill a block are dropped.
    """
    if result.replications < 2:
        raise DataError("need at least two replications")
    if block < 2:
        raise DataError("block size must be at least 2")
    base = result.errors(STRATEGIES[0])
    rows = []
    for b in range(result.replications // block):
        sl = slice(b * block, (b + 1) * block)
        v0 = base[sl].var(ddof=1)
        rows.append((b, *(v0 / result.errors(s)[sl].var(ddof=1) for s in STRATEGIES[1:])))
    return rows


def efficiency_histogram_csv(result: McResult, block: int = 50) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["block", *(f"re_{s.replace('-', '_')}" for s in STRATEGIES[1:])])
    for b, *vals in efficiency_histogram(result, block):
        w.writerow([b, *(f"{v:.10g}" for v in vals)])
    return buf.getvalue()
