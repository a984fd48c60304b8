"""Post-sampling ratios and reweighted mean estimation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .designs import DesignAllocation, InclusionProbabilities
from .errors import DataError, NumericError

OBSERVATION_WEIGHTED = "observation-weighted"
CLUSTER_MEAN_WEIGHTED = "cluster-mean-weighted"
MODES = (OBSERVATION_WEIGHTED, CLUSTER_MEAN_WEIGHTED)


@dataclass(frozen=True)
class PostSamplingWeights:
    """Per-location ratios ``m_l / n_l``.

    Locations without crowd observations are ``excluded`` and have no
    ratio; locations the design does not ask for get a ratio of zero and
    are listed in ``zero_weight``.
    """

    ratios: dict
    crowd_counts: dict
    design_counts: dict
    excluded: frozenset = frozenset()
    zero_weight: frozenset = frozenset()

    def ratio(self, loc) -> Optional[float]:
        return self.ratios.get(loc)

    def scaled(self, c: float) -> "PostSamplingWeights":
        return PostSamplingWeights(
            ratios={k: c * v for k, v in self.ratios.items()},
            crowd_counts=self.crowd_counts,
            design_counts=self.design_counts,
            excluded=self.excluded,
            zero_weight=self.zero_weight,
        )

    def to_dict(self) -> dict:
        return {
            "locations": {
                str(k): {
                    "n": self.crowd_counts[k],
                    "m": self.design_counts[k],
                    "ps": _fix(self.ratios.get(k)),
                }
                for k in self.crowd_counts
            },
            "excluded": sorted(str(k) for k in self.excluded),
            "zero_weight": sorted(str(k) for k in self.zero_weight),
        }


def post_sampling_ratios(crowd_counts: Mapping, design) -> PostSamplingWeights:
    m = design.counts if isinstance(design, DesignAllocation) else dict(design)
    n = dict(crowd_counts)
    if set(n) != set(m):
        raise DataError(
            f"crowd and design locations differ: only crowd {sorted(set(n) - set(m), key=str)}, "
            f"only design {sorted(set(m) - set(n), key=str)}"
        )
    ratios, excluded, zero = {}, set(), set()
    for loc in n:
        if n[loc] < 0 or m[loc] < 0:
            raise DataError(f"negative count at {loc!r}")
        if n[loc] == 0:
            excluded.add(loc)
            continue
        ratios[loc] = m[loc] / n[loc]
        if m[loc] == 0:
            zero.add(loc)
    return PostSamplingWeights(
        ratios=ratios,
        crowd_counts=n,
        design_counts={k: m[k] for k in n},
        excluded=frozenset(excluded),
        zero_weight=frozenset(zero),
    )


@dataclass(frozen=True)
class LocationSummary:
    n: int
    m: int
    ps: Optional[float]
    mean: Optional[float]


@dataclass
class EstimateReport:
    point_estimate: float
    mode: str
    uncorrected_mean: float
    locations: dict = field(default_factory=dict)

    @property
    def relative_change(self) -> float:
        return self.point_estimate / self.uncorrected_mean - 1.0

    def summary(self) -> str:
        return (
            f"corrected mean {self.point_estimate:.2f} vs uncorrected {self.uncorrected_mean:.2f} "
            f"({100 * self.relative_change:+.2f}%, {self.mode})"
        )

    def to_dict(self) -> dict:
        return {
            "point_estimate": _fix(self.point_estimate),
            "uncorrected_mean": _fix(self.uncorrected_mean),
            "relative_change": _fix(self.relative_change),
            "mode": self.mode,
            "locations": {
                str(k): {"n": s.n, "m": s.m, "ps": _fix(s.ps), "mean": _fix(s.mean)}
                for k, s in self.locations.items()
            },
        }


def weighted_estimate(groups: Mapping, weights: PostSamplingWeights,
                      mode: str = OBSERVATION_WEIGHTED) -> EstimateReport:
    """Reweighted mean of grouped observations.

    ``observation-weighted``: every observation in location ``l`` gets
    weight ``PS_l``, so the estimate is ``sum_l m_l mean_l / sum_l m_l``.
    ``cluster-mean-weighted``: location means are averaged with weights
    ``PS_l``. Excluded and zero-weight locations drop out.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    vals = {k: np.asarray(v, dtype=float) for k, v in groups.items()}
    if set(vals) - set(weights.crowd_counts):
        raise DataError("observations at locations missing from the weights")
    everything = np.concatenate([v for v in vals.values()]) if vals else np.array([])
    if everything.size == 0:
        raise DataError("no observations")
    if np.isnan(everything).any():
        raise DataError("observations contain missing values")

    num = den = 0.0
    locations = {}
    for loc in weights.crowd_counts:
        v = vals.get(loc, np.array([]))
        ps = weights.ratio(loc)
        mean = float(v.mean()) if v.size else None
        locations[loc] = LocationSummary(
            n=weights.crowd_counts[loc], m=weights.design_counts[loc], ps=ps, mean=mean
        )
        if ps is None:
            continue
        if v.size == 0:
            raise DataError(f"location {loc!r} is weighted but has no observations")
        if mode == OBSERVATION_WEIGHTED:
            num += ps * v.sum()
            den += ps * v.size
        else:
            num += ps * mean
            den += ps
    if den <= 0:
        raise NumericError("no effective sample: all post-sampling weights are zero")
    return EstimateReport(
        point_estimate=num / den,
        mode=mode,
        uncorrected_mean=float(everything.mean()),
        locations=locations,
    )


def ht_estimate(values, pi, population_size: int) -> float:
    """Horvitz-Thompson estimate of the population mean."""
    y = np.asarray(values, dtype=float)
    p = pi.pi if isinstance(pi, InclusionProbabilities) else np.asarray(pi, dtype=float)
    if y.shape != p.shape:
        raise DataError("values and inclusion probabilities must align")
    if np.any(p <= 0):
        raise NumericError("sampled unit with zero inclusion probability")
    return float(np.sum(y / p) / population_size)


def _fix(x, digits: int = 10):
    if x is None:
        return None
    x = float(x)
    if not math.isfinite(x):
        return None
    return float(f"{x:.{digits}g}")
