"""Benchmark sampling designs: SRS, stratified PPS allocation and LPM2."""

from __future__ import annotations

import logging
import warnings
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np

from .domain import as_xy
from .errors import DataError

logger = logging.getLogger(__name__)

DESIGN_TAGS = ("srs", "stratified-pps", "lpm2", "observed")

# probabilities this close to 0 or 1 count as decided
_EPS = 1e-12
_SUM_TOL = 1e-9


@dataclass(frozen=True)
class InclusionProbabilities:
    pi: np.ndarray

    def __post_init__(self):
        pi = np.array(self.pi, dtype=float)
        if pi.ndim != 1:
            raise DataError("inclusion probabilities must be one-dimensional")
        if np.any(pi < 0) or np.any(pi > 1) or not np.all(np.isfinite(pi)):
            raise DataError("inclusion probabilities must lie in [0, 1]")
        pi.setflags(write=False)
        object.__setattr__(self, "pi", pi)

    @classmethod
    def equal(cls, population_size: int, n: int) -> "InclusionProbabilities":
        if not 0 < n <= population_size:
            raise DataError(f"need 0 < n <= population size (n={n}, N={population_size})")
        return cls(np.full(population_size, n / population_size))

    @property
    def target_n(self) -> float:
        return float(self.pi.sum())


@dataclass
class DesignAllocation:
    """Required sample counts per location or stratum.

    ``unit`` records the sampling granularity of the design
    (``"individual"`` or ``"location"``); ``selected`` keeps the chosen
    unit ids when the allocation came from a realised sample.
    """

    counts: dict
    design_tag: str
    seed: Optional[int] = None
    unit: str = "individual"
    selected: list = field(default_factory=list)

    def __post_init__(self):
        if self.design_tag not in DESIGN_TAGS:
            raise DataError(f"unknown design {self.design_tag!r}")
        for k, m in self.counts.items():
            if int(m) != m or m < 0:
                raise DataError(f"allocation for {k!r} must be a nonnegative integer")
        self.counts = {k: int(m) for k, m in self.counts.items()}

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def to_dict(self) -> dict:
        return {
            "design": self.design_tag,
            "unit": self.unit,
            "seed": self.seed,
            "total": self.total,
            "counts": {str(k): v for k, v in self.counts.items()},
            "selected": [str(s) for s in self.selected],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DesignAllocation":
        return cls(
            counts={str(k): int(v) for k, v in d["counts"].items()},
            design_tag=d["design"],
            seed=d.get("seed"),
            unit=d.get("unit", "individual"),
            selected=list(d.get("selected", [])),
        )


def srs_sample(population_size: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Simple random sample without replacement, returned sorted."""
    if not 0 < n <= population_size:
        raise DataError(f"need 0 < n <= population size (n={n}, N={population_size})")
    return np.sort(rng.choice(population_size, size=n, replace=False))


def largest_remainder(quotas: Sequence[Fraction], total: int) -> list:
    """Round nonnegative quotas summing to ``total`` to integers with the same sum.

    Leftover units go to the largest fractional parts, ties to the smallest
    index.
    """
    floors = [int(q) for q in quotas]
    left = total - sum(floors)
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - floors[i]), i))
    for i in order[:left]:
        floors[i] += 1
    return floors


def pps_allocation(stratum_sizes: Sequence[int], N: int) -> list:
    """Proportional allocation of ``N`` units over strata by size."""
    if any(s <= 0 for s in stratum_sizes):
        raise DataError("stratum sizes must be positive")
    if N < 0:
        raise DataError("N must be nonnegative")
    total = sum(stratum_sizes)
    return largest_remainder([Fraction(N * s, total) for s in stratum_sizes], N)


def scale_allocation(counts: dict, total: int) -> dict:
    """Rescale integer counts proportionally so they sum to ``total``."""
    keys = list(counts)
    base = sum(counts[k] for k in keys)
    if base == 0:
        raise DataError("cannot rescale an empty allocation")
    rounded = largest_remainder([Fraction(total * counts[k], base) for k in keys], total)
    return dict(zip(keys, rounded))


class Lpm2Sampler:
    """Local pivotal method 2 over a fixed set of points.

    Distances are computed once, so repeated draws over the same population
    only pay for the pairwise updates. Each step picks an undecided unit
    ``i`` at random, finds its nearest undecided neighbour ``j`` (ties to
    the smallest index) and moves the pair towards 0/1 while keeping
    ``pi_i + pi_j`` fixed:

    * ``s = pi_i + pi_j < 1``: ``(0, s)`` with probability ``pi_j / s``,
      else ``(s, 0)``;
    * ``s >= 1``: ``(1, s - 1)`` with probability ``(1 - pi_j) / (2 - s)``,
      else ``(s - 1, 1)``.
    """

    def __init__(self, points):
        xy = as_xy(points)
        if len(np.unique(xy, axis=0)) < len(xy):
            warnings.warn("duplicate coordinates; nearest-neighbour ties resolved by index",
                          RuntimeWarning, stacklevel=2)
        diff = xy[:, None, :] - xy[None, :, :]
        self._d = np.sqrt((diff**2).sum(axis=2))
        np.fill_diagonal(self._d, np.inf)
        self.n = len(xy)

    def sample(self, pi: InclusionProbabilities, rng: np.random.Generator,
               on_update: Optional[Callable[[np.ndarray], None]] = None) -> np.ndarray:
        p = np.array(pi.pi, dtype=float)
        if p.size != self.n:
            raise DataError(f"expected {self.n} probabilities, got {p.size}")
        target = p.sum()
        n_target = round(target)
        if abs(target - n_target) > _SUM_TOL:
            raise DataError(f"sum of inclusion probabilities must be an integer, got {target!r}")

        p[p <= _EPS] = 0.0
        p[p >= 1 - _EPS] = 1.0
        active = np.flatnonzero((p > 0) & (p < 1))  # kept sorted so argmin ties pick the smallest index
        while active.size > 1:
            pos = int(rng.integers(active.size))
            i = active[pos]
            drow = self._d[i, active]
            jpos = int(np.argmin(drow))
            j = active[jpos]
            pi_i, pi_j = p[i], p[j]
            s = pi_i + pi_j
            u = rng.random()
            if s < 1 - _EPS:
                if u < pi_j / s:
                    p[i], p[j] = 0.0, s
                else:
                    p[i], p[j] = s, 0.0
            else:
                rest = max(s - 1.0, 0.0)
                if rest <= _EPS:
                    rest = 0.0
                if u < (1 - pi_j) / (2 - s):
                    p[i], p[j] = 1.0, rest
                else:
                    p[i], p[j] = rest, 1.0
            for q in (i, j):
                if p[q] >= 1 - _EPS:
                    p[q] = 1.0
            if on_update is not None:
                on_update(p)
            done = [q for q in (pos, jpos) if p[active[q]] == 0.0 or p[active[q]] == 1.0]
            active = np.delete(active, done)
        if active.size == 1:
            last = active[0]
            if min(p[last], 1 - p[last]) > 1e-6:
                raise DataError(f"unit {last} left undecided with probability {p[last]!r}")
            p[last] = float(round(p[last]))
        selected = np.flatnonzero(p == 1.0)
        if selected.size != n_target:
            raise DataError(f"LPM2 selected {selected.size} units, expected {n_target}")
        return selected


def lpm2_sample(points, pi: InclusionProbabilities, rng: np.random.Generator, on_update=None) -> np.ndarray:
    """One LPM2 draw; see :class:`Lpm2Sampler`."""
    return Lpm2Sampler(points).sample(pi, rng, on_update=on_update)


def design_allocation_from_sample(selected, assignment, design_tag: str, seed=None,
                                  strata=None, unit: str = "individual", ids=None) -> DesignAllocation:
    """Count selected units per location/stratum.

    ``assignment[u]`` is the stratum of unit ``u``. ``strata`` lists the
    strata to report (zero counts included); by default all strata that
    appear in ``assignment``.
    """
    counts = Counter()
    for u in selected:
        try:
            counts[assignment[u]] += 1
        except (KeyError, IndexError):
            raise DataError(f"selected unit {u!r} has no stratum assignment") from None
    if strata is None:
        strata = sorted(set(assignment.values()) if isinstance(assignment, dict) else set(assignment), key=str)
    extra = set(counts) - set(strata)
    if extra:
        raise DataError(f"selected units fall in unknown strata {sorted(extra, key=str)}")
    sel = [ids[u] for u in selected] if ids is not None else list(selected)
    return DesignAllocation(
        counts={s: counts.get(s, 0) for s in strata},
        design_tag=design_tag,
        seed=seed,
        unit=unit,
        selected=sel,
    )
