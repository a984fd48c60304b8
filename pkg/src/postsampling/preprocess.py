"""Outlier screening, spatial-outlier replacement and gap imputation."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple

import numpy as np

from .domain import WeightMatrix, spatial_lag
from .errors import DataError

logger = logging.getLogger(__name__)

CLEAN = "clean"
GLOBAL_OUTLIER = "global-outlier"
SPATIAL_OUTLIER = "spatial-outlier"
MISSING = "missing"
TAGS = (CLEAN, GLOBAL_OUTLIER, SPATIAL_OUTLIER, MISSING)

# consistency constants for a normal distribution
_MAD_SCALE = 1.482602218505602
_MEANAD_SCALE = 1.2533141373155001  # sqrt(pi / 2)


@dataclass
class OutlierReport:
    flags: dict = field(default_factory=dict)
    thresholds_used: dict = field(default_factory=dict)
    replaced_values: dict = field(default_factory=dict)
    skipped: list = field(default_factory=list)

    def tag(self, obs_id, tag):
        if tag not in TAGS:
            raise ValueError(f"unknown tag {tag!r}")
        self.flags[obs_id] = tag

    def counts(self) -> dict:
        out = {t: 0 for t in TAGS}
        for t in self.flags.values():
            out[t] += 1
        return out

    def to_dict(self) -> dict:
        return {
            "thresholds_used": self.thresholds_used,
            "counts": self.counts(),
            "flags": dict(sorted(self.flags.items())),
            "replaced_values": {
                k: {"old": old, "new": new} for k, (old, new) in sorted(self.replaced_values.items())
            },
            "skipped": self.skipped,
        }


def detect_global_outliers(values, method: str = "zscore", t: float = 3.0, c: float = 1.5,
                           robust: bool = True) -> np.ndarray:
    """Flag values that are extreme with respect to the whole sample.

    ``method="zscore"`` flags ``|v - centre| > t * scale``. With
    ``robust=True`` (default) the centre is the median and the scale the
    normal-consistent MAD, falling back to the scaled mean absolute
    deviation when the MAD is zero; with ``robust=False`` they are the mean
    and sample standard deviation. ``method="iqr"`` flags values outside
    ``[Q1 - c*IQR, Q3 + c*IQR]``. NaNs are ignored and never flagged.
    """
    v = np.asarray(values, dtype=float)
    ok = np.isfinite(v)
    x = v[ok]
    if x.size < 4:
        raise DataError(f"need at least 4 finite values, got {x.size}")
    flags = np.zeros(v.shape, dtype=bool)
    if np.all(x == x[0]):
        warnings.warn("all values identical; no global outliers flagged", RuntimeWarning, stacklevel=2)
        return flags

    if method == "zscore":
        if robust:
            centre = np.median(x)
            scale = _MAD_SCALE * np.median(np.abs(x - centre))
            if scale == 0:
                scale = _MEANAD_SCALE * np.mean(np.abs(x - centre))
        else:
            centre = x.mean()
            scale = x.std(ddof=1)
        flags[ok] = np.abs(x - centre) > t * scale
    elif method == "iqr":
        q1, q3 = np.percentile(x, [25, 75])
        iqr = q3 - q1
        flags[ok] = (x < q1 - c * iqr) | (x > q3 + c * iqr)
    else:
        raise ValueError(f"unknown method {method!r}")
    return flags


class SpatialOutliers(NamedTuple):
    flags: np.ndarray
    skipped: tuple


def detect_spatial_outliers(values, W: WeightMatrix, r: float = 3.0) -> SpatialOutliers:
    """Flag locations whose value departs from the neighbourhood mean.

    Location ``i`` is flagged when ``|v_i - lag_i| > r * sd(N(i))`` with
    ``sd`` the sample standard deviation of the neighbours' values. If that
    sd is zero, any difference from the lag is flagged. Locations with
    fewer than two neighbours are skipped and listed in ``skipped``.
    """
    if not r > 0:
        raise ValueError("r must be positive")
    v = np.asarray(values, dtype=float)
    if v.shape != (W.n,):
        raise DataError(f"expected {W.n} values, got shape {v.shape}")
    if np.any(np.isnan(v)):
        raise DataError("values must be complete; impute first")
    lag = spatial_lag(v, W, skip_isolated=True)
    flags = np.zeros(W.n, dtype=bool)
    skipped = []
    for i in range(W.n):
        nb = W.neighbors(i)
        if nb.size < 2:
            skipped.append(i)
            continue
        dev = abs(v[i] - lag[i])
        sd = v[nb].std(ddof=1)
        flags[i] = dev > r * sd if sd > 0 else dev > 0
    if skipped:
        logger.info("spatial outlier test skipped %d locations with < 2 neighbours", len(skipped))
    return SpatialOutliers(flags, tuple(skipped))


def replace_spatial_outliers(values, W: WeightMatrix, flags) -> np.ndarray:
    """Replace flagged entries by their neighbourhood mean (single pass).

    The lag is computed once from the original values, so replacements
    never feed into each other.
    """
    v = np.asarray(values, dtype=float)
    flags = np.asarray(flags, dtype=bool)
    if v.shape != (W.n,) or flags.shape != (W.n,):
        raise DataError("values, flags and W must describe the same locations")
    if not flags.any():
        return v.copy()
    lag = spatial_lag(v, W, skip_isolated=True)
    if np.any(np.isnan(lag[flags])):
        raise DataError("cannot replace a flagged location that has no neighbours")
    out = v.copy()
    out[flags] = lag[flags]
    return out


def impute_series(series, rng: np.random.Generator, positive: bool = True) -> np.ndarray:
    """Fill NaN gaps with draws from Normal(mean, sd) of the observed values.

    With ``positive=True`` nonpositive draws are redrawn. Series with fewer
    than two observed values are returned unchanged.
    """
    s = np.array(series, dtype=float)
    gaps = np.isnan(s)
    observed = s[~gaps]
    if not gaps.any():
        return s
    if observed.size < 2:
        logger.warning("series with %d observed values left unimputed", observed.size)
        return s
    mu, sd = observed.mean(), observed.std(ddof=1)
    if positive and mu <= 0:
        raise DataError("cannot draw positive fills around a nonpositive mean")
    fills = rng.normal(mu, sd, size=gaps.sum())
    if positive:
        bad = fills <= 0
        while bad.any():
            fills[bad] = rng.normal(mu, sd, size=bad.sum())
            bad = fills <= 0
    s[gaps] = fills
    return s


def impute_missing(panel: Mapping, seed: int, positive: bool = True):
    """Impute every series of ``panel`` (key -> 1-D array with NaN gaps).

    Each key gets its own RNG stream derived from ``seed`` and the key's
    rank in sorted order, so results do not depend on dict ordering.
    Returns ``(filled, unfilled_keys)``.
    """
    keys = sorted(panel)
    streams = np.random.SeedSequence(seed).spawn(len(keys))
    filled, unfilled = {}, []
    for key, ss in zip(keys, streams):
        out = impute_series(panel[key], np.random.default_rng(ss), positive=positive)
        if np.isnan(out).any():
            unfilled.append(key)
        filled[key] = out
    return filled, unfilled
