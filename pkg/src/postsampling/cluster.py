"""Lloyd's k-means with Forgy initialisation and restarts."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .domain import as_xy
from .errors import DataError


@dataclass(frozen=True)
class ClusterAssignment:
    k: int
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    inertia_trace: tuple = field(default=(), compare=False)
    iterations: int = 0

    def partition(self) -> frozenset:
        """Label-free view of the clustering, for comparing runs."""
        return frozenset(frozenset(np.flatnonzero(self.labels == c).tolist()) for c in range(self.k))


def _inertia(xy, labels, centroids):
    return float(((xy - centroids[labels]) ** 2).sum())


def _assign(xy, centroids):
    d2 = ((xy[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1)


def lloyd(xy: np.ndarray, k: int, rng: np.random.Generator, max_iter: int = 100) -> ClusterAssignment:
    """One Forgy-initialised Lloyd run on planar coordinates."""
    uniq = np.unique(xy, axis=0)
    start = rng.choice(len(uniq), size=k, replace=False)
    centroids = uniq[start].astype(float)
    labels = _assign(xy, centroids)
    trace = []
    it = 0
    for it in range(1, max_iter + 1):
        new_centroids = centroids.copy()
        for c in range(k):
            members = labels == c
            if members.any():
                new_centroids[c] = xy[members].mean(axis=0)
        empty = [c for c in range(k) if not (labels == c).any()]
        for c in empty:
            # move the empty centroid onto the point worst served by its current centroid
            far = np.argmax(((xy - new_centroids[labels]) ** 2).sum(axis=1))
            new_centroids[c] = xy[far]
            labels = labels.copy()
            labels[far] = c
        centroids = new_centroids
        trace.append(_inertia(xy, labels, centroids))
        new_labels = _assign(xy, centroids)
        if np.array_equal(new_labels, labels) and not empty:
            break
        labels = new_labels
    return ClusterAssignment(
        k=k,
        labels=labels,
        centroids=centroids,
        inertia=_inertia(xy, labels, centroids),
        inertia_trace=tuple(trace),
        iterations=it,
    )


def kmeans(points, k: int, seed: int, max_iter: int = 100, restarts: int = 10) -> ClusterAssignment:
    """Best-of-``restarts`` k-means by inertia.

    ``points`` may be GeoPoints (WGS84 points are projected locally) or an
    (n, 2) array. Each restart draws from its own stream spawned from
    ``seed``.
    """
    xy = as_xy(points)
    n_distinct = len(np.unique(xy, axis=0))
    if not 1 <= k <= n_distinct:
        raise DataError(f"k={k} must be between 1 and the number of distinct points ({n_distinct})")
    best = None
    for ss in np.random.SeedSequence(seed).spawn(max(1, restarts)):
        res = lloyd(xy, k, np.random.default_rng(ss), max_iter=max_iter)
        if best is None or res.inertia < best.inertia:
            best = res
    return best
