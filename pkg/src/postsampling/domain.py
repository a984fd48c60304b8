"""Core spatial types: points, observations, distance and weight matrices."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import tempfile
import threading
import urllib.parse
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Optional, Protocol, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DataError, IsolatedLocationError

logger = logging.getLogger(__name__)

PLANAR = "planar-unit"
WGS84 = "wgs84"
CRS_TAGS = (PLANAR, WGS84)

EARTH_RADIUS_M = 6_371_000.0


@dataclass(frozen=True)
class GeoPoint:
    x: float
    y: float
    crs: str = PLANAR

    def __post_init__(self):
        if self.crs not in CRS_TAGS:
            raise DataError(f"unknown crs tag {self.crs!r}")
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise DataError("coordinates must be finite")
        if self.crs == WGS84 and not (-90 <= self.y <= 90 and -180 <= self.x <= 180):
            raise DataError(f"wgs84 point out of range: lon={self.x}, lat={self.y}")

    @classmethod
    def from_latlon(cls, lat: float, lon: float) -> "GeoPoint":
        return cls(x=float(lon), y=float(lat), crs=WGS84)

    @property
    def lat(self) -> float:
        return self.y

    @property
    def lon(self) -> float:
        return self.x


@dataclass(frozen=True)
class Observation:
    """One crowdsourced record. ``value`` is None when the price is missing."""

    obs_id: str
    location_id: str
    point: GeoPoint
    value: Optional[float]
    timestamp: datetime
    collector_id: Optional[str] = None

    @property
    def is_missing(self) -> bool:
        return self.value is None


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class DistanceMatrix:
    d: np.ndarray
    provider_tag: str
    labels: tuple = ()

    def __post_init__(self):
        d = np.asarray(self.d, dtype=float)
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise DataError("distance matrix must be square")
        if np.any(d < 0) or not np.all(np.isfinite(d)):
            raise DataError("distances must be finite and nonnegative")
        if np.any(np.diag(d) != 0):
            raise DataError("distance matrix diagonal must be zero")
        if self.provider_tag != "routing-api" and not np.allclose(d, d.T, rtol=1e-12, atol=0):
            raise DataError(f"{self.provider_tag} distances must be symmetric")
        object.__setattr__(self, "d", _readonly(d))
        labels = tuple(self.labels) if self.labels else tuple(str(i) for i in range(d.shape[0]))
        if len(labels) != d.shape[0]:
            raise DataError("label count does not match matrix size")
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.d.shape[0]

    def symmetrized(self) -> np.ndarray:
        return 0.5 * (self.d + self.d.T)

    def to_csv(self, path) -> None:
        rows = [["location_id", *self.labels]]
        for lab, row in zip(self.labels, self.d):
            rows.append([lab, *(repr(float(v)) for v in row)])
        atomic_write_text(path, _csv_text(rows))


@dataclass(frozen=True)
class NeighborRule:
    """``kind`` is ``"knn"`` (value = k) or ``"threshold"`` (value = max distance)."""

    kind: str
    value: float

    def __post_init__(self):
        if self.kind not in ("knn", "threshold"):
            raise DataError(f"unknown neighbour rule {self.kind!r}")
        if self.kind == "knn" and (int(self.value) != self.value or self.value < 1):
            raise DataError("k must be a positive integer")
        if self.kind == "threshold" and not self.value > 0:
            raise DataError("threshold must be positive")

    @classmethod
    def knn(cls, k: int) -> "NeighborRule":
        return cls("knn", int(k))

    @classmethod
    def threshold(cls, delta: float) -> "NeighborRule":
        return cls("threshold", float(delta))

    def __str__(self):
        return f"k-nearest({int(self.value)})" if self.kind == "knn" else f"threshold({self.value})"


@dataclass(frozen=True)
class WeightMatrix:
    w: np.ndarray
    rule: NeighborRule
    neighbor_counts: np.ndarray = field(init=False)

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.int8)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise DataError("weight matrix must be square")
        if np.any((w != 0) & (w != 1)):
            raise DataError("weight matrix must be binary")
        if np.any(np.diag(w) != 0):
            raise DataError("a location cannot be its own neighbour")
        object.__setattr__(self, "w", _readonly(w))
        object.__setattr__(self, "neighbor_counts", _readonly(w.sum(axis=1).astype(int)))

    @property
    def n(self) -> int:
        return self.w.shape[0]

    @property
    def isolated(self) -> tuple:
        return tuple(int(i) for i in np.flatnonzero(self.neighbor_counts == 0))

    def neighbors(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.w[i])

    def row_standardized(self) -> sp.csr_matrix:
        """Sparse W with each non-isolated row scaled to sum to one."""
        counts = self.neighbor_counts.astype(float)
        scale = np.divide(1.0, counts, out=np.zeros_like(counts), where=counts > 0)
        return sp.csr_matrix(sp.diags(scale) @ sp.csr_matrix(self.w, dtype=float))


# ---------------------------------------------------------------------------
# distance providers


class DistanceProvider(Protocol):
    tag: str

    def pairwise(self, points: Sequence[GeoPoint]) -> np.ndarray: ...


def haversine_m(lat1, lon1, lat2, lon2, radius: float = EARTH_RADIUS_M):
    """Great-circle distance in meters; accepts scalars or broadcastable arrays."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dphi = p2 - p1
    dlmb = np.radians(lon2) - np.radians(lon1)
    a = np.sin(dphi / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlmb / 2) ** 2
    return 2 * radius * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


class EuclideanProvider:
    tag = "euclidean"

    def pairwise(self, points):
        xy = np.array([(p.x, p.y) for p in points], dtype=float)
        diff = xy[:, None, :] - xy[None, :, :]
        return np.sqrt((diff**2).sum(axis=2))


class GreatCircleProvider:
    tag = "great-circle"

    def pairwise(self, points):
        lat = np.array([p.lat for p in points], dtype=float)
        lon = np.array([p.lon for p in points], dtype=float)
        d = haversine_m(lat[:, None], lon[:, None], lat[None, :], lon[None, :])
        d = 0.5 * (d + d.T)
        np.fill_diagonal(d, 0.0)
        return d


class RoutingProvider:
    """Base for travel-distance providers queried one ordered pair at a time.

    Failed pairs fall back to the great-circle distance when
    ``allow_fallback`` is set; otherwise the failure propagates as a
    :class:`DataError`.
    """

    tag = "routing-api"

    def __init__(self, allow_fallback: bool = True, workers: int = 1):
        self.allow_fallback = allow_fallback
        self.workers = max(1, int(workers))
        self.fallback_pairs: list = []

    def distance(self, origin: GeoPoint, destination: GeoPoint) -> float:
        raise NotImplementedError

    def _row(self, points, i):
        out = np.zeros(len(points))
        failures = []
        for j, q in enumerate(points):
            if i == j:
                continue
            try:
                out[j] = float(self.distance(points[i], q))
                if not (math.isfinite(out[j]) and out[j] >= 0):
                    raise ValueError(f"bad distance {out[j]!r}")
            except Exception as exc:
                if not self.allow_fallback:
                    raise DataError(f"routing provider failed for pair ({i}, {j}): {exc}") from exc
                logger.warning("routing failed for pair (%d, %d), using great-circle: %s", i, j, exc)
                p = points[i]
                out[j] = float(haversine_m(p.lat, p.lon, q.lat, q.lon))
                failures.append((i, j))
        return out, failures

    def pairwise(self, points):
        self.fallback_pairs = []
        idx = range(len(points))
        if self.workers > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                rows = list(pool.map(lambda i: self._row(points, i), idx))
        else:
            rows = [self._row(points, i) for i in idx]
        for _, failures in rows:
            self.fallback_pairs.extend(failures)
        return np.vstack([r for r, _ in rows])


class MockRoutingProvider(RoutingProvider):
    """Deterministic stand-in for a routing API.

    Returns the great-circle distance inflated by a detour factor plus a
    small direction-dependent skew, so the result is asymmetric like real
    road distances. Pairs listed in ``fail_pairs`` raise, to exercise the
    fallback path.
    """

    def __init__(self, detour: float = 1.3, skew: float = 0.05, fail_pairs=(), **kw):
        super().__init__(**kw)
        self.detour = detour
        self.skew = skew
        self.fail_pairs = {tuple(p) for p in fail_pairs}
        self.calls = 0
        self._index = {}

    def pairwise(self, points):
        self._index = {id(p): i for i, p in enumerate(points)}
        return super().pairwise(points)

    def distance(self, origin, destination):
        self.calls += 1
        key = (self._index.get(id(origin)), self._index.get(id(destination)))
        if key in self.fail_pairs:
            raise ConnectionError("mock routing failure")
        gc = float(haversine_m(origin.lat, origin.lon, destination.lat, destination.lon))
        direction = 1.0 if (origin.lat, origin.lon) < (destination.lat, destination.lon) else -1.0
        return gc * (self.detour + direction * self.skew)


def _pair_key(origin: GeoPoint, destination: GeoPoint) -> str:
    return f"{origin.lat:.6f},{origin.lon:.6f};{destination.lat:.6f},{destination.lon:.6f}"


class HttpRoutingProvider(RoutingProvider):
    """Routing client for a JSON distance endpoint.

    Issues ``GET {base_url}?origin=lat,lon&destination=lat,lon[&key=...]``
    and expects ``{"distance_m": <float>}`` in the response. Responses are
    cached on disk keyed by the coordinate pair rounded to 1e-6 degrees.
    The API key is read from the environment variable named by
    ``api_key_env``. With ``offline=True`` no request is made and the
    provider behaves as great-circle.
    """

    def __init__(
        self,
        base_url: str,
        cache_dir=None,
        api_key_env: str = "POSTSAMPLING_ROUTING_KEY",
        offline: bool = False,
        timeout: float = 10.0,
        opener=None,
        **kw,
    ):
        super().__init__(**kw)
        self.base_url = base_url
        self.api_key_env = api_key_env
        self.offline = offline
        self.timeout = timeout
        self._open = opener or urllib.request.urlopen
        self._lock = threading.Lock()
        self.cache_path = Path(cache_dir) / "routing_cache.json" if cache_dir else None
        self._cache = {}
        if self.cache_path and self.cache_path.exists():
            self._cache = json.loads(self.cache_path.read_text())

    @property
    def tag(self):
        return "great-circle" if self.offline else "routing-api"

    def pairwise(self, points):
        if self.offline:
            return GreatCircleProvider().pairwise(points)
        return super().pairwise(points)

    def distance(self, origin, destination):
        key = _pair_key(origin, destination)
        with self._lock:
            if key in self._cache:
                return self._cache[key]
        params = {
            "origin": f"{origin.lat:.6f},{origin.lon:.6f}",
            "destination": f"{destination.lat:.6f},{destination.lon:.6f}",
        }
        api_key = os.environ.get(self.api_key_env)
        if api_key:
            params["key"] = api_key
        url = f"{self.base_url}?{urllib.parse.urlencode(params)}"
        with self._open(url, timeout=self.timeout) as resp:
            payload = json.loads(resp.read().decode("utf-8"))
        value = float(payload["distance_m"])
        with self._lock:
            self._cache[key] = value
            if self.cache_path:
                atomic_write_text(self.cache_path, json.dumps(self._cache, sort_keys=True))
        return value


def default_provider(crs: str) -> DistanceProvider:
    return GreatCircleProvider() if crs == WGS84 else EuclideanProvider()


def build_distance_matrix(points: Sequence[GeoPoint], provider=None, labels=()) -> DistanceMatrix:
    points = list(points)
    if len(points) < 2:
        raise DataError("need at least two points")
    crs = {p.crs for p in points}
    if len(crs) > 1:
        raise DataError(f"mixed crs in input: {sorted(crs)}")
    crs = crs.pop()
    provider = provider or default_provider(crs)
    if provider.tag != "euclidean" and crs != WGS84:
        raise DataError(f"{provider.tag} distances need wgs84 points")
    d = np.asarray(provider.pairwise(points), dtype=float)
    np.fill_diagonal(d, 0.0)
    return DistanceMatrix(d=d, provider_tag=provider.tag, labels=tuple(labels))


def build_weight_matrix(dist: DistanceMatrix, rule: NeighborRule) -> WeightMatrix:
    """Binary neighbour matrix; k-nearest ties go to the smallest index."""
    d = dist.symmetrized() if dist.provider_tag == "routing-api" else np.array(dist.d)
    n = d.shape[0]
    w = np.zeros((n, n), dtype=np.int8)
    if rule.kind == "knn":
        k = int(rule.value)
        if not 1 <= k < n:
            raise DataError(f"k must satisfy 1 <= k < n (k={k}, n={n})")
        np.fill_diagonal(d, np.inf)
        order = np.argsort(d, axis=1, kind="stable")[:, :k]
        w[np.repeat(np.arange(n), k), order.ravel()] = 1
    else:
        w[d <= rule.value] = 1
        np.fill_diagonal(w, 0)
    wm = WeightMatrix(w=w, rule=rule)
    if wm.isolated:
        logger.warning("%d isolated locations under %s: %s", len(wm.isolated), rule, wm.isolated)
    return wm


def weights_from_xy(xy, rule: NeighborRule) -> WeightMatrix:
    """Weight matrix from planar coordinates with Euclidean distances."""
    xy = np.asarray(xy, dtype=float)
    diff = xy[:, None, :] - xy[None, :, :]
    d = np.sqrt((diff**2).sum(axis=2))
    return build_weight_matrix(DistanceMatrix(d=d, provider_tag="euclidean"), rule)


def spatial_lag(values, W: WeightMatrix, skip_isolated: bool = False) -> np.ndarray:
    """Mean of ``values`` over each location's neighbour set.

    Rows without neighbours raise :class:`IsolatedLocationError`, or are
    returned as NaN when ``skip_isolated`` is set.
    """
    v = np.asarray(values, dtype=float)
    if v.shape != (W.n,):
        raise DataError(f"expected {W.n} values, got shape {v.shape}")
    if W.isolated and not skip_isolated:
        raise IsolatedLocationError(W.isolated)
    counts = W.neighbor_counts
    mask = W.w.astype(bool)
    if np.any(np.isnan(v[mask.any(axis=0)])):
        raise DataError("missing values among neighbours; impute first")
    sums = W.w.astype(float) @ np.nan_to_num(v)
    out = np.full(W.n, np.nan)
    has = counts > 0
    out[has] = sums[has] / counts[has]
    return out


def as_xy(points) -> np.ndarray:
    """Planar (n, 2) coordinates for Euclidean work.

    WGS84 points are projected to meters with an equirectangular
    approximation around their centroid.
    """
    if isinstance(points, np.ndarray):
        xy = np.asarray(points, dtype=float)
        if xy.ndim != 2 or xy.shape[1] != 2:
            raise DataError("coordinate array must have shape (n, 2)")
        return xy
    points = list(points)
    crs = {p.crs for p in points}
    if len(crs) > 1:
        raise DataError(f"mixed crs in input: {sorted(crs)}")
    xy = np.array([(p.x, p.y) for p in points], dtype=float)
    if crs == {WGS84}:
        lon0, lat0 = xy.mean(axis=0)
        xy = np.column_stack(
            [
                EARTH_RADIUS_M * np.radians(xy[:, 0] - lon0) * math.cos(math.radians(lat0)),
                EARTH_RADIUS_M * np.radians(xy[:, 1] - lat0),
            ]
        )
    return xy


# ---------------------------------------------------------------------------
# small file helpers shared by the io layer


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(rows) -> str:
    import io

    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
