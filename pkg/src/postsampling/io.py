"""Ingestion of observation files and pipeline configuration."""

from __future__ import annotations

import configparser
import csv
import json
import math
from dataclasses import asdict, dataclass, fields
from datetime import datetime
from pathlib import Path
from typing import Optional

from .designs import DESIGN_TAGS
from .domain import GeoPoint, Observation, _csv_text, atomic_write_text
from .errors import ConfigError, DataError
from .poststrat import MODES

CSV_HEADER = ("obs_id", "location_id", "lat", "lon", "value", "date", "collector_id")
REQUIRED = CSV_HEADER[:-1]
MISSING_TOKENS = ("",)


@dataclass
class Reject:
    line: int
    reason: str
    record: dict


@dataclass
class IngestResult:
    observations: list
    rejects: list

    def rejects_csv(self) -> str:
        rows = [["line", "reason", *CSV_HEADER]]
        for r in self.rejects:
            rows.append([r.line, r.reason, *(r.record.get(c, "") for c in CSV_HEADER)])
        return _csv_text(rows)


def _parse_date(s: str) -> datetime:
    s = s.strip()
    try:
        return datetime.fromisoformat(s)
    except ValueError:
        return datetime.strptime(s, "%d/%m/%Y")


def _parse_record(rec: dict, seen_ids: set, locations: dict):
    """Return ``(Observation, None)`` or ``(None, reason)``."""
    obs_id = (rec.get("obs_id") or "").strip()
    loc = (rec.get("location_id") or "").strip()
    if not obs_id or not loc:
        return None, "missing-id"
    if obs_id in seen_ids:
        return None, "duplicate-obs-id"
    try:
        lat, lon = float(rec["lat"]), float(rec["lon"])
    except (TypeError, ValueError):
        return None, "unparseable-coordinate"
    try:
        point = GeoPoint.from_latlon(lat, lon)
    except DataError:
        return None, "out-of-range-coordinate"
    raw = rec.get("value")
    raw = "" if raw is None else str(raw).strip()
    if raw in MISSING_TOKENS:
        value = None
    else:
        try:
            value = float(raw)
        except ValueError:
            return None, "unparseable-value"
        if not math.isfinite(value):
            return None, "unparseable-value"
        if value <= 0:
            return None, "nonpositive-value"
    try:
        ts = _parse_date(str(rec.get("date") or ""))
    except ValueError:
        return None, "unparseable-date"
    if loc in locations and locations[loc] != point:
        return None, "inconsistent-location"
    locations.setdefault(loc, point)
    seen_ids.add(obs_id)
    collector = (rec.get("collector_id") or "").strip() or None
    return Observation(obs_id, loc, point, value, ts, collector), None


def _records_csv(path: Path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in REQUIRED:
            if col not in header:
                raise DataError(f"missing required column {col!r} in {path}")
        for line, rec in enumerate(reader, start=2):
            yield line, rec


def _records_geojson(path: Path):
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("type") != "FeatureCollection":
        raise DataError("geojson input must be a FeatureCollection")
    for idx, feat in enumerate(doc.get("features", []), start=1):
        props = dict(feat.get("properties") or {})
        geom = feat.get("geometry") or {}
        coords = geom.get("coordinates") if geom.get("type") == "Point" else None
        props["lon"], props["lat"] = (coords[0], coords[1]) if coords and len(coords) >= 2 else (None, None)
        if idx == 1:
            for col in REQUIRED:
                if col not in props:
                    raise DataError(f"missing required property {col!r} in {path}")
        yield idx, props


def ingest(path, fmt: Optional[str] = None) -> IngestResult:
    """Read observations; malformed rows are returned as rejects with a reason."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"input file not found: {path}")
    fmt = fmt or ("geojson" if path.suffix.lower() in (".geojson", ".json") else "csv")
    records = {"csv": _records_csv, "geojson": _records_geojson}.get(fmt)
    if records is None:
        raise DataError(f"unsupported format {fmt!r}")
    obs, rejects = [], []
    seen, locations = set(), {}
    for line, rec in records(path):
        o, reason = _parse_record(rec, seen, locations)
        if o is None:
            rejects.append(Reject(line, reason, {k: rec.get(k, "") for k in CSV_HEADER}))
        else:
            obs.append(o)
    if not obs:
        raise DataError(f"no valid rows in {path}")
    return IngestResult(obs, rejects)


def _fmt_value(v) -> str:
    return "" if v is None else f"{v:.10g}"


def observations_csv(observations, values=None, tags=None) -> str:
    """Serialise observations in the input schema, optionally with new values and a flag column."""
    header = list(CSV_HEADER) + (["flag"] if tags is not None else [])
    rows = [header]
    for o in observations:
        v = values.get(o.obs_id, o.value) if values is not None else o.value
        row = [o.obs_id, o.location_id, f"{o.point.lat:.6f}", f"{o.point.lon:.6f}", _fmt_value(v),
               o.timestamp.date().isoformat() if o.timestamp.time() == datetime.min.time()
               else o.timestamp.isoformat(), o.collector_id or ""]
        if tags is not None:
            row.append(tags.get(o.obs_id, "clean"))
        rows.append(row)
    return _csv_text(rows)


def write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# configuration


@dataclass
class PipelineConfig:
    input: str
    seed: int
    out_dir: str = "out"
    format: str = "csv"
    neighbor_rule: str = "knn"
    k_neighbors: int = 8
    threshold_km: float = 30.0
    spatial_r: float = 3.0
    global_method: str = "zscore"
    global_t: float = 3.0
    global_c: float = 1.5
    clean: bool = True
    clusters: int = 4
    cluster_restarts: int = 10
    design: str = "lpm2"
    design_n: int = 8
    design_unit: str = "location"
    mode: str = "cluster-mean-weighted"

    def validate(self, check_paths: bool = True) -> "PipelineConfig":
        if self.seed is None:
            raise ConfigError("seed is mandatory")
        if check_paths and not Path(self.input).exists():
            raise ConfigError(f"input file not found: {self.input}")
        if self.format not in ("csv", "geojson"):
            raise ConfigError(f"unknown format {self.format!r}")
        if self.neighbor_rule not in ("knn", "threshold"):
            raise ConfigError(f"unknown neighbor_rule {self.neighbor_rule!r}")
        if self.global_method not in ("zscore", "iqr"):
            raise ConfigError(f"unknown global_method {self.global_method!r}")
        if self.design not in DESIGN_TAGS:
            raise ConfigError(f"unknown design {self.design!r}")
        if self.design_unit != "location":
            raise ConfigError("the pipeline samples markets; design_unit must be 'location'")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.spatial_r <= 0 or self.k_neighbors < 1 or self.clusters < 0 or self.design_n < 1:
            raise ConfigError("spatial_r, k_neighbors and design_n must be positive; clusters >= 0")
        return self

    def snapshot(self) -> dict:
        return asdict(self)


def _coerce(name: str, raw):
    types = {f.name: f.type for f in fields(PipelineConfig)}
    if name not in types:
        raise ConfigError(f"unknown config key {name!r}")
    t = types[name]
    try:
        if t == "bool":
            if isinstance(raw, bool):
                return raw
            s = str(raw).strip().lower()
            if s not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                raise ValueError(raw)
            return s in ("1", "true", "yes", "on")
        if t == "int":
            return int(raw)
        if t == "float":
            return float(raw)
        return str(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


def load_config(path=None, overrides: Optional[dict] = None, check_paths: bool = True) -> PipelineConfig:
    """Build a config from an INI file (section ``[pipeline]``) and overrides.

    Relative ``input``/``out_dir`` paths in the file resolve against the
    file's directory. Overrides win over file values; ``None`` overrides
    are ignored.
    """
    values = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        cp = configparser.ConfigParser()
        try:
            cp.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
        if "pipeline" not in cp:
            raise ConfigError(f"{path} has no [pipeline] section")
        for key, raw in cp["pipeline"].items():
            values[key] = _coerce(key, raw)
        for key in ("input", "out_dir"):
            if key in values and not Path(values[key]).is_absolute():
                values[key] = str((path.parent / values[key]).resolve())
    for key, raw in (overrides or {}).items():
        if raw is not None:
            values[key] = _coerce(key, raw)
    for key in ("input", "seed"):
        if key not in values:
            raise ConfigError(f"config is missing {key!r}")
    return PipelineConfig(**values).validate(check_paths=check_paths)
