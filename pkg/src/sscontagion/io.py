"""GeoJSON ingestion and deterministic CSV / JSON output.

Input schema
------------
Polygons: a FeatureCollection of ``Polygon`` features (exterior ring only)
with a ``community_id`` property. Events: a FeatureCollection of ``Point``
features with properties ``community_id``, ``year`` (integer) and
``panel_area`` (m^2, float); the event id is the feature ``id`` or an
``id`` property, else ``<community_id>-<feature index>``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .domain import Community, PVInstallation, Timeline, ValidationReport, validate_dataset


class SchemaError(ValueError):
    """Input file does not follow the ingestion schema."""


@dataclass
class Dataset:
    communities: list[Community]
    report: ValidationReport
    orphans: list[tuple[int, str]] = field(default_factory=list)  # (feature index, community id)

    @property
    def usable(self) -> list[Community]:
        return self.report.usable(self.communities)


def _load_collection(path) -> list:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise SchemaError(f"{path}: expected a FeatureCollection")
    feats = doc.get("features")
    if not isinstance(feats, list):
        raise SchemaError(f"{path}: 'features' must be a list")
    return feats


def _props(feat, i, path):
    if not isinstance(feat, dict):
        raise SchemaError(f"{path}: feature {i} is not an object")
    props = feat.get("properties")
    if not isinstance(props, dict):
        raise SchemaError(f"{path}: feature {i} has no properties object")
    return props


def read_polygons(path) -> list[tuple[str, np.ndarray]]:
    out = []
    seen = set()
    for i, feat in enumerate(_load_collection(path)):
        props = _props(feat, i, path)
        cid = props.get("community_id")
        if cid is None or cid == "":
            raise SchemaError(f"{path}: polygon feature {i} is missing the 'community_id' property")
        cid = str(cid)
        if cid in seen:
            raise SchemaError(f"{path}: polygon feature {i} repeats community_id {cid!r}")
        seen.add(cid)
        geom = feat.get("geometry") or {}
        if geom.get("type") != "Polygon":
            raise SchemaError(f"{path}: feature {i} ({cid}) must be a Polygon, got {geom.get('type')!r}")
        rings = geom.get("coordinates")
        if not isinstance(rings, list) or len(rings) != 1:
            raise SchemaError(f"{path}: feature {i} ({cid}) must have exactly one ring (no holes)")
        try:
            ring = np.asarray(rings[0], dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"{path}: feature {i} ({cid}) has malformed coordinates") from exc
        if ring.ndim != 2 or ring.shape[1] < 2:
            raise SchemaError(f"{path}: feature {i} ({cid}) has malformed coordinates")
        out.append((cid, ring[:, :2]))
    return out


def read_events(path) -> list[tuple[int, str, PVInstallation]]:
    out = []
    for i, feat in enumerate(_load_collection(path)):
        props = _props(feat, i, path)
        geom = feat.get("geometry") or {}
        if geom.get("type") != "Point":
            raise SchemaError(f"{path}: event feature {i} must be a Point")
        for key in ("community_id", "year", "panel_area"):
            if key not in props:
                raise SchemaError(f"{path}: event feature {i} is missing the {key!r} property")
        try:
            x, y = (float(v) for v in geom["coordinates"][:2])
            year = props["year"]
            if isinstance(year, bool) or int(year) != year:
                raise ValueError("year must be an integer")
            area = float(props["panel_area"])
        except (TypeError, ValueError, KeyError, IndexError) as exc:
            raise SchemaError(f"{path}: event feature {i}: {exc}") from exc
        cid = str(props["community_id"])
        eid = feat.get("id", props.get("id", f"{cid}-{i}"))
        out.append((i, cid, PVInstallation(str(eid), (x, y), int(year), area)))
    return out


def ingest(polygon_path, events_path, timeline: Timeline | None = None) -> Dataset:
    """Read both files, join events to communities and validate.

    Raises
    ------
    SchemaError
        On any schema violation, naming the file and feature index.
    """
    timeline = timeline or Timeline()
    polys = read_polygons(polygon_path)
    by_id: dict[str, list[PVInstallation]] = {cid: [] for cid, _ in polys}
    orphans = []
    for i, cid, ev in read_events(events_path):
        if cid in by_id:
            by_id[cid].append(ev)
        else:
            orphans.append((i, cid))
    communities = [Community(cid, ring, tuple(by_id[cid])) for cid, ring in polys]
    report = validate_dataset(communities, timeline)
    return Dataset(communities, report, orphans)


def _feature_collection(features) -> dict:
    return {"type": "FeatureCollection", "features": features}


def write_dataset(communities: Sequence[Community], polygon_path, events_path) -> None:
    """Write communities in the ingestion schema (round-trips through :func:`ingest`)."""
    polys = []
    events = []
    for c in communities:
        ring = [list(map(float, p)) for p in c.ring] + [list(map(float, c.ring[0]))]
        polys.append({"type": "Feature", "properties": {"community_id": c.id},
                      "geometry": {"type": "Polygon", "coordinates": [ring]}})
        for e in c.events:
            events.append({"type": "Feature", "id": e.id,
                           "properties": {"community_id": c.id, "year": int(e.year),
                                          "panel_area": float(e.panel_area)},
                           "geometry": {"type": "Point",
                                        "coordinates": [float(e.location[0]), float(e.location[1])]}})
    for path, doc in ((polygon_path, _feature_collection(polys)), (events_path, _feature_collection(events))):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh)


# ----------------------------------------------------------------- output

def fmt(v) -> str:
    """17 significant digits for floats, empty for missing, ``str`` otherwise."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return ""
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    return str(v)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence], run_id: str) -> None:
    """Write a CSV whose first column is ``run_id``; line endings are ``\\n``."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run_id", *header])
        for row in rows:
            w.writerow([run_id, *(fmt(v) for v in row)])


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def manifest_hash(fields: dict) -> str:
    return hashlib.sha256(json.dumps(fields, sort_keys=True).encode("utf-8")).hexdigest()


def write_json(path, doc) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)
