"""Data model, ingestion, metric projection, spatial indexing, and joins.

All tables are immutable after load and safe for concurrent reads. Ingestion
is strict: the first bad row aborts the load with a file/row/column
diagnostic rather than silently dropping data.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .exceptions import SchemaError, ValidationError

EARTH_RADIUS_M = 6378137.0
MAX_ABS_LAT = 85.06  # planar metric projection validity band

PERIODS = ("wd_am", "wd_md", "wd_pm", "wd_nt", "we_am", "we_md", "we_pm", "we_nt")

COUNT_COLUMNS = (
    "signboards_left", "signboards_right",
    "closed_left", "closed_right",
    "glass_left", "glass_right",
    "persons_left", "persons_right",
    "motor_left", "motor_right",
    "nonmotor_left", "nonmotor_right",
    "green_pixels_left", "green_pixels_right",
    "total_pixels_left", "total_pixels_right",
)

POINTS_HEADER = ("id", "lon", "lat", "segment_id", "order") + COUNT_COLUMNS
SEGMENTS_HEADER = ("id", "length_m")
ANCHORS_HEADER = ("id", "category", "lon", "lat")
POIS_HEADER = ("id", "lon", "lat", "top_category", "is_premium")
LBS_HEADER = ("segment_id", "period", "uv")
BRANDS_HEADER = ("point_id", "n_local", "n_international", "n_ordinary")


def project_to_metric(lon: float, lat: float) -> tuple[float, float]:
    """Spherical web-mercator forward transform (degrees -> meters).

    Rejects latitudes outside the +/-85.06 deg validity band.
    """
    if not (math.isfinite(lon) and math.isfinite(lat)):
        raise ValidationError(f"non-finite coordinate ({lon}, {lat})")
    if abs(lat) >= MAX_ABS_LAT:
        raise ValidationError(
            f"latitude {lat} outside the projection validity band (|lat| < {MAX_ABS_LAT})"
        )
    x = EARTH_RADIUS_M * math.radians(lon)
    # asinh(tan(lat)) == ln(tan(pi/4 + lat/2)), but exact at the equator
    y = EARTH_RADIUS_M * math.asinh(math.tan(math.radians(lat)))
    return x, y


def metric_to_lonlat(x: float, y: float) -> tuple[float, float]:
    """Analytic inverse of `project_to_metric`."""
    lon = math.degrees(x / EARTH_RADIUS_M)
    lat = math.degrees(math.atan(math.sinh(y / EARTH_RADIUS_M)))
    return lon, lat


@dataclass(frozen=True)
class DetectionCounts:
    signboards_left: int = 0
    signboards_right: int = 0
    closed_left: int = 0
    closed_right: int = 0
    glass_left: int = 0
    glass_right: int = 0
    persons_left: int = 0
    persons_right: int = 0
    motor_left: int = 0
    motor_right: int = 0
    nonmotor_left: int = 0
    nonmotor_right: int = 0
    green_pixels_left: int = 0
    green_pixels_right: int = 0
    total_pixels_left: int = 0
    total_pixels_right: int = 0

    def as_tuple(self) -> tuple[int, ...]:
        return tuple(getattr(self, f.name) for f in fields(self))


@dataclass(frozen=True)
class SamplingPoint:
    id: str
    lon: float
    lat: float
    x: float
    y: float
    segment_id: str
    order_along_segment: int
    detections: DetectionCounts


@dataclass
class StreetSegment:
    id: str
    length_m: float
    point_ids: list[str] = field(default_factory=list)


@dataclass
class MallAnchor:
    id: str
    category: str
    x: float
    y: float
    lon: float = 0.0
    lat: float = 0.0
    sigma_m: float = 0.0  # filled by spillover.calibrate_sigma


@dataclass(frozen=True)
class PoiRecord:
    id: str
    x: float
    y: float
    top_category: str
    is_premium: bool


@dataclass(frozen=True)
class BrandTally:
    n_local: int = 0
    n_international: int = 0
    n_ordinary: int = 0


@dataclass
class CityTables:
    """Validated, referentially consistent in-memory tables."""

    points: list[SamplingPoint]
    segments: dict[str, StreetSegment]
    anchors: list[MallAnchor]
    pois: list[PoiRecord]
    lbs: dict[str, dict[str, float]]              # segment_id -> period -> uv
    brands: dict[str, BrandTally] | None = None   # point_id -> tally
    segment_geometry: dict[str, list[tuple[float, float]]] | None = None

    def points_xy(self) -> np.ndarray:
        return np.array([(p.x, p.y) for p in self.points], dtype=float).reshape(-1, 2)

    def pois_xy(self) -> np.ndarray:
        return np.array([(p.x, p.y) for p in self.pois], dtype=float).reshape(-1, 2)

    def points_by_segment(self) -> dict[str, list[SamplingPoint]]:
        by_id = {p.id: p for p in self.points}
        return {
            sid: sorted((by_id[pid] for pid in seg.point_ids),
                        key=lambda p: p.order_along_segment)
            for sid, seg in self.segments.items()
        }


class SpatialIndex:
    """Balanced k-d tree over metric (x, y) sites.

    Duplicate coordinates are kept as distinct entries; queries return
    exactly the brute-force answer set (radius comparisons are <=).
    """

    def __init__(self, xy: np.ndarray):
        xy = np.asarray(xy, dtype=float)
        if xy.ndim != 2 or xy.shape[1] != 2:
            raise ValidationError(f"spatial index expects an (n, 2) array, got {xy.shape}")
        if xy.shape[0] and not np.all(np.isfinite(xy)):
            raise ValidationError("spatial index coordinates must be finite")
        self._xy = xy.copy()
        self._tree = cKDTree(self._xy, balanced_tree=True) if len(xy) else None

    def __len__(self) -> int:
        return len(self._xy)

    def query_radius(self, xy: tuple[float, float], radius: float) -> np.ndarray:
        """Indices of all sites with Euclidean distance <= radius, ascending."""
        if radius <= 0:
            raise ValidationError(f"radius must be positive, got {radius}")
        if self._tree is None:
            return np.empty(0, dtype=np.intp)
        idx = np.asarray(self._tree.query_ball_point(list(xy), radius), dtype=np.intp)
        idx.sort()
        return idx

    def query_nearest(self, xy: tuple[float, float], k: int = 1):
        """(distances, indices) of the k nearest sites."""
        if self._tree is None:
            raise ValidationError("nearest query on an empty index")
        d, i = self._tree.query(list(xy), k=k)
        return np.atleast_1d(d), np.atleast_1d(i)


# ---------------------------------------------------------------------------
# ingestion
# ---------------------------------------------------------------------------

def _read_csv_rows(path: Path, expected_header: tuple[str, ...]):
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except OSError as exc:
        raise ValidationError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(path, 0, "-", "file is empty (header row required)")
        if tuple(h.strip() for h in header) != expected_header:
            raise SchemaError(
                path, 1, "-",
                f"header {header} does not match expected {list(expected_header)}",
            )
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected_header):
                raise SchemaError(path, lineno, "-",
                                  f"expected {len(expected_header)} fields, got {len(row)}")
            rows.append((lineno, row))
    return rows


def _parse_int(path, row, column, text, minimum=None):
    try:
        value = int(text)
    except ValueError:
        raise SchemaError(path, row, column, f"not an integer: {text!r}")
    if minimum is not None and value < minimum:
        raise SchemaError(path, row, column, f"must be >= {minimum}, got {value}")
    return value


def _parse_float(path, row, column, text, minimum=None):
    try:
        value = float(text)
    except ValueError:
        raise SchemaError(path, row, column, f"not a number: {text!r}")
    if not math.isfinite(value):
        raise SchemaError(path, row, column, f"not finite: {text!r}")
    if minimum is not None and value < minimum:
        raise SchemaError(path, row, column, f"must be >= {minimum}, got {value}")
    return value


def _point_from_fields(path, lineno, rec: dict) -> SamplingPoint:
    pid = rec["id"].strip()
    if not pid:
        raise SchemaError(path, lineno, "id", "empty id")
    lon = _parse_float(path, lineno, "lon", rec["lon"])
    lat = _parse_float(path, lineno, "lat", rec["lat"])
    if abs(lat) >= MAX_ABS_LAT:
        raise SchemaError(path, lineno, "lat",
                          f"latitude {lat} outside projection band (|lat| < {MAX_ABS_LAT})")
    counts = {}
    for col in COUNT_COLUMNS:
        counts[col] = _parse_int(path, lineno, col, rec[col], minimum=0)
    for side in ("left", "right"):
        if counts[f"green_pixels_{side}"] > counts[f"total_pixels_{side}"]:
            raise SchemaError(path, lineno, f"green_pixels_{side}",
                              "green pixel count exceeds total pixel count")
    x, y = project_to_metric(lon, lat)
    return SamplingPoint(
        id=pid, lon=lon, lat=lat, x=x, y=y,
        segment_id=rec["segment_id"].strip(),
        order_along_segment=_parse_int(path, lineno, "order", rec["order"], minimum=0),
        detections=DetectionCounts(**counts),
    )


def _load_points_csv(path: Path) -> list[SamplingPoint]:
    points = []
    for lineno, row in _read_csv_rows(path, POINTS_HEADER):
        rec = dict(zip(POINTS_HEADER, row))
        points.append(_point_from_fields(path, lineno, rec))
    return points


def _load_segments_csv(path: Path) -> dict[str, StreetSegment]:
    segments: dict[str, StreetSegment] = {}
    for lineno, row in _read_csv_rows(path, SEGMENTS_HEADER):
        sid = row[0].strip()
        if not sid:
            raise SchemaError(path, lineno, "id", "empty id")
        if sid in segments:
            raise SchemaError(path, lineno, "id", f"duplicate segment id {sid!r}")
        length = _parse_float(path, lineno, "length_m", row[1])
        if length <= 0:
            raise SchemaError(path, lineno, "length_m", f"must be > 0, got {length}")
        segments[sid] = StreetSegment(id=sid, length_m=length)
    return segments


def _load_anchors_csv(path: Path) -> list[MallAnchor]:
    anchors = []
    seen = set()
    for lineno, row in _read_csv_rows(path, ANCHORS_HEADER):
        aid = row[0].strip()
        if not aid:
            raise SchemaError(path, lineno, "id", "empty id")
        if aid in seen:
            raise SchemaError(path, lineno, "id", f"duplicate anchor id {aid!r}")
        seen.add(aid)
        category = row[1].strip()
        if not category:
            raise SchemaError(path, lineno, "category", "empty category")
        lon = _parse_float(path, lineno, "lon", row[2])
        lat = _parse_float(path, lineno, "lat", row[3])
        if abs(lat) >= MAX_ABS_LAT:
            raise SchemaError(path, lineno, "lat", "latitude outside projection band")
        x, y = project_to_metric(lon, lat)
        anchors.append(MallAnchor(id=aid, category=category, x=x, y=y, lon=lon, lat=lat))
    return anchors


def _load_pois_csv(path: Path) -> list[PoiRecord]:
    pois = []
    seen = set()
    for lineno, row in _read_csv_rows(path, POIS_HEADER):
        pid = row[0].strip()
        if not pid:
            raise SchemaError(path, lineno, "id", "empty id")
        if pid in seen:
            raise SchemaError(path, lineno, "id", f"duplicate poi id {pid!r}")
        seen.add(pid)
        lon = _parse_float(path, lineno, "lon", row[1])
        lat = _parse_float(path, lineno, "lat", row[2])
        if abs(lat) >= MAX_ABS_LAT:
            raise SchemaError(path, lineno, "lat", "latitude outside projection band")
        premium_raw = row[4].strip()
        if premium_raw not in ("0", "1"):
            raise SchemaError(path, lineno, "is_premium", f"must be 0 or 1, got {premium_raw!r}")
        x, y = project_to_metric(lon, lat)
        pois.append(PoiRecord(id=pid, x=x, y=y,
                              top_category=row[3].strip(), is_premium=premium_raw == "1"))
    return pois


def _load_lbs_csv(path: Path, segments: dict[str, StreetSegment]):
    lbs: dict[str, dict[str, float]] = {}
    for lineno, row in _read_csv_rows(path, LBS_HEADER):
        sid = row[0].strip()
        if sid not in segments:
            raise SchemaError(path, lineno, "segment_id", f"unknown segment {sid!r}")
        period = row[1].strip()
        if period not in PERIODS:
            raise SchemaError(path, lineno, "period",
                              f"unknown period {period!r}; expected one of {list(PERIODS)}")
        uv = _parse_float(path, lineno, "uv", row[2], minimum=0.0)
        slot = lbs.setdefault(sid, {})
        if period in slot:
            raise SchemaError(path, lineno, "period",
                              f"duplicate record for ({sid!r}, {period!r})")
        slot[period] = uv
    for sid, slot in lbs.items():
        missing = [p for p in PERIODS if p not in slot]
        if missing:
            raise ValidationError(
                f"{path}: segment {sid!r} is missing periods {missing}"
            )
    return lbs


def _load_brands_csv(path: Path) -> dict[str, BrandTally]:
    brands: dict[str, BrandTally] = {}
    for lineno, row in _read_csv_rows(path, BRANDS_HEADER):
        pid = row[0].strip()
        if pid in brands:
            raise SchemaError(path, lineno, "point_id", f"duplicate point id {pid!r}")
        brands[pid] = BrandTally(
            n_local=_parse_int(path, lineno, "n_local", row[1], minimum=0),
            n_international=_parse_int(path, lineno, "n_international", row[2], minimum=0),
            n_ordinary=_parse_int(path, lineno, "n_ordinary", row[3], minimum=0),
        )
    return brands


def _load_point_features_geojson(path: Path, prop_names: tuple[str, ...]):
    """Rows (as string dicts) from a GeoJSON FeatureCollection of Points."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read GeoJSON {path}: {exc}") from exc
    if doc.get("type") != "FeatureCollection":
        raise SchemaError(path, 0, "type", "expected a FeatureCollection")
    rows = []
    for i, feat in enumerate(doc.get("features", []), start=1):
        geom = feat.get("geometry") or {}
        if geom.get("type") != "Point":
            raise SchemaError(path, i, "geometry", f"expected Point, got {geom.get('type')!r}")
        coords = geom.get("coordinates")
        if not isinstance(coords, (list, tuple)) or len(coords) < 2:
            raise SchemaError(path, i, "coordinates", "expected [lon, lat]")
        props = feat.get("properties") or {}
        rec = {"lon": str(coords[0]), "lat": str(coords[1])}
        for name in prop_names:
            if name in ("lon", "lat"):
                continue
            if name not in props:
                raise SchemaError(path, i, name, "missing property")
            rec[name] = str(props[name])
        rows.append((i, rec))
    return rows


def _load_segments_geojson(path: Path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read GeoJSON {path}: {exc}") from exc
    if doc.get("type") != "FeatureCollection":
        raise SchemaError(path, 0, "type", "expected a FeatureCollection")
    segments: dict[str, StreetSegment] = {}
    geometry: dict[str, list[tuple[float, float]]] = {}
    for i, feat in enumerate(doc.get("features", []), start=1):
        geom = feat.get("geometry") or {}
        if geom.get("type") != "LineString":
            raise SchemaError(path, i, "geometry", f"expected LineString, got {geom.get('type')!r}")
        props = feat.get("properties") or {}
        sid = str(props.get("id", "")).strip()
        if not sid:
            raise SchemaError(path, i, "id", "missing or empty id")
        if sid in segments:
            raise SchemaError(path, i, "id", f"duplicate segment id {sid!r}")
        length = _parse_float(path, i, "length_m", str(props.get("length_m")))
        if length <= 0:
            raise SchemaError(path, i, "length_m", f"must be > 0, got {length}")
        segments[sid] = StreetSegment(id=sid, length_m=length)
        geometry[sid] = [(float(c[0]), float(c[1])) for c in geom.get("coordinates", [])]
    return segments, geometry


@dataclass(frozen=True)
class TablePaths:
    points: Path
    segments: Path
    anchors: Path
    pois: Path
    lbs: Path
    brands: Path | None = None


def load_tables(paths: TablePaths, fmt: str = "csv") -> CityTables:
    """Load and cross-validate the five core tables (plus optional brands).

    `fmt` selects the spatial-table encoding: "csv" or "geojson" (Point
    features with the same property names; segments as LineString features).
    The non-spatial lbs/brands tables are CSV in both modes.
    """
    if fmt not in ("csv", "geojson"):
        raise ValidationError(f"unknown table format {fmt!r} (expected csv or geojson)")

    segment_geometry = None
    if fmt == "csv":
        points = _load_points_csv(paths.points)
        segments = _load_segments_csv(paths.segments)
        anchors = _load_anchors_csv(paths.anchors)
        pois = _load_pois_csv(paths.pois)
    else:
        rows = _load_point_features_geojson(paths.points, POINTS_HEADER)
        points = [_point_from_fields(paths.points, n, rec) for n, rec in rows]
        segments, segment_geometry = _load_segments_geojson(paths.segments)
        anchors = []
        for lineno, rec in _load_point_features_geojson(paths.anchors, ANCHORS_HEADER):
            x, y = project_to_metric(float(rec["lon"]), float(rec["lat"]))
            anchors.append(MallAnchor(id=rec["id"], category=rec["category"], x=x, y=y,
                                      lon=float(rec["lon"]), lat=float(rec["lat"])))
        pois = []
        for lineno, rec in _load_point_features_geojson(paths.pois, POIS_HEADER):
            if rec["is_premium"] not in ("0", "1"):
                raise SchemaError(paths.pois, lineno, "is_premium",
                                  f"must be 0 or 1, got {rec['is_premium']!r}")
            x, y = project_to_metric(float(rec["lon"]), float(rec["lat"]))
            pois.append(PoiRecord(id=rec["id"], x=x, y=y, top_category=rec["top_category"],
                                  is_premium=rec["is_premium"] == "1"))

    # referential integrity and per-segment ordering
    seen_points: set[str] = set()
    order_seen: dict[str, set[int]] = {}
    for p in points:
        if p.id in seen_points:
            raise ValidationError(f"{paths.points}: duplicate point id {p.id!r}")
        seen_points.add(p.id)
        if p.segment_id not in segments:
            raise ValidationError(
                f"{paths.points}: point {p.id!r} references unknown segment {p.segment_id!r}"
            )
        orders = order_seen.setdefault(p.segment_id, set())
        if p.order_along_segment in orders:
            raise ValidationError(
                f"{paths.points}: duplicate order {p.order_along_segment} "
                f"within segment {p.segment_id!r}"
            )
        orders.add(p.order_along_segment)
        segments[p.segment_id].point_ids.append(p.id)
    order_of = {p.id: p.order_along_segment for p in points}
    for seg in segments.values():
        seg.point_ids.sort(key=lambda pid: order_of[pid])

    lbs = _load_lbs_csv(paths.lbs, segments)

    brands = None
    if paths.brands is not None:
        brands = _load_brands_csv(paths.brands)
        for pid in brands:
            if pid not in seen_points:
                raise ValidationError(
                    f"{paths.brands}: brand tally references unknown point {pid!r}"
                )

    return CityTables(points=points, segments=segments, anchors=anchors, pois=pois,
                      lbs=lbs, brands=brands, segment_geometry=segment_geometry)


def write_tables(tables: CityTables, outdir: Path) -> list[Path]:
    """Re-serialize validated tables to CSV (the load/write round trip)."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []

    def _write(name, header, rows):
        path = outdir / name
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)
        written.append(path)

    _write("points.csv", POINTS_HEADER,
           [(p.id, repr(p.lon), repr(p.lat), p.segment_id, p.order_along_segment)
            + p.detections.as_tuple() for p in tables.points])
    _write("segments.csv", SEGMENTS_HEADER,
           [(s.id, repr(s.length_m)) for s in tables.segments.values()])
    _write("anchors.csv", ANCHORS_HEADER,
           [(a.id, a.category, repr(a.lon), repr(a.lat)) for a in tables.anchors])
    pois_rows = []
    for p in tables.pois:
        lon, lat = metric_to_lonlat(p.x, p.y)
        pois_rows.append((p.id, repr(lon), repr(lat), p.top_category, int(p.is_premium)))
    _write("pois.csv", POIS_HEADER, pois_rows)
    _write("lbs.csv", LBS_HEADER,
           [(sid, period, repr(slot[period]))
            for sid, slot in sorted(tables.lbs.items()) for period in PERIODS])
    if tables.brands is not None:
        _write("brands.csv", BRANDS_HEADER,
               [(pid, t.n_local, t.n_international, t.n_ordinary)
                for pid, t in sorted(tables.brands.items())])
    return written


# ---------------------------------------------------------------------------
# spatial joins
# ---------------------------------------------------------------------------

def radius_join(points: list[SamplingPoint], pois: list[PoiRecord],
                radius: float) -> dict[str, list[str]]:
    """For each point, the ids of all POIs within `radius` meters (<=),
    sorted by POI id."""
    if radius <= 0:
        raise ValidationError(f"radius must be positive, got {radius}")
    result: dict[str, list[str]] = {}
    if not pois:
        return {p.id: [] for p in points}
    xy = np.array([(q.x, q.y) for q in pois], dtype=float)
    ids = [q.id for q in pois]
    index = SpatialIndex(xy)
    for p in points:
        cand = index.query_radius((p.x, p.y), radius)
        hits = []
        for j in cand:
            if math.hypot(xy[j, 0] - p.x, xy[j, 1] - p.y) <= radius:
                hits.append(ids[j])
        hits.sort()
        result[p.id] = hits
    return result


def filter_active(points: list[SamplingPoint],
                  poi_lists: dict[str, list[str]]) -> list[SamplingPoint]:
    """Points with at least one joined POI; callers report len() as coverage."""
    return [p for p in points if poi_lists.get(p.id)]
