"""Spatial and temporal context joined onto tiles.

Evacuation/warning zones and the fire perimeter come from GeoJSON;
structure damage, parcel land use and socioeconomic indicators from
delimited text.  Geometry is handled in planar lon/lat degrees, which is
adequate at tile scale.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping

import shapely
from shapely import wkt as shapely_wkt
from shapely.geometry import MultiPolygon, Polygon, box, shape
from shapely.geometry.base import BaseGeometry

from .errors import (BadCoordinate, BadGeometry, BadQuadkey, BadValue, MissingColumn,
                     MissingProperty, NoPerimeter, OutOfRange, QuadkeyError,
                     UnknownDamageClass)
from .ingest import parse_timestamp
from .panels import DEFAULT_TIMEZONE
from .tiles import (PANEL_LEVEL, GeoPoint, TileId, haversine_km, parse_quadkey, tile_at,
                    tile_bounds, tile_centroid)

log = logging.getLogger(__name__)


class ZoneKind(str, Enum):
    ORDER = "evacuation_order"
    WARNING = "evacuation_warning"
    EXTERNAL = "external"


PERIMETER_KINDS = frozenset({"perimeter", "fire_perimeter"})


@dataclass(frozen=True)
class Zone:
    polygon: BaseGeometry
    kind: ZoneKind
    issuance: dt.datetime
    name: str = ""


@dataclass(frozen=True)
class ZoneMap:
    zones: tuple[Zone, ...]
    fire_perimeter: BaseGeometry
    fire_start: dt.datetime

    @property
    def perimeter_centroid(self) -> GeoPoint:
        c = self.fire_perimeter.centroid
        return GeoPoint(c.y, c.x)


@dataclass(frozen=True)
class TileZoneAssignment:
    tile: TileId
    kind: ZoneKind
    order_time: dt.datetime | None
    wave: int | None
    distance_to_perimeter_centroid: float

    @property
    def in_zone(self) -> bool:
        return self.kind is not ZoneKind.EXTERNAL


def tile_polygon(tile: TileId) -> Polygon:
    b = tile_bounds(tile)
    return box(b.min.lon, b.min.lat, b.max.lon, b.max.lat)


# -- zones ------------------------------------------------------------------

def _polygon_from_geojson(geom: Mapping | None, label: str) -> BaseGeometry:
    if not geom or geom.get("type") not in ("Polygon", "MultiPolygon"):
        raise BadGeometry(label, "expected Polygon or MultiPolygon")
    coords = geom.get("coordinates")
    polys = [coords] if geom["type"] == "Polygon" else coords
    if not polys:
        raise BadGeometry(label, "no coordinates")
    for poly in polys:
        if not poly:
            raise BadGeometry(label, "polygon without rings")
        for ring in poly:
            if len(ring) < 4:
                raise BadGeometry(label, "ring has fewer than 4 positions")
            if list(ring[0]) != list(ring[-1]):
                raise BadGeometry(label, "ring is not closed")
    try:
        g = shape(geom)
    except (ValueError, TypeError, shapely.errors.ShapelyError) as exc:
        raise BadGeometry(label, str(exc)) from None
    return normalize_polygon(g, label)


def normalize_polygon(g: BaseGeometry, label: str = "geometry") -> BaseGeometry:
    """Repair invalid polygons, keeping only the polygonal part."""
    if not g.is_valid:
        g = shapely.make_valid(g)
        if g.geom_type == "GeometryCollection":
            parts = [p for p in g.geoms if p.geom_type in ("Polygon", "MultiPolygon")]
            g = shapely.union_all(parts) if parts else Polygon()
    if g.is_empty or g.geom_type not in ("Polygon", "MultiPolygon") or g.area <= 0:
        raise BadGeometry(label, "no valid polygonal area")
    return g


def load_zones(path: str | Path, *, kind_property: str = "kind",
               time_property: str = "issuance_time", fire_start_property: str = "fire_start",
               timezone: str = DEFAULT_TIMEZONE) -> ZoneMap:
    """Parse a FeatureCollection of order/warning zones plus one perimeter feature.

    The perimeter carries the fire start in ``fire_start`` (or, failing
    that, in the issuance-time property).
    """
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("type") != "FeatureCollection":
        raise BadGeometry(str(path), "not a FeatureCollection")
    zones: list[Zone] = []
    perimeter = None
    fire_start = None
    for i, feat in enumerate(doc.get("features", [])):
        props = feat.get("properties") or {}
        label = props.get("name") or f"feature[{i}]"
        kind = props.get(kind_property)
        if kind is None:
            raise MissingProperty(label, kind_property)
        geom = _polygon_from_geojson(feat.get("geometry"), label)
        if kind in PERIMETER_KINDS:
            start = props.get(fire_start_property, props.get(time_property))
            if start is None:
                raise MissingProperty(label, fire_start_property)
            perimeter = geom if perimeter is None else perimeter.union(geom)
            fire_start = _time(start, label, timezone)
            continue
        try:
            zkind = ZoneKind(kind)
        except ValueError:
            raise MissingProperty(label, f"{kind_property} (unknown value {kind!r})") from None
        if zkind is ZoneKind.EXTERNAL:
            raise MissingProperty(label, f"{kind_property} (external is not a zone kind)")
        if time_property not in props or props[time_property] in (None, ""):
            raise MissingProperty(label, time_property)
        zones.append(Zone(geom, zkind, _time(props[time_property], label, timezone), str(label)))
    if perimeter is None:
        raise NoPerimeter()
    for z in zones:
        if z.kind is ZoneKind.ORDER and z.issuance < fire_start:
            log.warning("zone %s issued %s before fire start %s", z.name, z.issuance, fire_start)
    return ZoneMap(tuple(zones), perimeter, fire_start)


def _time(value: object, label: str, tz: str) -> dt.datetime:
    try:
        return parse_timestamp(str(value), tz)
    except ValueError:
        raise MissingProperty(label, f"parseable timestamp (got {value!r})") from None


def assign_tiles(zones: ZoneMap, tiles: Iterable[TileId]) -> list[TileZoneAssignment]:
    """Assign each tile the kind of its largest-overlap zone.

    Ties in overlap area go to order zones.  The order time is the
    earliest issuance among overlapping order zones, or among overlapping
    warnings when no order zone overlaps.  Waves rank the distinct order
    times ascending from 0.
    """
    tiles = sorted(set(tiles))
    if not tiles:
        raise ValueError("assign_tiles needs at least one tile")
    centre = zones.perimeter_centroid
    pending = []
    for t in tiles:
        rect = tile_polygon(t)
        overlaps = []
        for z in zones.zones:
            area = z.polygon.intersection(rect).area if z.polygon.intersects(rect) else 0.0
            if area > 0:
                overlaps.append((area, z))
        dist = haversine_km(tile_centroid(t), centre)
        if not overlaps:
            pending.append((t, ZoneKind.EXTERNAL, None, dist))
            continue
        _, best = max(overlaps, key=lambda az: (az[0], az[1].kind is ZoneKind.ORDER))
        orders = [z.issuance for _, z in overlaps if z.kind is ZoneKind.ORDER]
        warnings = [z.issuance for _, z in overlaps if z.kind is ZoneKind.WARNING]
        t_r = min(orders) if orders else min(warnings)
        pending.append((t, best.kind, t_r, dist))
    waves = {ts: i for i, ts in enumerate(sorted({p[2] for p in pending if p[2] is not None}))}
    return [TileZoneAssignment(t, kind, t_r, waves.get(t_r) if t_r is not None else None, dist)
            for t, kind, t_r, dist in pending]


# -- damage -----------------------------------------------------------------

DAMAGE_SEVERITY: dict[str, float] = {
    "no damage": 0.00,
    "affected": 0.05,
    "minor": 0.175,
    "major": 0.38,
    "destroyed": 0.75,
}


@dataclass(frozen=True)
class DamageSummary:
    tile: TileId
    structure_count: int
    damage_rate: float | None


def damage_class(label: str) -> str | None:
    """Normalise a DINS label such as ``"Major (26-50%)"`` to a severity key."""
    key = label.split("(")[0].strip().lower()
    return key if key in DAMAGE_SEVERITY else None


def load_damage(path: str | Path, *, lat_column: str = "latitude",
                lon_column: str = "longitude", class_column: str = "damage",
                tiles: Iterable[TileId] | None = None, level: int = PANEL_LEVEL,
                delimiter: str = ",") -> list[DamageSummary]:
    """Mean structure severity per tile.

    ``tiles`` lists tiles to report even when they hold no structures
    (their rate is None).
    """
    sums: dict[TileId, list[float]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        for col in (lat_column, lon_column, class_column):
            if col not in (reader.fieldnames or []):
                raise MissingColumn(col, path)
        for lineno, row in enumerate(reader, start=2):
            cls = damage_class(row[class_column] or "")
            if cls is None:
                raise UnknownDamageClass(lineno, row[class_column])
            try:
                lat, lon = float(row[lat_column]), float(row[lon_column])
            except (TypeError, ValueError):
                raise BadCoordinate(lineno) from None
            if not (math.isfinite(lat) and math.isfinite(lon)
                    and -90 <= lat <= 90 and -180 <= lon <= 180):
                raise BadCoordinate(lineno)
            sums.setdefault(tile_at(lat, lon, level), []).append(DAMAGE_SEVERITY[cls])
    wanted = set(sums) | set(tiles or ())
    out = []
    for t in sorted(wanted):
        sev = sums.get(t, [])
        out.append(DamageSummary(t, len(sev), sum(sev) / len(sev) if sev else None))
    return out


# -- land use ---------------------------------------------------------------

LANDUSE_CATEGORIES = ("residential", "hotel_motel", "public_other", "shopping_store",
                      "industry_working", "service", "other")

_SUBTYPES = {
    "residential": ["residential", "residential area", "single family", "multi family",
                    "multi-family", "apartment", "condominium"],
    "hotel_motel": ["hotel/motel", "hotel", "motel"],
    "public_other": ["public facilities", "public facilities-others", "public-other",
                     "federal property", "school/university", "school", "university",
                     "hospital", "church", "airport", "terminal", "museum",
                     "transmission facilities", "tower", "stadium", "government property",
                     "library", "park", "beach", "harbor"],
    "shopping_store": ["shopping/store", "shopping", "store"],
    # "Storage" is listed under both industry and service; industry wins.
    "industry_working": ["industry/working", "storage", "manufacture", "warehouse", "factory",
                         "plant", "office", "processing"],
    "service": ["service", "restaurant", "parking lot", "bank", "wash", "dealership",
                "recreation", "gas station", "repair", "gym/spa", "golf"],
    "other": ["other", "other types", "vacant land", "mobile home", "agricultural land",
              "farm", "wetland", "cemetery", "desert", "waste", "miscellaneous"],
}
SUBTYPE_CATEGORY: dict[str, str] = {}
for _cat, _names in _SUBTYPES.items():
    SUBTYPE_CATEGORY[_cat] = _cat
    for _n in _names:
        SUBTYPE_CATEGORY.setdefault(_n, _cat)


def landuse_category(subtype: str) -> str:
    """Map a detailed parcel subtype to one of the seven categories."""
    key = " ".join(subtype.strip().lower().split())
    cat = SUBTYPE_CATEGORY.get(key)
    if cat is None:
        log.warning("unmapped land-use subtype %r counted as 'other'", subtype)
        return "other"
    return cat


@dataclass(frozen=True)
class LandUseProfile:
    tile: TileId
    fractions: Mapping[str, float] = field(default_factory=dict)

    def share(self, category: str) -> float:
        return self.fractions.get(category, 0.0)


def profiles_from_areas(areas: Mapping[TileId, Mapping[str, float]]) -> list[LandUseProfile]:
    out = []
    for t in sorted(areas):
        total = sum(areas[t].values())
        if total <= 0:
            continue
        out.append(LandUseProfile(t, {k: areas[t].get(k, 0.0) / total for k in LANDUSE_CATEGORIES}))
    return out


def load_landuse(path: str | Path, *, subtype_column: str = "landuse",
                 area_column: str = "area", quadkey_column: str = "quadkey",
                 geometry_column: str = "wkt", level: int = PANEL_LEVEL,
                 delimiter: str = ",") -> list[LandUseProfile]:
    """Per-tile area fractions of the seven land-use categories.

    Rows either carry a WKT parcel polygon (split across the tiles it
    overlaps) or a tile quadkey with a parcel area.
    """
    areas: dict[TileId, dict[str, float]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        header = reader.fieldnames or []
        if subtype_column not in header:
            raise MissingColumn(subtype_column, path)
        use_geometry = geometry_column in header
        if not use_geometry:
            for col in (quadkey_column, area_column):
                if col not in header:
                    raise MissingColumn(col, path)
        for lineno, row in enumerate(reader, start=2):
            cat = landuse_category(row[subtype_column] or "")
            if use_geometry:
                for t, a in _parcel_tile_areas(row[geometry_column], lineno, level):
                    bucket = areas.setdefault(t, {})
                    bucket[cat] = bucket.get(cat, 0.0) + a
                continue
            try:
                t = parse_quadkey(row[quadkey_column].strip())
            except QuadkeyError as exc:
                raise BadQuadkey(lineno, str(exc)) from None
            try:
                a = float(row[area_column])
            except (TypeError, ValueError):
                raise BadValue(lineno, area_column, row[area_column]) from None
            if not math.isfinite(a) or a < 0:
                raise BadGeometry(f"row {lineno}", f"bad parcel area {a}")
            bucket = areas.setdefault(t, {})
            bucket[cat] = bucket.get(cat, 0.0) + a
    return profiles_from_areas(areas)


def _parcel_tile_areas(text: str, lineno: int, level: int) -> list[tuple[TileId, float]]:
    label = f"row {lineno}"
    try:
        g = shapely_wkt.loads(text)
    except (shapely.errors.ShapelyError, TypeError, ValueError) as exc:
        raise BadGeometry(label, str(exc)) from None
    if not isinstance(g, (Polygon, MultiPolygon)):
        raise BadGeometry(label, "parcel is not polygonal")
    g = normalize_polygon(g, label)
    minx, miny, maxx, maxy = g.bounds
    nw, se = tile_at(maxy, minx, level), tile_at(miny, maxx, level)
    out = []
    for x in range(nw.x, se.x + 1):
        for y in range(nw.y, se.y + 1):
            t = TileId(level, x, y)
            a = g.intersection(tile_polygon(t)).area
            if a > 0:
                out.append((t, a))
    return out


# -- indicators -------------------------------------------------------------

INDICATORS = ("pct_non_white", "pct_unemployed", "pct_below_poverty", "pct_disability",
              "pct_elderly", "pct_no_bachelor", "fire_risk_index")
PERCENT_INDICATORS = frozenset(INDICATORS[:-1])


@dataclass(frozen=True)
class IndicatorRow:
    tile: TileId
    values: Mapping[str, float | None]


def load_indicators(path: str | Path, *, quadkey_column: str = "quadkey",
                    indicators: Iterable[str] = INDICATORS,
                    delimiter: str = ",") -> list[IndicatorRow]:
    names = tuple(indicators)
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        header = reader.fieldnames or []
        for col in (quadkey_column, *names):
            if header and col not in header:
                raise MissingColumn(col, path)
        for lineno, row in enumerate(reader, start=2):
            try:
                t = parse_quadkey(row[quadkey_column].strip())
            except QuadkeyError as exc:
                raise BadQuadkey(lineno, str(exc)) from None
            values: dict[str, float | None] = {}
            for name in names:
                raw = (row[name] or "").strip()
                if not raw:
                    values[name] = None
                    continue
                try:
                    v = float(raw)
                except ValueError:
                    raise BadValue(lineno, name, raw) from None
                if not math.isfinite(v) or (name in PERCENT_INDICATORS and not 0 <= v <= 100):
                    raise OutOfRange(t, name, v)
                values[name] = v
            rows.append(IndicatorRow(t, values))
    return rows


def load_tile_cities(path: str | Path, *, quadkey_column: str = "quadkey",
                     city_column: str = "city_name", delimiter: str = ",") -> dict[TileId, str]:
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter=delimiter)
        for col in (quadkey_column, city_column):
            if col not in (reader.fieldnames or []):
                raise MissingColumn(col, path)
        for lineno, row in enumerate(reader, start=2):
            try:
                out[parse_quadkey(row[quadkey_column].strip())] = row[city_column].strip()
            except QuadkeyError as exc:
                raise BadQuadkey(lineno, str(exc)) from None
    return out
