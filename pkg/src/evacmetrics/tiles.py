"""Bing tile (quadkey) arithmetic and great-circle distances.

Tile bounds follow the Bing Maps tile system: 256-pixel tiles on a
spherical Web-Mercator map, with quadkey digits interleaving the x and y
bits from the most significant level down.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Final

from .errors import EmptyKey, InvalidDigit, KeyTooLong

MAX_LEVEL: Final[int] = 23
PANEL_LEVEL: Final[int] = 14
MAX_LAT: Final[float] = 85.05112878
EARTH_RADIUS_KM: Final[float] = 6371.0088
TILE_PIXELS: Final[int] = 256


@dataclass(frozen=True, order=True)
class TileId:
    level: int
    x: int
    y: int

    def __post_init__(self) -> None:
        if not 1 <= self.level <= MAX_LEVEL:
            raise ValueError(f"tile level {self.level} outside [1, {MAX_LEVEL}]")
        n = 1 << self.level
        if not (0 <= self.x < n and 0 <= self.y < n):
            raise ValueError(f"tile ({self.x}, {self.y}) outside level-{self.level} grid")

    @cached_property
    def quadkey(self) -> str:
        return format_quadkey(self)

    def __str__(self) -> str:
        return self.quadkey


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.lat) or not math.isfinite(self.lon):
            raise ValueError("coordinates must be finite")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude {self.lon} outside [-180, 180]")
        object.__setattr__(self, "lat", min(max(self.lat, -MAX_LAT), MAX_LAT))


@dataclass(frozen=True)
class BoundingBox:
    min: GeoPoint
    max: GeoPoint

    def contains(self, p: GeoPoint) -> bool:
        return (self.min.lat <= p.lat <= self.max.lat
                and self.min.lon <= p.lon <= self.max.lon)

    def interior_contains(self, p: GeoPoint) -> bool:
        return (self.min.lat < p.lat < self.max.lat
                and self.min.lon < p.lon < self.max.lon)


def parse_quadkey(key: str) -> TileId:
    if not key:
        raise EmptyKey()
    if len(key) > MAX_LEVEL:
        raise KeyTooLong(len(key))
    x = y = 0
    for pos, ch in enumerate(key):
        if ch not in "0123":
            raise InvalidDigit(pos)
        digit = ord(ch) - 48
        x = (x << 1) | (digit & 1)
        y = (y << 1) | (digit >> 1)
    return TileId(len(key), x, y)


def format_quadkey(tile: TileId) -> str:
    digits = []
    for i in range(tile.level - 1, -1, -1):
        mask = 1 << i
        digit = 0
        if tile.x & mask:
            digit |= 1
        if tile.y & mask:
            digit |= 2
        digits.append("0123"[digit])
    return "".join(digits)


def _pixel_to_latlon(px: float, py: float, level: int) -> tuple[float, float]:
    size = TILE_PIXELS << level
    x = px / size - 0.5
    y = 0.5 - py / size
    lat = 90.0 - 360.0 * math.atan(math.exp(-y * 2.0 * math.pi)) / math.pi
    lon = 360.0 * x
    return lat, lon


def tile_bounds(tile: TileId) -> BoundingBox:
    px0, py0 = tile.x * TILE_PIXELS, tile.y * TILE_PIXELS
    north, west = _pixel_to_latlon(px0, py0, tile.level)
    south, east = _pixel_to_latlon(px0 + TILE_PIXELS, py0 + TILE_PIXELS, tile.level)
    return BoundingBox(GeoPoint(south, west), GeoPoint(north, east))


def tile_centroid(tile: TileId) -> GeoPoint:
    """Midpoint of the tile's bounds in latitude and longitude (not the
    Mercator midpoint)."""
    b = tile_bounds(tile)
    return GeoPoint((b.min.lat + b.max.lat) / 2.0, (b.min.lon + b.max.lon) / 2.0)


def tile_at(lat: float, lon: float, level: int = PANEL_LEVEL) -> TileId:
    """Tile containing a WGS84 point; points on a tile edge go to the east/south tile."""
    lat = min(max(lat, -MAX_LAT), MAX_LAT)
    sin_lat = math.sin(math.radians(lat))
    fx = (lon + 180.0) / 360.0
    fy = 0.5 - math.log((1.0 + sin_lat) / (1.0 - sin_lat)) / (4.0 * math.pi)
    n = 1 << level
    x = min(max(int(math.floor(fx * n)), 0), n - 1)
    y = min(max(int(math.floor(fy * n)), 0), n - 1)
    return TileId(level, x, y)


def haversine_km(a: GeoPoint, b: GeoPoint) -> float:
    lat1, lat2 = math.radians(a.lat), math.radians(b.lat)
    dlat = lat2 - lat1
    dlon = math.radians(b.lon - a.lon)
    h = math.sin(dlat / 2.0) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def tile_distance_km(a: TileId, b: TileId) -> float:
    """Centroid-to-centroid distance; exactly 0 for the same tile."""
    if a == b:
        return 0.0
    return haversine_km(tile_centroid(a), tile_centroid(b))
