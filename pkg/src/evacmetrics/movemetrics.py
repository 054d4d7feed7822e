"""Movement-side metrics: flow classification, OD flows, distances and destinations."""

from __future__ import annotations

import datetime as dt
import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import BadBandwidth, EmptyCategory, EmptyFlows, NoCoveredFlows
from .panels import MovementRecord, Panel, TimeSlice
from .stats import pearson, weighted_mean_std
from .tiles import TileId, tile_distance_km
from .zones import LANDUSE_CATEGORIES, LandUseProfile, TileZoneAssignment, ZoneKind

log = logging.getLogger(__name__)

DEFAULT_WINDOW_HOURS = 72.0
DEFAULT_SPLIT = (0.0, 5.0, 15.0)
FALLBACK_BANDWIDTH_KM = 1.0


class MovementType(str, Enum):
    WITHIN_ZONE = "within_zone"
    INBOUND_TO_ZONE = "inbound_to_zone"
    TOWARD_FIRE = "between_zones_toward_fire"
    EVACUATION = "evacuation"
    EXTERNAL_ONLY = "external_only"
    # zone-origin flow that would count as evacuation but falls outside the window
    OUTSIDE_WINDOW = "outside_window"


def in_evacuation_window(slice_: TimeSlice, order_time: dt.datetime | None,
                         window_hours: float, tz: str) -> bool:
    if order_time is None or window_hours <= 0:
        return False
    begin = order_time.timestamp()
    end = begin + window_hours * 3600.0
    return slice_.end(tz).timestamp() > begin and slice_.start(tz).timestamp() < end


def classify(origin: TileZoneAssignment, destination: TileZoneAssignment, slice_: TimeSlice,
             window_hours: float = DEFAULT_WINDOW_HOURS, tz: str = "America/Los_Angeles"
             ) -> MovementType:
    """Movement type of a trip from ``origin`` to ``destination`` during ``slice_``.

    Zone-origin trips leaving the zones, or moving to a zone tile farther
    from the perimeter centroid, are evacuations when the slice overlaps
    the window after the origin's order time.
    """
    if not origin.in_zone:
        return MovementType.INBOUND_TO_ZONE if destination.in_zone else MovementType.EXTERNAL_ONLY
    outward = (not destination.in_zone
               or destination.distance_to_perimeter_centroid > origin.distance_to_perimeter_centroid)
    if outward:
        if in_evacuation_window(slice_, origin.order_time, window_hours, tz):
            return MovementType.EVACUATION
        return MovementType.OUTSIDE_WINDOW
    if destination.distance_to_perimeter_centroid < origin.distance_to_perimeter_centroid:
        return MovementType.TOWARD_FIRE
    return MovementType.WITHIN_ZONE


@dataclass(frozen=True)
class ODFlow:
    origin: TileId
    destination: TileId
    baseline_trips: float
    crisis_trips: float
    distance_km: float
    type: MovementType = MovementType.EVACUATION

    @property
    def percent_change(self) -> float | None:
        if self.baseline_trips <= 0:
            return None
        return (self.crisis_trips - self.baseline_trips) / self.baseline_trips


def _external(tile: TileId) -> TileZoneAssignment:
    return TileZoneAssignment(tile, ZoneKind.EXTERNAL, None, None, math.nan)


def evacuation_flows(panel: Panel[MovementRecord],
                     assignments: Mapping[TileId, TileZoneAssignment], *,
                     window_hours: float = DEFAULT_WINDOW_HOURS) -> list[ODFlow]:
    """Per-OD trip totals over the records classified as evacuation.

    Tiles without an assignment count as external.  Null counts contribute
    nothing.
    """
    base: dict[tuple[TileId, TileId], float] = defaultdict(float)
    crisis: dict[tuple[TileId, TileId], float] = defaultdict(float)
    tz = panel.timezone
    for (key, s) in sorted(panel.records, key=lambda ks: (ks[0], ks[1].ordinal)):
        rec = panel.records[(key, s)]
        o = assignments.get(rec.origin) or _external(rec.origin)
        d = assignments.get(rec.destination) or _external(rec.destination)
        if classify(o, d, s, window_hours, tz) is not MovementType.EVACUATION:
            continue
        base[key] += rec.n_baseline or 0.0
        crisis[key] += rec.n_crisis or 0.0
    return [ODFlow(o, d, base[(o, d)], crisis[(o, d)], tile_distance_km(o, d))
            for (o, d) in sorted(crisis)]


@dataclass(frozen=True)
class FlowStats:
    total_crisis: float
    total_baseline: float
    volume_percent_change: float | None
    mean_distance_baseline_weighted: float | None
    mean_distance_crisis_weighted: float | None


def flow_stats(flows: Sequence[ODFlow]) -> FlowStats:
    if not flows:
        raise EmptyFlows()
    tb = math.fsum(f.baseline_trips for f in flows)
    tc = math.fsum(f.crisis_trips for f in flows)
    mb = math.fsum(f.baseline_trips * f.distance_km for f in flows) / tb if tb > 0 else None
    mc = math.fsum(f.crisis_trips * f.distance_km for f in flows) / tc if tc > 0 else None
    if mb is None and mc is None:
        raise EmptyFlows()
    return FlowStats(tc, tb, (tc - tb) / tb if tb > 0 else None, mb, mc)


def _covered(flows: Iterable[ODFlow], profiles: Mapping[TileId, LandUseProfile]) -> list[ODFlow]:
    out, missing = [], set()
    for f in flows:
        if f.destination in profiles:
            out.append(f)
        else:
            missing.add(f.destination)
    if missing:
        log.info("%d destination tiles lack a land-use profile; their flows are excluded",
                 len(missing))
    return out


def destination_share(flows: Iterable[ODFlow],
                      profiles: Mapping[TileId, LandUseProfile]) -> dict[str, float]:
    """Trip-weighted land-use composition of flow destinations."""
    covered = _covered(flows, profiles)
    total = math.fsum(f.crisis_trips for f in covered)
    if not covered or total <= 0:
        raise NoCoveredFlows()
    # normalize weights first so tiny trip counts cannot underflow against a share
    weights = [(f.crisis_trips / total, profiles[f.destination]) for f in covered]
    return {k: math.fsum(w * prof.share(k) for w, prof in weights) for k in LANDUSE_CATEGORIES}


def mean_distance_by_landuse(flows: Iterable[ODFlow], profiles: Mapping[TileId, LandUseProfile],
                             category: str) -> tuple[float, float]:
    """Crisis-trip-weighted mean and std of distance over flows whose destination
    contains ``category`` at all.  Weights are not scaled by the land-use share."""
    members = [f for f in _covered(flows, profiles)
               if profiles[f.destination].share(category) > 0 and f.crisis_trips > 0]
    if not members:
        raise EmptyCategory(category)
    return weighted_mean_std([f.distance_km for f in members], [f.crisis_trips for f in members])


def share_distance_pairs(flows: Iterable[ODFlow], profiles: Mapping[TileId, LandUseProfile],
                         category: str) -> list[tuple[TileId, float, float]]:
    """Per destination tile: (tile, land-use share of ``category``, mean trip distance)."""
    by_dest: dict[TileId, list[ODFlow]] = defaultdict(list)
    for f in _covered(flows, profiles):
        if f.crisis_trips > 0:
            by_dest[f.destination].append(f)
    out = []
    for t in sorted(by_dest):
        fs = by_dest[t]
        d = math.fsum(f.crisis_trips * f.distance_km for f in fs) / math.fsum(f.crisis_trips for f in fs)
        out.append((t, profiles[t].share(category), d))
    return out


def share_distance_correlation(pairs: Sequence[tuple[TileId, float, float]]) -> tuple[float, float]:
    """Pearson r (and p) between land-use share and mean trip distance across
    destination tiles, taking the output of ``share_distance_pairs``."""
    return pearson([p[1] for p in pairs], [p[2] for p in pairs])


@dataclass(frozen=True)
class DensityCurve:
    grid: np.ndarray
    density: np.ndarray
    bandwidth: float

    def peaks(self) -> list[float]:
        """Grid locations of strict local maxima."""
        d = self.density
        idx = [i for i in range(1, len(d) - 1) if d[i] > d[i - 1] and d[i] >= d[i + 1]]
        return [float(self.grid[i]) for i in idx]


def _weighted_quantile(values: np.ndarray, weights: np.ndarray, q: float) -> float:
    order = np.argsort(values)
    v, w = values[order], weights[order]
    cw = np.cumsum(w) - 0.5 * w
    return float(np.interp(q * w.sum(), cw, v))


def silverman_bandwidth(values: Sequence[float], weights: Sequence[float]) -> float:
    """0.9 * min(sd, IQR/1.34) * n_eff^(-1/5) on the weighted sample.

    Quartiles use midpoint (Hazen) plotting positions, which reduce to the
    usual Hazen quantiles for unit weights.
    """
    v = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    n_eff = w.sum() ** 2 / np.dot(w, w)
    _, sd = weighted_mean_std(v, w)
    iqr = _weighted_quantile(v, w, 0.75) - _weighted_quantile(v, w, 0.25)
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    h = 0.9 * spread * n_eff ** -0.2
    return h if h > 0 else FALLBACK_BANDWIDTH_KM


def distance_density(flows: Sequence[ODFlow], bandwidth: float | None = None,
                     grid_size: int = 512) -> DensityCurve:
    """Crisis-trip-weighted Gaussian KDE of flow distance on a uniform grid
    extending five bandwidths past the data."""
    flows = [f for f in flows if f.crisis_trips > 0]
    if not flows:
        raise EmptyFlows()
    d = np.array([f.distance_km for f in flows])
    w = np.array([f.crisis_trips for f in flows])
    h = silverman_bandwidth(d, w) if bandwidth is None else float(bandwidth)
    if not (h > 0 and math.isfinite(h)):
        raise BadBandwidth(h)
    grid = np.linspace(d.min() - 5 * h, d.max() + 5 * h, grid_size)
    z = (grid[:, None] - d[None, :]) / h
    dens = (np.exp(-0.5 * z * z) @ w) / (w.sum() * h * math.sqrt(2 * math.pi))
    return DensityCurve(grid, dens, h)


@dataclass(frozen=True)
class DistanceSplit:
    bounds: tuple[float, float, float]
    short: tuple[ODFlow, ...]
    long: tuple[ODFlow, ...]
    short_shares: Mapping[str, float] | None
    long_shares: Mapping[str, float] | None


def split_by_distance(flows: Iterable[ODFlow], profiles: Mapping[TileId, LandUseProfile],
                      bounds: tuple[float, float, float] = DEFAULT_SPLIT) -> DistanceSplit:
    """Short bucket is [lo, mid), long bucket [mid, hi]; flows outside are left out."""
    lo, mid, hi = bounds
    if not lo <= mid <= hi:
        raise ValueError(f"split bounds must be ordered, got {bounds}")
    short = tuple(f for f in flows if lo <= f.distance_km < mid)
    long = tuple(f for f in flows if mid <= f.distance_km <= hi)

    def shares(bucket):
        try:
            return destination_share(bucket, profiles)
        except NoCoveredFlows:
            return None

    return DistanceSplit((lo, mid, hi), short, long, shares(short), shares(long))


OTHER_CITY = "other"


@dataclass(frozen=True)
class CityCell:
    baseline_trips: float
    crisis_trips: float

    @property
    def percent_change(self) -> float | None:
        if self.baseline_trips <= 0:
            return None
        return (self.crisis_trips - self.baseline_trips) / self.baseline_trips


def city_aggregate(flows: Iterable[ODFlow],
                   cities: Mapping[TileId, str]) -> dict[tuple[str, str], CityCell]:
    """Sum trips per (origin city, destination city); unmapped tiles go to "other"."""
    base: dict[tuple[str, str], float] = defaultdict(float)
    crisis: dict[tuple[str, str], float] = defaultdict(float)
    for f in sorted(flows, key=lambda f: (f.origin, f.destination)):
        key = (cities.get(f.origin, OTHER_CITY), cities.get(f.destination, OTHER_CITY))
        base[key] += f.baseline_trips
        crisis[key] += f.crisis_trips
    return {k: CityCell(base[k], crisis[k]) for k in sorted(base)}
