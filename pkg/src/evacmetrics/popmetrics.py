"""Population-side evacuation metrics computed from a cleaned population panel.

Conventions:
  * elapsed time for delay is measured from the order time to the slice
    midpoint (slice start + 4 h), clamped at zero;
  * a slice belongs to a time window [begin, end) when its own
    [start, end) interval intersects it.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import (EmptyGroup, EmptyTileSet, MissingCell, NoDepartures, NoOrderTime,
                     TStarOutOfWindow, ZeroBaseline)
from .panels import Panel, PopulationRecord, TimeSlice, hours_between, slices_overlapping
from .stats import pearson
from .tiles import TileId
from .zones import DamageSummary, IndicatorRow, TileZoneAssignment, ZoneKind

DEFAULT_HORIZON_HOURS = 72.0
INFLUX_THRESHOLD = 0.20


@dataclass(frozen=True)
class MetricSeries:
    tile: TileId
    kind: str
    values: Mapping[TimeSlice, float]


@dataclass(frozen=True)
class TileScalars:
    tile: TileId
    compliance_at_tstar: float | None
    dedi: int | None
    total_delay: float | None
    kind: ZoneKind = ZoneKind.EXTERNAL
    wave: int | None = None
    distance_km: float | None = None
    percent_change_at_tstar: float | None = None


def _counts(panel: Panel[PopulationRecord], tile: TileId, s: TimeSlice) -> tuple[float, float]:
    rec = panel.get(tile, s)
    if rec is None or not rec.complete:
        raise MissingCell(tile, s)
    return rec.n_baseline, rec.n_crisis


def percent_from_counts(baseline: float, crisis: float) -> float:
    return (crisis - baseline) / baseline


def compliance_from_counts(baseline: float, crisis: float) -> float:
    return abs((crisis - baseline) / baseline) if crisis < baseline else 0.0


def departure_from_counts(baseline: float, crisis: float) -> float:
    return max(baseline - crisis, 0.0)


def percent_change(panel: Panel[PopulationRecord], tile: TileId, slice_: TimeSlice) -> float:
    base, crisis = _counts(panel, tile, slice_)
    if base == 0:
        raise ZeroBaseline(tile, slice_)
    return percent_from_counts(base, crisis)


def compliance(panel: Panel[PopulationRecord], tile: TileId, slice_: TimeSlice) -> float:
    base, crisis = _counts(panel, tile, slice_)
    if base == 0:
        raise ZeroBaseline(tile, slice_)
    return compliance_from_counts(base, crisis)


def compliance_series(panel: Panel[PopulationRecord], tile: TileId) -> MetricSeries:
    return MetricSeries(tile, "compliance",
                        {s: compliance(panel, tile, s) for s in panel.slices()})


def departure(panel: Panel[PopulationRecord], tile: TileId, slice_: TimeSlice) -> float:
    return departure_from_counts(*_counts(panel, tile, slice_))


def select_tstar(panel: Panel[PopulationRecord], tiles: Iterable[TileId],
                 explicit: TimeSlice | None = None) -> TimeSlice:
    """Reference slice for the fire-level compliance scalar.

    With ``explicit`` the configured slice is returned (after checking it
    lies in the panel window); otherwise the slice with the largest total
    departure over ``tiles``, ties going to the earliest slice.
    """
    tiles = sorted(set(tiles))
    if not tiles:
        raise EmptyTileSet()
    window = panel.slices()
    if explicit is not None:
        if explicit not in window:
            raise TStarOutOfWindow(explicit)
        return explicit
    best, best_total = None, -1.0
    for s in window:
        total = sum(departure(panel, t, s) for t in tiles)
        if total > best_total:
            best, best_total = s, total
    if best is None:
        raise TStarOutOfWindow("<empty window>")
    return best


def dedi(compliance_at_tstar: float, damage_rate: float | None) -> int | None:
    """1 when damage strictly exceeds compliance; None when damage is unknown."""
    if damage_rate is None:
        return None
    return 1 if damage_rate > compliance_at_tstar else 0


def cumulative_from_departures(departures: Sequence[float]) -> list[float]:
    total = sum(departures)
    out, running = [], 0.0
    for d in departures:
        running += d
        out.append(100.0 * running / total)
    return out


def cumulative_curve(panel: Panel[PopulationRecord], tile: TileId,
                     begin: dt.datetime, end: dt.datetime) -> MetricSeries:
    """Cumulative departure percentage over the slices intersecting [begin, end)."""
    window = slices_overlapping(panel.slices(), begin, end, panel.timezone)
    deps = [departure(panel, tile, s) for s in window]
    if not deps or sum(deps) <= 0:
        raise NoDepartures(tile)
    return MetricSeries(tile, "cumulative_departure_pct",
                        dict(zip(window, cumulative_from_departures(deps))))


def elapsed_hours(slice_: TimeSlice, order_time: dt.datetime, tz: str) -> float:
    return max(hours_between(order_time, slice_.midpoint(tz)), 0.0)


def total_delay(panel: Panel[PopulationRecord], tile: TileId, order_time: dt.datetime | None,
                end: dt.datetime) -> float:
    """Departure-weighted person-hours after the order, summed up to ``end``."""
    if order_time is None:
        raise NoOrderTime(tile)
    if end < order_time:
        raise ValueError(f"analysis end {end} precedes order time {order_time}")
    tz = panel.timezone
    return sum(departure(panel, tile, s) * elapsed_hours(s, order_time, tz)
               for s in slices_overlapping(panel.slices(), order_time, end, tz))


def influx_tiles(panel: Panel[PopulationRecord], tiles: Iterable[TileId], tstar: TimeSlice,
                 threshold: float = INFLUX_THRESHOLD) -> list[tuple[TileId, float]]:
    out = []
    for t in sorted(set(tiles)):
        base, crisis = _counts(panel, t, tstar)
        if base > 0:
            p = percent_from_counts(base, crisis)
            if p > threshold:
                out.append((t, p))
    return out


def tile_scalars(panel: Panel[PopulationRecord], assignments: Iterable[TileZoneAssignment],
                 tstar: TimeSlice, end: dt.datetime,
                 damage: Iterable[DamageSummary] = (), *,
                 include_warning_delay: bool = False) -> list[TileScalars]:
    """Per-tile E(t*), DEDI flag and total delay for every assigned tile in the panel.

    Tiles with a zero baseline at t* get no compliance.  Delay is reported
    for order-zone tiles (and warning tiles when enabled) only.
    """
    damage_by_tile = {d.tile: d.damage_rate for d in damage}
    present = set(panel.keys())
    out = []
    for a in sorted(assignments, key=lambda a: a.tile):
        if a.tile not in present:
            continue
        base, crisis = _counts(panel, a.tile, tstar)
        e = compliance_from_counts(base, crisis) if base > 0 else None
        p = percent_from_counts(base, crisis) if base > 0 else None
        flag = dedi(e, damage_by_tile.get(a.tile)) if e is not None else None
        delay = None
        if a.order_time is not None and (a.kind is ZoneKind.ORDER
                                         or (include_warning_delay and a.kind is ZoneKind.WARNING)):
            if end >= a.order_time:
                delay = total_delay(panel, a.tile, a.order_time, end)
            else:
                delay = 0.0
        out.append(TileScalars(a.tile, e, flag, delay, a.kind, a.wave,
                               a.distance_to_perimeter_centroid, p))
    return out


def compliance_distance_correlation(scalars: Iterable[TileScalars],
                                    assignments: Iterable[TileZoneAssignment]) -> tuple[float, float]:
    dist = {a.tile: a.distance_to_perimeter_centroid for a in assignments}
    pairs = [(dist[s.tile], s.compliance_at_tstar) for s in scalars
             if s.compliance_at_tstar is not None and s.tile in dist]
    return pearson([d for d, _ in pairs], [e for _, e in pairs])


@dataclass(frozen=True)
class GroupProfile:
    means: Mapping[int, Mapping[str, float | None]]
    sizes: Mapping[int, int] = field(default_factory=dict)


def dedi_group_profile(scalars: Iterable[TileScalars],
                       indicators: Iterable[IndicatorRow]) -> GroupProfile:
    """Indicator means for DEDI=1 tiles versus DEDI=0 tiles."""
    by_tile = {row.tile: row.values for row in indicators}
    names = sorted({n for v in by_tile.values() for n in v})
    groups: dict[int, list[Mapping[str, float | None]]] = {1: [], 0: []}
    for s in scalars:
        if s.dedi is not None and s.tile in by_tile:
            groups[s.dedi].append(by_tile[s.tile])
    for which in (1, 0):
        if not groups[which]:
            raise EmptyGroup(which)
    means: dict[int, dict[str, float | None]] = {}
    for which, rows in groups.items():
        means[which] = {}
        for n in names:
            vals = [r[n] for r in rows if r.get(n) is not None]
            means[which][n] = sum(vals) / len(vals) if vals else None
    return GroupProfile(means, {w: len(r) for w, r in groups.items()})


def zone_departures(panel: Panel[PopulationRecord], tiles: Iterable[TileId],
                    begin: dt.datetime, end: dt.datetime) -> dict[TimeSlice, float]:
    """Summed departure series of a tile group over [begin, end)."""
    window = slices_overlapping(panel.slices(), begin, end, panel.timezone)
    tiles = sorted(set(tiles))
    return {s: sum(departure(panel, t, s) for t in tiles) for s in window}


def first_crossing(curve: Mapping[TimeSlice, float], level: float = 50.0) -> TimeSlice | None:
    for s in sorted(curve):
        if curve[s] >= level:
            return s
    return None
