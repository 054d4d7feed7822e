"""Synthetic evacuation scenarios with exact ground truth.

A scenario places agents on a rectangular tile grid, lets order/warning
zone agents leave home after their tile's order time, and counts the
resulting population and movement panels exactly.  ``privatize`` then
applies the upstream provider's published safeguards (spatial smoothing,
crisis-count noise, small-count suppression), and ``oracle_metrics``
recomputes every metric by counting agents directly, without panels.

Counting conventions: an agent is absent from home (and present at its
destination) from its departure slice onward and never returns within
the window.  Routine trips are round trips that do not move population;
they give the movement panel a nonzero steady-state baseline.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

import numpy as np
from shapely.geometry import Polygon, box

from .errors import InvalidConfig
from .movemetrics import ODFlow, MovementType, classify
from .panels import (DEFAULT_TIMEZONE, MovementRecord, Panel, PopulationRecord,
                     TimeSlice, hours_between, slice_range)
from .ingest import parse_timestamp, write_movement, write_population
from .tiles import TileId, parse_quadkey, tile_bounds, tile_distance_km
from .zones import (LANDUSE_CATEGORIES, LandUseProfile, TileZoneAssignment, Zone, ZoneKind,
                    ZoneMap, assign_tiles, normalize_polygon, tile_polygon)

DELAY_FAMILIES = ("rayleigh", "exponential", "fixed")


@dataclass(frozen=True)
class DelaySpec:
    family: str = "rayleigh"
    scale_hours: float = 3.0

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.family == "rayleigh":
            return rng.rayleigh(self.scale_hours, n)
        if self.family == "exponential":
            return rng.exponential(self.scale_hours, n)
        return np.full(n, float(self.scale_hours))


@dataclass(frozen=True)
class ZoneSpec:
    kind: ZoneKind
    issuance_time: dt.datetime
    polygon: Polygon
    compliance: float = 0.8
    delay: DelaySpec = DelaySpec()
    name: str = ""


@dataclass(frozen=True)
class PrivacyParams:
    threshold: float = 10.0
    noise_sigma: float = 2.0
    smoothing_radius: float = 1.0
    smoothing_power: float = 2.0


@dataclass(frozen=True)
class ScenarioConfig:
    origin: TileId
    width: int
    height: int
    start_date: dt.date
    days: int
    fire_start: dt.datetime
    perimeter: Polygon
    zones: tuple[ZoneSpec, ...]
    population: Mapping[TileId, int]
    compliance_overrides: Mapping[TileId, float] = field(default_factory=dict)
    landuse: Mapping[TileId, Mapping[str, float]] = field(default_factory=dict)
    destination_weights: Mapping[str, float] = field(default_factory=dict)
    distance_decay_km: float | None = None
    routine_trip_rate: float = 0.0
    routine_radius: int = 1
    damage: Mapping[TileId, tuple[str, ...]] = field(default_factory=dict)
    privacy: PrivacyParams = PrivacyParams()
    timezone: str = DEFAULT_TIMEZONE
    window_hours: float = 72.0
    horizon_hours: float = 72.0
    seed: int = 0

    @property
    def tiles(self) -> list[TileId]:
        return [TileId(self.origin.level, self.origin.x + c, self.origin.y + r)
                for r in range(self.height) for c in range(self.width)]

    @property
    def window(self) -> tuple[TimeSlice, TimeSlice]:
        first = TimeSlice(self.start_date, 0)
        return first, first.shift(3 * self.days - 1)

    @property
    def analysis_end(self) -> dt.datetime:
        return self.fire_start + dt.timedelta(hours=self.horizon_hours)


# -- config parsing ---------------------------------------------------------

_CONFIG_KEYS = {"level", "origin_quadkey", "width", "height", "start_date", "days",
                "fire_start", "perimeter", "zones", "population", "compliance_overrides",
                "landuse", "destination_weights", "distance_decay_km", "routine_trip_rate",
                "routine_radius", "damage", "privacy", "timezone", "window_hours",
                "horizon_hours", "seed"}


def _grid_tile(key: str, origin: TileId, width: int, height: int, fld: str) -> TileId:
    try:
        if "," in key:
            c, r = (int(v) for v in key.split(","))
            if not (0 <= c < width and 0 <= r < height):
                raise ValueError("outside grid")
            return TileId(origin.level, origin.x + c, origin.y + r)
        t = parse_quadkey(key)
    except ValueError as exc:
        raise InvalidConfig(fld, f"bad tile key {key!r}: {exc}") from None
    if t.level != origin.level:
        raise InvalidConfig(fld, f"tile {key} is not at level {origin.level}")
    return t


def _geometry(spec: Any, origin: TileId, fld: str) -> Polygon:
    """A polygon from ``{"tile_rect": [c0, r0, c1, r1]}`` (inclusive, grid-relative)
    or ``{"coordinates": [[lon, lat], ...]}``."""
    if not isinstance(spec, dict):
        raise InvalidConfig(fld, "expected an object with tile_rect or coordinates")
    if "tile_rect" in spec:
        try:
            c0, r0, c1, r1 = (int(v) for v in spec["tile_rect"])
        except (TypeError, ValueError):
            raise InvalidConfig(fld, "tile_rect needs four integers") from None
        if c1 < c0 or r1 < r0:
            raise InvalidConfig(fld, "tile_rect corners out of order")
        nw = tile_bounds(TileId(origin.level, origin.x + c0, origin.y + r0))
        se = tile_bounds(TileId(origin.level, origin.x + c1, origin.y + r1))
        return box(nw.min.lon, se.min.lat, se.max.lon, nw.max.lat)
    if "coordinates" in spec:
        try:
            return normalize_polygon(Polygon(spec["coordinates"]), fld)
        except (ValueError, TypeError) as exc:
            raise InvalidConfig(fld, str(exc)) from None
    raise InvalidConfig(fld, "expected tile_rect or coordinates")


def _prob(value: Any, fld: str) -> float:
    try:
        p = float(value)
    except (TypeError, ValueError):
        raise InvalidConfig(fld, "not a number") from None
    if not 0.0 <= p <= 1.0:
        raise InvalidConfig(fld, f"probability {p} outside [0, 1]")
    return p


def _time(value: Any, fld: str, tz: str) -> dt.datetime:
    try:
        return parse_timestamp(str(value), tz)
    except ValueError:
        raise InvalidConfig(fld, f"bad timestamp {value!r}") from None


def parse_config(doc: Mapping[str, Any]) -> ScenarioConfig:
    """Validate a scenario document (the JSON config's parsed form)."""
    unknown = set(doc) - _CONFIG_KEYS
    if unknown:
        raise InvalidConfig(sorted(unknown)[0], "unknown key")
    for req in ("origin_quadkey", "width", "height", "start_date", "days", "fire_start",
                "perimeter", "zones", "population"):
        if req not in doc:
            raise InvalidConfig(req, "required")
    tz = str(doc.get("timezone", DEFAULT_TIMEZONE))
    try:
        origin = parse_quadkey(str(doc["origin_quadkey"]))
    except ValueError as exc:
        raise InvalidConfig("origin_quadkey", str(exc)) from None
    if "level" in doc and int(doc["level"]) != origin.level:
        raise InvalidConfig("level", "does not match origin_quadkey length")
    width, height, days = int(doc["width"]), int(doc["height"]), int(doc["days"])
    n = 1 << origin.level
    if width < 1 or height < 1 or origin.x + width > n or origin.y + height > n:
        raise InvalidConfig("width", "grid must be nonempty and inside the tile pyramid")
    if days < 1:
        raise InvalidConfig("days", "must be at least 1")
    try:
        start_date = dt.date.fromisoformat(str(doc["start_date"]))
    except ValueError:
        raise InvalidConfig("start_date", "expected YYYY-MM-DD") from None

    def tile(key: str, fld: str) -> TileId:
        return _grid_tile(key, origin, width, height, fld)

    zones = []
    for i, z in enumerate(doc["zones"]):
        fld = f"zones[{i}]"
        try:
            kind = ZoneKind(z.get("kind"))
        except ValueError:
            raise InvalidConfig(fld + ".kind", f"unknown kind {z.get('kind')!r}") from None
        if kind is ZoneKind.EXTERNAL:
            raise InvalidConfig(fld + ".kind", "external is not a zone kind")
        if "issuance_time" not in z:
            raise InvalidConfig(fld + ".issuance_time", "required")
        d = z.get("delay", {})
        delay = DelaySpec(str(d.get("family", "rayleigh")), float(d.get("scale_hours", 3.0)))
        if delay.family not in DELAY_FAMILIES or delay.scale_hours < 0:
            raise InvalidConfig(fld + ".delay", f"family must be one of {DELAY_FAMILIES}, scale >= 0")
        zones.append(ZoneSpec(kind, _time(z["issuance_time"], fld + ".issuance_time", tz),
                              _geometry(z, origin, fld), _prob(z.get("compliance", 0.8), fld + ".compliance"),
                              delay, str(z.get("name", f"zone{i}"))))

    pop_doc = doc["population"]
    if isinstance(pop_doc, (int, float)):
        pop_doc = {"default": pop_doc}
    default = pop_doc.get("default", 0)
    population: dict[TileId, int] = {}
    grid = [TileId(origin.level, origin.x + c, origin.y + r)
            for r in range(height) for c in range(width)]
    for t in grid:
        population[t] = default
    for key, v in pop_doc.get("tiles", {}).items():
        population[tile(key, "population.tiles")] = v
    for t, v in population.items():
        if not isinstance(v, int) or isinstance(v, bool) or v < 0:
            raise InvalidConfig("population", f"count for {t} must be a nonnegative integer")

    overrides = {tile(k, "compliance_overrides"): _prob(v, "compliance_overrides")
                 for k, v in doc.get("compliance_overrides", {}).items()}

    lu_doc = doc.get("landuse", {"default": {"residential": 1.0}})
    landuse: dict[TileId, dict[str, float]] = {}
    if lu_doc.get("mode") == "random":
        conc = float(lu_doc.get("concentration", 1.0))
        rng = np.random.default_rng(int(lu_doc.get("seed", 0)))
        sparsity = float(lu_doc.get("sparsity", 0.0))
        if not 0.0 <= sparsity < 1.0:
            raise InvalidConfig("landuse.sparsity", "must lie in [0, 1)")
        for t in grid:
            frac = rng.dirichlet([conc] * 7)
            # drop categories at random but keep at least the largest
            keep = rng.random(7) >= sparsity
            keep[int(np.argmax(frac))] = True
            frac = np.where(keep, frac, 0.0)
            landuse[t] = {k: float(v / frac.sum()) for k, v in zip(LANDUSE_CATEGORIES, frac) if v > 0}
    else:
        base = lu_doc.get("default", {"residential": 1.0})
        for t in grid:
            landuse[t] = dict(base)
        for key, v in lu_doc.get("tiles", {}).items():
            landuse[tile(key, "landuse.tiles")] = dict(v)
    for t, frac in landuse.items():
        if set(frac) - set(LANDUSE_CATEGORIES) or any(v < 0 for v in frac.values()):
            raise InvalidConfig("landuse", f"bad categories/values for {t}")

    weights = {k: float(v) for k, v in doc.get("destination_weights", {}).items()}
    if set(weights) - set(LANDUSE_CATEGORIES) or any(v < 0 for v in weights.values()):
        raise InvalidConfig("destination_weights", "unknown category or negative weight")

    damage = {}
    for key, labels in doc.get("damage", {}).items():
        damage[tile(key, "damage")] = tuple(str(x) for x in labels)

    priv = doc.get("privacy", {})
    unknown_priv = set(priv) - set(PrivacyParams.__dataclass_fields__)
    if unknown_priv:
        raise InvalidConfig("privacy", f"unknown keys {sorted(unknown_priv)}")
    privacy = PrivacyParams(**{k: float(v) for k, v in priv.items()})
    if privacy.threshold < 0 or privacy.noise_sigma < 0 or privacy.smoothing_radius < 0:
        raise InvalidConfig("privacy", "parameters must be nonnegative")

    rate = float(doc.get("routine_trip_rate", 0.0))
    if rate < 0:
        raise InvalidConfig("routine_trip_rate", "must be nonnegative")
    decay = doc.get("distance_decay_km")
    if decay is not None and float(decay) <= 0:
        raise InvalidConfig("distance_decay_km", "must be positive")

    return ScenarioConfig(
        origin=origin, width=width, height=height, start_date=start_date, days=days,
        fire_start=_time(doc["fire_start"], "fire_start", tz),
        perimeter=_geometry(doc["perimeter"], origin, "perimeter"),
        zones=tuple(zones), population=population, compliance_overrides=overrides,
        landuse=landuse, destination_weights=weights,
        distance_decay_km=None if decay is None else float(decay),
        routine_trip_rate=rate, routine_radius=int(doc.get("routine_radius", 1)),
        damage=damage, privacy=privacy, timezone=tz,
        window_hours=float(doc.get("window_hours", 72.0)),
        horizon_hours=float(doc.get("horizon_hours", 72.0)),
        seed=int(doc.get("seed", 0)),
    )


def load_config(path: str | Path) -> ScenarioConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InvalidConfig("<document>", str(exc)) from None
    return parse_config(doc)


# -- generation -------------------------------------------------------------

@dataclass(frozen=True)
class AgentTrace:
    agent_id: int
    home: TileId
    departure: TimeSlice | None
    destination: TileId | None


@dataclass(frozen=True)
class GroundTruth:
    config: ScenarioConfig
    zone_map: ZoneMap
    assignments: Mapping[TileId, TileZoneAssignment]
    agents: tuple[AgentTrace, ...]
    routine: Mapping[tuple[TileId, TileId, int], int]
    profiles: Mapping[TileId, LandUseProfile]

    @property
    def slices(self) -> list[TimeSlice]:
        return slice_range(*self.config.window)


@dataclass(frozen=True)
class RawPanels:
    population: Panel[PopulationRecord]
    movement: Panel[MovementRecord]


def zone_map(config: ScenarioConfig) -> ZoneMap:
    zones = tuple(Zone(z.polygon, z.kind, z.issuance_time, z.name) for z in config.zones)
    return ZoneMap(zones, config.perimeter, config.fire_start)


def _governing_zone(config: ScenarioConfig, tile: TileId) -> ZoneSpec | None:
    rect = tile_polygon(tile)
    best = None
    for z in config.zones:
        area = z.polygon.intersection(rect).area
        if area > 0:
            rank = (area, z.kind is ZoneKind.ORDER)
            if best is None or rank > best[0]:
                best = (rank, z)
    return best[1] if best else None


def _destination_probs(config: ScenarioConfig, home: TileId, candidates: list[TileId]) -> np.ndarray:
    w = np.empty(len(candidates))
    for i, c in enumerate(candidates):
        lu = config.landuse.get(c, {})
        weight = (sum(config.destination_weights.get(k, 0.0) * v for k, v in lu.items())
                  if config.destination_weights else 1.0)
        if config.distance_decay_km is not None:
            weight *= math.exp(-tile_distance_km(home, c) / config.distance_decay_km)
        w[i] = weight
    if w.sum() <= 0:
        w[:] = 1.0
    return w / w.sum()


def generate(config: ScenarioConfig, seed: int | None = None) -> tuple[GroundTruth, RawPanels]:
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    tz = config.timezone
    tiles = config.tiles
    zmap = zone_map(config)
    assignments = {a.tile: a for a in assign_tiles(zmap, tiles)}
    window = slice_range(*config.window)
    first, last = window[0].ordinal, window[-1].ordinal
    candidates = [t for t in tiles if assignments[t].kind is ZoneKind.EXTERNAL]

    agents: list[AgentTrace] = []
    next_id = 0
    for t in tiles:
        n = config.population.get(t, 0)
        a = assignments[t]
        spec = _governing_zone(config, t) if a.in_zone else None
        if n == 0:
            continue
        if spec is None or a.order_time is None:
            agents.extend(AgentTrace(next_id + i, t, None, None) for i in range(n))
            next_id += n
            continue
        p = config.compliance_overrides.get(t, spec.compliance)
        leaves = rng.random(n) < p
        delays = spec.delay.sample(rng, n)
        cands = [c for c in candidates if c != t]
        probs = _destination_probs(config, t, cands) if cands else None
        dests = rng.choice(len(cands), size=n, p=probs) if cands else np.zeros(n, dtype=int)
        for i in range(n):
            dep = dest = None
            if leaves[i] and cands:
                when = a.order_time + dt.timedelta(hours=float(delays[i]))
                s = TimeSlice.containing(when, tz)
                if first <= s.ordinal <= last:
                    dep, dest = s, cands[int(dests[i])]
            agents.append(AgentTrace(next_id + i, t, dep, dest))
        next_id += n

    routine: dict[tuple[TileId, TileId, int], int] = {}
    if config.routine_trip_rate > 0:
        tile_set = set(tiles)
        r = config.routine_radius
        for t in tiles:
            n = config.population.get(t, 0)
            if n == 0:
                continue
            nbrs = [TileId(t.level, t.x + dx, t.y + dy)
                    for dy in range(-r, r + 1) for dx in range(-r, r + 1) if (dx, dy) != (0, 0)]
            nbrs = [b for b in nbrs if b in tile_set]
            if not nbrs:
                continue
            lam = n * config.routine_trip_rate / len(nbrs)
            for slot in range(3):
                counts = rng.poisson(lam, len(nbrs))
                for b, k in zip(nbrs, counts):
                    if k > 0:
                        routine[(t, b, slot)] = int(k)

    profiles = {t: LandUseProfile(t, {k: v / sum(lu.values()) for k, v in lu.items()})
                for t, lu in config.landuse.items() if sum(lu.values()) > 0}
    truth = GroundTruth(config, zmap, assignments, tuple(agents), routine, profiles)
    return truth, build_panels(truth)


def _presence(truth: GroundTruth) -> tuple[dict[TileId, int], dict[tuple[TileId, int], int]]:
    """Baseline residents per tile and crisis headcount change per (tile, slice ordinal)."""
    baseline: dict[TileId, int] = defaultdict(int)
    delta: dict[tuple[TileId, int], int] = defaultdict(int)
    for a in truth.agents:
        baseline[a.home] += 1
        if a.departure is not None:
            delta[(a.home, a.departure.ordinal)] -= 1
            delta[(a.destination, a.departure.ordinal)] += 1
    return baseline, delta


def build_panels(truth: GroundTruth) -> RawPanels:
    """Exact counting of the ground truth into ingest-schema panels."""
    cfg = truth.config
    window = truth.slices
    baseline, delta = _presence(truth)
    pop: dict = {}
    for t in cfg.tiles:
        b = baseline.get(t, 0)
        c = b
        for s in window:
            c += delta.get((t, s.ordinal), 0)
            pop[(t, s)] = PopulationRecord(t, s, float(b), float(c), float(c - b),
                                           100.0 * (c - b) / b if b > 0 else None, None)

    evac: dict[tuple[TileId, TileId, int], int] = defaultdict(int)
    for a in truth.agents:
        if a.departure is not None:
            evac[(a.home, a.destination, a.departure.ordinal)] += 1
    pairs = sorted({(o, d) for o, d, _ in truth.routine} | {(o, d) for o, d, _ in evac})
    move: dict = {}
    for o, d in pairs:
        for s in window:
            b = truth.routine.get((o, d, s.slot), 0)
            c = b + evac.get((o, d, s.ordinal), 0)
            move[((o, d), s)] = MovementRecord(o, d, s, float(b), float(c), float(c - b),
                                               100.0 * (c - b) / b if b > 0 else None, None)
    return RawPanels(Panel(pop, cfg.window, cfg.timezone), Panel(move, cfg.window, cfg.timezone))


# -- privatization ---------------------------------------------------------

def _smooth_population(panel: Panel[PopulationRecord], radius: float, power: float) -> dict:
    r = int(math.floor(radius))
    offsets = [(dx, dy, 1.0 / (1.0 + math.hypot(dx, dy)) ** power)
               for dy in range(-r, r + 1) for dx in range(-r, r + 1)
               if math.hypot(dx, dy) <= radius]
    by_slice: dict[TimeSlice, dict[tuple[int, int, int], float]] = defaultdict(dict)
    for (t, s), rec in panel.records.items():
        if rec.n_crisis is not None:
            by_slice[s][(t.level, t.x, t.y)] = rec.n_crisis
    out = {}
    for (t, s), rec in panel.records.items():
        if rec.n_crisis is None:
            out[(t, s)] = None
            continue
        grid = by_slice[s]
        num = den = 0.0
        for dx, dy, w in offsets:
            v = grid.get((t.level, t.x + dx, t.y + dy))
            if v is not None:
                num += w * v
                den += w
        out[(t, s)] = num / den
    return out


def _finish(base: float | None, crisis: float | None, threshold: float):
    """Suppression: drop the row when both sides are small, else null the small side."""
    small_b = base is None or base < threshold
    small_c = crisis is None or crisis < threshold
    if small_b and small_c:
        return None
    if small_b:
        base = None
    if small_c:
        crisis = None
    if base is None or crisis is None:
        return base, crisis, None, None
    return base, crisis, crisis - base, (100.0 * (crisis - base) / base if base > 0 else None)


def privatize(raw: RawPanels, params: PrivacyParams, seed: int = 0) -> RawPanels:
    """Smoothing (population crisis counts), Gaussian noise on crisis counts
    clamped at zero, then small-count suppression.  Baselines stay exact."""
    rng = np.random.default_rng([seed, 0x5EED])
    smoothed = (_smooth_population(raw.population, params.smoothing_radius, params.smoothing_power)
                if params.smoothing_radius > 0 else None)

    def noisy(value: float | None) -> float | None:
        if value is None or params.noise_sigma == 0:
            return value
        return max(value + float(rng.normal(0.0, params.noise_sigma)), 0.0)

    pop = {}
    for key in sorted(raw.population.records, key=lambda ks: (ks[0], ks[1].ordinal)):
        rec = raw.population.records[key]
        crisis = smoothed[key] if smoothed is not None else rec.n_crisis
        fin = _finish(rec.n_baseline, noisy(crisis), params.threshold)
        if fin is not None:
            b, c, diff, pct = fin
            pop[key] = replace(rec, n_baseline=b, n_crisis=c, n_difference=diff,
                               percent_change=pct, z_score=None)
    move = {}
    for key in sorted(raw.movement.records, key=lambda ks: (ks[0], ks[1].ordinal)):
        rec = raw.movement.records[key]
        fin = _finish(rec.n_baseline, noisy(rec.n_crisis), params.threshold)
        if fin is not None:
            b, c, diff, pct = fin
            move[key] = replace(rec, n_baseline=b, n_crisis=c, n_difference=diff,
                                percent_change=pct, z_score=None)
    p, m = raw.population, raw.movement
    return RawPanels(Panel(pop, p.window, p.timezone), Panel(move, m.window, m.timezone))


# -- oracle -----------------------------------------------------------------

@dataclass(frozen=True)
class OracleTables:
    tstar: TimeSlice
    baseline: Mapping[TileId, int]
    crisis: Mapping[tuple[TileId, TimeSlice], int]
    compliance: Mapping[tuple[TileId, TimeSlice], float]
    compliance_at_tstar: Mapping[TileId, float]
    curves: Mapping[TileId, Mapping[TimeSlice, float]]
    delays: Mapping[TileId, float]
    flows: tuple[ODFlow, ...]
    shares: Mapping[str, float] | None
    mean_distance: Mapping[str, float]
    damage_rate: Mapping[TileId, float]
    dedi: Mapping[TileId, int]

    @property
    def hotspots(self) -> set[TileId]:
        return {t for t, f in self.dedi.items() if f == 1}


_SEVERITY = {"no damage": 0.0, "affected": 0.05, "minor": 0.175, "major": 0.38, "destroyed": 0.75}


def oracle_metrics(truth: GroundTruth) -> OracleTables:
    """Every metric evaluated by counting agents and trips directly."""
    cfg = truth.config
    tz = cfg.timezone
    window = truth.slices
    order_tiles = sorted(t for t, a in truth.assignments.items() if a.kind is ZoneKind.ORDER)

    baseline = {t: 0 for t in cfg.tiles}
    for a in truth.agents:
        baseline[a.home] += 1
    crisis = {}
    for t in cfg.tiles:
        for s in window:
            crisis[(t, s)] = baseline[t]
    position = {s.ordinal: i for i, s in enumerate(window)}
    for a in truth.agents:
        if a.departure is None:
            continue
        for s in window[position[a.departure.ordinal]:]:
            crisis[(a.home, s)] -= 1
            crisis[(a.destination, s)] += 1

    def gone(t: TileId, s: TimeSlice) -> int:
        return max(baseline[t] - crisis[(t, s)], 0)

    compliance = {}
    for (t, s), c in crisis.items():
        b = baseline[t]
        if b > 0:
            compliance[(t, s)] = (b - c) / b if c < b else 0.0

    totals = [(sum(gone(t, s) for t in order_tiles), -s.ordinal, s) for s in window]
    tstar = max(totals)[2] if order_tiles else window[0]
    at_tstar = {t: compliance[(t, tstar)] for t in cfg.tiles if (t, tstar) in compliance}

    horizon = [s for s in window
               if s.end(tz).timestamp() > cfg.fire_start.timestamp()
               and s.start(tz).timestamp() < cfg.analysis_end.timestamp()]
    curves = {}
    for t, a in truth.assignments.items():
        if not a.in_zone:
            continue
        deps = [gone(t, s) for s in horizon]
        total = sum(deps)
        if total > 0:
            curves[t] = {s: 100.0 * sum(deps[:i + 1]) / total for i, s in enumerate(horizon)}

    delays = {}
    for t in order_tiles:
        t_r = truth.assignments[t].order_time
        total = 0.0
        for s in window:
            if s.end(tz) > t_r and s.start(tz) < cfg.analysis_end:
                total += gone(t, s) * max(hours_between(t_r, s.midpoint(tz)), 0.0)
        delays[t] = total

    cells: dict[tuple[TileId, TileId, TimeSlice], list[int]] = {}
    by_ordinal = {s.ordinal: s for s in window}
    for (o, d, slot), k in truth.routine.items():
        for s in window:
            if s.slot == slot:
                cells.setdefault((o, d, s), [0, 0])
                cells[(o, d, s)][0] += k
                cells[(o, d, s)][1] += k
    for a in truth.agents:
        if a.departure is not None:
            cell = cells.setdefault((a.home, a.destination, by_ordinal[a.departure.ordinal]), [0, 0])
            cell[1] += 1
    agg: dict[tuple[TileId, TileId], list[int]] = {}
    for (o, d, s), (b, c) in cells.items():
        kind = classify(truth.assignments[o], truth.assignments[d], s, cfg.window_hours, tz)
        if kind is MovementType.EVACUATION:
            acc = agg.setdefault((o, d), [0, 0])
            acc[0] += b
            acc[1] += c
    flows = tuple(ODFlow(o, d, float(b), float(c), tile_distance_km(o, d))
                  for (o, d), (b, c) in sorted(agg.items()))

    weighted = [f for f in flows if f.destination in truth.profiles]
    wsum = sum(f.crisis_trips for f in weighted)
    shares = None
    if wsum > 0:
        shares = {k: sum(f.crisis_trips * truth.profiles[f.destination].fractions.get(k, 0.0)
                         for f in weighted) / wsum for k in LANDUSE_CATEGORIES}
    mean_distance = {}
    for k in LANDUSE_CATEGORIES:
        members = [f for f in weighted
                   if truth.profiles[f.destination].fractions.get(k, 0.0) > 0 and f.crisis_trips > 0]
        w = sum(f.crisis_trips for f in members)
        if w > 0:
            mean_distance[k] = sum(f.crisis_trips * f.distance_km for f in members) / w

    damage_rate = {t: sum(_SEVERITY[lbl.split("(")[0].strip().lower()] for lbl in labels) / len(labels)
                   for t, labels in cfg.damage.items() if labels}
    dedi = {t: int(rate > at_tstar[t]) for t, rate in damage_rate.items() if t in at_tstar}

    return OracleTables(tstar, baseline, crisis, compliance, at_tstar, curves, delays, flows,
                        shares, mean_distance, damage_rate, dedi)


# -- files ------------------------------------------------------------------

def _ring(poly) -> list[list[float]]:
    return [[float(x), float(y)] for x, y in poly.exterior.coords]


def write_scenario(truth: GroundTruth, panels: RawPanels, outdir: str | Path) -> dict[str, Path]:
    """Write panels and context in the ingest formats, plus the agent traces."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = truth.config
    paths = {name: out / fname for name, fname in [
        ("population", "population.csv"), ("movement", "movement.csv"),
        ("zones", "zones.geojson"), ("landuse", "landuse.csv"), ("damage", "damage.csv"),
        ("tile_cities", "tile_cities.csv"), ("agents", "agents.csv")]}
    write_population(panels.population, paths["population"])
    write_movement(panels.movement, paths["movement"])
    features = [{"type": "Feature",
                 "properties": {"kind": "perimeter", "name": "perimeter",
                                "fire_start": cfg.fire_start.isoformat()},
                 "geometry": {"type": "Polygon", "coordinates": [_ring(cfg.perimeter)]}}]
    for z in cfg.zones:
        features.append({"type": "Feature",
                         "properties": {"kind": z.kind.value, "name": z.name,
                                        "issuance_time": z.issuance_time.isoformat()},
                         "geometry": {"type": "Polygon", "coordinates": [_ring(z.polygon)]}})
    with open(paths["zones"], "w", encoding="utf-8") as fh:
        json.dump({"type": "FeatureCollection", "features": features}, fh, indent=1)
    with open(paths["landuse"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["quadkey", "landuse", "area"])
        for t in sorted(cfg.landuse):
            for k in LANDUSE_CATEGORIES:
                v = cfg.landuse[t].get(k, 0.0)
                if v > 0:
                    w.writerow([t.quadkey, k, repr(float(v))])
    with open(paths["damage"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["latitude", "longitude", "damage"])
        for t in sorted(cfg.damage):
            b = tile_bounds(t)
            for i, label in enumerate(cfg.damage[t]):
                # spread points over the tile interior
                f = (i + 1) / (len(cfg.damage[t]) + 1)
                lat = b.min.lat + f * (b.max.lat - b.min.lat)
                lon = b.min.lon + (1 - f) * (b.max.lon - b.min.lon)
                w.writerow([repr(lat), repr(lon), label])
    with open(paths["tile_cities"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["quadkey", "city_name"])
        for t in cfg.tiles:
            col = (t.x - cfg.origin.x) * 2 // cfg.width
            row = (t.y - cfg.origin.y) * 2 // cfg.height
            w.writerow([t.quadkey, f"city_{'NS'[row]}{'WE'[col]}"])
    with open(paths["agents"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["agent_id", "home", "departure_slice", "destination"])
        for a in truth.agents:
            w.writerow([a.agent_id, a.home.quadkey, "" if a.departure is None else str(a.departure),
                        "" if a.destination is None else a.destination.quadkey])
    return paths


def write_oracle(tables: OracleTables, outdir: str | Path) -> dict[str, Path]:
    from .export import fmt, write_csv

    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"scalars": out / "oracle_scalars.csv", "curves": out / "oracle_curves.csv",
             "flows": out / "oracle_flows.csv", "shares": out / "oracle_shares.csv"}
    tiles = sorted(tables.compliance_at_tstar)
    write_csv(paths["scalars"], ["tile", "E_tstar", "dedi", "delay_person_hours", "damage_rate"],
              [[t.quadkey, fmt(tables.compliance_at_tstar[t]), fmt(tables.dedi.get(t)),
                fmt(tables.delays.get(t)), fmt(tables.damage_rate.get(t))] for t in tiles])
    write_csv(paths["curves"], ["tile", "slice", "C"],
              [[t.quadkey, str(s), fmt(v)] for t in sorted(tables.curves)
               for s, v in sorted(tables.curves[t].items())])
    write_csv(paths["flows"], ["origin", "destination", "baseline", "crisis", "distance_km"],
              [[f.origin.quadkey, f.destination.quadkey, fmt(f.baseline_trips),
                fmt(f.crisis_trips), fmt(f.distance_km)] for f in tables.flows])
    write_csv(paths["shares"], ["category", "share", "mean_distance_km"],
              [[k, fmt((tables.shares or {}).get(k)), fmt(tables.mean_distance.get(k))]
               for k in LANDUSE_CATEGORIES])
    return paths
