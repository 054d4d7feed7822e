"""Table writers.  Floats are printed with 9 significant digits and
undefined values as ``NA`` so reruns give identical bytes."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .movemetrics import CityCell, DensityCurve, DistanceSplit, ODFlow
from .panels import Panel, PopulationRecord, TimeSlice
from .popmetrics import GroupProfile, TileScalars, compliance_from_counts, departure_from_counts
from .tiles import tile_centroid
from .zones import LANDUSE_CATEGORIES

NA = "NA"


def fmt(value: Any) -> str:
    if value is None:
        return NA
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isnan(value):
            return NA
        return format(value, ".9g")
    return str(value)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def write_scalars(path: str | Path, scalars: Iterable[TileScalars]) -> Path:
    return write_csv(path, ["tile", "E_tstar", "dedi", "delay_person_hours", "distance_km", "kind", "wave"],
                     [[s.tile.quadkey, s.compliance_at_tstar, s.dedi, s.total_delay, s.distance_km,
                       s.kind.value, s.wave] for s in scalars])


def write_curves(path: str | Path, panel: Panel[PopulationRecord],
                 curves: Mapping[Any, Mapping[TimeSlice, float]]) -> Path:
    """Long-format per-tile series: P, E and D for every slice, C where defined."""
    rows = []
    for t in panel.keys():
        c = curves.get(t, {})
        for s in panel.slices():
            rec = panel.get(t, s)
            if rec is None or not rec.complete:
                continue
            b, n = rec.n_baseline, rec.n_crisis
            p = (n - b) / b if b > 0 else None
            e = compliance_from_counts(b, n) if b > 0 else None
            rows.append([t.quadkey, str(s), p, e, departure_from_counts(b, n), c.get(s)])
    return write_csv(path, ["tile", "slice", "P", "E", "departure", "C"], rows)


def write_group_profile(path: str | Path, profile: GroupProfile) -> Path:
    names = sorted({n for m in profile.means.values() for n in m})
    return write_csv(path, ["dedi", "n_tiles", *names],
                     [[g, profile.sizes.get(g), *(profile.means[g].get(n) for n in names)]
                      for g in (1, 0)])


def write_flows(path: str | Path, flows: Iterable[ODFlow]) -> Path:
    return write_csv(path, ["origin", "destination", "type", "baseline", "crisis", "pct_change", "distance_km"],
                     [[f.origin.quadkey, f.destination.quadkey, f.type.value, f.baseline_trips,
                       f.crisis_trips, f.percent_change, f.distance_km] for f in flows])


def write_shares(path: str | Path, shares: Mapping[str, float],
                 split: DistanceSplit | None = None) -> Path:
    header = ["category", "share"]
    if split is not None:
        lo, mid, hi = split.bounds
        header += [f"share_{fmt(lo)}_{fmt(mid)}km", f"share_{fmt(mid)}_{fmt(hi)}km"]
    rows = []
    for k in LANDUSE_CATEGORIES:
        row: list[Any] = [k, shares.get(k)]
        if split is not None:
            row += [(split.short_shares or {}).get(k), (split.long_shares or {}).get(k)]
        rows.append(row)
    return write_csv(path, header, rows)


def write_distance_by_landuse(path: str | Path,
                              stats: Mapping[str, tuple[float, float] | None]) -> Path:
    return write_csv(path, ["category", "mean_distance_km", "std_distance_km"],
                     [[k, *(stats.get(k) or (None, None))] for k in LANDUSE_CATEGORIES])


def write_density(path: str | Path, curve: DensityCurve) -> Path:
    return write_csv(path, ["distance", "density"],
                     [[float(x), float(y)] for x, y in zip(curve.grid, curve.density)])


def write_city_matrix(path: str | Path, cells: Mapping[tuple[str, str], CityCell],
                      value: str = "crisis") -> Path:
    """Square matrix, origins as rows and destinations as columns."""
    names = sorted({c for pair in cells for c in pair})
    pick = {"crisis": lambda c: c.crisis_trips, "baseline": lambda c: c.baseline_trips,
            "pct_change": lambda c: c.percent_change}[value]
    rows = []
    for o in names:
        row: list[Any] = [o]
        for d in names:
            cell = cells.get((o, d))
            row.append(pick(cell) if cell is not None else (0.0 if value != "pct_change" else None))
        rows.append(row)
    return write_csv(path, ["origin", *names], rows)


def write_flow_geojson(path: str | Path, flows: Iterable[ODFlow]) -> Path:
    features = []
    for f in flows:
        a, b = tile_centroid(f.origin), tile_centroid(f.destination)
        features.append({
            "type": "Feature",
            "properties": {"origin": f.origin.quadkey, "destination": f.destination.quadkey,
                           "type": f.type.value, "baseline": f.baseline_trips,
                           "crisis": f.crisis_trips, "distance_km": f.distance_km},
            "geometry": {"type": "LineString", "coordinates": [[a.lon, a.lat], [b.lon, b.lat]]},
        })
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"type": "FeatureCollection", "features": features}, fh, indent=1)
        fh.write("\n")
    return path
