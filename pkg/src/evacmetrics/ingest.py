"""Loading Data-for-Good style population/movement exports and cleaning them.

Cleaning is two steps: drop series with too many missing cells over the
declared study window, then fill the remaining gaps with the mean of the
same 8-hour slot on the previous and following days.
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Hashable, Iterable

from .errors import (BadQuadkey, BadTimestamp, BadValue, DuplicateKey, EmptyWindow,
                     InvalidConfig, MissingColumn, QuadkeyError, Unimputable)
from .panels import (DEFAULT_TIMEZONE, SLOTS_PER_DAY, DroppedSeries, ImputedCell,
                     MovementRecord, Panel, PopulationRecord, Provenance, TimeSlice, zone)
from .tiles import parse_quadkey

log = logging.getLogger(__name__)

MISSING_SENTINELS = frozenset({"", "na", "nan", "null", "none", "\\n", "n/a"})
COUNT_FIELDS = ("n_baseline", "n_crisis")
DERIVED_FIELDS = ("n_difference", "percent_change", "z_score")


@dataclass(frozen=True)
class ColumnSchema:
    """Column names of the upstream export.  Derived columns are optional."""

    quadkey: str = "quadkey"
    origin: str = "start_quadkey"
    destination: str = "end_quadkey"
    timestamp: str = "date_time"
    n_baseline: str = "n_baseline"
    n_crisis: str = "n_crisis"
    n_difference: str = "n_difference"
    percent_change: str = "percent_change"
    z_score: str = "z_score"

    @classmethod
    def from_mapping(cls, mapping: dict[str, str] | None) -> ColumnSchema:
        if not mapping:
            return cls()
        unknown = set(mapping) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidConfig("schema", f"unknown keys {sorted(unknown)}")
        return cls(**mapping)


def parse_timestamp(text: str, tz: str = DEFAULT_TIMEZONE) -> dt.datetime:
    """Parse an export timestamp into an aware local datetime.

    Accepts ISO-8601 (optionally with offset or ``Z``) and the upstream
    ``YYYY-MM-DD HHMM`` form.  Naive values are local time in ``tz``.
    """
    s = text.strip()
    if not s:
        raise ValueError("empty timestamp")
    if s.endswith("Z"):
        s = s[:-1] + "+00:00"
    try:
        when = dt.datetime.fromisoformat(s)
    except ValueError:
        when = dt.datetime.strptime(s, "%Y-%m-%d %H%M")
    if when.tzinfo is None:
        return when.replace(tzinfo=zone(tz))
    return when.astimezone(zone(tz))


def _cell(row: dict[str, str], column: str, lineno: int, *, count: bool) -> float | None:
    raw = row.get(column)
    if raw is None or raw.strip().lower() in MISSING_SENTINELS:
        return None
    try:
        value = float(raw)
    except ValueError:
        raise BadValue(lineno, column, raw) from None
    if count and value < 0:
        raise BadValue(lineno, column, raw)
    return value


def _reader(path: Path, delimiter: str, required: Iterable[str]):
    fh = open(path, newline="", encoding="utf-8")
    reader = csv.DictReader(fh, delimiter=delimiter)
    header = reader.fieldnames or []
    for name in required:
        if name not in header:
            fh.close()
            raise MissingColumn(name, path)
    return fh, reader, header


def load_population(path: str | Path, schema: ColumnSchema | None = None, *,
                    delimiter: str = ",", timezone: str = DEFAULT_TIMEZONE,
                    window: tuple[TimeSlice, TimeSlice] | None = None) -> Panel[PopulationRecord]:
    schema = schema or ColumnSchema()
    required = (schema.quadkey, schema.timestamp, schema.n_baseline, schema.n_crisis)
    fh, reader, header = _reader(Path(path), delimiter, required)
    records: dict[tuple[Hashable, TimeSlice], PopulationRecord] = {}
    with fh:
        for lineno, row in enumerate(reader, start=2):
            try:
                tile = parse_quadkey(row[schema.quadkey].strip())
            except QuadkeyError as exc:
                raise BadQuadkey(lineno, str(exc)) from None
            slice_ = _slice_of(row[schema.timestamp], lineno, timezone)
            rec = PopulationRecord(
                tile, slice_,
                _cell(row, schema.n_baseline, lineno, count=True),
                _cell(row, schema.n_crisis, lineno, count=True),
                *(_cell(row, getattr(schema, f), lineno, count=False) if getattr(schema, f) in header
                  else None for f in DERIVED_FIELDS),
            )
            if (tile, slice_) in records:
                raise DuplicateKey((tile, slice_), lineno)
            records[(tile, slice_)] = rec
    return Panel(records, window, timezone)


def load_movement(path: str | Path, schema: ColumnSchema | None = None, *,
                  delimiter: str = ",", timezone: str = DEFAULT_TIMEZONE,
                  window: tuple[TimeSlice, TimeSlice] | None = None) -> Panel[MovementRecord]:
    schema = schema or ColumnSchema()
    required = (schema.origin, schema.destination, schema.timestamp,
                schema.n_baseline, schema.n_crisis)
    fh, reader, header = _reader(Path(path), delimiter, required)
    records: dict[tuple[Hashable, TimeSlice], MovementRecord] = {}
    with fh:
        for lineno, row in enumerate(reader, start=2):
            try:
                origin = parse_quadkey(row[schema.origin].strip())
                dest = parse_quadkey(row[schema.destination].strip())
            except QuadkeyError as exc:
                raise BadQuadkey(lineno, str(exc)) from None
            if origin.level != dest.level:
                raise BadQuadkey(lineno, "origin and destination levels differ")
            slice_ = _slice_of(row[schema.timestamp], lineno, timezone)
            rec = MovementRecord(
                origin, dest, slice_,
                _cell(row, schema.n_baseline, lineno, count=True),
                _cell(row, schema.n_crisis, lineno, count=True),
                *(_cell(row, getattr(schema, f), lineno, count=False) if getattr(schema, f) in header
                  else None for f in DERIVED_FIELDS),
            )
            key = ((origin, dest), slice_)
            if key in records:
                raise DuplicateKey(key, lineno)
            records[key] = rec
    return Panel(records, window, timezone)


def _slice_of(text: str | None, lineno: int, tz: str) -> TimeSlice:
    try:
        return TimeSlice.containing(parse_timestamp(text or "", tz), tz)
    except ValueError:
        raise BadTimestamp(lineno, text or "") from None


def missing_fraction(panel: Panel, key: Hashable) -> float:
    window = panel.slices()
    if not window:
        raise EmptyWindow()
    series = panel.series(key)
    missing = sum(1 for s in window if s not in series or not series[s].complete)
    return missing / len(window)


def missingness_filter(panel: Panel, max_missing_fraction: float = 0.14) -> tuple[Panel, list]:
    """Drop series whose missing fraction over the window exceeds the threshold.

    A cell is missing when the row is absent or either count is null.  The
    comparison is strict: a series missing exactly the threshold is kept.
    """
    if not panel.slices():
        raise EmptyWindow()
    window = set(panel.slices())
    dropped: list[DroppedSeries] = []
    for key in panel.keys():
        frac = missing_fraction(panel, key)
        if frac > max_missing_fraction:
            dropped.append(DroppedSeries(key, frac))
    gone = {d.key for d in dropped}
    kept = {k: r for k, r in panel.records.items() if k[0] not in gone and k[1] in window}
    prov = Provenance(panel.provenance.dropped + tuple(dropped), panel.provenance.imputed)
    return Panel(kept, panel.window, panel.timezone, prov), [d.key for d in dropped]


def impute_moving_average(panel: Panel) -> Panel:
    """Fill missing counts from the same slot on the adjacent days.

    Each pass fills every cell that has at least one available neighbour
    (both: mean; one: that value) using values from the start of the pass,
    and passes repeat until the panel is complete.  Edges of the window are
    therefore one-sided and runs of missing days fill inward.
    """
    window = panel.slices()
    if not window:
        return panel
    first, last = window[0].ordinal, window[-1].ordinal
    template = next(iter(panel), None)
    values: dict[tuple[Hashable, int, str], float] = {}
    missing: set[tuple[Hashable, int, str]] = set()
    keys = panel.keys()
    for key in keys:
        series = panel.series(key)
        for s in window:
            rec = series.get(s)
            for f in COUNT_FIELDS:
                v = getattr(rec, f) if rec is not None else None
                if v is None:
                    missing.add((key, s.ordinal, f))
                else:
                    values[(key, s.ordinal, f)] = v
    if not missing:
        return panel

    imputed: list[ImputedCell] = []
    while missing:
        updates = {}
        for cell in sorted(missing, key=_cell_order):
            key, o, f = cell
            sources = []
            for n in (o - SLOTS_PER_DAY, o + SLOTS_PER_DAY):
                if first <= n <= last and (key, n, f) in values:
                    sources.append((TimeSlice.from_ordinal(n), values[(key, n, f)]))
            if sources:
                value = sum(v for _, v in sources) / len(sources)
                updates[cell] = value
                imputed.append(ImputedCell(key, TimeSlice.from_ordinal(o), f, value, tuple(sources)))
        if not updates:
            key, o, _ = min(missing, key=_cell_order)
            raise Unimputable(key, TimeSlice.from_ordinal(o))
        values.update(updates)
        missing.difference_update(updates)

    filled_cells = {(c.key, c.slice) for c in imputed}
    records = dict(panel.records)
    for key, s in sorted(filled_cells, key=lambda ks: (ks[0], ks[1].ordinal)):
        o = s.ordinal
        base, crisis = values[(key, o, "n_baseline")], values[(key, o, "n_crisis")]
        old = records.get((key, s))
        if old is not None:
            records[(key, s)] = replace(old, n_baseline=base, n_crisis=crisis,
                                        n_difference=None, percent_change=None, z_score=None)
        else:
            records[(key, s)] = _blank(template, key, s, base, crisis)
    prov = Provenance(panel.provenance.dropped, panel.provenance.imputed + tuple(imputed))
    return Panel(records, panel.window, panel.timezone, prov)


def _cell_order(cell: tuple[Hashable, int, str]):
    key, o, f = cell
    return (key, o, f)


def _blank(template, key, s, base, crisis):
    if isinstance(template, MovementRecord):
        return MovementRecord(key[0], key[1], s, base, crisis)
    return PopulationRecord(key, s, base, crisis)


def clean(panel: Panel, max_missing_fraction: float = 0.14) -> Panel:
    """Missingness filter followed by moving-average imputation."""
    filtered, _ = missingness_filter(panel, max_missing_fraction)
    return impute_moving_average(filtered)


def _fmt(v: float | None) -> str:
    return "" if v is None else repr(v)


def write_population(panel: Panel[PopulationRecord], path: str | Path) -> None:
    """Write a panel in the ingest schema; values use ``repr`` so reloads are bit-exact."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["quadkey", "date_time", "n_baseline", "n_crisis",
                    "n_difference", "percent_change", "z_score"])
        for key in panel.keys():
            for s, r in sorted(panel.series(key).items()):
                w.writerow([r.tile.quadkey, _stamp(s), _fmt(r.n_baseline), _fmt(r.n_crisis),
                            _fmt(r.n_difference), _fmt(r.percent_change), _fmt(r.z_score)])


def write_movement(panel: Panel[MovementRecord], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["start_quadkey", "end_quadkey", "date_time", "n_baseline", "n_crisis",
                    "n_difference", "percent_change", "z_score"])
        for key in panel.keys():
            for s, r in sorted(panel.series(key).items()):
                w.writerow([r.origin.quadkey, r.destination.quadkey, _stamp(s),
                            _fmt(r.n_baseline), _fmt(r.n_crisis), _fmt(r.n_difference),
                            _fmt(r.percent_change), _fmt(r.z_score)])


def _stamp(s: TimeSlice) -> str:
    return f"{s.date.isoformat()} {8 * s.slot:02d}00"
