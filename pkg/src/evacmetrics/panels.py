"""Time slices, panel records and the panel containers shared by all modules."""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Generic, Hashable, Iterable, Iterator, Mapping, TypeVar
from zoneinfo import ZoneInfo

from .tiles import TileId

SLOT_HOURS = 8
SLOTS_PER_DAY = 3
DEFAULT_TIMEZONE = "America/Los_Angeles"


@lru_cache(maxsize=None)
def zone(name: str) -> ZoneInfo:
    return ZoneInfo(name)


@dataclass(frozen=True, order=True)
class TimeSlice:
    """One 8-hour local-time slot: slot 0 = 00-08, 1 = 08-16, 2 = 16-24."""

    date: dt.date
    slot: int

    def __post_init__(self) -> None:
        if self.slot not in (0, 1, 2):
            raise ValueError(f"slot must be 0, 1 or 2, got {self.slot}")

    @cached_property
    def ordinal(self) -> int:
        return self.date.toordinal() * SLOTS_PER_DAY + self.slot

    @classmethod
    def from_ordinal(cls, ordinal: int) -> TimeSlice:
        day, slot = divmod(ordinal, SLOTS_PER_DAY)
        return cls(dt.date.fromordinal(day), slot)

    @classmethod
    def containing(cls, when: dt.datetime, tz: str = DEFAULT_TIMEZONE) -> TimeSlice:
        """Slice containing an instant; naive datetimes are taken as local time."""
        if when.tzinfo is not None:
            when = when.astimezone(zone(tz))
        return cls(when.date(), when.hour // SLOT_HOURS)

    def shift(self, n: int) -> TimeSlice:
        return TimeSlice.from_ordinal(self.ordinal + n)

    def start(self, tz: str = DEFAULT_TIMEZONE) -> dt.datetime:
        return dt.datetime.combine(self.date, dt.time(SLOT_HOURS * self.slot), tzinfo=zone(tz))

    def end(self, tz: str = DEFAULT_TIMEZONE) -> dt.datetime:
        return self.shift(1).start(tz)

    def midpoint(self, tz: str = DEFAULT_TIMEZONE) -> dt.datetime:
        return self.start(tz) + dt.timedelta(hours=SLOT_HOURS / 2)

    def __str__(self) -> str:
        return f"{self.date.isoformat()}/{self.slot}"


def parse_slice(text: str) -> TimeSlice:
    """Parse ``YYYY-MM-DD/slot`` (the format printed by ``str(TimeSlice)``)."""
    try:
        day, slot = text.strip().split("/")
        return TimeSlice(dt.date.fromisoformat(day), int(slot))
    except ValueError as exc:
        raise ValueError(f"bad slice {text!r}; expected YYYY-MM-DD/slot") from exc


def hours_between(a: dt.datetime, b: dt.datetime) -> float:
    """Elapsed hours from ``a`` to ``b`` in absolute time (DST-safe)."""
    return (b.timestamp() - a.timestamp()) / 3600.0


def slice_range(first: TimeSlice, last: TimeSlice) -> list[TimeSlice]:
    return [TimeSlice.from_ordinal(o) for o in range(first.ordinal, last.ordinal + 1)]


def slices_overlapping(window: Iterable[TimeSlice], begin: dt.datetime, end: dt.datetime,
                       tz: str = DEFAULT_TIMEZONE) -> list[TimeSlice]:
    """Slices whose [start, end) interval intersects [begin, end)."""
    b, e = begin.timestamp(), end.timestamp()
    return [s for s in window if s.end(tz).timestamp() > b and s.start(tz).timestamp() < e]


@dataclass(frozen=True)
class PopulationRecord:
    tile: TileId
    slice: TimeSlice
    n_baseline: float | None
    n_crisis: float | None
    n_difference: float | None = None
    percent_change: float | None = None
    z_score: float | None = None

    @property
    def key(self) -> TileId:
        return self.tile

    @property
    def complete(self) -> bool:
        return self.n_baseline is not None and self.n_crisis is not None


@dataclass(frozen=True)
class MovementRecord:
    origin: TileId
    destination: TileId
    slice: TimeSlice
    n_baseline: float | None
    n_crisis: float | None
    n_difference: float | None = None
    percent_change: float | None = None
    z_score: float | None = None

    def __post_init__(self) -> None:
        if self.origin.level != self.destination.level:
            raise ValueError("origin and destination tiles differ in level")

    @property
    def key(self) -> tuple[TileId, TileId]:
        return (self.origin, self.destination)

    @property
    def complete(self) -> bool:
        return self.n_baseline is not None and self.n_crisis is not None


@dataclass(frozen=True)
class DroppedSeries:
    key: Hashable
    missing_fraction: float


@dataclass(frozen=True)
class ImputedCell:
    key: Hashable
    slice: TimeSlice
    field: str
    value: float
    sources: tuple[tuple[TimeSlice, float], ...]


@dataclass(frozen=True)
class Provenance:
    dropped: tuple[DroppedSeries, ...] = ()
    imputed: tuple[ImputedCell, ...] = ()

    def report(self) -> str:
        lines = [f"# dropped series: {len(self.dropped)}"]
        for d in self.dropped:
            lines.append(f"DROPPED {_fmt_key(d.key)} missing_fraction={d.missing_fraction:.9g}")
        lines.append(f"# imputed cells: {len(self.imputed)}")
        for c in self.imputed:
            src = ", ".join(f"{s}={v!r}" for s, v in c.sources)
            lines.append(f"IMPUTED {_fmt_key(c.key)} {c.slice} {c.field}={c.value!r} from [{src}]")
        return "\n".join(lines) + "\n"


def _fmt_key(key: Hashable) -> str:
    if isinstance(key, tuple):
        return "->".join(str(k) for k in key)
    return str(key)


R = TypeVar("R", PopulationRecord, MovementRecord)


@dataclass(frozen=True)
class Panel(Generic[R]):
    """Records indexed by (series key, slice) over an inclusive study window.

    The series key is the tile for population panels and the
    (origin, destination) pair for movement panels.  Treat as immutable;
    cleaning steps return new panels.
    """

    records: Mapping[tuple[Hashable, TimeSlice], R]
    window: tuple[TimeSlice, TimeSlice] | None = None
    timezone: str = DEFAULT_TIMEZONE
    provenance: Provenance = field(default_factory=Provenance)

    def __post_init__(self) -> None:
        if self.window is None and self.records:
            ordinals = [s.ordinal for _, s in self.records]
            object.__setattr__(self, "window", (TimeSlice.from_ordinal(min(ordinals)),
                                                TimeSlice.from_ordinal(max(ordinals))))

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[R]:
        return iter(self.records.values())

    def slices(self) -> list[TimeSlice]:
        if self.window is None:
            return []
        return slice_range(*self.window)

    def keys(self) -> list[Hashable]:
        return sorted({k for k, _ in self.records})

    def get(self, key: Hashable, slice_: TimeSlice) -> R | None:
        return self.records.get((key, slice_))

    def series(self, key: Hashable) -> dict[TimeSlice, R]:
        return self._index.get(key, {})

    def by_key(self) -> dict[Hashable, dict[TimeSlice, R]]:
        return self._index

    @cached_property
    def _index(self) -> dict[Hashable, dict[TimeSlice, R]]:
        out: dict[Hashable, dict[TimeSlice, R]] = {}
        for (k, s), r in self.records.items():
            out.setdefault(k, {})[s] = r
        return out


PopulationPanel = Panel[PopulationRecord]
MovementPanel = Panel[MovementRecord]


def make_panel(records: Iterable[R], window: tuple[TimeSlice, TimeSlice] | None = None,
               timezone: str = DEFAULT_TIMEZONE) -> Panel[R]:
    """Build a panel from records, rejecting duplicate (key, slice) pairs."""
    from .errors import DuplicateKey

    index: dict[tuple[Hashable, TimeSlice], R] = {}
    for rec in records:
        k = (rec.key, rec.slice)
        if k in index:
            raise DuplicateKey(k)
        index[k] = rec
    return Panel(index, window, timezone)
