"""Exception types. The CLI maps the four family bases onto exit codes."""

from __future__ import annotations


class EvacError(Exception):
    """Base class for all package errors."""


class InputError(EvacError, ValueError):
    """Malformed input data or configuration (CLI exit 2)."""


class PopulationMetricError(EvacError):
    """Population-side metric cannot be computed (CLI exit 4)."""


class MovementMetricError(EvacError):
    """Movement-side metric cannot be computed (CLI exit 5)."""


# -- quadkeys ---------------------------------------------------------------

class QuadkeyError(InputError):
    pass


class EmptyKey(QuadkeyError):
    def __init__(self) -> None:
        super().__init__("empty quadkey")


class InvalidDigit(QuadkeyError):
    def __init__(self, position: int) -> None:
        self.position = position
        super().__init__(f"invalid quadkey digit at position {position}")


class KeyTooLong(QuadkeyError):
    def __init__(self, length: int) -> None:
        self.length = length
        super().__init__(f"quadkey of length {length} exceeds level 23")


# -- ingest -----------------------------------------------------------------

class MissingColumn(InputError):
    def __init__(self, name: str, path: object = None) -> None:
        self.name = name
        where = f" in {path}" if path is not None else ""
        super().__init__(f"missing required column {name!r}{where}")


class BadTimestamp(InputError):
    def __init__(self, row: int, value: str = "") -> None:
        self.row = row
        super().__init__(f"row {row}: unparseable timestamp {value!r}")


class BadQuadkey(InputError):
    def __init__(self, row: int, detail: str = "") -> None:
        self.row = row
        super().__init__(f"row {row}: bad quadkey" + (f" ({detail})" if detail else ""))


class BadValue(InputError):
    def __init__(self, row: int, column: str, value: str) -> None:
        self.row = row
        self.column = column
        super().__init__(f"row {row}: column {column!r} has non-numeric value {value!r}")


class DuplicateKey(InputError):
    def __init__(self, key: object, row: int | None = None) -> None:
        self.key = key
        at = f"row {row}: " if row is not None else ""
        super().__init__(f"{at}duplicate record for {key}")


class EmptyWindow(InputError):
    def __init__(self) -> None:
        super().__init__("study window contains no slices")


class Unimputable(InputError):
    def __init__(self, key: object, slice_: object) -> None:
        self.key = key
        self.slice = slice_
        super().__init__(f"cannot impute {key} at {slice_}: no same-slot neighbour on any day")


# -- zone context -----------------------------------------------------------

class BadGeometry(InputError):
    def __init__(self, feature: object, detail: str = "") -> None:
        self.feature = feature
        super().__init__(f"bad geometry in {feature}" + (f": {detail}" if detail else ""))


class MissingProperty(InputError):
    def __init__(self, feature: object, name: str) -> None:
        self.feature = feature
        self.name = name
        super().__init__(f"feature {feature} lacks property {name!r}")


class NoPerimeter(InputError):
    def __init__(self) -> None:
        super().__init__("no feature is flagged as the fire perimeter")


class UnknownDamageClass(InputError):
    def __init__(self, row: int, label: str) -> None:
        self.row = row
        self.label = label
        super().__init__(f"row {row}: unknown damage class {label!r}")


class BadCoordinate(InputError):
    def __init__(self, row: int) -> None:
        self.row = row
        super().__init__(f"row {row}: bad coordinate")


class OutOfRange(InputError):
    def __init__(self, tile: object, indicator: str, value: float) -> None:
        self.tile = tile
        self.indicator = indicator
        super().__init__(f"{tile}: indicator {indicator!r} = {value} outside [0, 100]")


# -- population metrics -----------------------------------------------------

class ZeroBaseline(PopulationMetricError):
    def __init__(self, tile: object, slice_: object) -> None:
        self.tile = tile
        self.slice = slice_
        super().__init__(f"{tile} at {slice_}: baseline count is zero")


class MissingCell(PopulationMetricError):
    def __init__(self, tile: object, slice_: object) -> None:
        self.tile = tile
        self.slice = slice_
        super().__init__(f"{tile} at {slice_}: count missing (panel not cleaned?)")


class EmptyTileSet(PopulationMetricError):
    def __init__(self) -> None:
        super().__init__("EmptyTileSet: no order-zone tiles to select t* over")


class TStarOutOfWindow(PopulationMetricError):
    def __init__(self, slice_: object) -> None:
        self.slice = slice_
        super().__init__(f"explicit t* {slice_} lies outside the panel window")


class NoDepartures(PopulationMetricError):
    def __init__(self, tile: object) -> None:
        self.tile = tile
        super().__init__(f"{tile}: no departures in window, curve undefined")


class NoOrderTime(PopulationMetricError):
    def __init__(self, tile: object) -> None:
        self.tile = tile
        super().__init__(f"{tile}: no order time")


class InsufficientData(EvacError):
    def __init__(self, n: int) -> None:
        self.n = n
        super().__init__(f"correlation needs at least 3 pairs, got {n}")


class ZeroVariance(EvacError):
    def __init__(self) -> None:
        super().__init__("correlation undefined: a variable has zero variance")


class EmptyGroup(PopulationMetricError):
    def __init__(self, which: int) -> None:
        self.which = which
        super().__init__(f"no tiles with DEDI={which}")


# -- movement metrics -------------------------------------------------------

class EmptyFlows(MovementMetricError):
    def __init__(self) -> None:
        super().__init__("no flows (or zero total weight)")


class NoCoveredFlows(MovementMetricError):
    def __init__(self) -> None:
        super().__init__("no flow destination has a land-use profile")


class EmptyCategory(MovementMetricError):
    def __init__(self, category: str) -> None:
        self.category = category
        super().__init__(f"no flow destination contains land use {category!r}")


class BadBandwidth(MovementMetricError):
    def __init__(self, bandwidth: float) -> None:
        self.bandwidth = bandwidth
        super().__init__(f"bandwidth must be positive, got {bandwidth}")


# -- synthetic scenarios ----------------------------------------------------

class InvalidConfig(InputError):
    def __init__(self, field: str, detail: str = "") -> None:
        self.field = field
        super().__init__(f"invalid config field {field!r}" + (f": {detail}" if detail else ""))
