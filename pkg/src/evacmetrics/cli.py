"""Command-line entry point: ``evacmetrics {ingest,pop,move,all,synth}``.

Exit codes: 0 ok, 2 config/schema error, 3 I/O error, 4 population-metric
failure, 5 movement-metric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime as dt
import hashlib
import json
import logging
import os
import shutil
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from . import __version__, export, ingest, movemetrics, popmetrics, synth, zones
from .errors import (EmptyCategory, EmptyGroup, EvacError, InputError, InsufficientData,
                     MovementMetricError, NoDepartures, ZeroVariance)
from .panels import DEFAULT_TIMEZONE, Panel, TimeSlice, parse_slice

log = logging.getLogger("evacmetrics")

CONFIG_ENV = "EVACMETRICS_CONFIG"
EXIT_OK, EXIT_INPUT, EXIT_IO, EXIT_POP, EXIT_MOVE = 0, 2, 3, 4, 5


class ConfigError(InputError):
    pass


@dataclass(frozen=True)
class RunConfig:
    population: str | None = None
    movement: str | None = None
    zones: str | None = None
    damage: str | None = None
    landuse: str | None = None
    indicators: str | None = None
    tile_cities: str | None = None
    output_dir: str = "out"
    scenario: str | None = None
    schema: dict[str, str] = field(default_factory=dict)
    delimiter: str = ","
    timezone: str = DEFAULT_TIMEZONE
    window: tuple[str, str] | None = None
    tstar: str = "auto"
    window_hours: float = movemetrics.DEFAULT_WINDOW_HOURS
    horizon_hours: float = popmetrics.DEFAULT_HORIZON_HOURS
    split_bounds: tuple[float, float, float] = movemetrics.DEFAULT_SPLIT
    influx_threshold: float = popmetrics.INFLUX_THRESHOLD
    missing_threshold: float = 0.14
    include_warning_delay: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.missing_threshold <= 1.0:
            raise ConfigError(f"missing_threshold {self.missing_threshold} outside [0, 1]")
        if self.window_hours < 0 or self.horizon_hours < 0:
            raise ConfigError("window_hours and horizon_hours must be nonnegative")
        lo, mid, hi = self.split_bounds
        if not 0 <= lo <= mid <= hi:
            raise ConfigError(f"split_bounds must be ordered and nonnegative, got {self.split_bounds}")
        if self.delimiter not in (",", "\t"):
            raise ConfigError("delimiter must be ',' or a tab")
        if self.tstar != "auto":
            _slice(self.tstar, "tstar")

    @classmethod
    def from_mapping(cls, doc: dict[str, Any], base: Path | None = None) -> RunConfig:
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(doc) - names)
        if unknown:
            raise ConfigError(f"unknown config key {unknown[0]!r}")
        doc = dict(doc)
        if base is not None:
            for k in ("population", "movement", "zones", "damage", "landuse", "indicators",
                      "tile_cities", "output_dir", "scenario"):
                if doc.get(k) is not None:
                    doc[k] = str(base / doc[k])
        for k in ("window", "split_bounds"):
            if doc.get(k) is not None:
                doc[k] = tuple(doc[k])
        try:
            return cls(**doc)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    @property
    def window_slices(self) -> tuple[TimeSlice, TimeSlice] | None:
        if self.window is None:
            return None
        return _slice(self.window[0], "window"), _slice(self.window[1], "window")

    def column_schema(self) -> ingest.ColumnSchema:
        return ingest.ColumnSchema.from_mapping(self.schema or None)


def _slice(text: str, name: str) -> TimeSlice:
    try:
        return parse_slice(text)
    except ValueError:
        raise ConfigError(f"{name}: expected YYYY-MM-DD/slot, got {text!r}") from None


def _sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _canonical(cfg: RunConfig) -> str:
    return json.dumps(dataclasses.asdict(cfg), sort_keys=True, separators=(",", ":"))


def write_manifest(cfg: RunConfig, command: str, outputs: Sequence[Path] = (),
                   exit_code: int = EXIT_OK) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    inputs = {}
    for name in ("population", "movement", "zones", "damage", "landuse", "indicators",
                 "tile_cities", "scenario"):
        p = getattr(cfg, name)
        if p is not None:
            inputs[name] = {"path": p, "sha256": _sha256(p) if Path(p).is_file() else None}
    doc = {
        "tool": "evacmetrics",
        "version": __version__,
        "command": command,
        "config_sha256": hashlib.sha256(_canonical(cfg).encode()).hexdigest(),
        "config": json.loads(_canonical(cfg)),
        "inputs": inputs,
        "outputs": sorted(p.name for p in outputs),
        "exit_code": exit_code,
    }
    path = out / "manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return path


def _require(cfg: RunConfig, *names: str) -> None:
    for n in names:
        if getattr(cfg, n) is None:
            raise ConfigError(f"config key {n!r} is required for this command")


# -- commands ---------------------------------------------------------------

def _load_clean(cfg: RunConfig, kind: str) -> Panel:
    out = Path(cfg.output_dir)
    cleaned = out / f"cleaned_{kind}.csv"
    loader = ingest.load_population if kind == "population" else ingest.load_movement
    if cleaned.exists():
        return loader(cleaned, delimiter=",", timezone=cfg.timezone, window=cfg.window_slices)
    _require(cfg, kind)
    raw = loader(getattr(cfg, kind), cfg.column_schema(), delimiter=cfg.delimiter,
                 timezone=cfg.timezone, window=cfg.window_slices)
    return _clean(raw, cfg, kind)


def _clean(raw: Panel, cfg: RunConfig, kind: str) -> Panel:
    # OD pairs are sparse by nature (evacuation-only pairs have no baseline and
    # few crisis slices), so only population tiles are filtered and imputed;
    # null movement counts contribute nothing to flow sums.
    # Suppression can also leave no rows at all; pass the empty panel on.
    if kind != "population" or not len(raw):
        return raw
    return ingest.clean(raw, cfg.missing_threshold)


def cmd_ingest(cfg: RunConfig) -> list[Path]:
    if cfg.population is None and cfg.movement is None:
        raise ConfigError("ingest needs a population or movement path")
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    written, reports = [], []
    for kind, loader, writer in (("population", ingest.load_population, ingest.write_population),
                                 ("movement", ingest.load_movement, ingest.write_movement)):
        path = getattr(cfg, kind)
        if path is None:
            continue
        raw = loader(path, cfg.column_schema(), delimiter=cfg.delimiter,
                     timezone=cfg.timezone, window=cfg.window_slices)
        panel = _clean(raw, cfg, kind)
        target = out / f"cleaned_{kind}.csv"
        writer(panel, target)
        written.append(target)
        reports.append(f"# {kind}: {len(panel.keys())} series kept, "
                       f"{len(panel.provenance.dropped)} dropped, "
                       f"{len(panel.provenance.imputed)} cells imputed")
        body = panel.provenance.report()
        if body:
            reports.append(body.rstrip("\n"))
    report = out / "provenance.txt"
    report.write_text("\n".join(reports) + "\n", encoding="utf-8")
    written.append(report)
    print(f"ingest: wrote {', '.join(p.name for p in written)}")
    return written


def _context(cfg: RunConfig, tiles) -> tuple[zones.ZoneMap, list[zones.TileZoneAssignment]]:
    _require(cfg, "zones")
    zmap = zones.load_zones(cfg.zones, timezone=cfg.timezone)
    return zmap, zones.assign_tiles(zmap, tiles)


def cmd_pop(cfg: RunConfig) -> list[Path]:
    panel = _load_clean(cfg, "population")
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    zmap, assignments = _context(cfg, panel.keys())
    order_tiles = [a.tile for a in assignments if a.kind is zones.ZoneKind.ORDER]
    explicit = None if cfg.tstar == "auto" else _slice(cfg.tstar, "tstar")
    tstar = popmetrics.select_tstar(panel, order_tiles, explicit)
    end = zmap.fire_start + dt.timedelta(hours=cfg.horizon_hours)
    damage = (zones.load_damage(cfg.damage, tiles=panel.keys(), delimiter=cfg.delimiter)
              if cfg.damage else [])
    scalars = popmetrics.tile_scalars(panel, assignments, tstar, end, damage,
                                      include_warning_delay=cfg.include_warning_delay)
    curves = {}
    for a in assignments:
        if a.in_zone:
            try:
                curves[a.tile] = popmetrics.cumulative_curve(panel, a.tile, zmap.fire_start, end).values
            except NoDepartures:
                pass
    written = [export.write_scalars(out / "tile_scalars.csv", scalars),
               export.write_curves(out / "tile_curves.csv", panel, curves)]
    influx = popmetrics.influx_tiles(panel, [a.tile for a in assignments], tstar, cfg.influx_threshold)
    written.append(export.write_csv(out / "influx_tiles.csv", ["tile", "P_tstar"],
                                    [[t.quadkey, p] for t, p in influx]))
    zone_scalars = [s for s in scalars if s.kind is not zones.ZoneKind.EXTERNAL]
    try:
        r, p = popmetrics.compliance_distance_correlation(zone_scalars, assignments)
        written.append(export.write_csv(out / "compliance_distance.csv", ["r", "p_value", "n"],
                                        [[r, p, sum(s.compliance_at_tstar is not None
                                                    for s in zone_scalars)]]))
    except (InsufficientData, ZeroVariance) as exc:
        log.warning("compliance-distance correlation skipped: %s", exc)
    if cfg.indicators:
        try:
            profile = popmetrics.dedi_group_profile(scalars, zones.load_indicators(cfg.indicators))
            written.append(export.write_group_profile(out / "dedi_profile.csv", profile))
        except EmptyGroup as exc:
            log.warning("DEDI group profile skipped: %s", exc)
    hotspots = sum(1 for s in scalars if s.dedi == 1)
    print(f"pop: {len(scalars)} tiles ({len(order_tiles)} order), t* = {tstar}, "
          f"{hotspots} DEDI hotspots; delay elapsed time measured to slice midpoints")
    return written


def cmd_move(cfg: RunConfig) -> list[Path]:
    panel = _load_clean(cfg, "movement")
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    tiles = sorted({t for key in panel.keys() for t in key})
    if not tiles:
        raise MovementMetricError("movement panel has no rows; small-count suppression "
                                  "can remove every OD row when per-pair counts are below 10")
    zmap, assignments = _context(cfg, tiles)
    amap = {a.tile: a for a in assignments}
    flows = movemetrics.evacuation_flows(panel, amap, window_hours=cfg.window_hours)
    if not flows:
        n_zone = sum(a.in_zone for a in assignments)
        raise MovementMetricError(
            f"no evacuation flows: {n_zone} zone tiles among {len(tiles)} movement tiles, "
            f"window {cfg.window_hours} h after each origin's order time")
    written = [export.write_flows(out / "flows.csv", flows),
               export.write_flow_geojson(out / "flows.geojson", flows)]
    stats = movemetrics.flow_stats(flows)
    written.append(export.write_density(out / "distance_density.csv",
                                        movemetrics.distance_density(flows)))
    summary = [f"move: {len(flows)} evacuation flows, {export.fmt(stats.total_crisis)} crisis trips"]
    if cfg.landuse:
        profiles = {p.tile: p for p in zones.load_landuse(cfg.landuse, delimiter=cfg.delimiter)}
        shares = movemetrics.destination_share(flows, profiles)
        split = movemetrics.split_by_distance(flows, profiles, cfg.split_bounds)
        written.append(export.write_shares(out / "destination_shares.csv", shares, split))
        dist = {}
        for k in zones.LANDUSE_CATEGORIES:
            try:
                dist[k] = movemetrics.mean_distance_by_landuse(flows, profiles, k)
            except EmptyCategory:
                dist[k] = None
        written.append(export.write_distance_by_landuse(out / "distance_by_landuse.csv", dist))
        corr = []
        for k in zones.LANDUSE_CATEGORIES:
            pairs = movemetrics.share_distance_pairs(flows, profiles, k)
            try:
                r, pval = movemetrics.share_distance_correlation(pairs)
            except (InsufficientData, ZeroVariance):
                r = pval = None
            corr.append([k, r, pval, len(pairs)])
        written.append(export.write_csv(out / "share_distance_correlation.csv",
                                        ["category", "r", "p_value", "n_destinations"], corr))
        summary.append(f"sum of destination shares = {export.fmt(sum(shares.values()))}")
    if cfg.tile_cities:
        cells = movemetrics.city_aggregate(flows, zones.load_tile_cities(cfg.tile_cities))
        for value in ("crisis", "baseline", "pct_change"):
            written.append(export.write_city_matrix(out / f"city_matrix_{value}.csv", cells, value))
    print("; ".join(summary))
    return written


def cmd_synth(cfg: RunConfig, sub: str, input_dir: str | None) -> list[Path]:
    _require(cfg, "scenario")
    scenario = synth.load_config(cfg.scenario)
    out = Path(cfg.output_dir)
    if sub == "generate":
        truth, raw = synth.generate(scenario, cfg.seed)
        written = list(synth.write_scenario(truth, raw, out).values())
    elif sub == "privatize":
        src = Path(input_dir or cfg.output_dir)
        window = scenario.window
        raw = synth.RawPanels(
            ingest.load_population(src / "population.csv", timezone=scenario.timezone, window=window),
            ingest.load_movement(src / "movement.csv", timezone=scenario.timezone, window=window))
        private = synth.privatize(raw, scenario.privacy, cfg.seed)
        out.mkdir(parents=True, exist_ok=True)
        ingest.write_population(private.population, out / "population.csv")
        ingest.write_movement(private.movement, out / "movement.csv")
        written = [out / "population.csv", out / "movement.csv"]
        if src.resolve() != out.resolve():
            for name in ("zones.geojson", "landuse.csv", "damage.csv", "tile_cities.csv"):
                if (src / name).exists():
                    shutil.copyfile(src / name, out / name)
                    written.append(out / name)
    else:
        truth, _ = synth.generate(scenario, cfg.seed)
        written = list(synth.write_oracle(synth.oracle_metrics(truth), out).values())
    print(f"synth {sub}: wrote {len(written)} files to {out}")
    return written


# -- argument handling ------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"JSON run config (default: ${CONFIG_ENV})")
    common.add_argument("--out", dest="output_dir", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--tstar", help="'auto' or YYYY-MM-DD/slot")
    common.add_argument("--window-hours", type=float)
    common.add_argument("--split-bounds", help="lo,mid,hi in km")
    common.add_argument("--manifest-only", action="store_true",
                        help="validate config and write the manifest without running")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="evacmetrics", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("ingest", "clean panels and write provenance"),
                        ("pop", "population-side metrics"),
                        ("move", "movement-side metrics"),
                        ("all", "ingest, pop and move in sequence")):
        sub.add_parser(name, parents=[common], help=help_)
    s = sub.add_parser("synth", parents=[common], help="synthetic scenarios")
    s.add_argument("action", choices=("generate", "privatize", "oracle"))
    s.add_argument("--scenario", help="scenario JSON")
    s.add_argument("--input", dest="input_dir", help="raw scenario directory (privatize)")
    return p


def _build_config(args: argparse.Namespace) -> RunConfig:
    path = args.config or os.environ.get(CONFIG_ENV)
    doc: dict[str, Any] = {}
    base = None
    if path:
        with open(path, encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be an object")
        base = Path(path).parent
    cfg = RunConfig.from_mapping(doc, base)
    overrides: dict[str, Any] = {}
    for name in ("output_dir", "seed", "tstar", "window_hours"):
        v = getattr(args, name, None)
        if v is not None:
            overrides[name] = v
    if getattr(args, "scenario", None):
        overrides["scenario"] = args.scenario
    if args.split_bounds:
        try:
            overrides["split_bounds"] = tuple(float(x) for x in args.split_bounds.split(","))
        except ValueError:
            raise ConfigError(f"--split-bounds: expected three numbers, got {args.split_bounds!r}") from None
        if len(overrides["split_bounds"]) != 3:
            raise ConfigError("--split-bounds needs exactly three numbers")
    try:
        return dataclasses.replace(cfg, **overrides)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _exit_code(exc: Exception) -> int:
    if isinstance(exc, InputError):
        return EXIT_INPUT
    if isinstance(exc, MovementMetricError):
        return EXIT_MOVE
    if isinstance(exc, OSError):
        return EXIT_IO
    return EXIT_POP


def run(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    command = args.command + (f" {args.action}" if args.command == "synth" else "")
    cfg: RunConfig | None = None
    written: list[Path] = []
    try:
        cfg = _build_config(args)
        if args.manifest_only:
            write_manifest(cfg, command)
            print(f"manifest written to {Path(cfg.output_dir) / 'manifest.json'}")
            return EXIT_OK
        steps = {"ingest": (cmd_ingest,), "pop": (cmd_pop,), "move": (cmd_move,),
                 "all": (cmd_ingest, cmd_pop, cmd_move)}
        if args.command == "synth":
            written += cmd_synth(cfg, args.action, args.input_dir)
        else:
            for step in steps[args.command]:
                written += step(cfg)
        write_manifest(cfg, command, written)
        return EXIT_OK
    except (EvacError, OSError) as exc:
        code = _exit_code(exc)
        name = type(exc).__name__
        label = f"{name}: " if code in (EXIT_POP, EXIT_MOVE) and name not in str(exc) else ""
        print(f"error: {label}{exc}", file=sys.stderr)
        if cfg is not None:
            try:
                write_manifest(cfg, command, written, code)
            except OSError:
                pass
        return code


def main() -> None:
    sys.exit(run())
