from __future__ import annotations

import csv
import filecmp
import json
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from evacmetrics import __version__, synth
from evacmetrics.cli import CONFIG_ENV, run

from scenarios import dedi_scenario, materialize, oracle_scenario


def rows(path: Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_config(directory: Path, **extra) -> Path:
    doc = {"population": "population.csv", "movement": "movement.csv", "zones": "zones.geojson",
           "damage": "damage.csv", "landuse": "landuse.csv", "tile_cities": "tile_cities.csv",
           "output_dir": "out"}
    doc.update(extra)
    path = directory / "run.json"
    path.write_text(json.dumps(doc))
    return path


@pytest.fixture(scope="module")
def dedi_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("dedi")
    _, truth, _ = materialize(dedi_scenario(), d)
    return d, synth.oracle_metrics(truth)


@pytest.fixture(scope="module")
def oracle_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("oracle")
    _, truth, _ = materialize(oracle_scenario(), d)
    return d, synth.oracle_metrics(truth)


class TestIngest:
    def test_valid(self, dedi_dir, tmp_path):
        d, _ = dedi_dir
        cfg = write_config(d, output_dir=str(tmp_path))
        assert run(["ingest", "--config", str(cfg)]) == 0
        for name in ("cleaned_population.csv", "cleaned_movement.csv", "provenance.txt", "manifest.json"):
            assert (tmp_path / name).exists()

    def test_missing_column(self, dedi_dir, tmp_path, capsys):
        d, _ = dedi_dir
        src = rows(d / "population.csv")
        bad = tmp_path / "pop.csv"
        with open(bad, "w", newline="") as fh:
            fields = [k for k in src[0] if k != "n_crisis"]
            w = csv.DictWriter(fh, fields, extrasaction="ignore")
            w.writeheader()
            w.writerows(src)
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({"population": str(bad), "output_dir": str(tmp_path / "o")}))
        assert run(["ingest", "--config", str(cfg)]) == 2
        assert "n_crisis" in capsys.readouterr().err

    def test_nonexistent(self, tmp_path):
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({"population": str(tmp_path / "nope.csv"), "output_dir": str(tmp_path)}))
        assert run(["ingest", "--config", str(cfg)]) == 3

    def test_missing_config_file(self, tmp_path):
        assert run(["ingest", "--config", str(tmp_path / "absent.json")]) == 3

    def test_unknown_config_key(self, tmp_path, capsys):
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({"populaton": "x.csv"}))
        assert run(["ingest", "--config", str(cfg)]) == 2
        assert "populaton" in capsys.readouterr().err

    def test_threshold_range(self, tmp_path):
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({"population": "x.csv", "missing_threshold": 1.5}))
        assert run(["ingest", "--config", str(cfg)]) == 2


class TestPop:
    def test_hotspot_count_matches_oracle(self, dedi_dir, tmp_path, capsys):
        d, orc = dedi_dir
        cfg = write_config(d, output_dir=str(tmp_path))
        assert run(["pop", "--config", str(cfg)]) == 0
        got = {r["tile"] for r in rows(tmp_path / "tile_scalars.csv") if r["dedi"] == "1"}
        assert got == {t.quadkey for t in orc.hotspots}
        assert f"{len(orc.hotspots)} DEDI hotspots" in capsys.readouterr().out

    def test_tstar_outside_window(self, dedi_dir, tmp_path, capsys):
        d, _ = dedi_dir
        cfg = write_config(d, output_dir=str(tmp_path))
        assert run(["pop", "--config", str(cfg), "--tstar", "2030-01-01/0"]) == 4
        assert "TStarOutOfWindow" in capsys.readouterr().err

    def test_empty_order_set(self, tmp_path, capsys):
        doc = dedi_scenario()
        doc["zones"] = [dict(z, kind="evacuation_warning") for z in doc["zones"]]
        doc["damage"] = {}
        materialize(doc, tmp_path)
        cfg = write_config(tmp_path, output_dir=str(tmp_path / "out"))
        assert run(["pop", "--config", str(cfg)]) == 4
        assert "EmptyTileSet" in capsys.readouterr().err

    def test_bad_tstar_syntax(self, dedi_dir, tmp_path):
        d, _ = dedi_dir
        cfg = write_config(d, output_dir=str(tmp_path))
        assert run(["pop", "--config", str(cfg), "--tstar", "noon"]) == 2


class TestMove:
    def test_shares_match_oracle(self, oracle_dir, tmp_path, capsys):
        d, orc = oracle_dir
        cfg = write_config(d, output_dir=str(tmp_path))
        assert run(["move", "--config", str(cfg)]) == 0
        table = {r["category"]: r["share"] for r in rows(tmp_path / "destination_shares.csv")}
        for k, v in orc.shares.items():
            assert float(table[k]) == pytest.approx(v, abs=1e-8)   # 9 significant digits
        out = capsys.readouterr().out
        total = float(out.split("sum of destination shares = ")[1].split()[0])
        assert total == pytest.approx(1.0, abs=1e-9)
        for name in ("flows.csv", "flows.geojson", "distance_density.csv", "distance_by_landuse.csv",
                     "share_distance_correlation.csv", "city_matrix_crisis.csv", "city_matrix_pct_change.csv"):
            assert (tmp_path / name).exists()

    def test_zero_window(self, oracle_dir, tmp_path, capsys):
        d, _ = oracle_dir
        cfg = write_config(d, output_dir=str(tmp_path))
        assert run(["move", "--config", str(cfg), "--window-hours", "0"]) == 5
        assert "window 0.0 h" in capsys.readouterr().err

    def test_fully_suppressed_movement(self, oracle_dir, tmp_path, capsys):
        d, _ = oracle_dir
        empty = tmp_path / "movement.csv"
        empty.write_text((d / "movement.csv").read_text().splitlines()[0] + "\n")
        cfg = write_config(d, output_dir=str(tmp_path / "out"), movement=str(empty))
        assert run(["all", "--config", str(cfg)]) == 5
        assert "small-count suppression" in capsys.readouterr().err
        m = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert m["exit_code"] == 5 and "tile_scalars.csv" in m["outputs"]

    def test_split_bounds_flag(self, oracle_dir, tmp_path):
        d, _ = oracle_dir
        cfg = write_config(d, output_dir=str(tmp_path))
        assert run(["move", "--config", str(cfg), "--split-bounds", "0,3,30"]) == 0
        header = (tmp_path / "destination_shares.csv").read_text().splitlines()[0]
        assert header == "category,share,share_0_3km,share_3_30km"
        assert run(["move", "--config", str(cfg), "--split-bounds", "0,30,3"]) == 2


class TestManifest:
    def test_contents(self, dedi_dir, tmp_path):
        d, _ = dedi_dir
        cfg = write_config(d, output_dir=str(tmp_path))
        assert run(["ingest", "--config", str(cfg)]) == 0
        m = json.loads((tmp_path / "manifest.json").read_text())
        assert m["version"] == __version__ and m["command"] == "ingest"
        assert len(m["config_sha256"]) == 64
        assert set(m["inputs"]) >= {"population", "movement", "zones"}
        assert "cleaned_population.csv" in m["outputs"]

    def test_failed_run_records_exit_code(self, tmp_path):
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({"population": str(tmp_path / "nope.csv"), "output_dir": str(tmp_path)}))
        assert run(["ingest", "--config", str(cfg)]) == 3
        m = json.loads((tmp_path / "manifest.json").read_text())
        assert m["exit_code"] == 3 and m["inputs"]["population"]["sha256"] is None

    def test_manifest_only(self, dedi_dir, tmp_path):
        d, _ = dedi_dir
        cfg = write_config(d, output_dir=str(tmp_path))
        assert run(["all", "--config", str(cfg), "--manifest-only"]) == 0
        assert sorted(p.name for p in tmp_path.iterdir()) == ["manifest.json"]

    def test_env_var(self, dedi_dir, tmp_path, monkeypatch):
        d, _ = dedi_dir
        cfg = write_config(d, output_dir=str(tmp_path))
        monkeypatch.setenv(CONFIG_ENV, str(cfg))
        assert run(["ingest"]) == 0
        assert (tmp_path / "cleaned_population.csv").exists()

    def test_flag_overrides_config(self, dedi_dir, tmp_path):
        d, _ = dedi_dir
        cfg = write_config(d, output_dir=str(tmp_path / "ignored"))
        assert run(["ingest", "--config", str(cfg), "--out", str(tmp_path / "used")]) == 0
        assert (tmp_path / "used" / "manifest.json").exists()
        assert not (tmp_path / "ignored").exists()

    def test_all_is_deterministic(self, dedi_dir, tmp_path):
        d, _ = dedi_dir
        cfg = write_config(d)
        for name in ("a", "b"):
            assert run(["all", "--config", str(cfg), "--out", str(tmp_path / name)]) == 0
        names = sorted(p.name for p in (tmp_path / "a").iterdir() if p.name != "manifest.json")
        _, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", names, shallow=False)
        assert mismatch == [] and errors == []


class TestSynth:
    def scenario(self, tmp_path, doc=None) -> Path:
        p = tmp_path / "scenario.json"
        p.write_text(json.dumps(doc or dedi_scenario()))
        return p

    def test_generate_twice_identical(self, tmp_path):
        sc = self.scenario(tmp_path)
        for name in ("a", "b"):
            assert run(["synth", "generate", "--scenario", str(sc), "--out", str(tmp_path / name),
                        "--seed", "9"]) == 0
        names = sorted(p.name for p in (tmp_path / "a").iterdir() if p.name != "manifest.json")
        _, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", names, shallow=False)
        assert len(names) == 7 and mismatch == [] and errors == []

    def test_privatize_identity(self, tmp_path):
        doc = dedi_scenario()
        doc["privacy"] = {"threshold": 0, "noise_sigma": 0, "smoothing_radius": 0}
        sc = self.scenario(tmp_path, doc)
        assert run(["synth", "generate", "--scenario", str(sc), "--out", str(tmp_path / "raw")]) == 0
        assert run(["synth", "privatize", "--scenario", str(sc), "--input", str(tmp_path / "raw"),
                    "--out", str(tmp_path / "priv")]) == 0
        for name in ("population.csv", "movement.csv"):
            assert (tmp_path / "raw" / name).read_bytes() == (tmp_path / "priv" / name).read_bytes()

    def test_oracle_tables(self, tmp_path):
        sc = self.scenario(tmp_path)
        assert run(["synth", "oracle", "--scenario", str(sc), "--out", str(tmp_path)]) == 0
        shares = rows(tmp_path / "oracle_shares.csv")
        assert sum(float(r["share"]) for r in shares) == pytest.approx(1.0, abs=1e-8)
        for r in rows(tmp_path / "oracle_scalars.csv"):
            if r["E_tstar"] != "NA":
                assert 0.0 <= float(r["E_tstar"]) <= 1.0
        by_tile: dict[str, list[float]] = {}
        for r in rows(tmp_path / "oracle_curves.csv"):
            by_tile.setdefault(r["tile"], []).append(float(r["C"]))
        for c in by_tile.values():
            assert c == sorted(c) and c[-1] == pytest.approx(100.0)

    def test_invalid_scenario(self, tmp_path, capsys):
        doc = dedi_scenario()
        doc["width"] = 0
        sc = self.scenario(tmp_path, doc)
        assert run(["synth", "generate", "--scenario", str(sc), "--out", str(tmp_path)]) == 2
        assert "width" in capsys.readouterr().err


def test_demo_quickstart(tmp_path):
    """Privatized sparse OD pairs still yield evacuation flows."""
    shutil.copytree(Path(__file__).parent.parent / "demo", tmp_path, dirs_exist_ok=True)
    sc = str(tmp_path / "scenario.json")
    assert run(["synth", "generate", "--scenario", sc, "--out", str(tmp_path / "raw")]) == 0
    assert run(["synth", "privatize", "--scenario", sc, "--input", str(tmp_path / "raw"),
                "--out", str(tmp_path / "private")]) == 0
    cfg = json.loads((tmp_path / "run.json").read_text())
    for key in ("population", "movement", "zones", "damage", "landuse", "tile_cities"):
        if key in cfg:
            cfg[key] = str(tmp_path / cfg[key])
    cfg["output_dir"] = str(tmp_path / "results")
    (tmp_path / "run.json").write_text(json.dumps(cfg))
    assert run(["all", "--config", str(tmp_path / "run.json")]) == 0
    assert rows(tmp_path / "results" / "flows.csv")
    shares = rows(tmp_path / "results" / "destination_shares.csv")
    assert sum(float(r["share"]) for r in shares) == pytest.approx(1.0, abs=1e-8)


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "evacmetrics", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and __version__ in proc.stdout
