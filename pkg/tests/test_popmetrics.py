from __future__ import annotations

import datetime as dt

import pytest

from evacmetrics.errors import (EmptyGroup, EmptyTileSet, MissingCell, NoDepartures, NoOrderTime,
                                TStarOutOfWindow, ZeroBaseline)
from evacmetrics.panels import DEFAULT_TIMEZONE, Panel, PopulationRecord, TimeSlice, zone
from evacmetrics.popmetrics import (compliance, compliance_distance_correlation,
                                    cumulative_curve, cumulative_from_departures, dedi,
                                    dedi_group_profile, departure, first_crossing, influx_tiles,
                                    percent_change, select_tstar, tile_scalars, total_delay,
                                    zone_departures)
from evacmetrics.tiles import TileId
from evacmetrics.zones import DamageSummary, IndicatorRow, TileZoneAssignment, ZoneKind

DAY = dt.date(2025, 1, 7)
S0 = TimeSlice(DAY, 0)
T1, T2, T3, T4 = (TileId(14, 2800 + i, 6500) for i in range(4))


def local(hour, day=DAY):
    return dt.datetime(day.year, day.month, day.day, hour, tzinfo=zone(DEFAULT_TIMEZONE))


def panel(series: dict[TileId, list[tuple[float, float]]]) -> Panel[PopulationRecord]:
    recs = {}
    n = max(len(v) for v in series.values())
    for t, values in series.items():
        for i, (b, c) in enumerate(values):
            s = S0.shift(i)
            recs[(t, s)] = PopulationRecord(t, s, b, c)
    return Panel(recs, (S0, S0.shift(n - 1)))


def depart_panel(t, base, deps):
    """Crisis counts for a departure stock sequence ``deps``."""
    return [(base, base - d) for d in deps]


class TestSeriesMetrics:
    def test_percent_change(self):
        assert percent_change(panel({T1: [(100, 60)]}), T1, S0) == pytest.approx(-0.40, abs=1e-12)

    def test_compliance_deficit(self):
        assert compliance(panel({T1: [(100, 60)]}), T1, S0) == pytest.approx(0.40, abs=1e-12)

    def test_compliance_influx_is_zero(self):
        assert compliance(panel({T1: [(100, 130)]}), T1, S0) == 0.0

    def test_compliance_full(self):
        assert compliance(panel({T1: [(50, 0)]}), T1, S0) == 1.0

    def test_departure(self):
        assert departure(panel({T1: [(100, 60)]}), T1, S0) == 40.0
        assert departure(panel({T1: [(100, 120)]}), T1, S0) == 0.0

    def test_zero_baseline(self):
        with pytest.raises(ZeroBaseline):
            compliance(panel({T1: [(0, 5)]}), T1, S0)

    def test_missing_cell(self):
        p = Panel({(T1, S0): PopulationRecord(T1, S0, 10.0, None)}, (S0, S0))
        with pytest.raises(MissingCell):
            compliance(p, T1, S0)


class TestTStar:
    def test_argmax_single_tile(self):
        p = panel({T1: depart_panel(T1, 100, [0, 30, 10])})
        assert select_tstar(p, [T1]) == S0.shift(1)

    def test_summed_over_tiles_earliest_tie(self):
        p = panel({T1: depart_panel(T1, 100, [0, 10, 20]), T2: depart_panel(T2, 100, [0, 10, 0])})
        assert select_tstar(p, [T1, T2]) == S0.shift(1)

    def test_explicit(self):
        p = panel({T1: depart_panel(T1, 100, [0] * 6)})
        assert select_tstar(p, [T1], TimeSlice(dt.date(2025, 1, 8), 1)) == TimeSlice(dt.date(2025, 1, 8), 1)

    def test_explicit_outside(self):
        p = panel({T1: depart_panel(T1, 100, [0, 0, 0])})
        with pytest.raises(TStarOutOfWindow):
            select_tstar(p, [T1], TimeSlice(dt.date(2025, 2, 1), 0))

    def test_empty(self):
        with pytest.raises(EmptyTileSet) as exc:
            select_tstar(panel({T1: [(1, 1)]}), [])
        assert "EmptyTileSet" in str(exc.value)


class TestDedi:
    def test_hotspot(self):
        assert dedi(0.10, 0.375) == 1

    def test_not_hotspot(self):
        assert dedi(0.60, 0.05) == 0

    def test_equal_is_not_hotspot(self):
        assert dedi(0.375, 0.375) == 0

    def test_unknown_damage(self):
        assert dedi(0.2, None) is None


class TestCurves:
    def test_cumulative_hand(self):
        assert cumulative_from_departures([40, 40, 0, 20]) == [40.0, 80.0, 80.0, 100.0]

    def test_cumulative_curve_window(self):
        p = panel({T1: depart_panel(T1, 100, [5, 40, 40, 0, 20, 7])})
        # [01:00, 24:00) on the first day covers slices 0-2; ends on slice 4 (day 2 slot 1)
        c = cumulative_curve(p, T1, local(1), local(12, DAY + dt.timedelta(days=1)))
        assert list(c.values) == [S0.shift(i) for i in range(5)]
        total = 5 + 40 + 40 + 0 + 20
        assert c.values[S0.shift(2)] == pytest.approx(100 * 85 / total)
        assert c.values[S0.shift(4)] == 100.0

    def test_no_departures(self):
        with pytest.raises(NoDepartures):
            cumulative_curve(panel({T1: [(10, 12)] * 3}), T1, local(0), local(23))

    def test_first_crossing(self):
        curve = {S0.shift(i): v for i, v in enumerate([10.0, 49.9, 50.0, 100.0])}
        assert first_crossing(curve) == S0.shift(2)


class TestDelay:
    def test_hand_two_slices(self):
        # order at slice start: midpoints 4 h and 12 h after t_r
        p = panel({T1: depart_panel(T1, 100, [10, 10])})
        assert total_delay(p, T1, local(0), local(16)) == pytest.approx(160.0, abs=1e-9)

    def test_all_in_order_slice(self):
        p = panel({T1: depart_panel(T1, 100, [0, 25, 0])})
        assert total_delay(p, T1, local(8), local(16)) == pytest.approx(4 * 25, abs=1e-9)

    def test_pre_order_clamped(self):
        # order at 10:00; slice 1 midpoint 12:00 -> 2 h, slice 0 ends before the order
        p = panel({T1: depart_panel(T1, 100, [30, 30, 30])})
        assert total_delay(p, T1, local(10), local(23)) == pytest.approx(30 * 2 + 30 * 10)

    def test_midpoint_before_order_is_zero(self):
        p = panel({T1: depart_panel(T1, 100, [0, 30])})
        assert total_delay(p, T1, local(13), local(15)) == 0.0

    def test_no_order(self):
        with pytest.raises(NoOrderTime):
            total_delay(panel({T1: [(1, 1)]}), T1, None, local(10))

    def test_zero_iff_no_post_order_departures(self):
        p = panel({T1: depart_panel(T1, 100, [20, 0, 0])})
        assert total_delay(p, T1, local(8), local(23)) == 0.0


def assignment(t, kind, order=None, wave=None, dist=1.0):
    return TileZoneAssignment(t, kind, order, wave, dist)


class TestScalars:
    def test_tile_scalars(self):
        p = panel({T1: depart_panel(T1, 100, [0, 40, 40]), T2: depart_panel(T2, 80, [0, 8, 8]),
                   T3: [(50, 90)] * 3})
        asg = [assignment(T1, ZoneKind.ORDER, local(8), 0, 1.0),
               assignment(T2, ZoneKind.WARNING, local(8), 0, 2.0),
               assignment(T3, ZoneKind.EXTERNAL, None, None, 5.0)]
        out = {s.tile: s for s in tile_scalars(p, asg, S0.shift(1), local(23),
                                               [DamageSummary(T1, 2, 0.375), DamageSummary(T2, 1, 0.75)])}
        assert out[T1].compliance_at_tstar == pytest.approx(0.4)
        assert out[T1].dedi == 0
        assert out[T2].dedi == 1
        assert out[T1].total_delay == pytest.approx(40 * 4 + 40 * 12)
        assert out[T2].total_delay is None
        assert out[T3].compliance_at_tstar == 0.0 and out[T3].dedi is None

    def test_warning_delay_optional(self):
        p = panel({T2: depart_panel(T2, 80, [0, 8, 8])})
        (s,) = tile_scalars(p, [assignment(T2, ZoneKind.WARNING, local(8))], S0.shift(1), local(23),
                            include_warning_delay=True)
        assert s.total_delay == pytest.approx(8 * 4 + 8 * 12)

    def test_influx(self):
        p = panel({T1: [(100, 119)], T2: [(100, 121)], T3: [(100, 50)]})
        assert influx_tiles(p, [T1, T2, T3], S0) == [(T2, pytest.approx(0.21))]

    def test_correlation_uses_distance(self):
        p = panel({t: [(100, 100 - 10 * i)] for i, t in enumerate((T1, T2, T3, T4))})
        asg = [assignment(t, ZoneKind.ORDER, local(0), 0, float(i)) for i, t in enumerate((T1, T2, T3, T4))]
        r, pval = compliance_distance_correlation(tile_scalars(p, asg, S0, local(8)), asg)
        assert r == pytest.approx(1.0) and pval == 0.0

    def test_zone_departures(self):
        p = panel({T1: depart_panel(T1, 100, [1, 2, 3]), T2: depart_panel(T2, 100, [4, 5, 6])})
        assert zone_departures(p, [T1, T2], local(8), local(23)) == {S0.shift(1): 7.0, S0.shift(2): 9.0}


class TestGroupProfile:
    def scalars(self, flags):
        from evacmetrics.popmetrics import TileScalars
        return [TileScalars(t, 0.5, f, None) for t, f in zip((T1, T2, T3, T4), flags)]

    def rows(self):
        vals = [(10.0, 1.0), (30.0, None), (20.0, 4.0), (40.0, 8.0)]
        return [IndicatorRow(t, {"pct_elderly": a, "fire_risk_index": b})
                for t, (a, b) in zip((T1, T2, T3, T4), vals)]

    def test_hand_means(self):
        prof = dedi_group_profile(self.scalars([1, 1, 0, 0]), self.rows())
        assert prof.means[1] == {"fire_risk_index": 1.0, "pct_elderly": 20.0}
        assert prof.means[0] == {"fire_risk_index": 6.0, "pct_elderly": 30.0}
        assert prof.sizes == {1: 2, 0: 2}

    def test_singleton(self):
        prof = dedi_group_profile(self.scalars([1, 0, None, None]), self.rows())
        assert prof.means[1]["pct_elderly"] == 10.0 and prof.means[0]["pct_elderly"] == 30.0

    def test_empty_hotspot_group(self):
        with pytest.raises(EmptyGroup) as exc:
            dedi_group_profile(self.scalars([0, 0, 0, 0]), self.rows())
        assert exc.value.which == 1
