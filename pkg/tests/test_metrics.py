from __future__ import annotations

import numpy as np
import pytest

from arterialsim.engine import run
from arterialsim.metrics import (
    SweepResult,
    ThroughputSeries,
    approach_lanes,
    capacity_of,
    corridor_lanes,
    first_minute_count,
    linear_fit,
    queue_trend,
    read_queues_csv,
    read_sweep_csv,
    read_throughput_csv,
    smart_share_curve,
    sweep,
    total_crossings,
    window_max,
    write_queues_csv,
    write_sweep_csv,
    write_throughput_csv,
)
from arterialsim.network import ScenarioError
from arterialsim.scenario import build_arterial, build_single_intersection


@pytest.fixture(scope="module")
def short_run():
    return run(build_single_intersection(duration=300.0))


def test_windowed_totals_additive():
    s = ThroughputSeries("d", np.sort(np.random.default_rng(1).uniform(0, 1000, 400)))
    fine = s.windowed_totals(10.0, 1000.0)
    coarse = s.windowed_totals(50.0, 1000.0)
    assert fine.sum() == coarse.sum() == 400
    assert np.array_equal(fine.reshape(-1, 5).sum(axis=1), coarse)


def test_windowed_totals_half_open():
    s = ThroughputSeries("d", [0.0, 10.0, 19.999, 20.0])
    assert list(s.windowed_totals(10.0, 30.0)) == [1, 2, 1]
    with pytest.raises(ValueError):
        s.windowed_totals(0.0, 30.0)


def test_flows_and_count():
    s = ThroughputSeries("d", [0.0, 2.5, 3.5])
    assert np.allclose(s.flows, [1440.0, 3600.0])
    assert s.count(0.0, 3.5) == 2


def test_first_minute_and_totals(short_run):
    n = first_minute_count(short_run, "W_in/stop")
    assert 0 < n <= 30
    assert total_crossings(short_run) == total_crossings(short_run, "I1")
    assert total_crossings(short_run) == sum(len(short_run.crossings(f"{l}/stop")) for l in ("W_in", "N_in"))


def test_unknown_detector_and_intersection(short_run):
    with pytest.raises(KeyError):
        ThroughputSeries.from_result(short_run, "nope/stop")
    with pytest.raises(ScenarioError):
        approach_lanes(short_run.config, "I9")


def test_zero_demand_zero_crossings():
    cfg = build_arterial(3, 200.0, 0.0, duration=120.0)
    cfg = cfg.with_(demand=tuple(f.__class__(f.source_lane, 0.0, f.turn_ratios) for f in cfg.demand))
    r = run(cfg)
    assert total_crossings(r) == 0
    assert r.in_network == 0


def test_corridor_lanes_are_east_west():
    cfg = build_arterial(3, 200.0, 0.0)
    lanes = corridor_lanes(cfg)
    assert lanes and all(l.startswith(("EB", "WB")) for l in lanes)


def test_capacity_needs_time_after_warmup(short_run):
    with pytest.raises(ValueError):
        capacity_of(short_run)


def test_linear_fit():
    f = linear_fit([0.0, 1.0], [2.0, 5.0])
    assert (f.slope, f.intercept, f.r2) == pytest.approx((3.0, 2.0, 1.0))
    assert linear_fit([1.0], [2.0]) is None
    assert linear_fit([1.0, 1.0], [2.0, 3.0]) is None
    assert linear_fit([0.0, 1.0, 2.0], [1.0, 1.0, 1.0]).r2 == 1.0


def test_window_max_and_trend():
    t = np.arange(0.0, 100.0, 5.0)
    v = t / 10.0
    assert list(window_max(t, v, 50.0)) == [4.5, 9.5]
    assert queue_trend(t, v, 0.0, 100.0) == pytest.approx(0.1)
    assert queue_trend(t, v, 200.0, 300.0) == 0.0


def test_sweep_serial_matches_parallel():
    cfg = build_single_intersection(duration=60.0)
    a = sweep(cfg, "a_max", [1.0, 2.6])
    b = sweep(cfg, "a_max", [1.0, 2.6], workers=2)
    assert a.outcomes == b.outcomes
    assert a.outcomes[0] <= a.outcomes[1]
    assert "a_max" in a.table()


def test_share_curve_rejects_bad_share():
    with pytest.raises(ScenarioError):
        smart_share_curve(build_arterial(1, 200.0, 0.0), [1.2], hours=2)


def test_throughput_csv_round_trip(tmp_path, short_run):
    s = ThroughputSeries.from_result(short_run, "W_in/stop")
    path = tmp_path / "th.csv"
    write_throughput_csv(path, [s], 60.0, 300.0)
    rows = read_throughput_csv(path)["W_in/stop"]
    assert [n for _, _, n in rows] == list(s.windowed_totals(60.0, 300.0))
    assert rows[-1][1] == 300.0


def test_queues_csv_round_trip(tmp_path, short_run):
    path = tmp_path / "q.csv"
    write_queues_csv(path, short_run)
    back = read_queues_csv(path)
    assert set(back) == set(short_run.queue_series)
    for lane, rows in back.items():
        assert [(c, cl) for _, c, cl in rows] == [(int(c), bool(cl)) for c, cl in short_run.queue_series[lane]]


def test_sweep_csv_round_trip(tmp_path):
    res = SweepResult("downstream_distance", [None, 300.0, 1.0 / 3.0], [1.0, 2.5, 1.0 / 7.0])
    path = tmp_path / "s.csv"
    write_sweep_csv(path, res)
    back = read_sweep_csv(path)
    assert back.values == res.values and back.outcomes == res.outcomes
