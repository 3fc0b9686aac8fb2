import pytest

from faultlab.faults import Group
from faultlab.sim import Simulation
from faultlab.telemetry import (StreamSample, Telemetry, TelemetryError,
                                latency_stats, percentile)

import oracles


def make(delay=300.0):
    sim = Simulation(seed=1)
    tel = Telemetry(sim, availability_delay_s=delay)
    tel.start()
    return sim, tel


def test_percentile_nearest_rank_frozen_values():
    vals = list(range(1, 101))
    stats = latency_stats([float(v) for v in vals])
    assert stats.mean == pytest.approx(50.5)
    assert stats.p90 == 90
    assert stats.p99 == 99
    assert stats.p995 == 100
    for q in (1, 25, 50, 75, 90, 99, 99.5, 100):
        assert percentile(vals, q) == oracles.nearest_rank_percentile(vals, q)


def test_percentile_single_value():
    assert percentile([7.0], 99) == 7.0
    assert percentile([7.0], 1) == 7.0


def test_stream_visible_after_second_completes():
    sim, tel = make()
    tel.register_experiment("e1")
    tel.record_kpi("sps", True, Group.CANARY, "e1")
    sim.run_until(500)
    assert tel.query_stream("e1", window_s=10) == []
    sim.run_until(1000)
    samples = tel.query_stream("e1", window_s=10)
    assert StreamSample(0, "e1", Group.CANARY, 1, 0) in samples
    assert StreamSample(0, "e1", Group.BASELINE, 0, 0) in samples


def test_stream_zero_fills_quiet_seconds():
    sim, tel = make()
    tel.register_experiment("e1")
    tel.record_kpi("sps", False, Group.BASELINE, "e1")
    sim.run_until(3000)
    samples = tel.query_stream("e1", window_s=3)
    assert len(samples) == 6  # three seconds x two groups
    assert sum(s.error for s in samples) == 1


def test_stream_rejects_unknown_experiment():
    _, tel = make()
    with pytest.raises(TelemetryError):
        tel.query_stream("ghost", window_s=5)


def test_aggregates_hidden_until_delay_passes():
    sim, tel = make(delay=300.0)
    tel.record_request("api", 12.0, False)
    sim.run_until(2000)
    assert tel.query_aggregate("request_rate", cluster="api") == []
    sim.run_until(299_999)
    assert tel.query_aggregate("request_rate", cluster="api") == []
    sim.run_until(300_000)
    assert tel.query_aggregate("request_rate", cluster="api") == [(0, 1.0)]


def test_aggregate_series_values():
    sim, tel = make(delay=1.0)
    tel.cluster_size_of = lambda cluster: 2
    for _ in range(10):
        tel.record_request("api", 20.0, False)
    tel.record_request("api", 120.0, True)
    sim.run_until(5000)
    assert tel.query_aggregate("request_rate", cluster="api") == [(0, 11.0)]
    (_, err), = tel.query_aggregate("error_rate", cluster="api")
    assert err == pytest.approx(1 / 11)
    (_, lat), = tel.query_aggregate("latency_mean", cluster="api")
    assert lat == pytest.approx((20.0 * 10 + 120.0) / 11)
    (_, cpu), = tel.query_aggregate("cpu_pct", cluster="api")
    r = 11.0 / 2
    assert cpu == pytest.approx(100 * r / (r + 50.0))


def test_kpi_conservation_between_paths():
    sim, tel = make(delay=2.0)
    tel.register_experiment("e1")
    rng_groups = [Group.NONE, Group.BASELINE, Group.CANARY]
    emitted = 0
    grouped = 0

    def pump():
        nonlocal emitted, grouped
        for i in range(5000):
            g = rng_groups[i % 3]
            tel.record_kpi("sps", i % 7 != 0, g, "e1" if g is not Group.NONE else None)
            emitted += 1
            grouped += g is not Group.NONE
            if i % 50 == 49:
                yield 100

    sim.spawn(pump())
    sim.run_until(60_000)

    stream = tel.query_stream("e1", window_s=10_000)
    stream_total = sum(s.success + s.error for s in stream)
    assert stream_total == grouped

    agg = 0.0
    for group in ("baseline", "canary"):
        for metric in ("kpi.sps.success", "kpi.sps.error"):
            agg += sum(v for _, v in tel.query_aggregate(
                metric, experiment="e1", group=group))
    assert agg == grouped

    total_agg = sum(v for _, v in tel.query_aggregate("kpi.sps.success"))
    total_agg += sum(v for _, v in tel.query_aggregate("kpi.sps.error"))
    assert total_agg == emitted


def test_dependency_observations_and_triggers():
    sim, tel = make()
    tel.record_request("api", 10.0, False)
    tel.record_request("api", 10.0, False)
    tel.record_dependency("api", "command", "GetB", 25.0, first_in_run=True)
    tel.record_dependency("api", "command", "GetB", 35.0, first_in_run=False)
    sim.run_until(2000)
    obs = tel.dependency_observations("api", "command", "GetB")
    assert obs["samples"] == 2
    assert obs["trigger_pct"] == pytest.approx(50.0)
    assert obs["max_rps"] == 2.0
    assert sorted(obs["latencies"]) == [25.0, 35.0]


def test_rejection_counts():
    sim, tel = make(delay=0.5)
    tel.record_rejection("api", "GetB")
    tel.record_rejection("api", "GetB")
    sim.run_until(3000)
    assert tel.rejection_count("api", "GetB") == 2
    pts = tel.query_aggregate("threadpool_rejected", cluster="api", command="GetB")
    assert pts == [(0, 2.0)]
