"""Dual-path telemetry.

Operational events flow into two stores with very different freshness:

* a per-second stream of KPI counts split by experiment group, readable
  the moment a second completes, used by the auto-stop monitor;
* aggregate time series (request rate, errors, latency, synthetic CPU,
  rejections, KPI counts) that only become readable after a configurable
  availability delay, used by the canary judge.

Both paths are fed by the same counters, so nothing is ever double counted
or dropped between them.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field

from .faults import Group
from .sim import Process, Simulation


class TelemetryError(KeyError):
    pass


@dataclass(frozen=True)
class StreamSample:
    """KPI counts for one experiment group during one virtual second."""

    second: int
    experiment_id: str
    group: Group
    success: int
    error: int


@dataclass(frozen=True)
class LatencyStats:
    mean: float
    p90: float
    p99: float
    p995: float
    count: int


def percentile(values: list[float], q: float) -> float:
    """Nearest-rank percentile: value at rank ceil(q/100 * n) of the sorted list."""
    if not values:
        raise ValueError("percentile of empty list")
    s = sorted(values)
    rank = math.ceil(q / 100.0 * len(s))
    return s[max(rank, 1) - 1]


def latency_stats(values: list[float]) -> LatencyStats:
    return LatencyStats(
        mean=sum(values) / len(values),
        p90=percentile(values, 90),
        p99=percentile(values, 99),
        p995=percentile(values, 99.5),
        count=len(values),
    )


Tags = tuple[tuple[str, str], ...]


def _tags(**kw: str) -> Tags:
    return tuple(sorted((k, str(v)) for k, v in kw.items()))


@dataclass
class _SecondAccumulator:
    kpi: dict = field(default_factory=lambda: defaultdict(lambda: [0, 0]))
    kpi_grouped: dict = field(default_factory=lambda: defaultdict(lambda: [0, 0]))
    requests: dict = field(default_factory=lambda: defaultdict(lambda: [0, 0, 0.0]))
    dep_calls: dict = field(default_factory=lambda: defaultdict(int))
    rejections: dict = field(default_factory=lambda: defaultdict(int))


class Telemetry:
    def __init__(self, sim: Simulation, availability_delay_s: float = 300.0,
                 cpu_half_load_rps: float = 50.0) -> None:
        self.sim = sim
        self.availability_delay_s = availability_delay_s
        self.cpu_half_load_rps = cpu_half_load_rps
        self.cluster_size_of = lambda cluster: 1

        self._experiments: set[str] = set()
        # stream path: (experiment, group, channel, second) -> [success, error]
        self._stream: dict[tuple, list[int]] = defaultdict(lambda: [0, 0])
        # aggregate path
        self._series: dict[tuple[str, Tags], list[tuple[int, float]]] = defaultdict(list)
        self._acc = _SecondAccumulator()
        self._acc_second = 0
        # whole-run dependency observations, for introspection
        self._dep_latencies: dict[tuple, list[float]] = defaultdict(list)
        self._dep_max_rps: dict[tuple, float] = defaultdict(float)
        self._dep_triggers: dict[tuple, int] = defaultdict(int)
        self._handler_runs: dict[str, int] = defaultdict(int)
        self._fallback_successes: dict[tuple, int] = defaultdict(int)
        self._bulkhead_high: dict[tuple, int] = defaultdict(int)
        self._rejection_totals: dict[tuple, int] = defaultdict(int)
        # exact event counts, used to prove conservation
        self.kpi_emitted: dict[tuple, list[int]] = defaultdict(lambda: [0, 0])

    def start(self) -> None:
        self.sim.spawn(self._flush_loop())

    # --- recording (hot path) -------------------------------------------

    def register_experiment(self, experiment_id: str) -> None:
        self._experiments.add(experiment_id)

    def record_kpi(self, channel: str, ok: bool, group: Group,
                   experiment_id: str | None) -> None:
        self._roll()
        slot = 0 if ok else 1
        self._acc.kpi[channel][slot] += 1
        self.kpi_emitted[(channel, experiment_id, group)][slot] += 1
        if group is not Group.NONE and experiment_id is not None:
            sec = int(self.sim.now_s)
            self._stream[(experiment_id, group, channel, sec)][slot] += 1
            self._acc.kpi_grouped[(channel, experiment_id, group)][slot] += 1

    def record_request(self, cluster: str, latency_ms: float, error: bool) -> None:
        self._roll()
        row = self._acc.requests[cluster]
        row[0] += 1
        row[1] += 1 if error else 0
        row[2] += latency_ms
        self._handler_runs[cluster] += 1

    def record_dependency(self, cluster: str, kind: str, name: str,
                          latency_ms: float, first_in_run: bool) -> None:
        self._roll()
        key = (cluster, kind, name)
        self._acc.dep_calls[key] += 1
        self._dep_latencies[key].append(latency_ms)
        if first_in_run:
            self._dep_triggers[key] += 1

    def record_rejection(self, cluster: str, command: str) -> None:
        self._roll()
        self._acc.rejections[(cluster, command)] += 1
        self._rejection_totals[(cluster, command)] += 1

    def record_fallback(self, cluster: str, command: str, ok: bool) -> None:
        if ok:
            self._fallback_successes[(cluster, command)] += 1

    def record_bulkhead_active(self, cluster: str, command: str, active: int) -> None:
        key = (cluster, command)
        if active > self._bulkhead_high[key]:
            self._bulkhead_high[key] = active

    # --- the stream path --------------------------------------------------

    def query_stream(self, experiment_id: str, window_s: int,
                     channel: str = "sps") -> list[StreamSample]:
        """Zero-filled samples for both groups over the last completed seconds."""
        if experiment_id not in self._experiments:
            raise TelemetryError(f"unknown experiment {experiment_id!r}")
        end = int(self.sim.now_s)  # first incomplete second
        start = max(end - window_s, 0)
        out = []
        for sec in range(start, end):
            for group in (Group.BASELINE, Group.CANARY):
                s, e = self._stream.get((experiment_id, group, channel, sec), (0, 0))
                out.append(StreamSample(
                    second=sec, experiment_id=experiment_id, group=group,
                    success=s, error=e))
        return out

    # --- the aggregate path ------------------------------------------------

    def query_aggregate(self, metric: str, start_s: float | None = None,
                        end_s: float | None = None, **tags: str) -> list[tuple[int, float]]:
        """Points for a series, hiding anything younger than the availability delay."""
        horizon = self.sim.now_s - self.availability_delay_s
        pts = self._series.get((metric, _tags(**tags)), [])
        out = []
        for ts, val in pts:
            if ts > horizon:
                break
            if start_s is not None and ts < start_s:
                continue
            if end_s is not None and ts >= end_s:
                continue
            out.append((ts, val))
        return out

    def series_names(self) -> list[tuple[str, Tags]]:
        return sorted(self._series.keys())

    # --- introspection feed --------------------------------------------

    def dependency_observations(self, cluster: str, kind: str, name: str) -> dict:
        key = (cluster, kind, name)
        lat = self._dep_latencies.get(key, [])
        runs = self._handler_runs.get(cluster, 0)
        triggers = self._dep_triggers.get(key, 0)
        return {
            "latencies": lat,
            "max_rps": self._dep_max_rps.get(key, 0.0),
            "trigger_pct": 100.0 * triggers / runs if runs else 0.0,
            "fallback_successes": self._fallback_successes.get(key[:1] + key[2:], 0),
            "bulkhead_high": self._bulkhead_high.get((cluster, name), 0),
            "samples": len(lat),
        }

    def rejection_count(self, cluster: str, command: str) -> int:
        return self._rejection_totals[(cluster, command)]

    # --- per-second flush ----------------------------------------------

    def flush(self) -> None:
        """Force pending whole seconds out; call before reading mid-second."""
        self._flush_through(int(self.sim.now_s))

    def _roll(self) -> None:
        sec = int(self.sim.now_s)
        if sec > self._acc_second:
            self._flush_through(sec)

    def _flush_loop(self) -> Process:
        while True:
            yield 1000
            self._flush_through(int(self.sim.now_s))

    def _flush_through(self, current_second: int) -> None:
        """Seconds before ``current_second`` are complete; emit their points."""
        sec = self._acc_second
        if current_second <= sec:
            return
        acc, self._acc = self._acc, _SecondAccumulator()
        self._acc_second = current_second

        for channel, (s, e) in acc.kpi.items():
            self._series[(f"kpi.{channel}.success", _tags())].append((sec, float(s)))
            self._series[(f"kpi.{channel}.error", _tags())].append((sec, float(e)))
        for (channel, exp, group), (s, e) in acc.kpi_grouped.items():
            tags = _tags(experiment=exp, group=group.value)
            self._series[(f"kpi.{channel}.success", tags)].append((sec, float(s)))
            self._series[(f"kpi.{channel}.error", tags)].append((sec, float(e)))
        for cluster, (count, errs, lat_sum) in acc.requests.items():
            tags = _tags(cluster=cluster)
            rate = float(count)
            self._series[("request_rate", tags)].append((sec, rate))
            self._series[("error_rate", tags)].append((sec, errs / count))
            self._series[("latency_mean", tags)].append((sec, lat_sum / count))
            n = max(self.cluster_size_of(cluster), 1)
            per_instance = rate / n
            cpu = 100.0 * per_instance / (per_instance + self.cpu_half_load_rps)
            self._series[("cpu_pct", tags)].append((sec, cpu))
        for key, count in acc.dep_calls.items():
            if count > self._dep_max_rps[key]:
                self._dep_max_rps[key] = float(count)
        for (cluster, command), count in acc.rejections.items():
            tags = _tags(cluster=cluster, command=command)
            self._series[("threadpool_rejected", tags)].append((sec, float(count)))
