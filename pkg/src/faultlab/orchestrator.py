"""Experiment lifecycle and the platform that runs it.

An experiment moves through a strict state machine:

    Created -> Provisioning -> Running -> Stopping -> Analyzing -> Completed

Aborts (manual, guardrail, or auto-stop) leave Running through the same
Stopping state but skip analysis of delayed aggregates, ending Aborted
with a partial verdict computed from the fresh stream. Any internal error
lands in Failed. Terminal states are absorbing.

Cleanup always unpublishes the edge event before touching clusters, so no
request can be routed at infrastructure that is being torn down.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from enum import Enum
from typing import Any, Optional

from .analysis import (CanaryVerdict, Direction, MetricClass, MetricInput,
                       Verdict, judge)
from .config import PlatformConfig
from .edge import EdgeFilter, ExperimentEvent
from .faults import FaultKind, FaultRule, Group
from .introspect import (DependencySnapshot, ExperimentType,
                         GeneratedExperiment, RunHistoryEntry, WarningRecord,
                         build_snapshots, detect_warnings, generate, schedule)
from .mesh import Mesh
from .registry import DiscoveryRegistry
from .safety import Admission, GroupCounts, SafetyController, monitor_impact
from .sim import Completion, Process, Simulation
from .store import ExperimentStore
from .telemetry import Telemetry

_ID_RE = re.compile(r"^[A-Za-z0-9._-]+$")


class OrchestratorError(RuntimeError):
    pass


class SafetyRejection(OrchestratorError):
    def __init__(self, admission: Admission) -> None:
        super().__init__(f"rejected: {admission.reason.value}: {admission.detail}")
        self.admission = admission


class IllegalTransition(OrchestratorError):
    pass


class ExperimentState(str, Enum):
    CREATED = "created"
    PROVISIONING = "provisioning"
    RUNNING = "running"
    STOPPING = "stopping"
    ANALYZING = "analyzing"
    COMPLETED = "completed"
    ABORTED = "aborted"
    FAILED = "failed"


TERMINAL_STATES = {ExperimentState.COMPLETED, ExperimentState.ABORTED,
                   ExperimentState.FAILED}

LEGAL_TRANSITIONS: dict[ExperimentState, set[ExperimentState]] = {
    ExperimentState.CREATED: {ExperimentState.PROVISIONING, ExperimentState.FAILED},
    ExperimentState.PROVISIONING: {ExperimentState.RUNNING, ExperimentState.FAILED},
    ExperimentState.RUNNING: {ExperimentState.STOPPING, ExperimentState.FAILED},
    ExperimentState.STOPPING: {ExperimentState.ANALYZING, ExperimentState.ABORTED,
                               ExperimentState.FAILED},
    ExperimentState.ANALYZING: {ExperimentState.COMPLETED, ExperimentState.FAILED},
    ExperimentState.COMPLETED: set(),
    ExperimentState.ABORTED: set(),
    ExperimentState.FAILED: set(),
}


@dataclass
class Experiment:
    """One chaos experiment and its full lifecycle record."""

    experiment_id: str
    fault: FaultRule
    sampling_pct: float
    duration_s: float
    region: str
    state: ExperimentState = ExperimentState.CREATED
    log: list[tuple[float, str, str]] = field(default_factory=list)
    submitted_at: Optional[datetime] = None
    started_s: Optional[float] = None
    ended_s: Optional[float] = None
    abort_reason: Optional[str] = None
    verdict: Optional[CanaryVerdict] = None
    vip_original: Optional[str] = None
    vip_baseline: Optional[str] = None
    vip_canary: Optional[str] = None
    cluster_baseline: Optional[str] = None
    cluster_canary: Optional[str] = None
    canary_size: int = 0
    error: Optional[str] = None
    exp_type: Optional[ExperimentType] = None

    @property
    def terminal(self) -> bool:
        return self.state in TERMINAL_STATES

    def transition(self, to: ExperimentState, at_s: float, note: str = "") -> None:
        if to not in LEGAL_TRANSITIONS[self.state]:
            raise IllegalTransition(
                f"{self.experiment_id}: {self.state.value} -> {to.value}")
        self.log.append((at_s, to.value, note))
        self.state = to

    # Event guards. Each applies an external event if, and only if, the
    # current state allows it, and reports whether anything happened.
    # The orchestrator and the state-machine tests share these.

    def on_timer_expiry(self, at_s: float) -> bool:
        if self.state is ExperimentState.RUNNING:
            self.transition(ExperimentState.STOPPING, at_s, "duration elapsed")
            return True
        return False

    def on_abort(self, reason: str, at_s: float) -> bool:
        if self.state is ExperimentState.RUNNING:
            self.abort_reason = reason
            self.transition(ExperimentState.STOPPING, at_s, f"abort: {reason}")
            return True
        return False

    def on_cleanup_done(self, at_s: float) -> bool:
        if self.state is not ExperimentState.STOPPING:
            return False
        if self.abort_reason is not None:
            self.transition(ExperimentState.ABORTED, at_s,
                            f"cleaned up after {self.abort_reason}")
        else:
            self.transition(ExperimentState.ANALYZING, at_s, "cleaned up")
        return True

    def on_analysis_done(self, at_s: float) -> bool:
        if self.state is ExperimentState.ANALYZING:
            self.transition(ExperimentState.COMPLETED, at_s, "verdict recorded")
            return True
        return False

    def on_internal_error(self, message: str, at_s: float) -> bool:
        if self.terminal:
            return False
        self.error = message
        self.transition(ExperimentState.FAILED, at_s, message)
        return True

    # --- serialization ---------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        from .faults import ActionKind
        fault: dict[str, Any] = {
            "kind": self.fault.point.kind.value,
            "name": self.fault.point.name,
            "action": self.fault.action.kind.value,
        }
        if self.fault.action.kind is ActionKind.ADD_LATENCY:
            fault["latency_ms"] = self.fault.action.latency_ms
        verdict = None
        if self.verdict is not None:
            verdict = {
                "overall": self.verdict.overall.value,
                "score": self.verdict.score,
                "alpha": self.verdict.alpha,
                "metrics": [
                    {
                        "name": c.name,
                        "class": c.metric_class.value,
                        "direction": c.direction.value,
                        "classification": c.classification.value,
                        "p_value": c.p_value,
                        "u_canary": c.u_canary,
                        "method": c.method,
                    }
                    for c in self.verdict.comparisons
                ],
            }
        return {
            "experiment_id": self.experiment_id,
            "state": self.state.value,
            "fault": fault,
            "exp_type": self.exp_type.value if self.exp_type else None,
            "sampling_pct": self.sampling_pct,
            "duration_s": self.duration_s,
            "region": self.region,
            "submitted_at": self.submitted_at.isoformat() if self.submitted_at else None,
            "started_s": self.started_s,
            "ended_s": self.ended_s,
            "abort_reason": self.abort_reason,
            "error": self.error,
            "verdict": verdict,
            "vips": {
                "original": self.vip_original,
                "baseline": self.vip_baseline,
                "canary": self.vip_canary,
            },
            "clusters": {
                "baseline": self.cluster_baseline,
                "canary": self.cluster_canary,
                "canary_size": self.canary_size,
            },
            "log": [{"at_s": at, "state": st, "note": note}
                    for at, st, note in self.log],
        }


class Platform:
    """Wires the mesh, edge filter, telemetry, guardrails, and store together."""

    def __init__(self, config: PlatformConfig,
                 store: Optional[ExperimentStore] = None) -> None:
        self.config = config
        self.sim = Simulation(seed=config.seed)
        self.telemetry = Telemetry(self.sim,
                                   availability_delay_s=config.availability_delay_s,
                                   cpu_half_load_rps=config.cpu_half_load_rps)
        self.registry = DiscoveryRegistry()
        self.mesh = Mesh(self.sim, config.topology, self.registry, self.telemetry)
        self.edge = EdgeFilter()
        self.safety = SafetyController(config.safety, list(config.regions),
                                       failovers=dict(config.failovers))
        self.store = store if store is not None else ExperimentStore(config.store_path)
        self.experiments: dict[str, Experiment] = {}
        self._stop_signals: dict[str, Completion] = {}
        self._workload_on = False
        self._workload_gen = 0
        self._ids = 0
        self._wall_start = config.clock_start or datetime.now().astimezone()
        self.recovered: list[str] = []

        self.telemetry.start()
        self.mesh.boot()
        self._recover()

    # --- clock --------------------------------------------------------------

    def wall_now(self) -> datetime:
        return self._wall_start + timedelta(seconds=self.sim.now_s)

    # --- crash recovery ----------------------------------------------------

    def _recover(self) -> None:
        """Mark anything left non-terminal by a dead process as failed.

        The registry is rebuilt from the topology alone, so clusters and
        VIPs owned by the dead run are implicitly gone; the record just
        needs to say so.
        """
        for record in self.store.non_terminal({s.value for s in TERMINAL_STATES}):
            record = dict(record)
            record["state"] = ExperimentState.FAILED.value
            record["error"] = "platform restarted while experiment was in flight"
            self.store.put_experiment(record)
            self.recovered.append(record["experiment_id"])

    # --- workload ------------------------------------------------------------

    def start_workload(self) -> None:
        if self._workload_on:
            return
        self._workload_on = True
        self._workload_gen += 1
        self.sim.spawn(self._drive_traffic(self._workload_gen))

    def stop_workload(self) -> None:
        self._workload_on = False

    def _drive_traffic(self, generation: int) -> Process:
        rate = self.config.request_rate_rps
        if rate <= 0:
            return
        while self._workload_on and generation == self._workload_gen:
            yield self.sim.rng.expovariate(rate) * 1000.0
            user = f"user-{self.sim.rng.randrange(self.config.users)}"
            ctx = self.edge.filter_request(user)
            self.sim.spawn(self.mesh.serve_request(ctx))

    # --- submission ------------------------------------------------------------

    def submit(self, fault: FaultRule, sampling_pct: Optional[float] = None,
               duration_s: Optional[float] = None, region: Optional[str] = None,
               experiment_id: Optional[str] = None,
               exp_type: Optional[ExperimentType] = None) -> Experiment:
        """Validate, gate, and launch an experiment. Raises on rejection."""
        pct = self.config.default_sampling_pct if sampling_pct is None else sampling_pct
        duration = self.config.default_duration_s if duration_s is None else duration_s
        region = region or self.config.default_region

        if experiment_id is None:
            self._ids += 1
            experiment_id = f"exp-{self._ids:04d}"
            while self.store.get_experiment(experiment_id) is not None:
                self._ids += 1
                experiment_id = f"exp-{self._ids:04d}"
        if not _ID_RE.match(experiment_id):
            raise OrchestratorError(
                f"experiment id {experiment_id!r} must match [A-Za-z0-9._-]+")
        if self.store.get_experiment(experiment_id) is not None:
            raise OrchestratorError(f"experiment {experiment_id!r} already exists")
        if not 0 < pct <= 50:
            raise OrchestratorError("sampling_pct must be in (0, 50]")
        if duration <= 0:
            raise OrchestratorError("duration_s must be positive")
        if not self.config.topology.injection_point_exists(
                fault.point.kind.value, fault.point.name):
            raise OrchestratorError(
                f"no {fault.point.kind.value} named {fault.point.name!r} in topology")

        exp = Experiment(
            experiment_id=experiment_id,
            fault=fault,
            sampling_pct=pct,
            duration_s=duration,
            region=region,
            submitted_at=self.wall_now(),
            exp_type=exp_type,
        )
        admission = self.safety.admit(experiment_id, pct, region, self.wall_now())
        if not admission.admitted:
            raise SafetyRejection(admission)

        self.experiments[experiment_id] = exp
        self._stop_signals[experiment_id] = Completion()
        self._persist(exp)
        self.sim.spawn(self._lifecycle(exp))
        return exp

    def get(self, experiment_id: str) -> Experiment:
        try:
            return self.experiments[experiment_id]
        except KeyError:
            raise OrchestratorError(f"unknown experiment {experiment_id!r}") from None

    def abort(self, experiment_id: str, reason: str = "manual") -> bool:
        exp = self.get(experiment_id)
        return self._request_stop(exp, reason)

    def _request_stop(self, exp: Experiment, reason: str) -> bool:
        if exp.on_abort(reason, self.sim.now_s):
            self._persist(exp)
            self._stop_signals[exp.experiment_id].fire(reason)
            return True
        return False

    # --- lifecycle process ----------------------------------------------------

    def _lifecycle(self, exp: Experiment) -> Process:
        try:
            yield from self._provision(exp)
            yield from self._run(exp)
            yield from self._cleanup(exp)
            if exp.state is ExperimentState.ANALYZING:
                yield from self._analyze(exp)
        except Exception as exc:  # noqa: BLE001 - anything else is a failed run
            if exp.on_internal_error(f"{type(exc).__name__}: {exc}", self.sim.now_s):
                self._persist(exp)
            self._best_effort_cleanup(exp)
        finally:
            self.safety.release(exp.experiment_id, exp.sampling_pct, exp.region)

    def _provision(self, exp: Experiment) -> Process:
        exp.transition(ExperimentState.PROVISIONING, self.sim.now_s)
        self._persist(exp)

        edge_svc = self.config.topology.edge
        exp.vip_original = edge_svc.vip
        exp.vip_baseline = self._allocate_vip(f"{edge_svc.vip}-chap-baseline")
        exp.vip_canary = self._allocate_vip(f"{edge_svc.vip}-chap-canary")
        exp.cluster_baseline = f"{edge_svc.name}--{exp.experiment_id}-baseline"
        exp.cluster_canary = f"{edge_svc.name}--{exp.experiment_id}-canary"
        exp.canary_size = max(1, math.ceil(
            edge_svc.cluster_size * exp.sampling_pct / 100.0))

        yield self.config.provisioning_delay_ms
        # dynamic properties are copied onto the clones before the clusters
        # are registered, so no request can observe defaults
        props = dict(edge_svc.dynamic_properties)
        self.mesh.provision_cluster(edge_svc.name, exp.cluster_baseline,
                                    exp.vip_baseline, exp.canary_size, props)
        self.mesh.provision_cluster(edge_svc.name, exp.cluster_canary,
                                    exp.vip_canary, exp.canary_size, props)

        self.telemetry.register_experiment(exp.experiment_id)
        self.edge.publish(ExperimentEvent(
            experiment_id=exp.experiment_id,
            sampling_pct=exp.sampling_pct,
            fault=exp.fault,
            vip_original=exp.vip_original,
            vip_baseline=exp.vip_baseline,
            vip_canary=exp.vip_canary,
        ))
        exp.started_s = self.sim.now_s
        exp.transition(ExperimentState.RUNNING, self.sim.now_s,
                       f"baseline+canary of {exp.canary_size} instances each")
        self._persist(exp)
        self.sim.spawn(self._duration_timer(exp))
        self.sim.spawn(self._watchdog(exp))

    def _allocate_vip(self, base: str) -> str:
        # a second concurrent experiment on the same service gets a
        # disambiguated vip instead of polluting the first one's routing
        if base not in self.registry.vips():
            return base
        suffix = 2
        while f"{base}.{suffix}" in self.registry.vips():
            suffix += 1
        return f"{base}.{suffix}"

    def _duration_timer(self, exp: Experiment) -> Process:
        yield exp.duration_s * 1000.0
        if exp.on_timer_expiry(self.sim.now_s):
            self._persist(exp)
            self._stop_signals[exp.experiment_id].fire("duration")

    def _watchdog(self, exp: Experiment) -> Process:
        """Every second, compare groups over the fresh stream window."""
        cfg = self.config.safety.auto_stop
        while exp.state is ExperimentState.RUNNING:
            yield 1000
            if exp.state is not ExperimentState.RUNNING:
                return
            counts = {Group.BASELINE: [0, 0], Group.CANARY: [0, 0]}
            for sample in self.telemetry.query_stream(
                    exp.experiment_id, window_s=cfg.window_s):
                counts[sample.group][0] += sample.success
                counts[sample.group][1] += sample.error
            decision = monitor_impact(
                GroupCounts(*counts[Group.BASELINE]),
                GroupCounts(*counts[Group.CANARY]), cfg)
            if decision.stop:
                self._request_stop(exp, f"auto_stop:{decision.reason}")
                return

    def _run(self, exp: Experiment) -> Process:
        signal = self._stop_signals[exp.experiment_id]
        yield signal
        exp.ended_s = self.sim.now_s

    def _cleanup(self, exp: Experiment) -> Process:
        # unpublish before teardown: from this instant no new request can
        # be routed at the experiment clusters
        self.edge.unpublish(exp.experiment_id)
        yield self.config.provisioning_delay_ms
        if exp.cluster_baseline:
            self.mesh.destroy_cluster(exp.cluster_baseline)
        if exp.cluster_canary:
            self.mesh.destroy_cluster(exp.cluster_canary)
        if exp.abort_reason is not None:
            exp.verdict = self._partial_verdict(exp)
        exp.on_cleanup_done(self.sim.now_s)
        self._persist(exp)
        self._record_history(exp)

    def _best_effort_cleanup(self, exp: Experiment) -> None:
        self.edge.unpublish(exp.experiment_id)
        for cluster in (exp.cluster_baseline, exp.cluster_canary):
            if cluster and self.registry.instances_for_cluster(cluster):
                self.mesh.destroy_cluster(cluster)
        self._record_history(exp)

    # --- analysis ---------------------------------------------------------------

    def _analyze(self, exp: Experiment) -> Process:
        """Wait out the aggregate availability delay, then judge."""
        ready_at_s = exp.ended_s + self.config.availability_delay_s + 1
        if ready_at_s > self.sim.now_s:
            yield (ready_at_s - self.sim.now_s) * 1000.0
        exp.verdict = judge(self._aggregate_metrics(exp), alpha=self.config.alpha)
        exp.on_analysis_done(self.sim.now_s)
        self._persist(exp)
        self._record_history(exp)

    def _aggregate_metrics(self, exp: Experiment) -> list[MetricInput]:
        start, end = int(exp.started_s), int(exp.ended_s)
        if end <= start:
            return []
        out = []
        channels = sorted({h.kpi for h in self.config.topology.edge.handlers})
        for channel in channels:
            series = {}
            for group in ("baseline", "canary"):
                pts = {}
                for metric, sign in ((f"kpi.{channel}.success", "success"),
                                     (f"kpi.{channel}.error", "error")):
                    pts[sign] = dict(self.telemetry.query_aggregate(
                        metric, start_s=start, end_s=end,
                        experiment=exp.experiment_id, group=group))
                series[group] = pts
            seconds = range(start, end)
            out.append(MetricInput(
                name=f"kpi.{channel}.throughput", metric_class=MetricClass.KPI,
                direction=Direction.LOW_IS_BAD,
                baseline=tuple(series["baseline"]["success"].get(s, 0.0)
                               for s in seconds),
                canary=tuple(series["canary"]["success"].get(s, 0.0)
                             for s in seconds)))
            out.append(MetricInput(
                name=f"kpi.{channel}.errors", metric_class=MetricClass.KPI,
                direction=Direction.HIGH_IS_BAD,
                baseline=tuple(series["baseline"]["error"].get(s, 0.0)
                               for s in seconds),
                canary=tuple(series["canary"]["error"].get(s, 0.0)
                             for s in seconds)))

        health = [("request_rate", Direction.EITHER_IS_SUSPECT),
                  ("latency_mean", Direction.HIGH_IS_BAD),
                  ("error_rate", Direction.HIGH_IS_BAD),
                  ("cpu_pct", Direction.HIGH_IS_BAD)]
        for metric, direction in health:
            base = dict(self.telemetry.query_aggregate(
                metric, start_s=start, end_s=end, cluster=exp.cluster_baseline))
            canary = dict(self.telemetry.query_aggregate(
                metric, start_s=start, end_s=end, cluster=exp.cluster_canary))
            shared = sorted(set(base) & set(canary))
            if not shared:
                continue
            out.append(MetricInput(
                name=f"health.{metric}", metric_class=MetricClass.HEALTH,
                direction=direction,
                baseline=tuple(base[s] for s in shared),
                canary=tuple(canary[s] for s in shared)))
        return out

    def _partial_verdict(self, exp: Experiment) -> CanaryVerdict:
        """Aborted runs are judged on stream data alone, and can only be
        declared Fail or Inconclusive: the delayed aggregates that a full
        Pass needs never arrive for them."""
        start = int(exp.started_s) if exp.started_s is not None else 0
        end = int(exp.ended_s) if exp.ended_s is not None else start
        window = max(end - start, 1)
        per_group: dict[Group, dict[int, list[int]]] = {
            Group.BASELINE: {}, Group.CANARY: {}}
        for s in self.telemetry.query_stream(exp.experiment_id, window_s=10 ** 9):
            if start <= s.second < end:
                per_group[s.group][s.second] = [s.success, s.error]
        seconds = range(start, end)
        metrics = []
        for name, idx, direction in (("kpi.sps.throughput", 0, Direction.LOW_IS_BAD),
                                     ("kpi.sps.errors", 1, Direction.HIGH_IS_BAD)):
            metrics.append(MetricInput(
                name=name, metric_class=MetricClass.KPI, direction=direction,
                baseline=tuple(per_group[Group.BASELINE].get(s, [0, 0])[idx]
                               for s in seconds),
                canary=tuple(per_group[Group.CANARY].get(s, [0, 0])[idx]
                             for s in seconds)))
        verdict = judge(metrics, alpha=self.config.alpha)
        if verdict.overall is not Verdict.FAIL:
            verdict = CanaryVerdict(
                overall=Verdict.INCONCLUSIVE, score=verdict.score,
                comparisons=verdict.comparisons, alpha=verdict.alpha)
        return verdict

    # --- persistence and history ----------------------------------------

    def _persist(self, exp: Experiment) -> None:
        self.store.put_experiment(exp.to_dict())

    def _plan_key_for(self, exp: Experiment) -> str:
        from .faults import ActionKind
        if exp.exp_type is not None:
            etype = exp.exp_type
        elif exp.fault.action.kind is ActionKind.FAIL:
            etype = ExperimentType.FAILURE
        else:
            etype = ExperimentType.LATENCY_CAUSING_FAILURE
        edge_name = self.config.topology.edge.name
        return (f"{edge_name}:{exp.fault.point.kind.value}:"
                f"{exp.fault.point.name}:{etype.value}")

    def _record_history(self, exp: Experiment) -> None:
        failed = (exp.state is ExperimentState.FAILED or
                  (exp.verdict is not None and
                   exp.verdict.overall is Verdict.FAIL))
        self.store.put_history(self._plan_key_for(exp), {
            "last_run_at": self.wall_now().isoformat(),
            "running": not exp.terminal,
            "failed_unreviewed": failed,
            "experiment_id": exp.experiment_id,
        })

    # --- introspection-driven planning ------------------------------------

    def snapshots(self, cluster: Optional[str] = None) -> list[DependencySnapshot]:
        cluster = cluster or self.config.topology.edge.name
        svc = self.mesh.service_of_cluster(cluster)
        return build_snapshots(cluster, svc, self.telemetry, self.sim.now_s)

    def warnings(self, cluster: Optional[str] = None) -> list[WarningRecord]:
        return detect_warnings(self.snapshots(cluster))

    def plan(self, cluster: Optional[str] = None) -> list[GeneratedExperiment]:
        plans = generate(self.snapshots(cluster))
        history = {}
        for key, entry in self.store.history().items():
            last = entry.get("last_run_at")
            history[key] = RunHistoryEntry(
                last_run_at=datetime.fromisoformat(last) if last else None,
                running=bool(entry.get("running")),
                failed_unreviewed=bool(entry.get("failed_unreviewed")),
            )
        return schedule(plans, history, self.config.scheduler, self.wall_now())

    # --- driving ----------------------------------------------------------------

    def run_for(self, seconds: float) -> None:
        self.sim.run_for(seconds * 1000.0)

    def run_until_done(self, experiment_id: str, max_virtual_s: float = 7200.0) -> Experiment:
        exp = self.get(experiment_id)
        deadline = self.sim.now + max_virtual_s * 1000.0
        while not exp.terminal and self.sim.now < deadline:
            self.sim.run_for(1000.0)
        if not exp.terminal:
            raise OrchestratorError(
                f"{experiment_id} still {exp.state.value} after "
                f"{max_virtual_s:g} virtual seconds")
        return exp
