"""Dependency introspection: observe, warn, score, generate, schedule.

From telemetry and the topology this module builds one snapshot per
(cluster, dependency), flags risky configurations, scores how critical
and how safe each dependency is to perturb, turns the snapshots into
concrete experiment plans, and orders the eligible plans for execution.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timedelta
from enum import Enum
from typing import Optional, Sequence

from .faults import FaultKind, FaultRule, fail_rule, latency_rule
from .telemetry import LatencyStats, Telemetry, latency_stats
from .topology import ServiceSpec

KPI_IMPACT_NAMES = frozenset({"sps", "downloads", "login", "signup"})

# observations thinner than this are treated as no data at all
MIN_OBSERVATIONS = 20


class Severity(str, Enum):
    YELLOW = "yellow"
    RED = "red"


class WarningCode(str, Enum):
    TIMEOUT_MISALIGNED = "timeout_misaligned"
    MISSING_FALLBACK = "missing_fallback"
    UNWRAPPED_CLIENT = "unwrapped_client"
    STALE_DATA = "stale_data"
    FALLBACK_NEVER_EXERCISED = "fallback_never_exercised"


@dataclass(frozen=True)
class WarningRecord:
    severity: Severity
    code: WarningCode
    cluster: str
    dependency: str
    message: str
    evidence: dict = field(default_factory=dict)


class ExperimentType(str, Enum):
    FAILURE = "failure"
    LATENCY_BELOW_TIMEOUT = "latency_below_timeout"
    LATENCY_CAUSING_FAILURE = "latency_causing_failure"


@dataclass(frozen=True)
class DependencySnapshot:
    """Everything known about one dependency of one cluster."""

    cluster: str
    kind: FaultKind
    name: str
    trigger_pct: float
    latencies: Optional[LatencyStats]
    max_rps: float
    timeout_ms: Optional[float]
    retries: int
    bulkhead_size: Optional[int]
    observed_active_slots: int
    has_fallback: bool
    fallback_observed: bool
    wraps: tuple[str, ...]
    wrapped_by: tuple[str, ...]
    max_computed_timeout_ms: Optional[float]
    timeout_misaligned: bool
    known_impacts: tuple[str, ...]
    blacklisted: bool
    collected_at: Optional[float]  # None when no usable observations exist

    @property
    def stale(self) -> bool:
        return self.collected_at is None

    @property
    def highest_timeout_ms(self) -> Optional[float]:
        candidates = [t for t in (self.timeout_ms, self.max_computed_timeout_ms)
                      if t is not None]
        return max(candidates) if candidates else None


def build_snapshots(cluster: str, svc: ServiceSpec, telemetry: Telemetry,
                    now_s: float) -> list[DependencySnapshot]:
    telemetry.flush()
    wrapped_by: dict[str, list[str]] = {}
    for cmd in svc.commands:
        for cname in cmd.wraps:
            wrapped_by.setdefault(cname, []).append(cmd.name)

    snaps = []
    for cmd in svc.commands:
        wrapped_clients = [svc.client(c) for c in cmd.wraps]
        max_computed = max((c.max_computed_timeout_ms for c in wrapped_clients),
                           default=None)
        retries = max((c.retries for c in wrapped_clients), default=0)
        snaps.append(_snapshot(
            cluster, FaultKind.COMMAND, cmd.name, telemetry, now_s,
            timeout_ms=cmd.timeout_ms,
            retries=retries,
            bulkhead_size=cmd.bulkhead_size,
            has_fallback=cmd.has_fallback,
            wraps=tuple(cmd.wraps),
            wrapped_by=(),
            max_computed=max_computed,
            misaligned=max_computed is not None and cmd.timeout_ms < max_computed,
            known_impacts=cmd.known_impacts,
            blacklisted=cmd.blacklisted,
        ))
    for client in svc.clients:
        owners = tuple(wrapped_by.get(client.name, ()))
        owner_cmds = [svc.command(o) for o in owners]
        # a client is covered only if every command wrapping it has a fallback
        has_fallback = bool(owners) and all(c.has_fallback for c in owner_cmds)
        misaligned = any(
            c.timeout_ms < client.max_computed_timeout_ms for c in owner_cmds)
        snaps.append(_snapshot(
            cluster, FaultKind.RPC_CLIENT, client.name, telemetry, now_s,
            timeout_ms=client.per_try_timeout_ms,
            retries=client.retries,
            bulkhead_size=None,
            has_fallback=has_fallback,
            wraps=(),
            wrapped_by=owners,
            max_computed=client.max_computed_timeout_ms,
            misaligned=misaligned,
            known_impacts=client.known_impacts,
            blacklisted=client.blacklisted,
        ))
    return snaps


def _snapshot(cluster: str, kind: FaultKind, name: str, telemetry: Telemetry,
              now_s: float, *, timeout_ms, retries, bulkhead_size, has_fallback,
              wraps, wrapped_by, max_computed, misaligned, known_impacts,
              blacklisted) -> DependencySnapshot:
    obs = telemetry.dependency_observations(cluster, kind.value, name)
    usable = obs["samples"] >= MIN_OBSERVATIONS
    return DependencySnapshot(
        cluster=cluster,
        kind=kind,
        name=name,
        trigger_pct=obs["trigger_pct"],
        latencies=latency_stats(obs["latencies"]) if usable else None,
        max_rps=obs["max_rps"],
        timeout_ms=timeout_ms,
        retries=retries,
        bulkhead_size=bulkhead_size,
        observed_active_slots=obs["bulkhead_high"],
        has_fallback=has_fallback,
        fallback_observed=obs["fallback_successes"] > 0,
        wraps=wraps,
        wrapped_by=wrapped_by,
        max_computed_timeout_ms=max_computed,
        timeout_misaligned=misaligned,
        known_impacts=tuple(known_impacts),
        blacklisted=blacklisted,
        collected_at=now_s if usable else None,
    )


def snapshot_cluster(mesh, cluster: str) -> list[DependencySnapshot]:
    svc = mesh.service_of_cluster(cluster)
    return build_snapshots(cluster, svc, mesh.telemetry, mesh.sim.now_s)


# --- warnings -----------------------------------------------------------

def detect_warnings(snapshots: Sequence[DependencySnapshot]) -> list[WarningRecord]:
    out = []
    for s in snapshots:
        if s.stale:
            out.append(WarningRecord(
                Severity.RED, WarningCode.STALE_DATA, s.cluster, s.name,
                f"No recent observations for {s.name}; scores cannot be trusted.",
                {"samples": 0}))
        if s.kind is FaultKind.COMMAND and s.timeout_misaligned:
            t = int(s.timeout_ms)
            m = int(s.max_computed_timeout_ms)
            out.append(WarningRecord(
                Severity.YELLOW, WarningCode.TIMEOUT_MISALIGNED, s.cluster, s.name,
                f"Timeout ({t} ms) is less than the max computed timeout of the "
                f"wrapped RPC client ({m} ms); the command gives up while the "
                f"client is still retrying.",
                {"timeout_ms": t, "max_computed_timeout_ms": m}))
        if s.kind is FaultKind.COMMAND and not s.has_fallback:
            out.append(WarningRecord(
                Severity.YELLOW, WarningCode.MISSING_FALLBACK, s.cluster, s.name,
                f"Command {s.name} has no fallback; any failure is passed "
                f"straight to callers.",
                {}))
        if s.kind is FaultKind.COMMAND and s.has_fallback and not s.fallback_observed:
            out.append(WarningRecord(
                Severity.YELLOW, WarningCode.FALLBACK_NEVER_EXERCISED, s.cluster,
                s.name,
                f"Fallback of {s.name} has never been observed serving; it may "
                f"not work when needed.",
                {}))
        if s.kind is FaultKind.RPC_CLIENT and not s.wrapped_by:
            out.append(WarningRecord(
                Severity.RED, WarningCode.UNWRAPPED_CLIENT, s.cluster, s.name,
                f"RPC client {s.name} is not wrapped by any guarded command; "
                f"nothing isolates its failures.",
                {}))
    return out


# --- scoring ---------------------------------------------------------------

def criticality_score(snap: DependencySnapshot) -> int:
    """How much damage a misbehaving dependency could do, as a product of
    coarse factors; zero means effectively never exercised."""
    if snap.stale:
        raise ValueError(f"no usable observations for {snap.cluster}/{snap.name}")
    kind_priority = 100 if snap.kind is FaultKind.COMMAND else 1
    bucket = _trigger_bucket(snap.trigger_pct)
    retry_factor = 1 + snap.retries
    interactions = len(snap.wraps) if snap.kind is FaultKind.COMMAND \
        else len(snap.wrapped_by)
    return kind_priority * bucket * retry_factor * max(interactions, 1)


def _trigger_bucket(trigger_pct: float) -> int:
    if trigger_pct < 0.1:
        return 0
    if trigger_pct < 1:
        return 10
    if trigger_pct < 10:
        return 100
    return 1000


def safety_score(snap: DependencySnapshot,
                 exp_type: ExperimentType) -> tuple[int, list[str]]:
    """+1 when nothing argues against the experiment, else -1 with reasons."""
    reasons = []
    if snap.blacklisted:
        reasons.append("dependency is blacklisted for experiments")
    if snap.stale:
        reasons.append("observations are stale")
    if snap.kind is FaultKind.RPC_CLIENT and not snap.wrapped_by:
        reasons.append("client is not wrapped by any guarded command")
    kpi_hits = sorted(set(snap.known_impacts) & KPI_IMPACT_NAMES)
    if kpi_hits:
        reasons.append(f"known impact on {', '.join(kpi_hits)}")
    latency_type = exp_type in (ExperimentType.LATENCY_BELOW_TIMEOUT,
                                ExperimentType.LATENCY_CAUSING_FAILURE)
    if latency_type and not snap.has_fallback and snap.timeout_misaligned:
        reasons.append("no fallback and timeouts are misaligned")
    if exp_type is ExperimentType.FAILURE and not snap.has_fallback:
        reasons.append("no fallback to absorb the failure")
    return (-1, reasons) if reasons else (1, [])


_WEIGHT_SAFE = {ExperimentType.FAILURE: 3,
                ExperimentType.LATENCY_BELOW_TIMEOUT: 2,
                ExperimentType.LATENCY_CAUSING_FAILURE: 1}
# for unsafe plans the order flips: the higher the weight, the more
# negative (deprioritized) the plan becomes
_WEIGHT_UNSAFE = {ExperimentType.FAILURE: 1,
                  ExperimentType.LATENCY_BELOW_TIMEOUT: 2,
                  ExperimentType.LATENCY_CAUSING_FAILURE: 3}


def type_weight(exp_type: ExperimentType, safety: int) -> int:
    return _WEIGHT_SAFE[exp_type] if safety > 0 else _WEIGHT_UNSAFE[exp_type]


def prioritization_score(criticality: int, safety: int,
                         exp_type: ExperimentType) -> int:
    return criticality * safety * type_weight(exp_type, safety)


# --- generation -----------------------------------------------------------

@dataclass(frozen=True)
class GeneratedExperiment:
    cluster: str
    kind: FaultKind
    dependency: str
    exp_type: ExperimentType
    injected_latency_ms: Optional[int]
    criticality: int
    safety: int
    safety_reasons: tuple[str, ...]
    priority: int

    @property
    def key(self) -> str:
        return f"{self.cluster}:{self.kind.value}:{self.dependency}:{self.exp_type.value}"

    def fault_rule(self) -> FaultRule:
        if self.exp_type is ExperimentType.FAILURE:
            return fail_rule(self.kind, self.dependency)
        return latency_rule(self.kind, self.dependency, float(self.injected_latency_ms))


def generate(snapshots: Sequence[DependencySnapshot]) -> list[GeneratedExperiment]:
    """Three plans per usable dependency: fail it, slow it just under its
    timeout budget, and slow it past the budget. The below-timeout latency
    is 0.95 * budget - P99 so observed tail latency still fits; if that
    rounds away to nothing the plan is dropped."""
    plans = []
    for snap in snapshots:
        if snap.stale:
            continue
        crit = criticality_score(snap)
        budget = snap.highest_timeout_ms
        for exp_type in ExperimentType:
            latency: Optional[int] = None
            if exp_type is ExperimentType.LATENCY_BELOW_TIMEOUT:
                if budget is None or snap.latencies is None:
                    continue
                latency = int(round(0.95 * budget - snap.latencies.p99))
                if latency <= 0:
                    continue
            elif exp_type is ExperimentType.LATENCY_CAUSING_FAILURE:
                if budget is None:
                    continue
                latency = int(round(1.05 * budget))
            safety, reasons = safety_score(snap, exp_type)
            plans.append(GeneratedExperiment(
                cluster=snap.cluster,
                kind=snap.kind,
                dependency=snap.name,
                exp_type=exp_type,
                injected_latency_ms=latency,
                criticality=crit,
                safety=safety,
                safety_reasons=tuple(reasons),
                priority=prioritization_score(crit, safety, exp_type),
            ))
    return plans


# --- scheduling -----------------------------------------------------------

@dataclass(frozen=True)
class RunHistoryEntry:
    last_run_at: Optional[datetime] = None
    running: bool = False
    failed_unreviewed: bool = False


@dataclass(frozen=True)
class SchedulerConfig:
    cooldown_days: int = 7


def eligible(entry: RunHistoryEntry, config: SchedulerConfig,
             now: datetime) -> bool:
    if entry.running:
        return False
    if entry.failed_unreviewed:
        return False
    if entry.last_run_at is not None and \
            now - entry.last_run_at < timedelta(days=config.cooldown_days):
        return False
    return True


def schedule(plans: Sequence[GeneratedExperiment],
             history: dict[str, RunHistoryEntry],
             config: SchedulerConfig, now: datetime) -> list[GeneratedExperiment]:
    """Eligible plans, most valuable first, with a stable tiebreak.

    Plans scored at or below zero were judged unsafe to run unattended,
    so they never make the schedule."""
    chosen = [p for p in plans
              if p.priority > 0
              and eligible(history.get(p.key, RunHistoryEntry()), config, now)]
    return sorted(chosen,
                  key=lambda p: (-p.priority, -p.criticality, p.dependency))
