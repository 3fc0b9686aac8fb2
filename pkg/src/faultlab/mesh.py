"""The running mesh: clusters, guarded commands, RPC clients, workload.

Every remote call a handler makes goes through a resilience sandwich:

* RPC clients resolve a VIP, pick an instance, and retry on failure or
  per-try timeout, treating injected faults exactly like real ones.
* Guarded commands wrap client work behind a bulkhead (a fixed slot pool),
  a timeout, a circuit breaker, and an optional fallback. A slot is held
  for as long as the underlying work actually runs, even after the caller
  has timed out and walked away, which is what lets slow downstream calls
  starve a pool well below its nominal request rate.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .faults import (ActionKind, FaultKind, Group, InjectionPoint,
                     RequestContext, should_inject)
from .registry import ClusterInstance, DiscoveryRegistry
from .sim import Completion, Process, Simulation
from .telemetry import Telemetry
from .topology import (CircuitBreakerSpec, CommandSpec, Criticality,
                       HandlerSpec, RpcClientSpec, ServiceSpec, Topology)

# lets work that finishes exactly at the deadline count as in time
_TIMEOUT_SLACK_MS = 1e-6


class MeshError(RuntimeError):
    pass


class CallStatus(str, Enum):
    SUCCESS = "success"
    FALLBACK_SERVED = "fallback_served"
    ERROR = "error"


class CallDetail(str, Enum):
    NONE = "none"
    TIMEOUT = "timeout"
    INJECTED_FAILURE = "injected_failure"
    BULKHEAD_REJECTED = "bulkhead_rejected"
    SHORT_CIRCUITED = "short_circuited"
    DOWNSTREAM_ERROR = "downstream_error"
    FALLBACK_FAILED = "fallback_failed"
    NO_INSTANCES = "no_instances"


@dataclass(frozen=True)
class CallOutcome:
    status: CallStatus
    latency_ms: float
    detail: CallDetail = CallDetail.NONE

    @property
    def ok(self) -> bool:
        return self.status is not CallStatus.ERROR


class BreakerState(str, Enum):
    CLOSED = "closed"
    OPEN = "open"
    HALF_OPEN = "half_open"


class CircuitBreaker:
    """Error-fraction breaker over a rolling window of one-second buckets."""

    def __init__(self, spec: CircuitBreakerSpec) -> None:
        self.spec = spec
        self.state = BreakerState.CLOSED
        self._buckets: deque[list[float]] = deque()  # [second, success, failure]
        self._opened_at = 0.0
        self._trial_inflight = False

    def try_acquire(self, now: float) -> Optional[str]:
        """Admission check. Returns "normal", "trial", or None for short-circuit."""
        if self.state is BreakerState.CLOSED:
            return "normal"
        if self.state is BreakerState.OPEN:
            if now - self._opened_at >= self.spec.cooldown_ms:
                self.state = BreakerState.HALF_OPEN
                self._trial_inflight = True
                return "trial"
            return None
        # half-open: one trial at a time
        if self._trial_inflight:
            return None
        self._trial_inflight = True
        return "trial"

    def record(self, now: float, success: bool, role: str) -> None:
        if role == "trial":
            self._trial_inflight = False
            if success:
                self.state = BreakerState.CLOSED
                self._buckets.clear()
            else:
                self.state = BreakerState.OPEN
                self._opened_at = now
            return
        if self.state is not BreakerState.CLOSED:
            # stale completion from before the trip; nothing to update
            return
        sec = now // 1000
        if not self._buckets or self._buckets[-1][0] != sec:
            self._buckets.append([sec, 0, 0])
        self._buckets[-1][1 if success else 2] += 1
        self._evict(now)
        total = sum(b[1] + b[2] for b in self._buckets)
        failures = sum(b[2] for b in self._buckets)
        if total >= self.spec.min_volume and \
                100.0 * failures / total > self.spec.error_threshold_pct:
            self.state = BreakerState.OPEN
            self._opened_at = now

    def _evict(self, now: float) -> None:
        floor = (now - self.spec.window_ms) // 1000
        while self._buckets and self._buckets[0][0] <= floor:
            self._buckets.popleft()


@dataclass
class CommandRuntime:
    spec: CommandSpec
    breaker: CircuitBreaker
    busy: int = 0


@dataclass
class InstanceRuntime:
    instance: ClusterInstance
    commands: dict[str, CommandRuntime] = field(default_factory=dict)


class CallScope:
    """One inbound handler run on one cluster; dedupes trigger counting."""

    __slots__ = ("cluster", "seen")

    def __init__(self, cluster: str) -> None:
        self.cluster = cluster
        self.seen: set[tuple[str, str]] = set()

    def first(self, kind: str, name: str) -> bool:
        key = (kind, name)
        if key in self.seen:
            return False
        self.seen.add(key)
        return True


class Mesh:
    def __init__(self, sim: Simulation, topology: Topology,
                 registry: DiscoveryRegistry, telemetry: Telemetry) -> None:
        self.sim = sim
        self.topology = topology
        self.registry = registry
        self.telemetry = telemetry
        self._runtimes: dict[str, InstanceRuntime] = {}
        self._cluster_service: dict[str, ServiceSpec] = {}
        telemetry.cluster_size_of = registry.cluster_size

    # --- provisioning -----------------------------------------------------

    def boot(self) -> None:
        for svc in self.topology.services:
            self.provision_cluster(svc.name, svc.name, svc.vip,
                                   svc.cluster_size, dict(svc.dynamic_properties))

    def provision_cluster(self, service_name: str, cluster: str, vip: str,
                          size: int, properties: dict[str, str]) -> list[ClusterInstance]:
        if cluster in self._cluster_service:
            raise MeshError(f"cluster {cluster!r} already exists")
        svc = self.topology.service(service_name)
        out = []
        for _ in range(size):
            inst = self.registry.new_instance(cluster, service_name, vip, properties)
            rt = InstanceRuntime(instance=inst)
            for cmd in svc.commands:
                rt.commands[cmd.name] = CommandRuntime(
                    spec=cmd, breaker=CircuitBreaker(cmd.circuit_breaker))
            self._runtimes[inst.instance_id] = rt
            out.append(inst)
        self._cluster_service[cluster] = svc
        return out

    def destroy_cluster(self, cluster: str) -> None:
        for inst in self.registry.instances_for_cluster(cluster):
            self._runtimes.pop(inst.instance_id, None)
        self.registry.deregister_cluster(cluster)
        self._cluster_service.pop(cluster, None)

    def service_of_cluster(self, cluster: str) -> ServiceSpec:
        return self._cluster_service[cluster]

    # --- request entry ------------------------------------------------------

    def serve_request(self, ctx: RequestContext) -> Process:
        """One end-user request against the edge service. Emits a KPI event."""
        svc = self.topology.edge
        vip = ctx.override_for(svc.vip)
        instances = self.registry.resolve(vip)
        handler = self._pick_handler(svc)
        if not instances:
            self.telemetry.record_kpi(handler.kpi, False, ctx.group, ctx.experiment_id)
            return
        inst = self.sim.rng.choice(instances)
        ok = yield from self._run_handler(ctx.child(svc.name), handler, inst)
        self.telemetry.record_kpi(handler.kpi, ok, ctx.group, ctx.experiment_id)

    def _pick_handler(self, svc: ServiceSpec) -> HandlerSpec:
        if len(svc.handlers) == 1:
            return svc.handlers[0]
        weights = [h.weight for h in svc.handlers]
        return self.sim.rng.choices(svc.handlers, weights=weights, k=1)[0]

    # --- handler execution ---------------------------------------------------

    def _run_handler(self, ctx: RequestContext, handler: HandlerSpec,
                     inst: ClusterInstance) -> Process:
        """Run one handler on one instance; returns True on success."""
        rt = self._runtimes[inst.instance_id]
        svc = self._cluster_service[inst.cluster]
        scope = CallScope(inst.cluster)
        t0 = self.sim.now

        yield self._service_time(svc)

        failed = False
        for dep_name in handler.deps:
            dep = svc.dep(dep_name)
            child_ctx = ctx.child(dep_name)
            if isinstance(dep, CommandSpec):
                out = yield from self.execute_command(child_ctx, dep, rt, scope)
                if not out.ok:
                    failed = True
                    break
            else:
                out = yield from self.execute_rpc(child_ctx, dep, scope)
                if not out.ok and dep.criticality is Criticality.REQUIRED:
                    failed = True
                    break
        if not failed and handler.background_error_rate > 0:
            failed = self.sim.rng.random() < handler.background_error_rate

        self.telemetry.record_request(inst.cluster, self.sim.now - t0, failed)
        return not failed

    def _service_time(self, svc: ServiceSpec) -> float:
        m = svc.base_latency
        if m.sigma == 0:
            return m.median_ms
        return self.sim.rng.lognormvariate(math.log(m.median_ms), m.sigma)

    # --- RPC client -----------------------------------------------------------

    def execute_rpc(self, ctx: RequestContext, client: RpcClientSpec,
                    scope: CallScope) -> Process:
        """Resolve, call, retry. Injected faults count like real ones."""
        t0 = self.sim.now
        action = should_inject(ctx, InjectionPoint(FaultKind.RPC_CLIENT, client.name))
        first = scope.first(FaultKind.RPC_CLIENT.value, client.name)

        last_detail = CallDetail.DOWNSTREAM_ERROR
        outcome = None
        for _attempt in range(1 + client.retries):
            if action is not None and action.kind is ActionKind.FAIL:
                last_detail = CallDetail.INJECTED_FAILURE
                continue
            budget = client.per_try_timeout_ms
            extra = action.latency_ms if action is not None else 0.0
            if extra >= budget:
                yield budget
                last_detail = CallDetail.TIMEOUT
                continue
            if extra > 0:
                yield extra
            vip = ctx.override_for(client.target_vip)
            instances = self.registry.resolve(vip)
            if not instances:
                last_detail = CallDetail.NO_INSTANCES
                break
            inst = self.sim.rng.choice(instances)
            work = self.sim.spawn(self._serve_rpc(ctx, client, inst))
            in_time, ok = yield (work, budget - extra + _TIMEOUT_SLACK_MS)
            if not in_time:
                last_detail = CallDetail.TIMEOUT
                continue
            if ok:
                outcome = CallOutcome(CallStatus.SUCCESS, self.sim.now - t0)
                break
            last_detail = CallDetail.DOWNSTREAM_ERROR

        if outcome is None:
            outcome = CallOutcome(CallStatus.ERROR, self.sim.now - t0, last_detail)
        self.telemetry.record_dependency(
            scope.cluster, FaultKind.RPC_CLIENT.value, client.name,
            outcome.latency_ms, first)
        return outcome

    def _serve_rpc(self, ctx: RequestContext, client: RpcClientSpec,
                   inst: ClusterInstance) -> Process:
        """Downstream processing; keeps running even if the caller gave up."""
        svc = self._cluster_service[inst.cluster]
        if client.target_handler is not None:
            handler = next(h for h in svc.handlers if h.name == client.target_handler)
        else:
            handler = self._pick_handler(svc)
        ok = yield from self._run_handler(ctx.child(svc.name), handler, inst)
        return ok

    # --- guarded command --------------------------------------------------------

    def execute_command(self, ctx: RequestContext, cmd: CommandSpec,
                        rt: InstanceRuntime, scope: CallScope) -> Process:
        crt = rt.commands[cmd.name]
        cluster = rt.instance.cluster
        first = scope.first(FaultKind.COMMAND.value, cmd.name)
        t0 = self.sim.now

        def finish(outcome: CallOutcome) -> CallOutcome:
            self.telemetry.record_dependency(
                cluster, FaultKind.COMMAND.value, cmd.name,
                outcome.latency_ms, first)
            return outcome

        role = crt.breaker.try_acquire(self.sim.now)
        if role is None:
            return finish(self._resolve_failure(
                cluster, cmd, CallDetail.SHORT_CIRCUITED, self.sim.now - t0))

        if crt.busy >= cmd.bulkhead_size:
            crt.breaker.record(self.sim.now, False, role)
            self.telemetry.record_rejection(cluster, cmd.name)
            return finish(self._resolve_failure(
                cluster, cmd, CallDetail.BULKHEAD_REJECTED, self.sim.now - t0))

        crt.busy += 1
        self.telemetry.record_bulkhead_active(cluster, cmd.name, crt.busy)
        flags = {"timed_out": False}
        work = self.sim.spawn(self._command_work(ctx, cmd, crt, rt, scope, flags, role))
        in_time, result = yield (work, cmd.timeout_ms + _TIMEOUT_SLACK_MS)
        if not in_time:
            # the slot stays busy until the work actually finishes
            flags["timed_out"] = True
            crt.breaker.record(self.sim.now, False, role)
            return finish(self._resolve_failure(
                cluster, cmd, CallDetail.TIMEOUT, self.sim.now - t0))
        ok, detail = result
        if ok:
            return finish(CallOutcome(CallStatus.SUCCESS, self.sim.now - t0))
        return finish(self._resolve_failure(cluster, cmd, detail, self.sim.now - t0))

    def _command_work(self, ctx: RequestContext, cmd: CommandSpec,
                      crt: CommandRuntime, rt: InstanceRuntime, scope: CallScope,
                      flags: dict, role: str) -> Process:
        """The wrapped work. Holds the bulkhead slot for its full duration."""
        svc = self._cluster_service[rt.instance.cluster]
        ok, detail = True, CallDetail.NONE
        try:
            action = should_inject(ctx, InjectionPoint(FaultKind.COMMAND, cmd.name))
            if action is not None and action.kind is ActionKind.FAIL:
                ok, detail = False, CallDetail.INJECTED_FAILURE
            else:
                if action is not None:
                    yield action.latency_ms
                for cname in cmd.wraps:
                    client = svc.client(cname)
                    out = yield from self.execute_rpc(ctx.child(cname), client, scope)
                    if not out.ok and client.criticality is Criticality.REQUIRED:
                        ok, detail = False, CallDetail.DOWNSTREAM_ERROR
                        break
            return (ok, detail)
        finally:
            crt.busy -= 1
            if not flags["timed_out"]:
                crt.breaker.record(self.sim.now, ok, role)

    def _resolve_failure(self, cluster: str, cmd: CommandSpec,
                         detail: CallDetail, latency: float) -> CallOutcome:
        """Map a command failure through its fallback, if it has one."""
        if cmd.has_fallback:
            ok = cmd.fallback_succeeds
            self.telemetry.record_fallback(cluster, cmd.name, ok)
            if ok:
                return CallOutcome(CallStatus.FALLBACK_SERVED, latency, detail)
            return CallOutcome(CallStatus.ERROR, latency, CallDetail.FALLBACK_FAILED)
        return CallOutcome(CallStatus.ERROR, latency, detail)
