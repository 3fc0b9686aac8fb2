"""HTTP API and live event feed for the platform.

The simulation is single-threaded by construction, so a ``PlatformRunner``
owns the only thread that advances virtual time. Request handlers take the
runner lock, do their work against the platform, and release it; the live
feed subscribes to frames the runner publishes once per virtual second.

Pacing: ``accel`` is virtual seconds advanced per wall-clock second.
``accel=0`` means unthrottled (advance as fast as the CPU allows), which
is what tests and batch runs want.
"""

from __future__ import annotations

import json
import queue
import threading
import time
from typing import Any, Literal, Optional

from fastapi import FastAPI, HTTPException, Query
from fastapi.responses import StreamingResponse
from pydantic import BaseModel, Field

from .config import PlatformConfig
from .faults import ActionKind, FaultAction, FaultKind, FaultRule, InjectionPoint
from .introspect import DependencySnapshot, GeneratedExperiment, WarningRecord
from .orchestrator import OrchestratorError, Platform, SafetyRejection
from .telemetry import TelemetryError


class PlatformRunner:
    """Single owner of the simulation clock, with frame fan-out."""

    def __init__(self, config: PlatformConfig, accel: float = 0.0) -> None:
        self.platform = Platform(config)
        self.lock = threading.RLock()
        self.accel = accel
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None
        self._subscribers: list[queue.Queue] = []
        self._sub_lock = threading.Lock()

    # --- lifecycle ---------------------------------------------------------

    def start(self) -> None:
        if self._thread is not None:
            return
        with self.lock:
            self.platform.start_workload()
        self._thread = threading.Thread(target=self._loop, name="sim-stepper",
                                        daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5.0)
            self._thread = None

    def _loop(self) -> None:
        while not self._stop.is_set():
            wall_before = time.monotonic()
            with self.lock:
                self.platform.run_for(1.0)
                frame = self._build_frame()
            self._publish(frame)
            if self.accel > 0:
                budget = 1.0 / self.accel
                remaining = budget - (time.monotonic() - wall_before)
                if remaining > 0:
                    self._stop.wait(remaining)

    # --- live frames ---------------------------------------------------------

    def subscribe(self) -> queue.Queue:
        q: queue.Queue = queue.Queue(maxsize=600)
        with self._sub_lock:
            self._subscribers.append(q)
        return q

    def unsubscribe(self, q: queue.Queue) -> None:
        with self._sub_lock:
            if q in self._subscribers:
                self._subscribers.remove(q)

    def _publish(self, frame: dict) -> None:
        with self._sub_lock:
            subs = list(self._subscribers)
        for q in subs:
            try:
                q.put_nowait(frame)
            except queue.Full:
                # slow consumer: drop the oldest frame, keep the feed live
                try:
                    q.get_nowait()
                except queue.Empty:
                    pass
                try:
                    q.put_nowait(frame)
                except queue.Full:
                    pass

    def _build_frame(self) -> dict:
        p = self.platform
        second = int(p.sim.now_s) - 1
        experiments = []
        for exp in p.experiments.values():
            entry: dict[str, Any] = {
                "experiment_id": exp.experiment_id,
                "state": exp.state.value,
                "abort_reason": exp.abort_reason,
            }
            try:
                samples = p.telemetry.query_stream(exp.experiment_id, window_s=1)
            except TelemetryError:
                samples = []
            entry["stream"] = [
                {"second": s.second, "group": s.group.value,
                 "success": s.success, "error": s.error}
                for s in samples if s.second == second
            ]
            experiments.append(entry)
        return {
            "type": "tick",
            "virtual_s": second,
            "wall_clock": p.wall_now().isoformat(),
            "workload_running": p._workload_on,
            "experiments": experiments,
        }


# --- request bodies ---------------------------------------------------------


class FaultBody(BaseModel):
    kind: Literal["rpc_client", "command"]
    name: str
    action: Literal["fail", "add_latency"]
    latency_ms: Optional[float] = Field(default=None, gt=0)


class SubmitBody(BaseModel):
    fault: FaultBody
    sampling_pct: Optional[float] = None
    duration_s: Optional[float] = None
    region: Optional[str] = None
    experiment_id: Optional[str] = None


class AbortBody(BaseModel):
    reason: str = "manual"


def _build_rule(body: FaultBody) -> FaultRule:
    action_kind = ActionKind(body.action)
    if action_kind is ActionKind.ADD_LATENCY:
        if body.latency_ms is None:
            raise HTTPException(status_code=422,
                                detail="add_latency requires latency_ms")
        action = FaultAction(action_kind, latency_ms=body.latency_ms)
    else:
        action = FaultAction(action_kind)
    return FaultRule(InjectionPoint(FaultKind(body.kind), body.name), action)


# --- serialization helpers ---------------------------------------------------


def _snapshot_dict(s: DependencySnapshot) -> dict:
    lat = None
    if s.latencies is not None:
        lat = {"mean": s.latencies.mean, "p90": s.latencies.p90,
               "p99": s.latencies.p99, "p995": s.latencies.p995,
               "count": s.latencies.count}
    return {
        "cluster": s.cluster, "kind": s.kind.value, "name": s.name,
        "trigger_pct": s.trigger_pct, "latencies": lat, "max_rps": s.max_rps,
        "timeout_ms": s.timeout_ms, "retries": s.retries,
        "bulkhead_size": s.bulkhead_size,
        "observed_active_slots": s.observed_active_slots,
        "has_fallback": s.has_fallback, "fallback_observed": s.fallback_observed,
        "wraps": list(s.wraps), "wrapped_by": list(s.wrapped_by),
        "max_computed_timeout_ms": s.max_computed_timeout_ms,
        "timeout_misaligned": s.timeout_misaligned,
        "known_impacts": list(s.known_impacts), "blacklisted": s.blacklisted,
        "stale": s.stale, "collected_at": s.collected_at,
    }


def _warning_dict(w: WarningRecord) -> dict:
    return {"severity": w.severity.value, "code": w.code.value,
            "cluster": w.cluster, "dependency": w.dependency,
            "message": w.message, "evidence": w.evidence}


def _plan_dict(g: GeneratedExperiment) -> dict:
    return {"cluster": g.cluster, "kind": g.kind.value,
            "dependency": g.dependency, "exp_type": g.exp_type.value,
            "injected_latency_ms": g.injected_latency_ms,
            "criticality": g.criticality, "safety": g.safety,
            "safety_reasons": list(g.safety_reasons), "priority": g.priority,
            "key": g.key}


# --- app ----------------------------------------------------------------------


def create_app(runner: PlatformRunner) -> FastAPI:
    from fastapi.middleware.cors import CORSMiddleware

    app = FastAPI(title="faultlab", version="0.1.0", docs_url="/v1/docs",
                  openapi_url="/v1/openapi.json")
    # the dashboard is served as static files from wherever; no credentials
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])
    p = runner.platform

    @app.get("/v1/health")
    def health() -> dict:
        with runner.lock:
            return {"status": "ok", "virtual_s": p.sim.now_s,
                    "wall_clock": p.wall_now().isoformat()}

    @app.get("/v1/status")
    def status() -> dict:
        with runner.lock:
            regions = {}
            for name, state in p.safety.regions.items():
                regions[name] = {
                    "active_impact_pct": state.active_impact_pct,
                    "failover_in_progress": state.failover_in_progress,
                    "budget_pct": p.config.safety.max_total_traffic_pct,
                }
            counts: dict[str, int] = {}
            for exp in p.experiments.values():
                counts[exp.state.value] = counts.get(exp.state.value, 0) + 1
            return {
                "virtual_s": p.sim.now_s,
                "wall_clock": p.wall_now().isoformat(),
                "accel": runner.accel,
                "workload_running": p._workload_on,
                "experiment_counts": counts,
                "regions": regions,
                "recovered": list(p.recovered),
                "store_warnings": list(p.store.startup_warnings),
            }

    @app.get("/v1/topology")
    def topology() -> dict:
        with runner.lock:
            services = []
            for svc in p.config.topology.services:
                services.append({
                    "name": svc.name,
                    "vip": svc.vip,
                    "cluster_size": svc.cluster_size,
                    "handlers": [h.name for h in svc.handlers],
                    "commands": [c.name for c in svc.commands],
                    "clients": [c.name for c in svc.clients],
                })
            return {"edge_service": p.config.topology.edge_service,
                    "edge_vip": p.config.topology.edge.vip,
                    "services": services}

    @app.get("/v1/experiments")
    def list_experiments() -> dict:
        with runner.lock:
            records = {r["experiment_id"]: r for r in p.store.experiments()}
            for exp in p.experiments.values():
                records[exp.experiment_id] = exp.to_dict()
            items = sorted(records.values(), key=lambda r: r["experiment_id"])
            return {"experiments": items}

    @app.post("/v1/experiments", status_code=201)
    def submit(body: SubmitBody) -> dict:
        rule = _build_rule(body.fault)
        with runner.lock:
            try:
                exp = p.submit(fault=rule, sampling_pct=body.sampling_pct,
                               duration_s=body.duration_s, region=body.region,
                               experiment_id=body.experiment_id)
            except SafetyRejection as exc:
                raise HTTPException(status_code=409, detail={
                    "reason": exc.admission.reason.value if exc.admission.reason else None,
                    "message": exc.admission.detail,
                }) from exc
            except OrchestratorError as exc:
                raise HTTPException(status_code=422, detail=str(exc)) from exc
            return exp.to_dict()

    @app.get("/v1/experiments/{experiment_id}")
    def get_experiment(experiment_id: str) -> dict:
        with runner.lock:
            exp = p.experiments.get(experiment_id)
            if exp is not None:
                return exp.to_dict()
            record = p.store.get_experiment(experiment_id)
            if record is None:
                raise HTTPException(status_code=404,
                                    detail=f"no experiment {experiment_id!r}")
            return record

    @app.post("/v1/experiments/{experiment_id}/abort")
    def abort(experiment_id: str, body: AbortBody = AbortBody()) -> dict:
        with runner.lock:
            try:
                accepted = p.abort(experiment_id, reason=body.reason)
            except OrchestratorError as exc:
                raise HTTPException(status_code=404, detail=str(exc)) from exc
            exp = p.get(experiment_id)
            if not accepted:
                raise HTTPException(
                    status_code=409,
                    detail=f"cannot abort experiment in state {exp.state.value!r}")
            return {"accepted": True, "state": exp.state.value}

    @app.get("/v1/experiments/{experiment_id}/stream")
    def stream_window(experiment_id: str,
                      window_s: int = Query(default=60, ge=1, le=3600)) -> dict:
        with runner.lock:
            try:
                samples = p.telemetry.query_stream(experiment_id, window_s=window_s)
            except TelemetryError as exc:
                raise HTTPException(status_code=404, detail=str(exc)) from exc
            return {"experiment_id": experiment_id, "window_s": window_s,
                    "samples": [
                        {"second": s.second, "group": s.group.value,
                         "success": s.success, "error": s.error}
                        for s in samples
                    ]}

    @app.get("/v1/metrics")
    def metrics() -> dict:
        with runner.lock:
            return {"series": [
                {"metric": name, "tags": dict(tags)}
                for name, tags in p.telemetry.series_names()
            ]}

    @app.get("/v1/metrics/aggregate")
    def aggregate(metric: str,
                  start_s: Optional[int] = Query(default=None, ge=0),
                  end_s: Optional[int] = Query(default=None, ge=0),
                  tag: list[str] = Query(default=[])) -> dict:
        tags: dict[str, str] = {}
        for item in tag:
            if "=" not in item:
                raise HTTPException(status_code=422,
                                    detail=f"tag {item!r} must be key=value")
            key, value = item.split("=", 1)
            tags[key] = value
        with runner.lock:
            points = p.telemetry.query_aggregate(metric, start_s=start_s,
                                                 end_s=end_s, **tags)
            return {"metric": metric, "tags": tags, "points": [
                {"second": ts, "value": val} for ts, val in points
            ]}

    @app.get("/v1/snapshots")
    def snapshots(cluster: Optional[str] = None) -> dict:
        with runner.lock:
            return {"snapshots": [_snapshot_dict(s)
                                  for s in p.snapshots(cluster)]}

    @app.get("/v1/warnings")
    def warnings(cluster: Optional[str] = None) -> dict:
        with runner.lock:
            return {"warnings": [_warning_dict(w)
                                 for w in p.warnings(cluster)]}

    @app.get("/v1/plan")
    def plan(cluster: Optional[str] = None) -> dict:
        with runner.lock:
            return {"plan": [_plan_dict(g) for g in p.plan(cluster)]}

    @app.post("/v1/scheduler/run")
    def scheduler_run(cluster: Optional[str] = None) -> dict:
        """Recompute the work queue now: generate, score, filter, order."""
        with runner.lock:
            queue = p.plan(cluster)
            return {"triggered_at": p.wall_now().isoformat(),
                    "queue": [_plan_dict(g) for g in queue]}

    @app.get("/v1/live")
    def live() -> StreamingResponse:
        q = runner.subscribe()

        def frames():
            try:
                yield "event: hello\ndata: {}\n\n"
                while True:
                    try:
                        frame = q.get(timeout=10.0)
                    except queue.Empty:
                        yield ": keepalive\n\n"
                        continue
                    payload = json.dumps(frame, separators=(",", ":"))
                    yield f"event: tick\ndata: {payload}\n\n"
            finally:
                runner.unsubscribe(q)

        return StreamingResponse(frames(), media_type="text/event-stream",
                                 headers={"Cache-Control": "no-cache",
                                          "X-Accel-Buffering": "no"})

    return app


def serve(config: PlatformConfig, host: str = "127.0.0.1", port: int = 8000,
          accel: float = 0.0) -> None:
    """Run the API server until interrupted. Blocks."""
    import uvicorn

    runner = PlatformRunner(config, accel=accel)
    runner.start()
    app = create_app(runner)
    try:
        uvicorn.run(app, host=host, port=port, log_level="warning")
    finally:
        runner.stop()
