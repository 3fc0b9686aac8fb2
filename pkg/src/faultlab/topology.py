"""Static description of the simulated service mesh.

A topology declares services, each advertising a VIP and carrying request
handlers, guarded commands, and outbound RPC clients. It is loaded from a
YAML mapping and validated before anything runs.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Union

import yaml

# names travel inside the request context header, so keep them header-safe
_NAME_RE = re.compile(r"^[A-Za-z0-9._-]+$")


class TopologyError(ValueError):
    pass


class Criticality(str, Enum):
    REQUIRED = "required"
    OPTIONAL = "optional"


@dataclass(frozen=True)
class LatencyModel:
    """Lognormal service time. ``median_ms`` scales it, ``sigma`` spreads it."""

    median_ms: float = 10.0
    sigma: float = 0.25


@dataclass(frozen=True)
class CircuitBreakerSpec:
    error_threshold_pct: float = 50.0
    window_ms: float = 10_000.0
    cooldown_ms: float = 5_000.0
    # below this many calls in the window the breaker never trips, so a
    # single early error cannot open it
    min_volume: int = 20


@dataclass(frozen=True)
class RpcClientSpec:
    name: str
    target_vip: str
    per_try_timeout_ms: float = 1_000.0
    retries: int = 0
    criticality: Criticality = Criticality.REQUIRED
    target_handler: str | None = None
    known_impacts: tuple[str, ...] = ()
    blacklisted: bool = False

    @property
    def max_computed_timeout_ms(self) -> float:
        """Worst-case time the client may spend across all tries."""
        return self.per_try_timeout_ms * (1 + self.retries)


@dataclass(frozen=True)
class CommandSpec:
    name: str
    timeout_ms: float = 1_000.0
    bulkhead_size: int = 10
    has_fallback: bool = False
    fallback_succeeds: bool = True
    wraps: tuple[str, ...] = ()
    circuit_breaker: CircuitBreakerSpec = field(default_factory=CircuitBreakerSpec)
    known_impacts: tuple[str, ...] = ()
    blacklisted: bool = False


@dataclass(frozen=True)
class HandlerSpec:
    name: str
    deps: tuple[str, ...] = ()
    kpi: str = "sps"
    weight: float = 1.0
    background_error_rate: float = 0.0


@dataclass(frozen=True)
class ServiceSpec:
    name: str
    vip: str
    cluster_size: int
    handlers: tuple[HandlerSpec, ...]
    commands: tuple[CommandSpec, ...] = ()
    clients: tuple[RpcClientSpec, ...] = ()
    base_latency: LatencyModel = field(default_factory=LatencyModel)
    dynamic_properties: tuple[tuple[str, str], ...] = ()

    def command(self, name: str) -> CommandSpec:
        for c in self.commands:
            if c.name == name:
                return c
        raise KeyError(name)

    def client(self, name: str) -> RpcClientSpec:
        for c in self.clients:
            if c.name == name:
                return c
        raise KeyError(name)

    def dep(self, name: str) -> Union[CommandSpec, RpcClientSpec]:
        for c in self.commands:
            if c.name == name:
                return c
        for c in self.clients:
            if c.name == name:
                return c
        raise KeyError(name)


@dataclass(frozen=True)
class Topology:
    services: tuple[ServiceSpec, ...]
    edge_service: str

    def service(self, name: str) -> ServiceSpec:
        for s in self.services:
            if s.name == name:
                return s
        raise KeyError(name)

    def service_for_vip(self, vip: str) -> ServiceSpec:
        for s in self.services:
            if s.vip == vip:
                return s
        raise KeyError(vip)

    @property
    def edge(self) -> ServiceSpec:
        return self.service(self.edge_service)

    def injection_point_exists(self, kind: str, name: str) -> bool:
        for s in self.services:
            if kind == "command" and any(c.name == name for c in s.commands):
                return True
            if kind == "rpc_client" and any(c.name == name for c in s.clients):
                return True
        return False


def _require_name(value: Any, what: str) -> str:
    if not isinstance(value, str) or not _NAME_RE.match(value):
        raise TopologyError(
            f"{what} must match [A-Za-z0-9._-]+, got {value!r}")
    return value


def _build_client(raw: dict, service: str) -> RpcClientSpec:
    name = _require_name(raw.get("name"), f"client name in service {service!r}")
    target = _require_name(raw.get("target_vip"), f"client {name!r} target_vip")
    per_try = float(raw.get("per_try_timeout_ms", 1000))
    retries = int(raw.get("retries", 0))
    if per_try <= 0:
        raise TopologyError(f"client {name!r}: per_try_timeout_ms must be positive")
    if retries < 0:
        raise TopologyError(f"client {name!r}: retries must be >= 0")
    crit = raw.get("criticality", "required")
    try:
        criticality = Criticality(crit)
    except ValueError:
        raise TopologyError(f"client {name!r}: unknown criticality {crit!r}") from None
    handler = raw.get("target_handler")
    if handler is not None:
        _require_name(handler, f"client {name!r} target_handler")
    return RpcClientSpec(
        name=name,
        target_vip=target,
        per_try_timeout_ms=per_try,
        retries=retries,
        criticality=criticality,
        target_handler=handler,
        known_impacts=tuple(raw.get("known_impacts", ())),
        blacklisted=bool(raw.get("blacklisted", False)),
    )


def _build_command(raw: dict, service: str) -> CommandSpec:
    name = _require_name(raw.get("name"), f"command name in service {service!r}")
    timeout = float(raw.get("timeout_ms", 1000))
    bulkhead = int(raw.get("bulkhead_size", 10))
    if timeout <= 0:
        raise TopologyError(f"command {name!r}: timeout_ms must be positive")
    if bulkhead < 1:
        raise TopologyError(f"command {name!r}: bulkhead_size must be >= 1")
    fb = raw.get("fallback", {}) or {}
    cb = raw.get("circuit_breaker", {}) or {}
    breaker = CircuitBreakerSpec(
        error_threshold_pct=float(cb.get("error_threshold_pct", 50)),
        window_ms=float(cb.get("window_ms", 10_000)),
        cooldown_ms=float(cb.get("cooldown_ms", 5_000)),
        min_volume=int(cb.get("min_volume", 20)),
    )
    return CommandSpec(
        name=name,
        timeout_ms=timeout,
        bulkhead_size=bulkhead,
        has_fallback=bool(fb.get("present", False)),
        fallback_succeeds=bool(fb.get("succeeds", True)),
        wraps=tuple(raw.get("wraps", ())),
        circuit_breaker=breaker,
        known_impacts=tuple(raw.get("known_impacts", ())),
        blacklisted=bool(raw.get("blacklisted", False)),
    )


def _build_handler(raw: dict, service: str) -> HandlerSpec:
    name = _require_name(raw.get("name"), f"handler name in service {service!r}")
    weight = float(raw.get("weight", 1.0))
    if weight <= 0:
        raise TopologyError(f"handler {name!r}: weight must be positive")
    rate = float(raw.get("background_error_rate", 0.0))
    if not 0.0 <= rate < 1.0:
        raise TopologyError(f"handler {name!r}: background_error_rate must be in [0, 1)")
    kpi = raw.get("kpi", "sps")
    _require_name(kpi, f"handler {name!r} kpi")
    return HandlerSpec(
        name=name,
        deps=tuple(raw.get("deps", ())),
        kpi=kpi,
        weight=weight,
        background_error_rate=rate,
    )


def _build_service(raw: dict) -> ServiceSpec:
    name = _require_name(raw.get("name"), "service name")
    vip = _require_name(raw.get("vip", name), f"service {name!r} vip")
    size = int(raw.get("cluster_size", 1))
    if size < 1:
        raise TopologyError(f"service {name!r}: cluster_size must be >= 1")
    lat = raw.get("base_latency", {}) or {}
    model = LatencyModel(
        median_ms=float(lat.get("median_ms", 10.0)),
        sigma=float(lat.get("sigma", 0.25)),
    )
    if model.median_ms <= 0 or model.sigma < 0:
        raise TopologyError(f"service {name!r}: invalid base_latency")
    props = raw.get("dynamic_properties", {}) or {}
    handlers = tuple(_build_handler(h, name) for h in raw.get("handlers", ()))
    if not handlers:
        raise TopologyError(f"service {name!r}: needs at least one handler")
    return ServiceSpec(
        name=name,
        vip=vip,
        cluster_size=size,
        handlers=handlers,
        commands=tuple(_build_command(c, name) for c in raw.get("commands", ())),
        clients=tuple(_build_client(c, name) for c in raw.get("clients", ())),
        base_latency=model,
        dynamic_properties=tuple((str(k), str(v)) for k, v in sorted(props.items())),
    )


def topology_from_dict(raw: dict) -> Topology:
    if not isinstance(raw, dict) or "services" not in raw:
        raise TopologyError("topology must be a mapping with a 'services' list")
    services = tuple(_build_service(s) for s in raw["services"])
    edge = raw.get("edge_service")
    if edge is None and len(services) == 1:
        edge = services[0].name
    if edge is None:
        raise TopologyError("edge_service is required when several services exist")
    topo = Topology(services=services, edge_service=edge)
    _validate(topo)
    return topo


def load_topology(path: str) -> Topology:
    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    if isinstance(raw, dict) and "topology" in raw:
        raw = raw["topology"]
    return topology_from_dict(raw)


def _validate(topo: Topology) -> None:
    names = [s.name for s in topo.services]
    if len(set(names)) != len(names):
        raise TopologyError("duplicate service names")

    vips = [s.vip for s in topo.services]
    if len(set(vips)) != len(vips):
        raise TopologyError("duplicate service vips")
    vip_set = set(vips)

    if topo.edge_service not in set(names):
        raise TopologyError(f"edge_service {topo.edge_service!r} is not a declared service")

    for s in topo.services:
        local = [c.name for c in s.commands] + [c.name for c in s.clients]
        if len(set(local)) != len(local):
            raise TopologyError(f"service {s.name!r}: duplicate command/client names")
        hnames = [h.name for h in s.handlers]
        if len(set(hnames)) != len(hnames):
            raise TopologyError(f"service {s.name!r}: duplicate handler names")

        client_names = {c.name for c in s.clients}
        wrapped: set[str] = set()
        for cmd in s.commands:
            for w in cmd.wraps:
                if w not in client_names:
                    raise TopologyError(
                        f"command {cmd.name!r} wraps unknown client {w!r}")
                if w in wrapped:
                    raise TopologyError(
                        f"client {w!r} is wrapped by more than one command")
                wrapped.add(w)

        dep_names = set(local)
        for h in s.handlers:
            for d in h.deps:
                if d not in dep_names:
                    raise TopologyError(
                        f"handler {h.name!r} depends on unknown {d!r}")

        for c in s.clients:
            if c.target_vip not in vip_set:
                raise TopologyError(
                    f"client {c.name!r} targets unknown vip {c.target_vip!r}")
            if c.target_handler is not None:
                target = topo.service_for_vip(c.target_vip)
                if all(h.name != c.target_handler for h in target.handlers):
                    raise TopologyError(
                        f"client {c.name!r}: service {target.name!r} has no "
                        f"handler {c.target_handler!r}")

    _reject_cycles(topo)


def _reject_cycles(topo: Topology) -> None:
    edges: dict[str, set[str]] = {s.name: set() for s in topo.services}
    for s in topo.services:
        for c in s.clients:
            edges[s.name].add(topo.service_for_vip(c.target_vip).name)

    WHITE, GREY, BLACK = 0, 1, 2
    color = {n: WHITE for n in edges}

    def visit(node: str, path: list[str]) -> None:
        color[node] = GREY
        path.append(node)
        for nxt in sorted(edges[node]):
            if color[nxt] == GREY:
                cycle = path[path.index(nxt):] + [nxt]
                raise TopologyError(f"dependency cycle: {' -> '.join(cycle)}")
            if color[nxt] == WHITE:
                visit(nxt, path)
        path.pop()
        color[node] = BLACK

    for n in sorted(edges):
        if color[n] == WHITE:
            visit(n, [])
