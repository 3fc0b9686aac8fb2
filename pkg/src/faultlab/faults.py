"""Request context and metadata-driven fault injection.

A request carries its experiment assignment, routing overrides, and fault
rules in a context that propagates across every hop, mimicking a header.
Fault rules name an injection point (an RPC client or a guarded command)
and an action: fail the call outright, or add latency before it runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional


class FaultError(ValueError):
    pass


class FaultKind(str, Enum):
    RPC_CLIENT = "rpc_client"
    COMMAND = "command"


class ActionKind(str, Enum):
    FAIL = "fail"
    ADD_LATENCY = "add_latency"


class Group(str, Enum):
    NONE = "none"
    BASELINE = "baseline"
    CANARY = "canary"


@dataclass(frozen=True)
class InjectionPoint:
    kind: FaultKind
    name: str


@dataclass(frozen=True)
class FaultAction:
    kind: ActionKind
    latency_ms: float = 0.0

    def __post_init__(self) -> None:
        if self.kind is ActionKind.ADD_LATENCY and self.latency_ms <= 0:
            raise FaultError("add_latency needs a positive latency_ms")
        if self.kind is ActionKind.FAIL and self.latency_ms:
            raise FaultError("fail takes no latency")


@dataclass(frozen=True)
class FaultRule:
    point: InjectionPoint
    action: FaultAction


def fail_rule(kind: FaultKind, name: str) -> FaultRule:
    return FaultRule(InjectionPoint(kind, name), FaultAction(ActionKind.FAIL))


def latency_rule(kind: FaultKind, name: str, latency_ms: float) -> FaultRule:
    return FaultRule(InjectionPoint(kind, name),
                     FaultAction(ActionKind.ADD_LATENCY, latency_ms))


def validate_rules(rules: tuple[FaultRule, ...]) -> None:
    seen = set()
    for r in rules:
        if r.point in seen:
            raise FaultError(f"duplicate rule for injection point {r.point}")
        seen.add(r.point)


@dataclass(frozen=True)
class RequestContext:
    """Everything a request carries between hops.

    Baseline requests get the routing override but never fault rules; only
    canary requests are exposed to injections.
    """

    user_id: str
    group: Group = Group.NONE
    experiment_id: Optional[str] = None
    routing_overrides: tuple[tuple[str, str], ...] = ()
    fault_rules: tuple[FaultRule, ...] = ()
    trace: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.group is not Group.CANARY and self.fault_rules:
            raise FaultError(f"{self.group.value} request must not carry fault rules")
        if self.group is Group.NONE and self.routing_overrides:
            raise FaultError("unsampled request must not carry routing overrides")
        if self.group is not Group.NONE and not self.experiment_id:
            raise FaultError("sampled request needs an experiment_id")
        validate_rules(self.fault_rules)

    def override_for(self, vip: str) -> str:
        for src, dst in self.routing_overrides:
            if src == vip:
                return dst
        return vip

    def child(self, hop: str) -> "RequestContext":
        return replace(self, trace=self.trace + (hop,))


def should_inject(ctx: RequestContext, point: InjectionPoint) -> Optional[FaultAction]:
    for rule in ctx.fault_rules:
        if rule.point == point:
            return rule.action
    return None


# --- compact header form -----------------------------------------------------
#
# u=<user>;g=<group>;e=<experiment>;o=<vip>:<vip>,...;f=<act>:<kind>:<name>[:<ms>],...;t=<hop>>...
# Field values only ever contain [A-Za-z0-9._-], which the topology loader
# and the experiment id rules both enforce, so the separators are safe.

def encode_context(ctx: RequestContext) -> str:
    parts = [f"u={ctx.user_id}", f"g={ctx.group.value}"]
    if ctx.experiment_id:
        parts.append(f"e={ctx.experiment_id}")
    if ctx.routing_overrides:
        parts.append("o=" + ",".join(f"{a}:{b}" for a, b in ctx.routing_overrides))
    if ctx.fault_rules:
        frags = []
        for r in ctx.fault_rules:
            if r.action.kind is ActionKind.FAIL:
                frags.append(f"fail:{r.point.kind.value}:{r.point.name}")
            else:
                frags.append(
                    f"latency:{r.point.kind.value}:{r.point.name}:{r.action.latency_ms!r}")
        parts.append("f=" + ",".join(frags))
    if ctx.trace:
        parts.append("t=" + ">".join(ctx.trace))
    return ";".join(parts)


def decode_context(header: str) -> RequestContext:
    fields: dict[str, str] = {}
    try:
        for chunk in header.split(";"):
            key, _, value = chunk.partition("=")
            if not key or not _:
                raise FaultError(f"malformed field {chunk!r}")
            if key in fields:
                raise FaultError(f"repeated field {key!r}")
            fields[key] = value
        user = fields.pop("u")
        group = Group(fields.pop("g"))
        experiment = fields.pop("e", None)
        overrides: tuple[tuple[str, str], ...] = ()
        if "o" in fields:
            pairs = []
            for frag in fields.pop("o").split(","):
                a, sep, b = frag.partition(":")
                if not sep or not a or not b:
                    raise FaultError(f"malformed override {frag!r}")
                pairs.append((a, b))
            overrides = tuple(pairs)
        rules: list[FaultRule] = []
        for frag in fields.pop("f", "").split(","):
            if not frag:
                continue
            bits = frag.split(":")
            if bits[0] == "fail" and len(bits) == 3:
                rules.append(fail_rule(FaultKind(bits[1]), bits[2]))
            elif bits[0] == "latency" and len(bits) == 4:
                rules.append(latency_rule(FaultKind(bits[1]), bits[2], float(bits[3])))
            else:
                raise FaultError(f"malformed fault rule {frag!r}")
        trace = tuple(fields.pop("t").split(">")) if "t" in fields else ()
        if fields:
            raise FaultError(f"unknown fields {sorted(fields)!r}")
        return RequestContext(
            user_id=user,
            group=group,
            experiment_id=experiment,
            routing_overrides=overrides,
            fault_rules=tuple(rules),
            trace=trace,
        )
    except (KeyError, ValueError) as exc:
        if isinstance(exc, FaultError):
            raise
        raise FaultError(f"malformed context header {header!r}: {exc}") from None
