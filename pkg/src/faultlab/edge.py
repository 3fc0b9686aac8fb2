"""Edge traffic sampling.

Active experiments publish an event to the edge filter. For each incoming
request the filter hashes (user, experiment) into [0, 1) and carves two
equal, disjoint slices out of it: baseline and canary. Assignment is a
pure function of the pair, so a user sticks to their group for the life of
an experiment, and users are never shared between the groups.

The first published experiment that claims a user wins; one request is
only ever part of one experiment.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable, Optional

from .faults import FaultRule, Group, RequestContext


class EdgeError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentEvent:
    experiment_id: str
    sampling_pct: float
    fault: FaultRule
    vip_original: str
    vip_baseline: str
    vip_canary: str

    def __post_init__(self) -> None:
        if not 0 < self.sampling_pct <= 50:
            raise EdgeError("sampling_pct must be in (0, 50]")
        vips = {self.vip_original, self.vip_baseline, self.vip_canary}
        if len(vips) != 3:
            raise EdgeError("original, baseline and canary vips must differ")


@dataclass(frozen=True)
class GroupAssignment:
    user_id: str
    experiment_id: str
    group: Group


def _unit_hash(user_id: str, experiment_id: str) -> float:
    digest = hashlib.blake2b(
        f"{user_id}|{experiment_id}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") / 2**64


def assign_group(user_id: str, event: ExperimentEvent) -> Group:
    """Deterministic, sticky, disjoint: [0,p) baseline, [p,2p) canary."""
    h = _unit_hash(user_id, event.experiment_id)
    p = event.sampling_pct / 100.0
    if h < p:
        return Group.BASELINE
    if h < 2 * p:
        return Group.CANARY
    return Group.NONE


class EdgeFilter:
    def __init__(self, on_assignment: Optional[Callable[[GroupAssignment], None]] = None):
        self._events: dict[str, ExperimentEvent] = {}
        self._on_assignment = on_assignment

    def publish(self, event: ExperimentEvent) -> None:
        if event.experiment_id in self._events:
            raise EdgeError(f"experiment {event.experiment_id!r} already published")
        self._events[event.experiment_id] = event

    def unpublish(self, experiment_id: str) -> None:
        # idempotent: cleanup may run more than once
        self._events.pop(experiment_id, None)

    def active_events(self) -> list[ExperimentEvent]:
        return list(self._events.values())

    def is_published(self, experiment_id: str) -> bool:
        return experiment_id in self._events

    def total_impact_pct(self) -> float:
        """Worst-case share of traffic touched: both groups of every experiment."""
        return sum(2 * ev.sampling_pct for ev in self._events.values())

    def filter_request(self, user_id: str) -> RequestContext:
        for event in self._events.values():
            group = assign_group(user_id, event)
            if group is Group.NONE:
                continue
            if self._on_assignment is not None:
                self._on_assignment(GroupAssignment(user_id, event.experiment_id, group))
            if group is Group.BASELINE:
                return RequestContext(
                    user_id=user_id,
                    group=group,
                    experiment_id=event.experiment_id,
                    routing_overrides=((event.vip_original, event.vip_baseline),),
                )
            return RequestContext(
                user_id=user_id,
                group=group,
                experiment_id=event.experiment_id,
                routing_overrides=((event.vip_original, event.vip_canary),),
                fault_rules=(event.fault,),
            )
        return RequestContext(user_id=user_id)
