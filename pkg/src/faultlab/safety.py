"""Guardrails around experiments.

Three admission gates run before anything is provisioned: experiments may
only start inside business hours, never during a traffic failover, and
never when the combined sampled traffic in the region would pass a hard
cap. While an experiment runs, a monitor watches the fresh per-second
stream and stops it the moment the canary group diverges too far from the
baseline group.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from typing import Optional
from zoneinfo import ZoneInfo


class SafetyError(ValueError):
    pass


@dataclass(frozen=True)
class BusinessHours:
    """Weekday window in a fixed timezone. ``days`` uses Monday=0."""

    days: frozenset[int] = frozenset({0, 1, 2, 3, 4})
    start_hour: int = 9
    end_hour: int = 17
    timezone: str = "UTC"

    def contains(self, at: datetime) -> bool:
        tz = ZoneInfo(self.timezone)
        local = at.astimezone(tz) if at.tzinfo else at.replace(tzinfo=tz)
        return local.weekday() in self.days and \
            self.start_hour <= local.hour < self.end_hour


@dataclass(frozen=True)
class AutoStopConfig:
    window_s: int = 30
    sps_drop_threshold_pct: float = 20.0
    error_rate_multiplier: float = 10.0
    min_events: int = 200


@dataclass(frozen=True)
class SafetyConfig:
    business_hours: BusinessHours = field(default_factory=BusinessHours)
    max_total_traffic_pct: float = 5.0
    auto_stop: AutoStopConfig = field(default_factory=AutoStopConfig)


class RejectReason(str, Enum):
    BUSINESS_HOURS = "business_hours"
    TRAFFIC_BUDGET = "traffic_budget"
    FAILOVER = "failover"


@dataclass(frozen=True)
class Admission:
    admitted: bool
    reason: Optional[RejectReason] = None
    detail: str = ""


def preflight(sampling_pct: float, active_impact_pct: float,
              failover_in_progress: bool, at: datetime,
              config: SafetyConfig) -> Admission:
    """Gate a new experiment. ``active_impact_pct`` counts both groups of
    everything already running in the region."""
    if not config.business_hours.contains(at):
        bh = config.business_hours
        return Admission(False, RejectReason.BUSINESS_HOURS,
                         f"outside business hours "
                         f"({bh.start_hour:02d}:00-{bh.end_hour:02d}:00 {bh.timezone})")
    if failover_in_progress:
        return Admission(False, RejectReason.FAILOVER,
                         "traffic failover in progress in this region")
    proposed = active_impact_pct + 2 * sampling_pct
    if proposed > config.max_total_traffic_pct:
        return Admission(False, RejectReason.TRAFFIC_BUDGET,
                         f"would put {proposed:g}% of regional traffic in "
                         f"experiments (cap {config.max_total_traffic_pct:g}%)")
    return Admission(True)


@dataclass(frozen=True)
class GroupCounts:
    success: int = 0
    error: int = 0

    @property
    def total(self) -> int:
        return self.success + self.error


@dataclass(frozen=True)
class StopDecision:
    stop: bool
    reason: Optional[str] = None  # "kpi_drop" or "error_rate"
    detail: str = ""


def monitor_impact(baseline: GroupCounts, canary: GroupCounts,
                   config: AutoStopConfig) -> StopDecision:
    """Compare the two groups over a stream window; decide whether to stop.

    Needs a minimum event volume before it will act, and both groups must
    have seen traffic, so a cold start cannot trip it.
    """
    if baseline.total + canary.total < config.min_events:
        return StopDecision(False)
    if baseline.total == 0 or canary.total == 0:
        return StopDecision(False)

    b_rate = baseline.success / baseline.total
    c_rate = canary.success / canary.total
    floor = b_rate * (1 - config.sps_drop_threshold_pct / 100.0)
    if c_rate < floor:
        return StopDecision(
            True, "kpi_drop",
            f"canary success rate {c_rate:.3f} fell more than "
            f"{config.sps_drop_threshold_pct:g}% below baseline {b_rate:.3f}")

    if baseline.error >= 1 and canary.error > baseline.error * config.error_rate_multiplier:
        return StopDecision(
            True, "error_rate",
            f"canary errors {canary.error} exceed {config.error_rate_multiplier:g}x "
            f"baseline errors {baseline.error}")
    return StopDecision(False)


@dataclass
class RegionState:
    name: str
    failover_in_progress: bool = False
    active_impact_pct: float = 0.0
    experiments: set[str] = field(default_factory=set)


class SafetyController:
    """Tracks per-region budget and owns the admission decision."""

    def __init__(self, config: SafetyConfig, regions: list[str],
                 failovers: dict[str, bool] | None = None) -> None:
        self.config = config
        self.regions = {name: RegionState(name, (failovers or {}).get(name, False))
                        for name in regions}
        if not self.regions:
            raise SafetyError("at least one region is required")

    def region(self, name: str) -> RegionState:
        try:
            return self.regions[name]
        except KeyError:
            raise SafetyError(f"unknown region {name!r}") from None

    def admit(self, experiment_id: str, sampling_pct: float, region: str,
              at: datetime) -> Admission:
        st = self.region(region)
        decision = preflight(sampling_pct, st.active_impact_pct,
                             st.failover_in_progress, at, self.config)
        if decision.admitted:
            st.active_impact_pct += 2 * sampling_pct
            st.experiments.add(experiment_id)
        return decision

    def release(self, experiment_id: str, sampling_pct: float, region: str) -> None:
        st = self.region(region)
        if experiment_id in st.experiments:
            st.experiments.discard(experiment_id)
            st.active_impact_pct = max(0.0, st.active_impact_pct - 2 * sampling_pct)

    def set_failover(self, region: str, active: bool) -> None:
        self.region(region).failover_in_progress = active
