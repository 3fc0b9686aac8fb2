"""Platform configuration loading.

One YAML document configures a run: the topology plus workload, safety,
analysis, and scheduling knobs. Every knob has a sensible default; a
config may be as small as a topology.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Optional

import yaml

from .safety import AutoStopConfig, BusinessHours, SafetyConfig
from .introspect import SchedulerConfig
from .topology import Topology, TopologyError, topology_from_dict

_DAY_NAMES = {"mon": 0, "tue": 1, "wed": 2, "thu": 3, "fri": 4,
              "sat": 5, "sun": 6}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PlatformConfig:
    topology: Topology
    seed: int = 42
    users: int = 10_000
    request_rate_rps: float = 100.0
    default_sampling_pct: float = 1.0
    default_duration_s: float = 300.0
    provisioning_delay_ms: float = 1_000.0
    regions: tuple[str, ...] = ("east",)
    failovers: tuple[tuple[str, bool], ...] = ()
    default_region: str = "east"
    safety: SafetyConfig = field(default_factory=SafetyConfig)
    alpha: float = 0.01
    availability_delay_s: float = 300.0
    cpu_half_load_rps: float = 50.0
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    clock_start: Optional[datetime] = None
    store_path: Optional[str] = None


def _business_hours(raw: dict) -> BusinessHours:
    days = raw.get("days", ["mon", "tue", "wed", "thu", "fri"])
    try:
        day_nums = frozenset(_DAY_NAMES[str(d).lower()[:3]] for d in days)
    except KeyError as exc:
        raise ConfigError(f"unknown weekday {exc}") from None
    return BusinessHours(
        days=day_nums,
        start_hour=int(raw.get("start_hour", 9)),
        end_hour=int(raw.get("end_hour", 17)),
        timezone=str(raw.get("timezone", "UTC")),
    )


def _safety(raw: dict) -> SafetyConfig:
    auto = raw.get("auto_stop", {}) or {}
    return SafetyConfig(
        business_hours=_business_hours(raw.get("business_hours", {}) or {}),
        max_total_traffic_pct=float(raw.get("max_total_traffic_pct", 5.0)),
        auto_stop=AutoStopConfig(
            window_s=int(auto.get("window_s", 30)),
            sps_drop_threshold_pct=float(auto.get("sps_drop_threshold_pct", 20)),
            error_rate_multiplier=float(auto.get("error_rate_multiplier", 10)),
            min_events=int(auto.get("min_events", 200)),
        ),
    )


def config_from_dict(raw: dict, base_dir: str = ".") -> PlatformConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    if "topology" in raw:
        topo_raw = raw["topology"]
    elif "topology_file" in raw:
        path = os.path.join(base_dir, raw["topology_file"])
        with open(path, "r", encoding="utf-8") as fh:
            topo_raw = yaml.safe_load(fh)
            if isinstance(topo_raw, dict) and "topology" in topo_raw:
                topo_raw = topo_raw["topology"]
    else:
        raise ConfigError("config needs 'topology' or 'topology_file'")
    try:
        topology = topology_from_dict(topo_raw)
    except TopologyError as exc:
        raise ConfigError(f"invalid topology: {exc}") from exc

    plat = raw.get("platform", {}) or {}
    workload = plat.get("workload", {}) or {}
    defaults = plat.get("defaults", {}) or {}
    analysis = plat.get("analysis", {}) or {}
    sched = plat.get("scheduler", {}) or {}

    regions_raw = plat.get("regions", [{"name": "east"}])
    regions: list[str] = []
    failovers: list[tuple[str, bool]] = []
    for r in regions_raw:
        if isinstance(r, str):
            regions.append(r)
        else:
            regions.append(str(r["name"]))
            if r.get("failover_in_progress"):
                failovers.append((str(r["name"]), True))
    if not regions:
        raise ConfigError("at least one region is required")
    default_region = str(plat.get("default_region", regions[0]))
    if default_region not in regions:
        raise ConfigError(f"default_region {default_region!r} not in regions")

    clock_start = None
    if plat.get("clock_start"):
        clock_start = datetime.fromisoformat(str(plat["clock_start"]))

    sampling = float(defaults.get("sampling_pct", 1.0))
    duration = float(defaults.get("duration_s", 300.0))
    if not 0 < sampling <= 50:
        raise ConfigError("defaults.sampling_pct must be in (0, 50]")
    if duration <= 0:
        raise ConfigError("defaults.duration_s must be positive")

    return PlatformConfig(
        topology=topology,
        seed=int(plat.get("seed", 42)),
        users=int(workload.get("users", 10_000)),
        request_rate_rps=float(workload.get("request_rate_rps", 100.0)),
        default_sampling_pct=sampling,
        default_duration_s=duration,
        provisioning_delay_ms=float(defaults.get("provisioning_delay_ms", 1_000.0)),
        regions=tuple(regions),
        failovers=tuple(failovers),
        default_region=default_region,
        safety=_safety(plat.get("safety", {}) or {}),
        alpha=float(analysis.get("alpha", 0.01)),
        availability_delay_s=float(analysis.get("availability_delay_s", 300.0)),
        cpu_half_load_rps=float(analysis.get("cpu_half_load_rps", 50.0)),
        scheduler=SchedulerConfig(cooldown_days=int(sched.get("cooldown_days", 7))),
        clock_start=clock_start,
        store_path=plat.get("store_path"),
    )


def load_config(path: str) -> PlatformConfig:
    with open(path, "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    return config_from_dict(raw, base_dir=os.path.dirname(os.path.abspath(path)))
