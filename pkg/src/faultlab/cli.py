"""Command line entry points.

Exit codes, shared by every subcommand:

* 0: success (for ``run``: the experiment completed and did not Fail)
* 1: unexpected internal error
* 2: bad configuration or arguments
* 3: experiment Failed, was aborted, or ended in an error state
* 4: submission rejected by a safety gate
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from datetime import datetime
from typing import Optional

from .analysis import Verdict
from .config import ConfigError, PlatformConfig, load_config
from .faults import ActionKind, FaultAction, FaultError, FaultKind, FaultRule, InjectionPoint
from .orchestrator import (ExperimentState, OrchestratorError, Platform,
                           SafetyRejection)
from .topology import TopologyError

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_EXPERIMENT = 3
EXIT_REJECTED = 4


def _parse_fault(spec: str) -> FaultRule:
    """``kind:name:action[:latency_ms]``, e.g. ``rpc_client:bookmarks:fail``."""
    parts = spec.split(":")
    if len(parts) not in (3, 4):
        raise FaultError(
            f"fault spec {spec!r} must be kind:name:action[:latency_ms]")
    kind_raw, name, action_raw = parts[0], parts[1], parts[2]
    try:
        kind = FaultKind(kind_raw)
        action_kind = ActionKind(action_raw)
    except ValueError as exc:
        raise FaultError(str(exc)) from None
    if action_kind is ActionKind.ADD_LATENCY:
        if len(parts) != 4:
            raise FaultError("add_latency needs a latency, e.g. "
                             f"{spec}:500")
        action = FaultAction(action_kind, latency_ms=float(parts[3]))
    else:
        if len(parts) == 4:
            raise FaultError("fail takes no latency value")
        action = FaultAction(action_kind)
    return FaultRule(InjectionPoint(kind, name), action)


def _load(args: argparse.Namespace) -> PlatformConfig:
    config = load_config(args.config)
    if getattr(args, "at", None):
        config = dataclasses.replace(
            config, clock_start=datetime.fromisoformat(args.at))
    if getattr(args, "store", None):
        config = dataclasses.replace(config, store_path=args.store)
    if getattr(args, "seed", None) is not None:
        config = dataclasses.replace(config, seed=args.seed)
    return config


def _cmd_validate(args: argparse.Namespace) -> int:
    config = _load(args)
    topo = config.topology
    print(f"config ok: {len(topo.services)} services, "
          f"edge {topo.edge_service!r}")
    for svc in topo.services:
        print(f"  {svc.name}: vip={svc.vip} instances={svc.cluster_size} "
              f"handlers={len(svc.handlers)} commands={len(svc.commands)} "
              f"clients={len(svc.clients)}")
    print(f"regions: {', '.join(config.regions)} "
          f"(budget {config.safety.max_total_traffic_pct:g}%)")
    return EXIT_OK


def _cmd_plan(args: argparse.Namespace) -> int:
    config = _load(args)
    platform = Platform(config)
    platform.start_workload()
    platform.run_for(args.warmup)
    plan = platform.plan(args.cluster)
    if args.format == "csv":
        print("priority,cluster,kind,dependency,exp_type,latency_ms,"
              "criticality,safety,reasons")
        for g in plan:
            reasons = ";".join(g.safety_reasons)
            lat = "" if g.injected_latency_ms is None else g.injected_latency_ms
            print(f"{g.priority},{g.cluster},{g.kind.value},{g.dependency},"
                  f"{g.exp_type.value},{lat},{g.criticality},{g.safety},"
                  f"{reasons}")
    else:
        if not plan:
            print("no experiments to propose (need more traffic history?)")
        for g in plan:
            lat = ("" if g.injected_latency_ms is None
                   else f" latency={g.injected_latency_ms}ms")
            print(f"[{g.priority:>8}] {g.cluster}/{g.dependency} "
                  f"{g.exp_type.value}{lat} "
                  f"(criticality={g.criticality}, safety={g.safety})")
    return EXIT_OK


def _cmd_run(args: argparse.Namespace) -> int:
    config = _load(args)
    fault = _parse_fault(args.fault)
    platform = Platform(config)
    platform.start_workload()
    if args.warmup > 0:
        platform.run_for(args.warmup)
    try:
        exp = platform.submit(fault=fault, sampling_pct=args.sampling,
                              duration_s=args.duration, region=args.region)
    except SafetyRejection as exc:
        print(f"rejected: {exc.admission.reason.value}: "
              f"{exc.admission.detail}", file=sys.stderr)
        return EXIT_REJECTED
    print(f"submitted {exp.experiment_id}: {args.fault} "
          f"at {exp.sampling_pct:g}% per group")
    platform.run_until_done(exp.experiment_id)

    print(f"state: {exp.state.value}")
    if exp.abort_reason:
        print(f"abort reason: {exp.abort_reason}")
    if exp.error:
        print(f"error: {exp.error}")
    if exp.verdict is not None:
        v = exp.verdict
        print(f"verdict: {v.overall.value} (score {v.score}, "
              f"alpha {v.alpha:g})")
        for c in v.comparisons:
            p = "n/a" if c.p_value is None else f"{c.p_value:.4g}"
            flag = " <-- harmful" if c.harmful else ""
            print(f"  {c.metric_class.value:<6} {c.name:<28} "
                  f"{c.classification.value:<12} p={p}{flag}")
    if args.out:
        from .report import write_report
        for path in write_report(platform, exp, args.out):
            print(f"wrote {path}")

    if exp.state is not ExperimentState.COMPLETED:
        return EXIT_EXPERIMENT
    if exp.verdict is not None and exp.verdict.overall is Verdict.FAIL:
        return EXIT_EXPERIMENT
    return EXIT_OK


def _cmd_serve(args: argparse.Namespace) -> int:
    config = _load(args)
    from .server import serve
    print(f"serving on http://{args.host}:{args.port} "
          f"(accel={args.accel:g} virtual s per wall s"
          f"{', unthrottled' if args.accel == 0 else ''})")
    serve(config, host=args.host, port=args.port, accel=args.accel)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="faultlab",
        description="Fault-injection experiments on a simulated service mesh.",
        epilog="Exit codes: 0 ok, 1 internal error, 2 bad config/args, "
               "3 experiment failed or aborted, 4 rejected by safety gate.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True,
                       help="path to a YAML config file")
        p.add_argument("--at", default=None, metavar="ISO8601",
                       help="pretend the run starts at this wall-clock time "
                            "(affects the business-hours gate)")
        p.add_argument("--store", default=None, metavar="DIR",
                       help="experiment store directory (overrides the config)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the simulation seed")

    v = sub.add_parser("validate", help="parse a config and print a summary")
    add_common(v)
    v.set_defaults(fn=_cmd_validate)

    pl = sub.add_parser("plan", help="propose experiments from observed traffic")
    add_common(pl)
    pl.add_argument("--cluster", default=None,
                    help="limit the plan to one cluster")
    pl.add_argument("--warmup", type=float, default=60.0,
                    help="virtual seconds of traffic to observe first "
                         "(default 60)")
    pl.add_argument("--format", choices=("table", "csv"), default="table")
    pl.set_defaults(fn=_cmd_plan)

    r = sub.add_parser("run", help="run one experiment to completion")
    add_common(r)
    r.add_argument("--fault", required=True,
                   help="kind:name:action[:latency_ms], e.g. "
                        "rpc_client:bookmarks:fail or "
                        "command:GetBookmarks:add_latency:700")
    r.add_argument("--sampling", type=float, default=None, metavar="PCT",
                   help="percent of users per group (default from config)")
    r.add_argument("--duration", type=float, default=None, metavar="S",
                   help="virtual seconds of injection (default from config)")
    r.add_argument("--region", default=None)
    r.add_argument("--warmup", type=float, default=5.0,
                   help="virtual seconds of traffic before submitting "
                        "(default 5)")
    r.add_argument("--out", default=None, metavar="DIR",
                   help="write summary.csv, timeline.csv, and figures here")
    r.set_defaults(fn=_cmd_run)

    s = sub.add_parser("serve", help="serve the HTTP API and live feed")
    add_common(s)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8000)
    s.add_argument("--accel", type=float, default=10.0,
                   help="virtual seconds advanced per wall second; "
                        "0 means unthrottled (default 10)")
    s.set_defaults(fn=_cmd_serve)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except SafetyRejection as exc:
        print(f"rejected: {exc}", file=sys.stderr)
        return EXIT_REJECTED
    except (ConfigError, TopologyError, FaultError, OrchestratorError,
            FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyboardInterrupt:
        return EXIT_OK
    except Exception as exc:  # noqa: BLE001 - last resort for the CLI
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
