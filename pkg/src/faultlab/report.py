"""Experiment reports: delimited data plus rendered figures.

Given a finished experiment and the platform telemetry, writes a small
bundle into an output directory:

* ``summary.csv``: one row per compared metric with its classification;
* ``timeline.csv``: per-second KPI counts for both groups;
* ``kpi.png``: throughput of both groups with the injection window shaded;
* ``verdict.png``: per-metric p-values against the significance line.
"""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .faults import Group
from .orchestrator import Experiment, Platform


def write_report(platform: Platform, exp: Experiment, out_dir: str) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    written = []
    written.append(_summary_csv(exp, out_dir))
    timeline = _collect_timeline(platform, exp)
    written.append(_timeline_csv(timeline, out_dir))
    written.append(_kpi_figure(timeline, exp, out_dir))
    if exp.verdict is not None and exp.verdict.comparisons:
        written.append(_verdict_figure(exp, out_dir))
    return written


def _collect_timeline(platform: Platform, exp: Experiment) -> list[dict]:
    if exp.started_s is None:
        return []
    start = int(exp.started_s)
    end = int(exp.ended_s if exp.ended_s is not None else platform.sim.now_s)
    window = int(platform.sim.now_s) - start
    rows: dict[tuple[int, Group], dict] = {}
    for s in platform.telemetry.query_stream(exp.experiment_id, window_s=max(window, 1)):
        if start <= s.second < end:
            rows[(s.second, s.group)] = {
                "second": s.second - start,
                "group": s.group.value,
                "success": s.success,
                "error": s.error,
            }
    return [rows[k] for k in sorted(rows, key=lambda k: (k[0], k[1].value))]


def _summary_csv(exp: Experiment, out_dir: str) -> str:
    path = os.path.join(out_dir, "summary.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["experiment_id", exp.experiment_id])
        w.writerow(["state", exp.state.value])
        w.writerow(["fault", f"{exp.fault.point.kind.value}:{exp.fault.point.name}"
                             f":{exp.fault.action.kind.value}"])
        w.writerow(["sampling_pct", exp.sampling_pct])
        w.writerow(["abort_reason", exp.abort_reason or ""])
        if exp.verdict is not None:
            w.writerow(["verdict", exp.verdict.overall.value])
            w.writerow(["score", exp.verdict.score])
            w.writerow([])
            w.writerow(["metric", "class", "classification", "p_value", "method"])
            for c in exp.verdict.comparisons:
                w.writerow([c.name, c.metric_class.value, c.classification.value,
                            "" if c.p_value is None else f"{c.p_value:.6g}",
                            c.method or ""])
    return path


def _timeline_csv(timeline: list[dict], out_dir: str) -> str:
    path = os.path.join(out_dir, "timeline.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=["second", "group", "success", "error"])
        w.writeheader()
        w.writerows(timeline)
    return path


def _kpi_figure(timeline: list[dict], exp: Experiment, out_dir: str) -> str:
    path = os.path.join(out_dir, "kpi.png")
    fig, ax = plt.subplots(figsize=(9, 4.5))
    for group, color in (("baseline", "#1c7ed6"), ("canary", "#e8590c")):
        rows = [r for r in timeline if r["group"] == group]
        ax.plot([r["second"] for r in rows],
                [r["success"] for r in rows],
                label=f"{group} ok/s", color=color, linewidth=1.4)
        ax.plot([r["second"] for r in rows],
                [r["error"] for r in rows],
                label=f"{group} err/s", color=color, linewidth=1.0,
                linestyle="--", alpha=0.7)
    if exp.started_s is not None and exp.ended_s is not None:
        ax.axvspan(0, exp.ended_s - exp.started_s, color="#e8590c", alpha=0.06,
                   label="injection window")
    ax.set_xlabel("seconds since start")
    ax.set_ylabel("KPI events per second")
    title = f"{exp.experiment_id}: {exp.fault.point.name} " \
            f"{exp.fault.action.kind.value}"
    ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def _verdict_figure(exp: Experiment, out_dir: str) -> str:
    path = os.path.join(out_dir, "verdict.png")
    comps = [c for c in exp.verdict.comparisons if c.p_value is not None]
    fig, ax = plt.subplots(figsize=(8, 0.6 * max(len(comps), 3) + 1.2))
    names = [c.name for c in comps]
    # p-values can be astronomically small; clamp for display
    values = [max(c.p_value, 1e-12) for c in comps]
    colors = ["#e03131" if c.harmful else "#2f9e44" for c in comps]
    ax.barh(names, values, color=colors)
    ax.axvline(exp.verdict.alpha, color="#343a40", linestyle=":",
               label=f"alpha = {exp.verdict.alpha:g}")
    ax.set_xscale("log")
    ax.set_xlabel("p-value (log scale)")
    ax.set_title(f"{exp.experiment_id}: {exp.verdict.overall.value} "
                 f"(score {exp.verdict.score})")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path
