"""Report bundle: delimited files plus rendered figures."""

import csv
import os

from faultlab.faults import FaultKind, fail_rule
from faultlab.orchestrator import ExperimentState, Platform
from faultlab.report import write_report


def _finished_experiment(make_config, tmp_path):
    cfg = make_config(duration=40, delay=30, rate=150, sampling=2.0)
    platform = Platform(cfg)
    platform.start_workload()
    exp = platform.submit(fault=fail_rule(FaultKind.RPC_CLIENT, "b"),
                          sampling_pct=2.0, duration_s=40)
    platform.run_until_done(exp.experiment_id)
    return platform, exp


def test_report_writes_expected_bundle(make_config, tmp_path):
    platform, exp = _finished_experiment(make_config, tmp_path)
    assert exp.state is ExperimentState.COMPLETED
    out = tmp_path / "report"
    written = write_report(platform, exp, str(out))
    names = sorted(os.path.basename(p) for p in written)
    assert names == ["kpi.png", "summary.csv", "timeline.csv", "verdict.png"]
    for p in written:
        assert os.path.getsize(p) > 0


def test_report_figures_are_png(make_config, tmp_path):
    platform, exp = _finished_experiment(make_config, tmp_path)
    out = tmp_path / "report"
    write_report(platform, exp, str(out))
    for name in ("kpi.png", "verdict.png"):
        with open(out / name, "rb") as fh:
            assert fh.read(8) == b"\x89PNG\r\n\x1a\n"


def test_timeline_csv_rows_cover_both_groups(make_config, tmp_path):
    platform, exp = _finished_experiment(make_config, tmp_path)
    out = tmp_path / "report"
    write_report(platform, exp, str(out))
    with open(out / "timeline.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    groups = {r["group"] for r in rows}
    assert groups == {"baseline", "canary"}
    seconds = sorted({int(r["second"]) for r in rows})
    assert seconds[0] == 0
    assert seconds[-1] >= 30  # most of the 40 s window is present


def test_summary_csv_carries_verdict(make_config, tmp_path):
    platform, exp = _finished_experiment(make_config, tmp_path)
    out = tmp_path / "report"
    write_report(platform, exp, str(out))
    with open(out / "summary.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    kv = {r[0]: r[1] for r in rows if len(r) == 2}
    assert kv["experiment_id"] == exp.experiment_id
    assert kv["state"] == "completed"
    assert kv["verdict"] in ("Pass", "Fail", "Inconclusive")
    header_idx = next(i for i, r in enumerate(rows) if r and r[0] == "metric")
    metric_rows = [r for r in rows[header_idx + 1:] if r]
    assert len(metric_rows) == len(exp.verdict.comparisons)
