/** The dashboard app: one page, no framework.
 *
 * Everything rendered is data from /v1 responses; the only mutations go
 * through the create and abort endpoints. Live charts update from the
 * event stream, one frame per virtual second.
 */

import {
  ApiClient,
  ConflictError,
  SafetyRejectionError,
  type AggregatePoint,
  type ExperimentRecord,
  type SnapshotRow,
  type WarningRow,
} from "./api.js";
import { LiveFeed, type LiveFeedHandlers, type TickFrame } from "./sse.js";
import { cumulativeErrorPct, twoGroupChart, type GroupCounts } from "./chart.js";
import {
  ExperimentSeries,
  abortEnabled,
  injectionWindow,
  isTerminal,
  stopMarker,
  validateForm,
  type FormModel,
} from "./state.js";

function escapeHtml(text: string): string {
  return text.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

interface FeedHandle {
  start(): void;
  stop(): void;
}

export interface AppOptions {
  liveFeedFactory?: (url: string, handlers: LiveFeedHandlers) => FeedHandle;
}

const PAGE = `
<header>
  <h1>faultlab</h1>
  <div id="status-line">connecting...</div>
</header>
<section id="create">
  <h2>New experiment</h2>
  <form id="create-form">
    <label>dependency
      <select id="dep-select" name="dependency"></select>
    </label>
    <label>action
      <select id="action-select" name="action">
        <option value="fail">fail</option>
        <option value="add_latency">add latency</option>
      </select>
    </label>
    <label>latency ms
      <input id="latency-input" name="latency" inputmode="decimal" disabled>
    </label>
    <label>sampling %
      <input id="sampling-input" name="sampling" inputmode="decimal"
             placeholder="config default">
    </label>
    <label>duration s
      <input id="duration-input" name="duration" inputmode="decimal"
             placeholder="config default">
    </label>
    <label>region
      <select id="region-select" name="region"></select>
    </label>
    <button id="submit-btn" type="submit">create</button>
  </form>
  <div id="form-banner" class="banner" hidden></div>
</section>
<section id="experiments">
  <h2>Experiments</h2>
  <table id="experiment-table">
    <thead><tr>
      <th>id</th><th>state</th><th>fault</th><th>sampling</th><th>verdict</th>
    </tr></thead>
    <tbody></tbody>
  </table>
</section>
<section id="detail" hidden>
  <h2>Experiment <span id="detail-id"></span></h2>
  <div id="detail-meta"></div>
  <div id="detail-banner" class="banner" hidden></div>
  <button id="abort-btn" disabled>abort</button>
  <div id="chart-rate"></div>
  <div id="chart-errors"></div>
  <div id="verdict-panel"></div>
</section>
<section id="monocle">
  <h2>Dependencies</h2>
  <table id="monocle-table">
    <thead><tr>
      <th>dependency</th><th>trigger %</th><th>p99 ms</th><th>timeout ms</th>
      <th>retries</th><th>fallback</th><th>warnings</th>
    </tr></thead>
    <tbody></tbody>
  </table>
  <h2>Plan</h2>
  <table id="plan-table">
    <thead><tr>
      <th>priority</th><th>dependency</th><th>type</th><th>latency ms</th>
      <th>criticality</th><th>safety</th>
    </tr></thead>
    <tbody></tbody>
  </table>
</section>
`;

export class App {
  readonly root: HTMLElement;
  readonly client: ApiClient;
  private feed: FeedHandle | null = null;
  private feedFactory: (url: string, handlers: LiveFeedHandlers) => FeedHandle;

  records = new Map<string, ExperimentRecord>();
  series = new Map<string, ExperimentSeries>();
  selected: string | null = null;
  /** virtual_s of every received tick, oldest first. */
  ticks: number[] = [];

  constructor(root: HTMLElement, client: ApiClient, opts: AppOptions = {}) {
    this.root = root;
    this.client = client;
    this.feedFactory = opts.liveFeedFactory ??
      ((url, handlers) => new LiveFeed(url, handlers));
    root.innerHTML = PAGE;
    this.wireEvents();
  }

  private el<T extends HTMLElement>(id: string): T {
    const found = this.root.querySelector(`#${id}`);
    if (!found) throw new Error(`missing element #${id}`);
    return found as T;
  }

  private wireEvents(): void {
    this.el<HTMLFormElement>("create-form").addEventListener("submit", (ev) => {
      ev.preventDefault();
      void this.submitForm();
    });
    this.el<HTMLSelectElement>("action-select").addEventListener("change", () => {
      const latency = this.el<HTMLInputElement>("latency-input");
      latency.disabled =
        this.el<HTMLSelectElement>("action-select").value !== "add_latency";
    });
    this.el<HTMLButtonElement>("abort-btn").addEventListener("click", () => {
      void this.abortSelected();
    });
    this.el<HTMLTableElement>("experiment-table").addEventListener("click", (ev) => {
      const row = (ev.target as HTMLElement).closest("tr[data-id]");
      if (row) void this.select(row.getAttribute("data-id") ?? "");
    });
  }

  async init(): Promise<void> {
    const [status, snapshots, warnings, plan, experiments] = await Promise.all([
      this.client.status(),
      this.client.snapshots(),
      this.client.warnings(),
      this.client.plan(),
      this.client.listExperiments(),
    ]);

    const regionSel = this.el<HTMLSelectElement>("region-select");
    regionSel.innerHTML = Object.keys(status.regions)
      .map((r) => `<option value="${escapeHtml(r)}">${escapeHtml(r)}</option>`)
      .join("");

    this.renderPickers(snapshots);
    this.renderMonocle(snapshots, warnings);
    this.renderPlan(plan);
    for (const exp of experiments) this.records.set(exp.experiment_id, exp);
    this.renderList();

    this.feed = this.feedFactory(this.client.liveFeedUrl(), {
      onTick: (frame) => this.handleTick(frame),
      onGap: () => this.handleGap(),
    });
    this.feed.start();
  }

  stop(): void {
    this.feed?.stop();
  }

  // --- form -----------------------------------------------------------------

  private formModel(): FormModel {
    return {
      dependency: this.el<HTMLSelectElement>("dep-select").value,
      action: this.el<HTMLSelectElement>("action-select").value as
        | "fail"
        | "add_latency",
      latencyMs: this.el<HTMLInputElement>("latency-input").value,
      sampling: this.el<HTMLInputElement>("sampling-input").value,
      duration: this.el<HTMLInputElement>("duration-input").value,
      region: this.el<HTMLSelectElement>("region-select").value,
    };
  }

  private banner(id: string, kind: "" | "error" | "rejection", text: string): void {
    const banner = this.el<HTMLDivElement>(id);
    if (!text) {
      banner.hidden = true;
      return;
    }
    banner.hidden = false;
    banner.className = `banner ${kind}`.trim();
    banner.textContent = text;
  }

  async submitForm(): Promise<void> {
    const result = validateForm(this.formModel());
    if (!result.ok) {
      this.banner("form-banner", "error", result.errors.join("; "));
      return;
    }
    try {
      const exp = await this.client.createExperiment(result.body);
      this.banner("form-banner", "", "");
      this.records.set(exp.experiment_id, exp);
      this.renderList();
      await this.select(exp.experiment_id);
    } catch (err) {
      if (err instanceof SafetyRejectionError) {
        this.banner("form-banner", "rejection",
          `rejected: ${err.reason ?? "unknown"}: ${err.message}`);
        return;
      }
      this.banner("form-banner", "error", String(err));
    }
  }

  // --- abort ------------------------------------------------------------------

  async abortSelected(): Promise<void> {
    if (!this.selected) return;
    try {
      await this.client.abortExperiment(this.selected, "operator abort");
      this.banner("detail-banner", "", "");
    } catch (err) {
      if (err instanceof ConflictError) {
        this.banner("detail-banner", "error", err.message);
      } else {
        this.banner("detail-banner", "error", String(err));
      }
    }
    await this.refreshSelected();
  }

  private async refreshSelected(): Promise<void> {
    if (!this.selected) return;
    const exp = await this.client.getExperiment(this.selected);
    this.records.set(exp.experiment_id, exp);
    this.renderList();
    this.renderDetail();
  }

  // --- selection and live updates ---------------------------------------------

  async select(id: string): Promise<void> {
    if (!id) return;
    this.selected = id;
    const exp = await this.client.getExperiment(id);
    this.records.set(id, exp);
    if (!this.series.has(id)) this.series.set(id, new ExperimentSeries());
    const series = this.series.get(id)!;
    if (isTerminal(exp.state)) {
      await this.loadTerminalSeries(exp, series);
    } else {
      // backfill what the stream already holds
      const windowS = Math.max(60, Math.ceil(exp.duration_s) + 60);
      series.add(await this.client.streamWindow(id, windowS));
    }
    this.renderDetail();
  }

  /** Static chart for a finished run: aggregates when aged in, otherwise
   * the fresh stream window. */
  private async loadTerminalSeries(
    exp: ExperimentRecord,
    series: ExperimentSeries,
  ): Promise<void> {
    const toCounts = (
      success: AggregatePoint[],
      error: AggregatePoint[],
    ): GroupCounts[] => {
      const bySecond = new Map<number, GroupCounts>();
      for (const p of success) {
        bySecond.set(p.second, { second: p.second, success: p.value, error: 0 });
      }
      for (const p of error) {
        const c = bySecond.get(p.second) ??
          { second: p.second, success: 0, error: 0 };
        c.error = p.value;
        bySecond.set(p.second, c);
      }
      return [...bySecond.values()];
    };

    const groups: ["baseline", "canary"] = ["baseline", "canary"];
    let sawAny = false;
    for (const group of groups) {
      const tags = { experiment: exp.experiment_id, group };
      const [success, error] = await Promise.all([
        this.client.aggregate("kpi.sps.success", tags),
        this.client.aggregate("kpi.sps.error", tags),
      ]);
      const counts = toCounts(success, error);
      if (counts.length > 0) sawAny = true;
      series.add(counts.map((c) => ({
        second: c.second, group, success: c.success, error: c.error,
      })));
    }
    if (!sawAny && exp.started_s !== null) {
      // aggregates not aged in yet; the stream still has the window
      const windowS = Math.ceil(exp.duration_s) + 120;
      series.add(await this.client.streamWindow(exp.experiment_id, windowS));
    }
  }

  handleTick(frame: TickFrame): void {
    this.ticks.push(frame.virtual_s);
    this.el<HTMLDivElement>("status-line").textContent =
      `virtual ${frame.virtual_s}s | ${frame.wall_clock} | workload ` +
      `${frame.workload_running ? "on" : "off"}`;

    let listDirty = false;
    for (const entry of frame.experiments) {
      const known = this.records.get(entry.experiment_id);
      const stateChanged = known === undefined || known.state !== entry.state;
      if (known) {
        known.state = entry.state;
        known.abort_reason = entry.abort_reason;
      }
      if (!this.series.has(entry.experiment_id)) {
        this.series.set(entry.experiment_id, new ExperimentSeries());
      }
      this.series.get(entry.experiment_id)!.add(entry.stream);
      if (stateChanged) {
        listDirty = true;
        // pick up timestamps and (eventually) the verdict
        void this.client.getExperiment(entry.experiment_id).then((exp) => {
          this.records.set(exp.experiment_id, exp);
          this.renderList();
          if (this.selected === exp.experiment_id) this.renderDetail();
        }).catch(() => undefined);
      }
    }
    if (listDirty) this.renderList();
    if (this.selected) this.renderDetail();
  }

  handleGap(): void {
    for (const series of this.series.values()) series.markGap();
    this.el<HTMLDivElement>("status-line").textContent =
      "live feed dropped, reconnecting...";
    if (this.selected) this.renderDetail();
  }

  // --- rendering ----------------------------------------------------------------

  private renderPickers(snapshots: SnapshotRow[]): void {
    const dep = this.el<HTMLSelectElement>("dep-select");
    dep.innerHTML = snapshots
      .map((s) => {
        const value = `${s.kind}:${s.name}`;
        const label = `${s.name} (${s.kind.replace("_", " ")})` +
          (s.blacklisted ? " [blocked]" : "");
        return `<option value="${escapeHtml(value)}">${escapeHtml(label)}</option>`;
      })
      .join("");
  }

  private renderMonocle(snapshots: SnapshotRow[], warnings: WarningRow[]): void {
    const byDep = new Map<string, WarningRow[]>();
    for (const w of warnings) {
      const list = byDep.get(w.dependency) ?? [];
      list.push(w);
      byDep.set(w.dependency, list);
    }
    const body = this.el<HTMLTableElement>("monocle-table").tBodies[0]!;
    body.innerHTML = snapshots.map((s) => {
      const found = byDep.get(s.name) ?? [];
      const badges = found.map((w) =>
        `<span class="warn-badge ${escapeHtml(w.severity)}" ` +
        `title="${escapeHtml(w.message)}">${escapeHtml(w.code)}</span>`,
      ).join(" ");
      return `<tr>
        <td>${escapeHtml(s.name)} <small>${escapeHtml(s.kind)}</small></td>
        <td>${s.trigger_pct.toFixed(2)}</td>
        <td>${s.latencies.p99.toFixed(0)}</td>
        <td>${s.timeout_ms.toFixed(0)}</td>
        <td>${s.retries}</td>
        <td>${s.has_fallback ? (s.fallback_observed ? "observed" : "unproven") : "none"}</td>
        <td>${badges}</td>
      </tr>`;
    }).join("");
  }

  private renderPlan(plan: import("./api.js").PlanRow[]): void {
    const body = this.el<HTMLTableElement>("plan-table").tBodies[0]!;
    body.innerHTML = plan.map((p) => `<tr>
      <td>${p.priority}</td>
      <td>${escapeHtml(p.dependency)}</td>
      <td>${escapeHtml(p.exp_type)}</td>
      <td>${p.injected_latency_ms ?? ""}</td>
      <td>${p.criticality}</td>
      <td>${p.safety}</td>
    </tr>`).join("");
  }

  renderList(): void {
    const rows = [...this.records.values()]
      .sort((a, b) => a.experiment_id.localeCompare(b.experiment_id));
    const body = this.el<HTMLTableElement>("experiment-table").tBodies[0]!;
    body.innerHTML = rows.map((exp) => {
      const fault = `${exp.fault.kind}:${exp.fault.name}:${exp.fault.action}` +
        (exp.fault.latency_ms ? `:${exp.fault.latency_ms}` : "");
      const verdict = exp.verdict
        ? `${exp.verdict.overall} (${exp.verdict.score})`
        : "";
      const cls = this.selected === exp.experiment_id ? "selected" : "";
      return `<tr data-id="${escapeHtml(exp.experiment_id)}" class="${cls}">
        <td>${escapeHtml(exp.experiment_id)}</td>
        <td class="state state-${escapeHtml(exp.state)}">${escapeHtml(exp.state)}</td>
        <td>${escapeHtml(fault)}</td>
        <td>${exp.sampling_pct}%</td>
        <td>${escapeHtml(verdict)}</td>
      </tr>`;
    }).join("");
  }

  renderDetail(): void {
    if (!this.selected) return;
    const exp = this.records.get(this.selected);
    if (!exp) return;
    const detail = this.el<HTMLElement>("detail");
    detail.hidden = false;
    this.el<HTMLSpanElement>("detail-id").textContent = exp.experiment_id;

    const meta: string[] = [
      `state: ${exp.state}`,
      `fault: ${exp.fault.kind}:${exp.fault.name}:${exp.fault.action}`,
      `sampling: ${exp.sampling_pct}% per group`,
      `region: ${exp.region}`,
    ];
    if (exp.vips.baseline) {
      meta.push(`vips: ${exp.vips.baseline} / ${exp.vips.canary}`);
    }
    if (exp.abort_reason) meta.push(`abort: ${exp.abort_reason}`);
    if (exp.error) meta.push(`error: ${exp.error}`);
    this.el<HTMLDivElement>("detail-meta").innerHTML = meta
      .map((m) => `<div>${escapeHtml(m)}</div>`)
      .join("");

    this.el<HTMLButtonElement>("abort-btn").disabled = !abortEnabled(exp.state);

    const series = this.series.get(exp.experiment_id) ?? new ExperimentSeries();
    const window_ = injectionWindow(exp, series.lastSecond);
    const stop = stopMarker(exp);

    this.el<HTMLDivElement>("chart-rate").innerHTML = twoGroupChart(
      series.rate("baseline"),
      series.rate("canary"),
      {
        title: "KPI throughput (events/s)",
        injection: window_,
        stop,
        gaps: series.gaps,
      },
    );
    this.el<HTMLDivElement>("chart-errors").innerHTML = twoGroupChart(
      cumulativeErrorPct(series.group("baseline")),
      cumulativeErrorPct(series.group("canary")),
      {
        title: "cumulative errors (% of events)",
        injection: window_,
        stop,
        gaps: series.gaps,
      },
    );

    const panel = this.el<HTMLDivElement>("verdict-panel");
    if (exp.verdict) {
      const rows = exp.verdict.metrics.map((m) => `<tr>
        <td>${escapeHtml(m.name)}</td><td>${escapeHtml(m.class)}</td>
        <td>${escapeHtml(m.classification)}</td>
        <td>${m.p_value.toExponential(2)}</td><td>${escapeHtml(m.method)}</td>
      </tr>`).join("");
      panel.innerHTML = `
        <h3>verdict: ${escapeHtml(exp.verdict.overall)}
          <small>score ${exp.verdict.score}, alpha ${exp.verdict.alpha}</small></h3>
        <table class="verdict-table">
          <thead><tr><th>metric</th><th>class</th><th>classification</th>
            <th>p</th><th>method</th></tr></thead>
          <tbody>${rows}</tbody>
        </table>`;
    } else {
      panel.innerHTML = "";
    }
  }
}

export function createApp(
  root: HTMLElement,
  client: ApiClient,
  opts: AppOptions = {},
): App {
  return new App(root, client, opts);
}

/** Browser entry point; the api base comes from ?api=... (default same origin). */
export async function boot(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const base = params.get("api") ?? "";
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app container");
  const app = createApp(root, new ApiClient(base));
  await app.init();
}
