// @vitest-environment jsdom
import { beforeEach, describe, expect, it } from "vitest";
import {
  SafetyRejectionError,
  ConflictError,
  type AggregatePoint,
  type ApiClient,
  type CreateRequest,
  type ExperimentRecord,
  type SnapshotRow,
  type StatusInfo,
  type StreamSample,
  type WarningRow,
} from "../src/api.js";
import type { LiveFeedHandlers, TickFrame } from "../src/sse.js";
import { createApp, type App } from "../src/main.js";

function record(over: Partial<ExperimentRecord> = {}): ExperimentRecord {
  return {
    experiment_id: "exp-0001",
    state: "running",
    fault: { kind: "command", name: "GetBookmarks", action: "fail" },
    exp_type: "FAILURE",
    sampling_pct: 1,
    duration_s: 60,
    region: "us-east-1",
    submitted_at: "2026-08-16T09:00:00+00:00",
    started_s: 100,
    ended_s: null,
    abort_reason: null,
    error: null,
    vips: { original: "api", baseline: "api-chap-baseline", canary: "api-chap-canary" },
    clusters: { baseline: "api-baseline", canary: "api-canary", canary_size: 2 },
    verdict: null,
    log: [],
    ...over,
  };
}

function snapshot(over: Partial<SnapshotRow> = {}): SnapshotRow {
  return {
    cluster: "api",
    kind: "command",
    name: "GetBookmarks",
    trigger_pct: 42.5,
    latencies: { mean: 30, p90: 60, p99: 120, p995: 150, count: 1000 },
    max_rps: 400,
    timeout_ms: 600,
    retries: 1,
    bulkhead_size: 10,
    has_fallback: true,
    fallback_observed: true,
    wraps: [],
    wrapped_by: [],
    timeout_misaligned: false,
    known_impacts: [],
    blacklisted: false,
    stale: false,
    ...over,
  };
}

const STATUS: StatusInfo = {
  virtual_s: 120,
  wall_clock: "2026-08-16T09:02:00+00:00",
  accel: 0,
  workload_running: true,
  experiment_counts: {},
  regions: {
    "us-east-1": { active_impact_pct: 0, failover_in_progress: false, budget_pct: 5 },
    "eu-west-1": { active_impact_pct: 0, failover_in_progress: false, budget_pct: 5 },
  },
  recovered: [],
  store_warnings: [],
};

/** In-memory stand-in for the HTTP client; records every mutating call. */
class StubClient {
  baseUrl = "";
  created: CreateRequest[] = [];
  aborted: string[] = [];
  records = new Map<string, ExperimentRecord>();
  snapshotRows: SnapshotRow[] = [snapshot(), snapshot({
    kind: "rpc_client", name: "GetData", blacklisted: false,
  })];
  warningRows: WarningRow[] = [{
    severity: "critical",
    code: "retry_storm",
    cluster: "api",
    dependency: "GetBookmarks",
    message: "retries can multiply load under failure",
    evidence: {},
  }];
  aggregates = new Map<string, AggregatePoint[]>();
  streamSamples: StreamSample[] = [];
  createError: Error | null = null;
  abortError: Error | null = null;

  async status(): Promise<StatusInfo> { return STATUS; }
  async listExperiments(): Promise<ExperimentRecord[]> {
    return [...this.records.values()];
  }
  async getExperiment(id: string): Promise<ExperimentRecord> {
    const found = this.records.get(id);
    if (!found) throw new Error(`no experiment ${id}`);
    return { ...found };
  }
  async createExperiment(body: CreateRequest): Promise<ExperimentRecord> {
    if (this.createError) throw this.createError;
    this.created.push(body);
    const exp = record({ state: "pending", started_s: null });
    this.records.set(exp.experiment_id, exp);
    return exp;
  }
  async abortExperiment(id: string): Promise<{ accepted: boolean; state: string }> {
    if (this.abortError) throw this.abortError;
    this.aborted.push(id);
    const found = this.records.get(id);
    if (found) found.state = "stopping";
    return { accepted: true, state: "stopping" };
  }
  async streamWindow(): Promise<StreamSample[]> { return this.streamSamples; }
  async snapshots(): Promise<SnapshotRow[]> { return this.snapshotRows; }
  async warnings(): Promise<WarningRow[]> { return this.warningRows; }
  async plan() {
    return [{
      cluster: "api", kind: "command" as const, dependency: "GetBookmarks",
      exp_type: "FAILURE", injected_latency_ms: null, criticality: 20000,
      safety: 1000, safety_reasons: [], priority: 21000,
      key: "api:command:GetBookmarks:FAILURE",
    }];
  }
  async aggregate(metric: string, tags: Record<string, string>) {
    return this.aggregates.get(`${metric}|${tags.group}`) ?? [];
  }
  liveFeedUrl(): string { return "/v1/live"; }
}

interface Harness {
  app: App;
  client: StubClient;
  handlers: LiveFeedHandlers;
  root: HTMLElement;
}

async function mount(prep?: (client: StubClient) => void): Promise<Harness> {
  document.body.innerHTML = `<div id="app"></div>`;
  const root = document.getElementById("app")!;
  const client = new StubClient();
  prep?.(client);
  let handlers: LiveFeedHandlers | null = null;
  const app = createApp(root, client as unknown as ApiClient, {
    liveFeedFactory: (_url, h) => {
      handlers = h;
      return { start: () => undefined, stop: () => undefined };
    },
  });
  await app.init();
  if (!handlers) throw new Error("feed never started");
  return { app, client, handlers, root };
}

function flush(): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, 0));
}

function tick(second: number, exps: TickFrame["experiments"] = []): TickFrame {
  return {
    type: "tick",
    virtual_s: second,
    wall_clock: "2026-08-16T09:02:01+00:00",
    workload_running: true,
    experiments: exps,
  };
}

function fillForm(root: HTMLElement, over: Record<string, string> = {}): void {
  const set = (id: string, value: string) => {
    const el = root.querySelector<HTMLInputElement | HTMLSelectElement>(`#${id}`);
    if (el && value !== undefined) el.value = value;
  };
  set("dep-select", over.dependency ?? "command:GetBookmarks");
  set("action-select", over.action ?? "fail");
  set("latency-input", over.latency ?? "");
  set("sampling-input", over.sampling ?? "");
  set("duration-input", over.duration ?? "");
  set("region-select", over.region ?? "us-east-1");
}

describe("boot and pickers", () => {
  it("fills the dependency and region pickers from the api", async () => {
    const { root } = await mount();
    const deps = [...root.querySelectorAll("#dep-select option")]
      .map((o) => (o as HTMLOptionElement).value);
    expect(deps).toEqual(["command:GetBookmarks", "rpc_client:GetData"]);
    const regions = [...root.querySelectorAll("#region-select option")]
      .map((o) => (o as HTMLOptionElement).value);
    expect(regions).toEqual(["us-east-1", "eu-west-1"]);
  });

  it("lists dependency warnings as badges with the message on hover", async () => {
    const { root } = await mount();
    const badge = root.querySelector("#monocle-table .warn-badge")!;
    expect(badge.textContent).toBe("retry_storm");
    expect(badge.getAttribute("title"))
      .toBe("retries can multiply load under failure");
    expect(badge.className).toContain("critical");
  });
});

describe("create form", () => {
  it("blocks zero sampling locally without calling the api", async () => {
    const { app, client, root } = await mount();
    fillForm(root, { sampling: "0" });
    await app.submitForm();
    expect(client.created).toHaveLength(0);
    const banner = root.querySelector<HTMLDivElement>("#form-banner")!;
    expect(banner.hidden).toBe(false);
    expect(banner.className).toContain("error");
    expect(banner.textContent).toMatch(/sampling/);
  });

  it("shows a safety rejection verbatim with its reason code", async () => {
    const { app, client, root } = await mount();
    client.createError = new SafetyRejectionError(
      "business_hours",
      "experiments only run monday to friday, 09:00 to 17:00 us-east-1 time",
    );
    fillForm(root);
    await app.submitForm();
    const banner = root.querySelector<HTMLDivElement>("#form-banner")!;
    expect(banner.hidden).toBe(false);
    expect(banner.className).toContain("rejection");
    expect(banner.textContent).toContain("business_hours");
    expect(banner.textContent).toContain(
      "experiments only run monday to friday, 09:00 to 17:00 us-east-1 time",
    );
  });

  it("creates and selects the experiment on success", async () => {
    const { app, client, root } = await mount();
    fillForm(root, { sampling: "2" });
    await app.submitForm();
    expect(client.created).toEqual([{
      fault: { kind: "command", name: "GetBookmarks", action: "fail" },
      sampling_pct: 2,
      region: "us-east-1",
    }]);
    expect(app.selected).toBe("exp-0001");
    expect(root.querySelector<HTMLElement>("#detail")!.hidden).toBe(false);
  });
});

describe("live charts", () => {
  it("plots both groups from tick frames and shades the injection window",
    async () => {
      const { app, handlers, root } = await mount((c) => {
        c.records.set("exp-0001", record());
      });
      await app.select("exp-0001");
      handlers.onTick(tick(120, [{
        experiment_id: "exp-0001",
        state: "running",
        abort_reason: null,
        stream: [
          { second: 120, group: "baseline", success: 50, error: 0 },
          { second: 120, group: "canary", success: 30, error: 20 },
        ],
      }]));
      handlers.onTick(tick(121, [{
        experiment_id: "exp-0001",
        state: "running",
        abort_reason: null,
        stream: [
          { second: 121, group: "baseline", success: 52, error: 1 },
          { second: 121, group: "canary", success: 31, error: 19 },
        ],
      }]));
      await flush();
      const chart = root.querySelector("#chart-rate")!.innerHTML;
      expect(chart).toContain("line-baseline");
      expect(chart).toContain("line-canary");
      expect(chart).toContain("injection-window");
      const errors = root.querySelector("#chart-errors")!.innerHTML;
      expect(errors).toContain("cumulative errors");
      expect(app.ticks).toEqual([120, 121]);
    });

  it("marks a feed drop as a gap and says it is reconnecting", async () => {
    const { app, handlers, root } = await mount((c) => {
      c.records.set("exp-0001", record());
    });
    await app.select("exp-0001");
    handlers.onTick(tick(120, [{
      experiment_id: "exp-0001",
      state: "running",
      abort_reason: null,
      stream: [{ second: 120, group: "baseline", success: 5, error: 0 }],
    }]));
    handlers.onGap();
    expect(root.querySelector("#status-line")!.textContent)
      .toContain("reconnecting");
    handlers.onTick(tick(125, [{
      experiment_id: "exp-0001",
      state: "running",
      abort_reason: null,
      stream: [{ second: 125, group: "baseline", success: 6, error: 0 }],
    }]));
    await flush();
    expect(root.querySelector("#chart-rate")!.innerHTML).toContain("gap-marker");
  });
});

describe("completed experiments", () => {
  const verdict = {
    overall: "Pass",
    score: 83,
    alpha: 0.05,
    metrics: [{
      name: "sps", class: "KPI", direction: "lower_is_worse",
      classification: "no_change", p_value: 0.42, u_canary: 180.5,
      method: "exact",
    }],
  };

  it("renders a static chart from aggregates plus the verdict panel",
    async () => {
      const { app, root } = await mount((c) => {
        c.records.set("exp-0001", record({
          state: "completed", ended_s: 160, verdict,
        }));
        for (const group of ["baseline", "canary"]) {
          c.aggregates.set(`kpi.sps.success|${group}`, [
            { second: 100, value: group === "baseline" ? 50 : 30 },
            { second: 101, value: group === "baseline" ? 51 : 29 },
          ]);
          c.aggregates.set(`kpi.sps.error|${group}`, [
            { second: 100, value: group === "baseline" ? 0 : 20 },
          ]);
        }
      });
      await app.select("exp-0001");
      const chart = root.querySelector("#chart-rate")!.innerHTML;
      expect(chart).toContain("line-baseline");
      expect(chart).toContain("line-canary");
      const panel = root.querySelector("#verdict-panel")!;
      expect(panel.textContent).toContain("Pass");
      expect(panel.textContent).toContain("score 83");
      expect(panel.textContent).toContain("sps");
      expect(root.querySelector<HTMLButtonElement>("#abort-btn")!.disabled)
        .toBe(true);
    });

  it("falls back to the fresh stream while aggregates are not aged in",
    async () => {
      const { app, root } = await mount((c) => {
        c.records.set("exp-0001", record({ state: "completed", ended_s: 160 }));
        c.streamSamples = [
          { second: 150, group: "baseline", success: 10, error: 0 },
          { second: 150, group: "canary", success: 4, error: 6 },
        ];
      });
      await app.select("exp-0001");
      const chart = root.querySelector("#chart-rate")!.innerHTML;
      expect(chart).toContain("line-baseline");
      expect(chart).toContain("line-canary");
    });

  it("annotates an auto-stopped run with the stop instant and reason",
    async () => {
      const { app, root } = await mount((c) => {
        c.records.set("exp-0001", record({
          state: "aborted",
          ended_s: 130,
          abort_reason: "auto_stop: kpi_drop",
        }));
        c.streamSamples = [
          { second: 120, group: "baseline", success: 10, error: 0 },
          { second: 130, group: "canary", success: 2, error: 8 },
        ];
      });
      await app.select("exp-0001");
      const chart = root.querySelector("#chart-rate")!.innerHTML;
      expect(chart).toContain("stop-marker");
      expect(chart).toContain("auto_stop: kpi_drop");
    });
});

describe("abort control", () => {
  it("is enabled while running and disabled in terminal states", async () => {
    const { app, root } = await mount((c) => {
      c.records.set("exp-0001", record({ state: "running" }));
    });
    await app.select("exp-0001");
    const btn = root.querySelector<HTMLButtonElement>("#abort-btn")!;
    expect(btn.disabled).toBe(false);

    app.records.get("exp-0001")!.state = "completed";
    app.renderDetail();
    expect(btn.disabled).toBe(true);
  });

  it("surfaces a conflict when the run is already stopping", async () => {
    const { app, client, root } = await mount((c) => {
      c.records.set("exp-0001", record({ state: "stopping" }));
    });
    await app.select("exp-0001");
    client.abortError = new ConflictError(
      "cannot abort experiment in state 'stopping'",
    );
    await app.abortSelected();
    const banner = root.querySelector<HTMLDivElement>("#detail-banner")!;
    expect(banner.hidden).toBe(false);
    expect(banner.textContent)
      .toContain("cannot abort experiment in state 'stopping'");
  });

  it("aborts the selected run and reflects the stopping state", async () => {
    const { app, client, root } = await mount((c) => {
      c.records.set("exp-0001", record({ state: "running" }));
    });
    await app.select("exp-0001");
    await app.abortSelected();
    expect(client.aborted).toEqual(["exp-0001"]);
    expect(root.querySelector("#detail-meta")!.textContent)
      .toContain("state: stopping");
  });
});
