/** Typed client for the /v1 API. Every number the dashboard shows comes
 * through here; the only mutating calls are create and abort. */

export type FaultKind = "rpc_client" | "command";
export type FaultAction = "fail" | "add_latency";

export interface FaultSpec {
  kind: FaultKind;
  name: string;
  action: FaultAction;
  latency_ms?: number;
}

export interface CreateRequest {
  fault: FaultSpec;
  sampling_pct?: number;
  duration_s?: number;
  region?: string;
}

export interface MetricRow {
  name: string;
  class: string;
  direction: string;
  classification: string;
  p_value: number;
  u_canary: number;
  method: string;
}

export interface VerdictInfo {
  overall: string;
  score: number;
  alpha: number;
  metrics: MetricRow[];
}

export interface ExperimentRecord {
  experiment_id: string;
  state: string;
  fault: FaultSpec;
  exp_type: string | null;
  sampling_pct: number;
  duration_s: number;
  region: string;
  submitted_at: string | null;
  started_s: number | null;
  ended_s: number | null;
  abort_reason: string | null;
  error: string | null;
  vips: { original: string | null; baseline: string | null; canary: string | null };
  clusters: {
    baseline: string | null;
    canary: string | null;
    canary_size: number | null;
  };
  verdict: VerdictInfo | null;
  log: { at_s: number; state: string; note: string }[];
}

export interface StreamSample {
  second: number;
  group: string;
  success: number;
  error: number;
}

export interface SnapshotRow {
  cluster: string;
  kind: FaultKind;
  name: string;
  trigger_pct: number;
  latencies: { mean: number; p90: number; p99: number; p995: number; count: number };
  max_rps: number;
  timeout_ms: number;
  retries: number;
  bulkhead_size: number;
  has_fallback: boolean;
  fallback_observed: boolean;
  wraps: string[];
  wrapped_by: string[];
  timeout_misaligned: boolean;
  known_impacts: string[];
  blacklisted: boolean;
  stale: boolean;
}

export interface WarningRow {
  severity: string;
  code: string;
  cluster: string;
  dependency: string;
  message: string;
  evidence: Record<string, unknown>;
}

export interface PlanRow {
  cluster: string;
  kind: FaultKind;
  dependency: string;
  exp_type: string;
  injected_latency_ms: number | null;
  criticality: number;
  safety: number;
  safety_reasons: string[];
  priority: number;
  key: string;
}

export interface StatusInfo {
  virtual_s: number;
  wall_clock: string;
  accel: number;
  workload_running: boolean;
  experiment_counts: Record<string, number>;
  regions: Record<string, { active_impact_pct: number; failover_in_progress: boolean; budget_pct: number }>;
  recovered: string[];
  store_warnings: string[];
}

export interface AggregatePoint {
  second: number;
  value: number;
}

/** A create refused by a safety gate; carries the server's reason code. */
export class SafetyRejectionError extends Error {
  constructor(public reason: string | null, message: string) {
    super(message);
    this.name = "SafetyRejectionError";
  }
}

/** The action no longer applies to the experiment's current state. */
export class ConflictError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "ConflictError";
  }
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
    this.name = "ApiError";
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

function detailMessage(detail: unknown): string {
  if (typeof detail === "string") return detail;
  if (detail && typeof detail === "object" && "message" in detail) {
    return String((detail as { message: unknown }).message);
  }
  return JSON.stringify(detail);
}

export class ApiClient {
  private fetchImpl: FetchLike;

  constructor(public baseUrl: string, fetchImpl?: FetchLike) {
    this.fetchImpl = fetchImpl ?? ((input, init) => fetch(input, init));
  }

  liveFeedUrl(): string {
    return `${this.baseUrl}/v1/live`;
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await this.fetchImpl(`${this.baseUrl}${path}`, init);
    if (res.ok) {
      return (await res.json()) as T;
    }
    let detail: unknown = null;
    try {
      detail = ((await res.json()) as { detail?: unknown }).detail ?? null;
    } catch {
      detail = res.statusText;
    }
    if (res.status === 409) {
      if (detail && typeof detail === "object" && "reason" in detail) {
        const d = detail as { reason: string | null; message?: string };
        throw new SafetyRejectionError(d.reason, d.message ?? "rejected");
      }
      throw new ConflictError(detailMessage(detail));
    }
    throw new ApiError(res.status, detailMessage(detail));
  }

  status(): Promise<StatusInfo> {
    return this.request("/v1/status");
  }

  listExperiments(): Promise<ExperimentRecord[]> {
    return this.request<{ experiments: ExperimentRecord[] }>("/v1/experiments")
      .then((r) => r.experiments);
  }

  getExperiment(id: string): Promise<ExperimentRecord> {
    return this.request(`/v1/experiments/${encodeURIComponent(id)}`);
  }

  createExperiment(body: CreateRequest): Promise<ExperimentRecord> {
    return this.request("/v1/experiments", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  abortExperiment(id: string, reason = "manual"): Promise<{ accepted: boolean; state: string }> {
    return this.request(`/v1/experiments/${encodeURIComponent(id)}/abort`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ reason }),
    });
  }

  streamWindow(id: string, windowS: number): Promise<StreamSample[]> {
    const w = Math.max(1, Math.min(3600, Math.ceil(windowS)));
    return this.request<{ samples: StreamSample[] }>(
      `/v1/experiments/${encodeURIComponent(id)}/stream?window_s=${w}`,
    ).then((r) => r.samples);
  }

  snapshots(cluster?: string): Promise<SnapshotRow[]> {
    const q = cluster ? `?cluster=${encodeURIComponent(cluster)}` : "";
    return this.request<{ snapshots: SnapshotRow[] }>(`/v1/snapshots${q}`)
      .then((r) => r.snapshots);
  }

  warnings(cluster?: string): Promise<WarningRow[]> {
    const q = cluster ? `?cluster=${encodeURIComponent(cluster)}` : "";
    return this.request<{ warnings: WarningRow[] }>(`/v1/warnings${q}`)
      .then((r) => r.warnings);
  }

  plan(cluster?: string): Promise<PlanRow[]> {
    const q = cluster ? `?cluster=${encodeURIComponent(cluster)}` : "";
    return this.request<{ plan: PlanRow[] }>(`/v1/plan${q}`).then((r) => r.plan);
  }

  aggregate(metric: string, tags: Record<string, string>): Promise<AggregatePoint[]> {
    const params = new URLSearchParams({ metric });
    for (const [key, value] of Object.entries(tags)) {
      params.append("tag", `${key}=${value}`);
    }
    return this.request<{ points: AggregatePoint[] }>(
      `/v1/metrics/aggregate?${params.toString()}`,
    ).then((r) => r.points);
  }
}
