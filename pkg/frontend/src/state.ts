/** View-model logic kept out of the DOM so it can be tested directly. */

import type { CreateRequest, ExperimentRecord, StreamSample } from "./api.js";
import type { GroupCounts, SeriesPoint } from "./chart.js";

export interface FormModel {
  dependency: string; // "kind:name" from the picker
  action: "fail" | "add_latency";
  latencyMs: string;
  sampling: string;
  duration: string;
  region: string;
}

export type FormResult =
  | { ok: true; body: CreateRequest }
  | { ok: false; errors: string[] };

export function validateForm(m: FormModel): FormResult {
  const errors: string[] = [];
  const [kind, name] = m.dependency.split(":", 2);
  if (!kind || !name || (kind !== "rpc_client" && kind !== "command")) {
    errors.push("pick a dependency to inject into");
  }

  let latency: number | undefined;
  if (m.action === "add_latency") {
    latency = Number(m.latencyMs);
    if (!m.latencyMs.trim() || !Number.isFinite(latency) || latency <= 0) {
      errors.push("latency must be a positive number of milliseconds");
    }
  }

  const body: CreateRequest = {
    fault: {
      kind: kind as "rpc_client" | "command",
      name: name ?? "",
      action: m.action,
      ...(m.action === "add_latency" && latency !== undefined
        ? { latency_ms: latency }
        : {}),
    },
  };

  if (m.sampling.trim() !== "") {
    const pct = Number(m.sampling);
    if (!Number.isFinite(pct) || pct <= 0 || pct > 50) {
      errors.push("sampling must be in (0, 50] percent");
    } else {
      body.sampling_pct = pct;
    }
  }
  if (m.duration.trim() !== "") {
    const dur = Number(m.duration);
    if (!Number.isFinite(dur) || dur <= 0) {
      errors.push("duration must be a positive number of seconds");
    } else {
      body.duration_s = dur;
    }
  }
  if (m.region.trim() !== "") {
    body.region = m.region.trim();
  }

  if (errors.length > 0) return { ok: false, errors };
  return { ok: true, body };
}

const TERMINAL_STATES = new Set(["completed", "aborted", "failed"]);

export function abortEnabled(state: string): boolean {
  return state === "running";
}

export function isTerminal(state: string): boolean {
  return TERMINAL_STATES.has(state);
}

/** Accumulates per-second two-group counters with (second, group) dedup,
 * tracking drop gaps so charts can mark them. */
export class ExperimentSeries {
  private seen = new Set<string>();
  private counts = new Map<string, GroupCounts[]>();
  gaps: number[] = [];
  lastSecond: number | null = null;

  add(samples: StreamSample[]): void {
    for (const s of samples) {
      const key = `${s.second}:${s.group}`;
      if (this.seen.has(key)) continue;
      this.seen.add(key);
      let list = this.counts.get(s.group);
      if (!list) {
        list = [];
        this.counts.set(s.group, list);
      }
      list.push({ second: s.second, success: s.success, error: s.error });
      if (this.lastSecond === null || s.second > this.lastSecond) {
        this.lastSecond = s.second;
      }
    }
  }

  markGap(): void {
    if (this.lastSecond !== null) this.gaps.push(this.lastSecond);
  }

  group(name: string): GroupCounts[] {
    return [...(this.counts.get(name) ?? [])].sort((a, b) => a.second - b.second);
  }

  /** Successes per second for one group, as chart points. */
  rate(name: string): SeriesPoint[] {
    return this.group(name).map((c) => ({ second: c.second, value: c.success }));
  }
}

/** The chart's shaded interval for an experiment, while running or after. */
export function injectionWindow(
  exp: Pick<ExperimentRecord, "started_s" | "ended_s">,
  lastSecond: number | null,
): { start: number; end: number } | null {
  if (exp.started_s === null || exp.started_s === undefined) return null;
  const end = exp.ended_s ?? lastSecond;
  if (end === null || end <= exp.started_s) return null;
  return { start: exp.started_s, end };
}

/** The auto-stop annotation, when the experiment was stopped early. */
export function stopMarker(
  exp: Pick<ExperimentRecord, "abort_reason" | "ended_s">,
): { second: number; reason: string } | null {
  if (!exp.abort_reason || exp.ended_s === null || exp.ended_s === undefined) {
    return null;
  }
  return { second: exp.ended_s, reason: exp.abort_reason };
}
