/** Server-sent-events over a streaming fetch.
 *
 * The live feed is a plain text/event-stream; parsing it by hand keeps one
 * code path for browsers and for the node-based tests (node has no global
 * EventSource). The feed reconnects on drop and reports the gap so charts
 * can mark it.
 */

import type { StreamSample } from "./api.js";

export interface SseEvent {
  event: string;
  data: string;
}

/** Incremental parser; feed() returns the events completed by the chunk. */
export class SseParser {
  private buffer = "";
  private eventName = "";
  private dataLines: string[] = [];

  feed(chunk: string): SseEvent[] {
    this.buffer += chunk;
    const events: SseEvent[] = [];
    for (;;) {
      const nl = this.buffer.indexOf("\n");
      if (nl < 0) break;
      let line = this.buffer.slice(0, nl);
      this.buffer = this.buffer.slice(nl + 1);
      if (line.endsWith("\r")) line = line.slice(0, -1);
      const done = this.consumeLine(line);
      if (done) events.push(done);
    }
    return events;
  }

  private consumeLine(line: string): SseEvent | null {
    if (line === "") {
      if (this.dataLines.length === 0) {
        this.eventName = "";
        return null;
      }
      const event: SseEvent = {
        event: this.eventName || "message",
        data: this.dataLines.join("\n"),
      };
      this.eventName = "";
      this.dataLines = [];
      return event;
    }
    if (line.startsWith(":")) return null; // comment / keepalive
    const colon = line.indexOf(":");
    const field = colon < 0 ? line : line.slice(0, colon);
    let value = colon < 0 ? "" : line.slice(colon + 1);
    if (value.startsWith(" ")) value = value.slice(1);
    if (field === "event") this.eventName = value;
    else if (field === "data") this.dataLines.push(value);
    return null;
  }
}

export interface TickExperiment {
  experiment_id: string;
  state: string;
  abort_reason: string | null;
  stream: StreamSample[];
}

export interface TickFrame {
  type: "tick";
  virtual_s: number;
  wall_clock: string;
  workload_running: boolean;
  experiments: TickExperiment[];
}

export interface LiveFeedHandlers {
  onTick(frame: TickFrame): void;
  /** The stream dropped; a reconnect is scheduled. */
  onGap(): void;
  onOpen?(): void;
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class LiveFeed {
  private running = false;
  private controller: AbortController | null = null;
  private timer: ReturnType<typeof setTimeout> | null = null;
  private fetchImpl: FetchLike;

  constructor(
    private url: string,
    private handlers: LiveFeedHandlers,
    opts: { fetchImpl?: FetchLike; retryMs?: number } = {},
  ) {
    this.fetchImpl = opts.fetchImpl ?? ((input, init) => fetch(input, init));
    this.retryMs = opts.retryMs ?? 1000;
  }

  private retryMs: number;

  start(): void {
    if (this.running) return;
    this.running = true;
    void this.loop();
  }

  stop(): void {
    this.running = false;
    if (this.timer !== null) clearTimeout(this.timer);
    this.controller?.abort();
  }

  private async loop(): Promise<void> {
    while (this.running) {
      try {
        await this.readOnce();
      } catch {
        // drop handled below; aborting on stop() also lands here
      }
      if (!this.running) return;
      this.handlers.onGap();
      await new Promise<void>((resolve) => {
        this.timer = setTimeout(resolve, this.retryMs);
      });
    }
  }

  private async readOnce(): Promise<void> {
    this.controller = new AbortController();
    const res = await this.fetchImpl(this.url, {
      signal: this.controller.signal,
      headers: { accept: "text/event-stream" },
    });
    if (!res.ok || !res.body) {
      throw new Error(`live feed: http ${res.status}`);
    }
    this.handlers.onOpen?.();
    const parser = new SseParser();
    const reader = res.body.getReader();
    const decoder = new TextDecoder();
    for (;;) {
      const { done, value } = await reader.read();
      if (done) return;
      for (const event of parser.feed(decoder.decode(value, { stream: true }))) {
        if (event.event !== "tick") continue;
        let frame: TickFrame;
        try {
          frame = JSON.parse(event.data) as TickFrame;
        } catch {
          continue;
        }
        if (frame.type === "tick") this.handlers.onTick(frame);
      }
    }
  }
}
