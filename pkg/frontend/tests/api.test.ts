import { describe, expect, it } from "vitest";
import {
  ApiClient,
  ApiError,
  ConflictError,
  SafetyRejectionError,
} from "../src/api.js";

interface Call {
  url: string;
  init?: RequestInit;
}

function fakeFetch(status: number, payload: unknown) {
  const calls: Call[] = [];
  const impl = async (url: string, init?: RequestInit): Promise<Response> => {
    calls.push({ url, init });
    return {
      ok: status >= 200 && status < 300,
      status,
      statusText: `http ${status}`,
      json: async () => payload,
    } as unknown as Response;
  };
  return { calls, impl };
}

describe("ApiClient", () => {
  it("prefixes the base url and unwraps list envelopes", async () => {
    const { calls, impl } = fakeFetch(200, { experiments: [{ experiment_id: "e1" }] });
    const client = new ApiClient("http://api:9", impl);
    const list = await client.listExperiments();
    expect(calls[0]?.url).toBe("http://api:9/v1/experiments");
    expect(list.map((e) => e.experiment_id)).toEqual(["e1"]);
  });

  it("posts the create body as json", async () => {
    const { calls, impl } = fakeFetch(201, { experiment_id: "e1" });
    const client = new ApiClient("", impl);
    await client.createExperiment({
      fault: { kind: "command", name: "GetBookmarks", action: "fail" },
      sampling_pct: 1,
    });
    const call = calls[0]!;
    expect(call.url).toBe("/v1/experiments");
    expect(call.init?.method).toBe("POST");
    expect(JSON.parse(String(call.init?.body))).toEqual({
      fault: { kind: "command", name: "GetBookmarks", action: "fail" },
      sampling_pct: 1,
    });
  });

  it("maps a safety rejection to its reason code and message", async () => {
    const { impl } = fakeFetch(409, {
      detail: { reason: "business_hours", message: "outside business hours" },
    });
    const client = new ApiClient("", impl);
    const err = await client.createExperiment({
      fault: { kind: "command", name: "x", action: "fail" },
    }).catch((e: unknown) => e);
    expect(err).toBeInstanceOf(SafetyRejectionError);
    expect((err as SafetyRejectionError).reason).toBe("business_hours");
    expect((err as SafetyRejectionError).message).toBe("outside business hours");
  });

  it("maps a plain 409 to a conflict", async () => {
    const { impl } = fakeFetch(409, {
      detail: "cannot abort experiment in state 'completed'",
    });
    const client = new ApiClient("", impl);
    const err = await client.abortExperiment("e1").catch((e: unknown) => e);
    expect(err).toBeInstanceOf(ConflictError);
    expect((err as ConflictError).message)
      .toBe("cannot abort experiment in state 'completed'");
  });

  it("maps other failures to ApiError with the status", async () => {
    const { impl } = fakeFetch(404, { detail: "no experiment 'nope'" });
    const client = new ApiClient("", impl);
    const err = await client.getExperiment("nope").catch((e: unknown) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect((err as ApiError).status).toBe(404);
  });

  it("encodes aggregate tags as repeated key=value params", async () => {
    const { calls, impl } = fakeFetch(200, { points: [{ second: 1, value: 2 }] });
    const client = new ApiClient("", impl);
    const points = await client.aggregate("kpi.sps.success", {
      experiment: "e1",
      group: "canary",
    });
    expect(calls[0]?.url).toBe(
      "/v1/metrics/aggregate?metric=kpi.sps.success" +
      "&tag=experiment%3De1&tag=group%3Dcanary",
    );
    expect(points).toEqual([{ second: 1, value: 2 }]);
  });

  it("clamps the stream window to the server's accepted range", async () => {
    const { calls, impl } = fakeFetch(200, { samples: [] });
    const client = new ApiClient("", impl);
    await client.streamWindow("e1", 999999);
    await client.streamWindow("e1", 0);
    expect(calls[0]?.url).toContain("window_s=3600");
    expect(calls[1]?.url).toContain("window_s=1");
  });

  it("escapes experiment ids in paths", async () => {
    const { calls, impl } = fakeFetch(200, {});
    const client = new ApiClient("", impl);
    await client.getExperiment("weird/id");
    expect(calls[0]?.url).toBe("/v1/experiments/weird%2Fid");
  });
});
