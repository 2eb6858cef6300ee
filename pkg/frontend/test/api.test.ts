import { describe, expect, it } from "vitest";

import { ApiError, Client, FetchLike } from "../src/api.js";

function mockFetch(
  handler: (url: string, init?: RequestInit) => { status: number; body: unknown },
): { calls: Array<{ url: string; body: unknown }>; fetchFn: FetchLike } {
  const calls: Array<{ url: string; body: unknown }> = [];
  const fetchFn: FetchLike = async (url, init) => {
    const body = init?.body ? JSON.parse(init.body as string) : undefined;
    calls.push({ url, body });
    const res = handler(url, init);
    return new Response(JSON.stringify(res.body), {
      status: res.status,
      headers: { "content-type": "application/json" },
    });
  };
  return { calls, fetchFn };
}

describe("client", () => {
  it("posts the documented intervention body", async () => {
    const { calls, fetchFn } = mockFetch(() => ({
      status: 200,
      body: { image: "x", probs_before: [], probs_after: [], z: [] },
    }));
    const client = new Client("http://srv", fetchFn);
    await client.intervene(4, 2, 1, 9);
    expect(calls[0].url).toBe("http://srv/intervene");
    expect(calls[0].body).toEqual({
      sample_id: 4,
      label: 2,
      value: 1,
      mode: "resample",
      seed: 9,
    });
  });

  it("unwraps decode responses", async () => {
    const { fetchFn } = mockFetch(() => ({
      status: 200,
      body: { image: "abc123" },
    }));
    const client = new Client("http://srv", fetchFn);
    expect(await client.decode([0, 1])).toBe("abc123");
  });

  it("raises ApiError with the server's message", async () => {
    const { fetchFn } = mockFetch(() => ({
      status: 422,
      body: { error: "label must be in [0, 3)" },
    }));
    const client = new Client("http://srv", fetchFn);
    await expect(client.intervene(0, 9, 1, 0)).rejects.toThrowError(ApiError);
    await expect(client.intervene(0, 9, 1, 0)).rejects.toThrow(
      "label must be in [0, 3)",
    );
  });

  it("requests traversals with both dims and range", async () => {
    const { calls, fetchFn } = mockFetch(() => ({
      status: 200,
      body: { image: "g", grid: 8, values: [] },
    }));
    const client = new Client("http://srv", fetchFn);
    await client.traverse(1, 0, 2, -3, 3, 8);
    expect(calls[0].body).toEqual({
      sample_id: 1,
      dim_i: 0,
      dim_j: 2,
      lo: -3,
      hi: 3,
      grid: 8,
    });
  });
});
