import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { debounce, NonceGate } from "../src/debounce.js";

describe("debounce", () => {
  beforeEach(() => vi.useFakeTimers());
  afterEach(() => vi.useRealTimers());

  it("fires once after the last call", () => {
    const calls: number[] = [];
    const fn = debounce((v: number) => calls.push(v), 150);
    fn(1);
    fn(2);
    fn(3);
    vi.advanceTimersByTime(149);
    expect(calls).toEqual([]);
    vi.advanceTimersByTime(1);
    expect(calls).toEqual([3]);
  });

  it("rapid drags coalesce to at most 5 requests per second", () => {
    let count = 0;
    const fn = debounce(() => count++, 150);
    // one second of 16 ms drag events, then release
    for (let t = 0; t < 1000; t += 16) {
      fn();
      vi.advanceTimersByTime(16);
    }
    vi.advanceTimersByTime(150);
    expect(count).toBeLessThanOrEqual(5);
    expect(count).toBeGreaterThan(0);
  });

  it("fires within 200 ms of drag end at the 150 ms setting", () => {
    let fired = -1;
    let now = 0;
    const fn = debounce(() => (fired = now), 150);
    fn();
    for (; now < 400 && fired < 0; now += 10) vi.advanceTimersByTime(10);
    expect(fired).toBeGreaterThanOrEqual(0);
    expect(fired).toBeLessThanOrEqual(200);
  });

  it("cancel drops the pending call", () => {
    let count = 0;
    const fn = debounce(() => count++, 150);
    fn();
    fn.cancel();
    vi.advanceTimersByTime(500);
    expect(count).toBe(0);
  });

  it("flush runs the pending call immediately", () => {
    const calls: number[] = [];
    const fn = debounce((v: number) => calls.push(v), 150);
    fn(7);
    fn.flush();
    expect(calls).toEqual([7]);
    vi.advanceTimersByTime(500);
    expect(calls).toEqual([7]);
  });
});

describe("NonceGate", () => {
  it("accepts only the latest ticket", () => {
    const gate = new NonceGate();
    const a = gate.take();
    const b = gate.take();
    expect(gate.isCurrent(a)).toBe(false);
    expect(gate.isCurrent(b)).toBe(true);
  });
});
