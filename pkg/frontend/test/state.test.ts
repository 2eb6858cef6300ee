import { describe, expect, it } from "vitest";

import type { ModelInfo } from "../src/api.js";
import {
  blockSlices,
  emptySession,
  nextSeed,
  pushHistory,
  selectSample,
  setBlock,
  setCoordinate,
  toggleLabel,
  touchedBlocks,
  touchedCoordinates,
} from "../src/state.js";

const info: ModelInfo = {
  labels: ["top_bar", "left_bar", "center_patch"],
  m_c: 4,
  m_notc: 2,
  layout: {
    labels: ["top_bar", "left_bar", "center_patch"],
    dims_c: [1, 2, 1],
    m_notc: 2,
    num_classes: null,
  },
  dataset: "synthetic",
  likelihood: "laplace",
  image_shape: [28, 28],
  n_samples: 16,
};

const mu = [0.1, -0.2, 0.3, 0.4, -0.5, 0.6];

function freshSession() {
  return selectSample(emptySession(), 3, mu, [0.9, 0.2, 0.6]);
}

describe("session state", () => {
  it("initializes sliders at the encoded mean and toggles at predictions", () => {
    const s = freshSession();
    expect(s.sampleId).toBe(3);
    expect(s.z).toEqual(mu);
    expect(s.encodedMean).toEqual(mu);
    expect(s.toggles).toEqual([1, 0, 1]);
  });

  it("re-selecting the same sample restores identical slider positions", () => {
    const a = freshSession();
    const b = selectSample(a, 3, mu, [0.9, 0.2, 0.6]);
    expect(b.z).toEqual(a.encodedMean);
  });

  it("slider edits touch only their coordinate", () => {
    let s = freshSession();
    s = setCoordinate(s, 2, 1.5);
    expect(touchedCoordinates(s)).toEqual([2]);
    expect(s.z[0]).toBe(mu[0]);
    expect(s.encodedMean).toEqual(mu);
  });

  it("drag away and back restores the untouched state", () => {
    let s = freshSession();
    s = setCoordinate(s, 1, 2.0);
    s = setCoordinate(s, 1, mu[1]);
    expect(touchedCoordinates(s)).toEqual([]);
  });

  it("maps touched coordinates to blocks, residual as -1", () => {
    let s = freshSession();
    s = setCoordinate(s, 1, 9);  // inside left_bar block [1, 3)
    s = setCoordinate(s, 5, 9);  // residual
    expect(touchedBlocks(s, info)).toEqual([-1, 1]);
  });

  it("setBlock writes a whole block and nothing else", () => {
    let s = freshSession();
    s = setBlock(s, info, 1, [7, 8]);
    expect(s.z).toEqual([0.1, 7, 8, 0.4, -0.5, 0.6]);
    expect(() => setBlock(s, info, 1, [1])).toThrow(RangeError);
  });

  it("block slices follow the layout", () => {
    expect(blockSlices(info)).toEqual([[0, 1], [1, 3], [3, 4]]);
  });

  it("toggle flips back and forth", () => {
    let s = freshSession();
    s = toggleLabel(s, 0);
    expect(s.toggles[0]).toBe(0);
    s = toggleLabel(s, 0);
    expect(s.toggles[0]).toBe(1);
  });

  it("seed counter hands out distinct seeds per resample", () => {
    let s = freshSession();
    const [s1, next1] = nextSeed(s);
    const [s2, next2] = nextSeed(next1);
    expect(s1).not.toBe(s2);
    expect(next2.seedCounter).toBe(2);
  });

  it("history is append-only", () => {
    let s = freshSession();
    s = pushHistory(s, "a", "png-a");
    const ref = s.history;
    s = pushHistory(s, "b", "png-b");
    expect(s.history.length).toBe(2);
    expect(ref.length).toBe(1); // previous snapshot untouched
    expect(s.history[1].action).toBe("b");
  });

  it("rejects out-of-range coordinates", () => {
    expect(() => setCoordinate(freshSession(), 99, 0)).toThrow(RangeError);
  });
});
