/**
 * Session state for the explorer: the working latent starts at a sample's
 * encoded posterior mean and is edited only through block-targeted
 * operations, so untouched coordinates always match the encoded mean.
 * History is append-only.
 */

import type { ModelInfo } from "./api.js";

export interface HistoryEntry {
  action: string;
  thumbnail: string; // base64 PNG of the resulting image
}

export interface SessionState {
  sampleId: number | null;
  encodedMean: number[];
  z: number[];
  toggles: number[]; // current label values shown in the UI
  seedCounter: number;
  history: HistoryEntry[];
}

export function blockSlices(info: ModelInfo): Array<[number, number]> {
  const out: Array<[number, number]> = [];
  let start = 0;
  for (const d of info.layout.dims_c) {
    out.push([start, start + d]);
    start += d;
  }
  return out;
}

export function emptySession(): SessionState {
  return {
    sampleId: null,
    encodedMean: [],
    z: [],
    toggles: [],
    seedCounter: 0,
    history: [],
  };
}

export function selectSample(
  state: SessionState,
  sampleId: number,
  mu: number[],
  labelsPred: number[],
): SessionState {
  return {
    ...state,
    sampleId,
    encodedMean: [...mu],
    z: [...mu],
    toggles: labelsPred.map((p) => (p >= 0.5 ? 1 : 0)),
    seedCounter: state.seedCounter,
    history: state.history,
  };
}

/** Slider edit: write one coordinate, never anything else. */
export function setCoordinate(
  state: SessionState,
  index: number,
  value: number,
): SessionState {
  if (index < 0 || index >= state.z.length) {
    throw new RangeError(`coordinate ${index} outside latent of ${state.z.length}`);
  }
  const z = [...state.z];
  z[index] = value;
  return { ...state, z };
}

/** Block write-back after an intervention response. */
export function setBlock(
  state: SessionState,
  info: ModelInfo,
  label: number,
  blockValues: number[],
): SessionState {
  const [start, stop] = blockSlices(info)[label];
  if (blockValues.length !== stop - start) {
    throw new RangeError("block width mismatch");
  }
  const z = [...state.z];
  for (let i = start; i < stop; i++) z[i] = blockValues[i - start];
  return { ...state, z };
}

export function toggleLabel(state: SessionState, label: number): SessionState {
  const toggles = [...state.toggles];
  toggles[label] = toggles[label] === 1 ? 0 : 1;
  return { ...state, toggles };
}

export function nextSeed(state: SessionState): [number, SessionState] {
  const seed = state.seedCounter;
  return [seed, { ...state, seedCounter: seed + 1 }];
}

export function pushHistory(
  state: SessionState,
  action: string,
  thumbnail: string,
): SessionState {
  return { ...state, history: [...state.history, { action, thumbnail }] };
}

/** Indices where the working latent differs from the encoded mean. */
export function touchedCoordinates(state: SessionState): number[] {
  const out: number[] = [];
  for (let i = 0; i < state.z.length; i++) {
    if (state.z[i] !== state.encodedMean[i]) out.push(i);
  }
  return out;
}

/** Blocks (by label index; -1 for the residual) covering the touched dims. */
export function touchedBlocks(state: SessionState, info: ModelInfo): number[] {
  const slices = blockSlices(info);
  const blocks = new Set<number>();
  for (const idx of touchedCoordinates(state)) {
    let hit = -1;
    slices.forEach(([start, stop], label) => {
      if (idx >= start && idx < stop) hit = label;
    });
    blocks.add(hit);
  }
  return [...blocks].sort((a, b) => a - b);
}
