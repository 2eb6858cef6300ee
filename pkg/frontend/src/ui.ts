/**
 * DOM wiring: sample picker, live canvas, per-dimension sliders, label
 * toggles with resampling, traversal grids, and swap view. All rendering
 * goes through the documented HTTP API; the server is never mutated.
 */

import { ApiError, Client, ModelInfo } from "./api.js";
import { debounce, NonceGate } from "./debounce.js";
import {
  blockSlices,
  emptySession,
  nextSeed,
  pushHistory,
  selectSample,
  SessionState,
  setBlock,
  setCoordinate,
  toggleLabel,
} from "./state.js";

const SLIDER_DEBOUNCE_MS = 150;
const SLIDER_RANGE = 4.0;

export class Explorer {
  state: SessionState = emptySession();
  private decodeGate = new NonceGate();
  private requestDecode: (() => void) & { cancel(): void; flush(): void };

  constructor(
    private client: Client,
    private info: ModelInfo,
    private root: Document,
  ) {
    this.requestDecode = debounce(() => void this.decodeNow(), SLIDER_DEBOUNCE_MS);
  }

  static async boot(base: string, root: Document): Promise<Explorer> {
    const client = new Client(base);
    const info = await client.modelInfo();
    const app = new Explorer(client, info, root);
    await app.renderSamples();
    app.renderSliders();
    app.renderToggles();
    app.wireTraversal();
    app.wireSwap();
    return app;
  }

  private el<T extends HTMLElement>(id: string): T {
    const node = this.root.getElementById(id);
    if (!node) throw new Error(`missing element #${id}`);
    return node as T;
  }

  private toast(message: string): void {
    const box = this.el<HTMLDivElement>("toast");
    box.textContent = message;
    box.classList.add("visible");
    setTimeout(() => box.classList.remove("visible"), 2500);
  }

  private drawPng(canvasId: string, b64: string): void {
    const canvas = this.el<HTMLCanvasElement>(canvasId);
    const ctx = canvas.getContext("2d");
    if (!ctx) return;
    const img = new Image();
    img.onload = () => {
      ctx.imageSmoothingEnabled = false;
      ctx.clearRect(0, 0, canvas.width, canvas.height);
      ctx.drawImage(img, 0, 0, canvas.width, canvas.height);
      this.el<HTMLElement>("stale-badge").classList.remove("visible");
    };
    img.src = `data:image/png;base64,${b64}`;
  }

  async renderSamples(): Promise<void> {
    const listing = await this.client.samples();
    const holder = this.el<HTMLDivElement>("samples");
    holder.textContent = "";
    listing.ids.slice(0, 64).forEach((id) => {
      const img = this.root.createElement("img");
      img.src = `data:image/png;base64,${listing.thumbnails[id]}`;
      img.title = `sample ${id}`;
      img.addEventListener("click", () => void this.selectSample(id));
      holder.appendChild(img);
    });
  }

  async selectSample(id: number): Promise<void> {
    try {
      const enc = await this.client.encode(id);
      this.state = selectSample(this.state, id, enc.mu, enc.labels_pred);
      this.syncSliders();
      this.syncToggles(enc.labels_pred);
      await this.decodeNow();
      this.el<HTMLElement>("selected-label").textContent = `sample ${id}`;
    } catch (err) {
      this.toast(err instanceof ApiError ? `load failed: ${err.message}`
        : "load failed");
    }
  }

  renderSliders(): void {
    const holder = this.el<HTMLDivElement>("sliders");
    holder.textContent = "";
    const slices = blockSlices(this.info);
    const m = this.info.m_c + this.info.m_notc;
    for (let dim = 0; dim < m; dim++) {
      let name = `residual ${dim - this.info.m_c}`;
      slices.forEach(([start, stop], label) => {
        if (dim >= start && dim < stop) {
          const width = stop - start;
          name = width === 1
            ? this.info.labels[label]
            : `${this.info.labels[label]}[${dim - start}]`;
        }
      });
      const row = this.root.createElement("div");
      row.className = "slider-row" + (dim >= this.info.m_c ? " residual" : "");
      const tag = this.root.createElement("label");
      tag.textContent = name;
      const slider = this.root.createElement("input");
      slider.type = "range";
      slider.min = String(-SLIDER_RANGE);
      slider.max = String(SLIDER_RANGE);
      slider.step = "0.01";
      slider.value = "0";
      slider.id = `slider-${dim}`;
      const value = this.root.createElement("span");
      value.id = `slider-value-${dim}`;
      value.textContent = "0.00";
      slider.addEventListener("input", () => {
        this.onSlider(dim, Number(slider.value));
      });
      row.append(tag, slider, value);
      holder.appendChild(row);
    }
  }

  onSlider(dim: number, value: number): void {
    if (this.state.sampleId === null) return;
    this.state = setCoordinate(this.state, dim, value);
    this.el<HTMLSpanElement>(`slider-value-${dim}`).textContent =
      value.toFixed(2);
    this.requestDecode();
  }

  private async decodeNow(): Promise<void> {
    if (this.state.sampleId === null) return;
    const ticket = this.decodeGate.take();
    try {
      const image = await this.client.decode(this.state.z);
      if (this.decodeGate.isCurrent(ticket)) {
        this.drawPng("canvas", image);
      }
    } catch {
      this.el<HTMLElement>("stale-badge").classList.add("visible");
    }
  }

  syncSliders(): void {
    this.state.z.forEach((v, dim) => {
      const slider = this.root.getElementById(
        `slider-${dim}`,
      ) as HTMLInputElement | null;
      if (slider) {
        slider.value = String(Math.max(-SLIDER_RANGE,
          Math.min(SLIDER_RANGE, v)));
        const label = this.root.getElementById(`slider-value-${dim}`);
        if (label) label.textContent = v.toFixed(2);
      }
    });
  }

  renderToggles(): void {
    const holder = this.el<HTMLDivElement>("toggles");
    holder.textContent = "";
    this.info.labels.forEach((name, label) => {
      const row = this.root.createElement("div");
      row.className = "toggle-row";
      const btn = this.root.createElement("button");
      btn.id = `toggle-${label}`;
      btn.textContent = `${name}: ?`;
      btn.addEventListener("click", () => void this.onToggle(label));
      const resample = this.root.createElement("button");
      resample.id = `resample-${label}`;
      resample.textContent = "resample";
      resample.addEventListener("click",
        () => void this.onResample(label, this.state.toggles[label] as 0 | 1));
      const probs = this.root.createElement("span");
      probs.id = `probs-${label}`;
      row.append(btn, resample, probs);
      holder.appendChild(row);
    });
  }

  syncToggles(probs: number[]): void {
    this.info.labels.forEach((name, label) => {
      const btn = this.root.getElementById(`toggle-${label}`);
      if (btn) {
        btn.textContent =
          `${name}: ${this.state.toggles[label]} (p=${probs[label].toFixed(2)})`;
      }
    });
  }

  async onToggle(label: number): Promise<void> {
    this.state = toggleLabel(this.state, label);
    await this.onResample(label, this.state.toggles[label] as 0 | 1,
      `toggle ${this.info.labels[label]}`);
  }

  async onResample(label: number, value: 0 | 1,
    action?: string): Promise<void> {
    const sampleId = this.state.sampleId;
    if (sampleId === null) return;
    const [seed, next] = nextSeed(this.state);
    this.state = next;
    try {
      const res = await this.client.intervene(sampleId, label, value, seed);
      const [start, stop] = blockSlices(this.info)[label];
      this.state = setBlock(this.state, this.info, label,
        res.z.slice(start, stop));
      this.state = pushHistory(this.state,
        action ?? `resample ${this.info.labels[label]} (seed ${seed})`,
        res.image);
      this.drawPng("canvas", res.image);
      this.syncSliders();
      this.syncToggles(res.probs_after);
      const probs = this.root.getElementById(`probs-${label}`);
      if (probs) {
        probs.textContent = ` ${res.probs_before[label].toFixed(2)} -> ` +
          `${res.probs_after[label].toFixed(2)}`;
      }
      this.renderHistory();
    } catch (err) {
      this.toast(err instanceof ApiError ? err.message : "request failed");
    }
  }

  renderHistory(): void {
    const holder = this.el<HTMLDivElement>("history");
    holder.textContent = "";
    this.state.history.slice(-12).forEach((entry) => {
      const img = this.root.createElement("img");
      img.src = `data:image/png;base64,${entry.thumbnail}`;
      img.title = entry.action;
      holder.appendChild(img);
    });
  }

  wireTraversal(): void {
    this.el<HTMLButtonElement>("traverse-btn").addEventListener("click",
      () => void this.runTraversal());
  }

  private async runTraversal(): Promise<void> {
    if (this.state.sampleId === null) return;
    const dimI = Number(this.el<HTMLInputElement>("traverse-i").value);
    const dimJ = Number(this.el<HTMLInputElement>("traverse-j").value);
    try {
      const res = await this.client.traverse(
        this.state.sampleId, dimI, dimJ, -3, 3, 8);
      this.drawPng("traversal-canvas", res.image);
    } catch (err) {
      this.toast(err instanceof ApiError ? err.message : "traversal failed");
    }
  }

  wireSwap(): void {
    this.el<HTMLButtonElement>("swap-btn").addEventListener("click",
      () => void this.runSwap());
  }

  /** Swap: characteristics of a onto context of b via encode + decode. */
  private async runSwap(): Promise<void> {
    const a = Number(this.el<HTMLInputElement>("swap-a").value);
    const b = Number(this.el<HTMLInputElement>("swap-b").value);
    try {
      const [encA, encB] = await Promise.all([
        this.client.encode(a),
        this.client.encode(b),
      ]);
      const z = [
        ...encA.mu.slice(0, this.info.m_c),
        ...encB.mu.slice(this.info.m_c),
      ];
      const [imgA, imgB, swapped] = await Promise.all([
        this.client.reconstruct(a).then((r) => r.image),
        this.client.reconstruct(b).then((r) => r.image),
        this.client.decode(z),
      ]);
      this.drawPng("swap-canvas-a", imgA);
      this.drawPng("swap-canvas-b", imgB);
      this.drawPng("swap-canvas-out", swapped);
    } catch (err) {
      this.toast(err instanceof ApiError ? err.message : "swap failed");
    }
  }
}
