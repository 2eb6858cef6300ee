/**
 * Typed client for the inference service. Every call is a pure request;
 * the seed argument is the only source of randomness server-side.
 */

export interface ModelInfo {
  labels: string[];
  m_c: number;
  m_notc: number;
  layout: {
    labels: string[];
    dims_c: number[];
    m_notc: number;
    num_classes: number | null;
  };
  dataset: string;
  likelihood: string;
  image_shape: [number, number];
  n_samples: number;
}

export interface SamplesResponse {
  ids: number[];
  thumbnails: string[];
  labels: number[][];
}

export interface EncodeResponse {
  mu: number[];
  sigma: number[];
  labels_pred: number[];
}

export interface ReconstructResponse {
  image: string;
  z: number[];
}

export interface InterveneResponse {
  image: string;
  probs_before: number[];
  probs_after: number[];
  z: number[];
}

export interface TraverseResponse {
  image: string;
  grid: number;
  values: number[];
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class Client {
  constructor(
    private base: string,
    private fetchFn: FetchLike = (...args) => fetch(...args),
  ) {}

  private async request<T>(path: string, body?: unknown): Promise<T> {
    const init: RequestInit = body === undefined
      ? { method: "GET" }
      : {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(body),
      };
    const resp = await this.fetchFn(this.base + path, init);
    const payload = await resp.json().catch(() => ({}));
    if (!resp.ok) {
      const detail = (payload as { error?: string }).error ?? resp.statusText;
      throw new ApiError(resp.status, detail);
    }
    return payload as T;
  }

  modelInfo(): Promise<ModelInfo> {
    return this.request<ModelInfo>("/model/info");
  }

  samples(): Promise<SamplesResponse> {
    return this.request<SamplesResponse>("/samples");
  }

  encode(sampleId: number): Promise<EncodeResponse> {
    return this.request<EncodeResponse>("/encode", { sample_id: sampleId });
  }

  decode(z: number[]): Promise<string> {
    return this.request<{ image: string }>("/decode", { z }).then(
      (r) => r.image,
    );
  }

  reconstruct(sampleId: number): Promise<ReconstructResponse> {
    return this.request<ReconstructResponse>("/reconstruct", {
      sample_id: sampleId,
    });
  }

  intervene(
    sampleId: number,
    label: number,
    value: 0 | 1,
    seed: number,
  ): Promise<InterveneResponse> {
    return this.request<InterveneResponse>("/intervene", {
      sample_id: sampleId,
      label,
      value,
      mode: "resample",
      seed,
    });
  }

  traverse(
    sampleId: number,
    dimI: number,
    dimJ: number,
    lo: number,
    hi: number,
    grid: number,
  ): Promise<TraverseResponse> {
    return this.request<TraverseResponse>("/traverse", {
      sample_id: sampleId,
      dim_i: dimI,
      dim_j: dimJ,
      lo,
      hi,
      grid,
    });
  }

  generate(
    y: number[],
    n: number,
    fixZnotc: boolean,
    seed: number,
  ): Promise<string[]> {
    return this.request<{ images: string[] }>("/generate", {
      y,
      n,
      fix_znotc: fixZnotc,
      seed,
    }).then((r) => r.images);
  }
}
