/**
 * Typed client for the lungtriage HTTP service.
 *
 * The UI is a pure client: every number it displays comes out of these
 * response bodies; nothing is recomputed locally.
 */

export type Polarity = "positive" | "negative";
export type Scheme = "seg2" | "seg4";
export type Axis = "x" | "y" | "z";

export interface Click {
  x: number;
  y: number;
  z: number;
  polarity: Polarity;
}

export interface UploadResponse {
  case_id: string;
  shape: [number, number, number];
}

export interface ClassifyResponse {
  case_id: string;
  probabilities: Record<string, number>;
  label: string;
}

export interface SegmentResponse {
  case_id: string;
  mask_id: string;
  scheme: Scheme;
  click_count: number;
  per_label_voxel_counts: Record<string, number>;
  dice?: Record<string, number>;
}

export interface MaskPayload {
  mask_id: string;
  scheme: Scheme;
  shape: [number, number, number];
  dtype: string;
  encoding: string;
  data: string;
}

export interface HealthResponse {
  status: string;
  checkpoints: Record<string, string | null>;
  cases: number;
}

/** Server-side failure, surfaced verbatim with its status code. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly body: unknown,
  ) {
    super(`HTTP ${status}: ${typeof body === "object" ? JSON.stringify(body) : String(body)}`);
  }
}

async function parseOrThrow<T>(response: Response): Promise<T> {
  if (!response.ok) {
    let body: unknown;
    try {
      body = await response.json();
    } catch {
      body = await response.text().catch(() => "");
    }
    throw new ApiError(response.status, body);
  }
  return (await response.json()) as T;
}

export class TriageApi {
  constructor(
    readonly baseUrl: string,
    private readonly fetchFn: typeof fetch = fetch,
  ) {}

  private url(path: string): string {
    return `${this.baseUrl}${path}`;
  }

  async health(): Promise<HealthResponse> {
    return parseOrThrow(await this.fetchFn(this.url("/api/health")));
  }

  async uploadCase(volumeBytes: ArrayBuffer | Uint8Array): Promise<UploadResponse> {
    const response = await this.fetchFn(this.url("/api/cases"), {
      method: "POST",
      headers: { "content-type": "application/octet-stream" },
      body: volumeBytes as BodyInit,
    });
    return parseOrThrow(response);
  }

  async uploadTruth(
    caseId: string,
    scheme: Scheme,
    maskBytes: ArrayBuffer | Uint8Array,
  ): Promise<void> {
    const response = await this.fetchFn(
      this.url(`/api/cases/${caseId}/truth?scheme=${scheme}`),
      {
        method: "POST",
        headers: { "content-type": "application/octet-stream" },
        body: maskBytes as BodyInit,
      },
    );
    await parseOrThrow(response);
  }

  async classify(caseId: string): Promise<ClassifyResponse> {
    const response = await this.fetchFn(this.url(`/api/cases/${caseId}/classify`), {
      method: "POST",
    });
    return parseOrThrow(response);
  }

  async segment(
    caseId: string,
    clicks: Click[],
    scheme: Scheme,
    reset: boolean,
  ): Promise<SegmentResponse> {
    const response = await this.fetchFn(this.url(`/api/cases/${caseId}/segment`), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ clicks, scheme, reset }),
    });
    return parseOrThrow(response);
  }

  async fetchMask(caseId: string, maskId: string): Promise<MaskPayload> {
    return parseOrThrow(
      await this.fetchFn(this.url(`/api/cases/${caseId}/masks/${maskId}`)),
    );
  }

  /** URL for an <img>/canvas source; overlay tints the given mask. */
  sliceUrl(caseId: string, axis: Axis, index: number, overlayMaskId?: string | null): string {
    const suffix = overlayMaskId ? `?overlay=${overlayMaskId}` : "";
    return this.url(`/api/cases/${caseId}/slices/${axis}/${index}${suffix}`);
  }

  async fetchSlice(
    caseId: string,
    axis: Axis,
    index: number,
    overlayMaskId?: string | null,
  ): Promise<ArrayBuffer> {
    const response = await this.fetchFn(this.sliceUrl(caseId, axis, index, overlayMaskId));
    if (!response.ok) {
      throw new ApiError(response.status, await response.text().catch(() => ""));
    }
    return response.arrayBuffer();
  }
}
