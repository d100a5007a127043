import type { BBox, QuerySlot, SoundscapeResponse } from "./types.js";

export class ServiceError extends Error {
  constructor(
    public readonly status: number,
    public readonly detail: string,
  ) {
    super(`service error ${status}: ${detail}`);
  }
}

export interface SoundscapeRequestBody {
  bbox: [number, number, number, number];
  stride_m: number;
  queries: { kind: string; value: string }[];
  include_heatmaps: boolean;
}

export function buildRequestBody(
  bbox: BBox,
  strideM: number,
  slots: QuerySlot[],
): SoundscapeRequestBody {
  return {
    bbox: [bbox.minLat, bbox.minLon, bbox.maxLat, bbox.maxLon],
    stride_m: strideM,
    queries: slots.map((s) => ({ kind: s.kind, value: s.value })),
    include_heatmaps: true,
  };
}

/** Human-readable message for a failed soundscape call. The session itself
 * survives every error; these strings go to a dismissible banner. */
export function messageForError(err: unknown): string {
  if (err instanceof ServiceError) {
    if (err.status === 0) {
      return "Cannot reach the soundscape service.";
    }
    if (err.status === 422) {
      return "The map grid is too large: reduce the area or increase the stride.";
    }
    if (err.status === 503) {
      return "The soundscape service has no model loaded yet; try again later.";
    }
    if (err.status === 504) {
      return "Soundscape generation timed out: reduce the area or increase the stride.";
    }
    return `Request rejected (${err.status}): ${err.detail}`;
  }
  return "Cannot reach the soundscape service.";
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ServiceClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async post<T>(path: string, body: unknown): Promise<T> {
    let resp: Response;
    try {
      resp = await this.fetchFn(`${this.baseUrl}${path}`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(body),
      });
    } catch (err) {
      throw new ServiceError(0, `network failure: ${String(err)}`);
    }
    if (!resp.ok) {
      let detail = resp.statusText;
      try {
        const payload = (await resp.json()) as { detail?: string };
        if (payload.detail) detail = payload.detail;
      } catch {
        // non-JSON error body: keep the status text
      }
      throw new ServiceError(resp.status, detail);
    }
    return (await resp.json()) as T;
  }

  soundscape(body: SoundscapeRequestBody): Promise<SoundscapeResponse> {
    return this.post<SoundscapeResponse>("/v1/soundscape", body);
  }

  async health(): Promise<{ status: string; snapshot_hash: string; gallery_size: number }> {
    const resp = await this.fetchFn(`${this.baseUrl}/v1/health`);
    if (!resp.ok) throw new ServiceError(resp.status, resp.statusText);
    return (await resp.json()) as { status: string; snapshot_hash: string; gallery_size: number };
  }
}
