export type QueryKind = "text" | "audio";

export type Channel = 0 | 1 | 2;

export interface QuerySlot {
  kind: QueryKind;
  /** Prompt text, or base64 WAV bytes for audio queries. */
  value: string;
  /** Human label shown in the legend (file name for audio). */
  label: string;
  /** Composite channel this query feeds; null = not rendered. */
  channel: Channel | null;
}

export interface BBox {
  minLat: number;
  minLon: number;
  maxLat: number;
  maxLon: number;
}

/** One completed soundscape request: everything needed to replay it. */
export interface HistoryEntry {
  bbox: BBox;
  strideM: number;
  queries: QuerySlot[];
  pngBase64: string;
  worldFile: string;
  rows: number;
  cols: number;
}

export interface ExploreSession {
  bbox: BBox | null;
  slots: QuerySlot[]; // at most 3
  opacity: number; // 0..1
  history: HistoryEntry[]; // append-only within a session
}

/** Grid of normalized similarity scores, rows x cols, row-major from NW. */
export type HeatmapGrid = number[][];

export interface SoundscapeMetadata {
  bbox: [number, number, number, number];
  stride_m: number;
  rows: number;
  cols: number;
  queries: string[];
  channels: Record<string, string>;
  normalization: string;
}

export interface SoundscapeResponse {
  png_base64: string;
  world_file: string;
  metadata: SoundscapeMetadata;
  heatmaps?: HeatmapGrid[];
}
