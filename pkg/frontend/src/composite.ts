import type { Channel, HeatmapGrid } from "./types.js";

/** 8-bit quantization identical to the server raster writer:
 * floor(v * 255 + 0.5), clipped to [0, 255]. */
export function quantize(value: number): number {
  return Math.min(255, Math.max(0, Math.floor(value * 255 + 0.5)));
}

/** Server compositing rule: channel c of a pixel is the assigned heatmap's
 * value, or 0 when no heatmap feeds that channel.
 *
 * `assignment[q]` is the channel of heatmap q (null = unassigned). Returns
 * row-major interleaved RGB floats in [0, 1], length rows*cols*3. Input
 * heatmaps are read only, never mutated.
 */
export function composeFloat(
  heatmaps: HeatmapGrid[],
  assignment: (Channel | null)[],
  rows: number,
  cols: number,
): Float64Array {
  if (assignment.length !== heatmaps.length) {
    throw new Error("one assignment entry per heatmap required");
  }
  const used = assignment.filter((c): c is Channel => c !== null);
  if (new Set(used).size !== used.length) {
    throw new Error("each channel may be fed by at most one heatmap");
  }
  const out = new Float64Array(rows * cols * 3);
  assignment.forEach((channel, q) => {
    if (channel === null) return;
    const grid = heatmaps[q];
    if (grid.length !== rows || grid[0].length !== cols) {
      throw new Error(`heatmap ${q} is ${grid.length}x${grid[0]?.length}, grid is ${rows}x${cols}`);
    }
    for (let r = 0; r < rows; r++) {
      for (let c = 0; c < cols; c++) {
        out[(r * cols + c) * 3 + channel] = grid[r][c];
      }
    }
  });
  return out;
}

/** Quantized RGB bytes, directly comparable to the server's raster pixels. */
export function composeU8(
  heatmaps: HeatmapGrid[],
  assignment: (Channel | null)[],
  rows: number,
  cols: number,
): Uint8ClampedArray {
  const floats = composeFloat(heatmaps, assignment, rows, cols);
  const out = new Uint8ClampedArray(floats.length);
  for (let i = 0; i < floats.length; i++) out[i] = quantize(floats[i]);
  return out;
}

/** RGBA buffer for a canvas ImageData, alpha fully opaque. */
export function composeRGBA(
  heatmaps: HeatmapGrid[],
  assignment: (Channel | null)[],
  rows: number,
  cols: number,
): Uint8ClampedArray {
  const rgb = composeU8(heatmaps, assignment, rows, cols);
  const out = new Uint8ClampedArray(rows * cols * 4);
  for (let p = 0; p < rows * cols; p++) {
    out[p * 4] = rgb[p * 3];
    out[p * 4 + 1] = rgb[p * 3 + 1];
    out[p * 4 + 2] = rgb[p * 3 + 2];
    out[p * 4 + 3] = 255;
  }
  return out;
}
