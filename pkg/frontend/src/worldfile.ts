import type { BBox } from "./types.js";

/** Parsed six-line ESRI world file (no rotation supported). */
export interface WorldFile {
  xPixelSize: number; // degrees of longitude per pixel
  yPixelSize: number; // degrees of latitude per pixel (positive)
  upperLeftLon: number; // center of the upper-left pixel
  upperLeftLat: number;
}

export function parseWorldFile(text: string): WorldFile {
  const lines = text
    .split(/\r?\n/)
    .map((l) => l.trim())
    .filter((l) => l.length > 0);
  if (lines.length !== 6) {
    throw new Error(`world file must have 6 lines, got ${lines.length}`);
  }
  const values = lines.map(Number);
  if (values.some((v) => Number.isNaN(v))) {
    throw new Error("world file contains non-numeric lines");
  }
  const [xSize, rot1, rot2, ySizeNeg, ulLon, ulLat] = values;
  if (rot1 !== 0 || rot2 !== 0) {
    throw new Error("rotated rasters are not supported");
  }
  if (xSize <= 0 || ySizeNeg >= 0) {
    throw new Error("expected positive x pixel size and negative y pixel size");
  }
  return { xPixelSize: xSize, yPixelSize: -ySizeNeg, upperLeftLon: ulLon, upperLeftLat: ulLat };
}

/** Geographic rectangle covered by a rows x cols raster: the world file
 * stores the CENTER of the upper-left pixel, so edges sit half a pixel out. */
export function rasterGeoRect(world: WorldFile, rows: number, cols: number): BBox {
  const north = world.upperLeftLat + world.yPixelSize / 2;
  const west = world.upperLeftLon - world.xPixelSize / 2;
  return {
    minLat: north - rows * world.yPixelSize,
    maxLat: north,
    minLon: west,
    maxLon: west + cols * world.xPixelSize,
  };
}

export interface PixelRect {
  left: number;
  top: number;
  width: number;
  height: number;
}

/** Where to draw a georegistered raster inside a viewport that shows
 * `view` across `viewWidth` x `viewHeight` CSS pixels (plain equirectangular
 * mapping, matching the service's grid geometry). */
export function placeOverlay(
  raster: BBox,
  view: BBox,
  viewWidth: number,
  viewHeight: number,
): PixelRect {
  const lonScale = viewWidth / (view.maxLon - view.minLon);
  const latScale = viewHeight / (view.maxLat - view.minLat);
  return {
    left: (raster.minLon - view.minLon) * lonScale,
    top: (view.maxLat - raster.maxLat) * latScale,
    width: (raster.maxLon - raster.minLon) * lonScale,
    height: (raster.maxLat - raster.minLat) * latScale,
  };
}
