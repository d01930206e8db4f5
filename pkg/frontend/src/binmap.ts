// Bin-grid mapping between raster pixel positions and the K x K region grid.
// Must agree with the service's tiling exactly: a click in any pixel of a bin
// has to land in that same bin server-side.

export interface RegionBin {
  row: number;
  col: number;
}

export interface ViewTransform {
  // canvas = raster * scale + offset
  scale: number;
  offsetX: number;
  offsetY: number;
}

export function pointToBin(
  x: number,
  y: number,
  width: number,
  height: number,
  k: number,
): RegionBin {
  const row = Math.min(Math.max(Math.floor((y * k) / height), 0), k - 1);
  const col = Math.min(Math.max(Math.floor((x * k) / width), 0), k - 1);
  return { row, col };
}

export function binBounds(bin: RegionBin, width: number, height: number, k: number) {
  const bw = width / k;
  const bh = height / k;
  return { x0: bin.col * bw, y0: bin.row * bh, x1: (bin.col + 1) * bw, y1: (bin.row + 1) * bh };
}

export function canvasToRaster(cx: number, cy: number, t: ViewTransform) {
  return { x: (cx - t.offsetX) / t.scale, y: (cy - t.offsetY) / t.scale };
}

export function rasterToCanvas(x: number, y: number, t: ViewTransform) {
  return { x: x * t.scale + t.offsetX, y: y * t.scale + t.offsetY };
}

export function insideRaster(x: number, y: number, width: number, height: number): boolean {
  return x >= 0 && x < width && y >= 0 && y < height;
}

/** Bin under a canvas click, or null when the click is off the raster. */
export function clickToBin(
  canvasX: number,
  canvasY: number,
  t: ViewTransform,
  width: number,
  height: number,
  k: number,
): RegionBin | null {
  const { x, y } = canvasToRaster(canvasX, canvasY, t);
  if (!insideRaster(x, y, width, height)) return null;
  return pointToBin(x, y, width, height, k);
}
