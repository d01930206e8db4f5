// Canvas rendering: a cached raster layer (static per scene) plus a dynamic
// overlay layer (grid, lanes, provenance, ground truth) redrawn per frame.

import { LanePoints, ScenePayload, SessionState } from "./api.js";
import { ViewTransform, binBounds } from "./binmap.js";
import { decodeBase64, decodePgm } from "./pgm.js";
import { Overlays } from "./state.js";

const LANE_COLORS = ["#ff5252", "#40c4ff", "#ffd740", "#69f0ae", "#e040fb", "#ffab40", "#64ffda", "#ff6e9c"];

export class SceneRenderer {
  private rasterLayer: HTMLCanvasElement | null = null;

  constructor(private canvas: HTMLCanvasElement) {}

  /** Decode the scene raster once into an offscreen layer. */
  setScene(scene: ScenePayload): void {
    const { width, height, data } = decodePgm(decodeBase64(scene.raster_pgm_base64));
    const layer = document.createElement("canvas");
    layer.width = width;
    layer.height = height;
    const ctx = layer.getContext("2d")!;
    const img = ctx.createImageData(width, height);
    for (let i = 0; i < data.length; i++) {
      const v = data[i];
      // dark road, warm paint
      img.data[4 * i] = Math.round(30 + 225 * v);
      img.data[4 * i + 1] = Math.round(30 + 205 * v);
      img.data[4 * i + 2] = Math.round(36 + 130 * v);
      img.data[4 * i + 3] = 255;
    }
    ctx.putImageData(img, 0, 0);
    this.rasterLayer = layer;
  }

  draw(
    scene: ScenePayload | null,
    session: SessionState | null,
    groundTruth: LanePoints[] | null,
    overlays: Overlays,
    t: ViewTransform,
  ): void {
    const ctx = this.canvas.getContext("2d")!;
    ctx.save();
    ctx.fillStyle = "#14151a";
    ctx.fillRect(0, 0, this.canvas.width, this.canvas.height);
    if (!scene || !this.rasterLayer) {
      ctx.restore();
      return;
    }
    ctx.setTransform(t.scale, 0, 0, t.scale, t.offsetX, t.offsetY);
    ctx.imageSmoothingEnabled = t.scale < 1;
    ctx.drawImage(this.rasterLayer, 0, 0);

    if (overlays.grid) this.drawGrid(ctx, scene, t);
    if (overlays.gtReveal && groundTruth) {
      for (const lane of groundTruth) this.drawLane(ctx, lane, "#ffffff", 1.5 / t.scale, [6 / t.scale, 5 / t.scale]);
    }
    if (overlays.lanes && session) {
      session.lanes.forEach((lane, i) => {
        this.drawLane(ctx, lane, LANE_COLORS[i % LANE_COLORS.length], 2.5 / t.scale);
        this.drawLaneLabel(ctx, lane, String(i), t);
      });
    }
    if (overlays.provenance && session?.provenance) {
      for (const p of session.provenance) this.drawBin(ctx, p.bin, p.k, scene, "#80deea");
    }
    ctx.restore();
  }

  private drawGrid(ctx: CanvasRenderingContext2D, scene: ScenePayload, t: ViewTransform): void {
    const k = scene.k_grid;
    ctx.strokeStyle = "rgba(255,255,255,0.14)";
    ctx.lineWidth = 1 / t.scale;
    ctx.beginPath();
    for (let i = 0; i <= k; i++) {
      const x = (i * scene.width) / k;
      const y = (i * scene.height) / k;
      ctx.moveTo(x, 0);
      ctx.lineTo(x, scene.height);
      ctx.moveTo(0, y);
      ctx.lineTo(scene.width, y);
    }
    ctx.stroke();
  }

  private drawLane(
    ctx: CanvasRenderingContext2D,
    lane: LanePoints,
    color: string,
    width: number,
    dash: number[] = [],
  ): void {
    if (lane.length < 2) return;
    ctx.strokeStyle = color;
    ctx.lineWidth = width;
    ctx.setLineDash(dash);
    ctx.beginPath();
    ctx.moveTo(lane[0][0], lane[0][1]);
    for (const [x, y] of lane.slice(1)) ctx.lineTo(x, y);
    ctx.stroke();
    ctx.setLineDash([]);
  }

  private drawLaneLabel(
    ctx: CanvasRenderingContext2D,
    lane: LanePoints,
    label: string,
    t: ViewTransform,
  ): void {
    const [x, y] = lane[0];
    ctx.font = `${14 / t.scale}px sans-serif`;
    ctx.fillStyle = "#ffffff";
    ctx.fillText(label, x + 5 / t.scale, y - 5 / t.scale);
  }

  private drawBin(
    ctx: CanvasRenderingContext2D,
    bin: [number, number],
    k: number,
    scene: ScenePayload,
    color: string,
  ): void {
    const b = binBounds({ row: bin[0], col: bin[1] }, scene.width, scene.height, k);
    ctx.strokeStyle = color;
    ctx.lineWidth = 2;
    ctx.strokeRect(b.x0, b.y0, b.x1 - b.x0, b.y1 - b.y0);
  }
}
