// Annotation-session controller. DOM-free so the scripted tests drive it the
// same way the browser shell does.
//
// Rules it enforces:
//   - the displayed graph is always the last service response, never a local
//     mutation (replay consistency);
//   - at most one mutation request is in flight; further input is rejected
//     until the pending one settles;
//   - the score panel refreshes after every mutation.

import { Api, ApiError, ScenePayload, Score, SessionState } from "./api.js";
import { RegionBin, ViewTransform, clickToBin } from "./binmap.js";

export interface Overlays {
  grid: boolean;
  lanes: boolean;
  provenance: boolean;
  gtReveal: boolean;
}

export type Listener = (c: SessionController) => void;

export class SessionController {
  scene: ScenePayload | null = null;
  session: SessionState | null = null;
  score: Score | null = null;
  groundTruth: [number, number][][] | null = null;
  overlays: Overlays = { grid: true, lanes: true, provenance: false, gtReveal: false };
  transform: ViewTransform = { scale: 1, offsetX: 0, offsetY: 0 };
  lastError: string | null = null;
  private pending = false;
  private listeners: Listener[] = [];

  constructor(private api: Api) {}

  onChange(fn: Listener) {
    this.listeners.push(fn);
  }

  private emit() {
    for (const fn of this.listeners) fn(this);
  }

  get busy(): boolean {
    return this.pending;
  }

  async openScene(sceneId: string): Promise<void> {
    this.scene = await this.api.getScene(sceneId);
    this.session = await this.api.createSession(sceneId);
    this.score = null;
    this.groundTruth = null;
    this.lastError = null;
    this.emit();
  }

  async toggleGtReveal(): Promise<void> {
    this.overlays.gtReveal = !this.overlays.gtReveal;
    if (this.overlays.gtReveal && this.scene && !this.groundTruth) {
      const revealed = await this.api.getScene(this.scene.id, true);
      this.groundTruth = revealed.ground_truth ?? null;
    }
    this.emit();
  }

  /** Serialized mutation runner: one in-flight request, score refetch after. */
  private async mutate(run: () => Promise<SessionState>): Promise<boolean> {
    if (this.pending || !this.session) return false;
    this.pending = true;
    this.lastError = null;
    this.emit();
    try {
      this.session = await run();
      return true;
    } catch (err) {
      if (err instanceof ApiError) {
        this.lastError = `${err.status}: ${err.message}`;
        // the failed call may still have cost a click (no-evidence trace)
        if (this.session) {
          this.session = await this.api.getSession(this.session.session);
        }
      } else {
        throw err;
      }
      return false;
    } finally {
      this.pending = false;
      await this.refreshScore();
      this.emit();
    }
  }

  async runExtract(): Promise<boolean> {
    return this.mutate(() => this.api.extract(this.session!.session));
  }

  async traceBin(bin: RegionBin): Promise<boolean> {
    return this.mutate(() => this.api.trace(this.session!.session, [bin.row, bin.col]));
  }

  async deleteLane(index: number): Promise<boolean> {
    return this.mutate(() => this.api.deleteLane(this.session!.session, index));
  }

  /** Canvas click: map through the view transform to a bin and trace it. */
  async clickCanvas(canvasX: number, canvasY: number): Promise<boolean> {
    if (!this.scene) return false;
    const bin = clickToBin(
      canvasX,
      canvasY,
      this.transform,
      this.scene.width,
      this.scene.height,
      this.scene.k_grid,
    );
    if (bin === null) return false; // clicks off the raster are ignored
    return this.traceBin(bin);
  }

  private async refreshScore(): Promise<void> {
    if (!this.session) return;
    try {
      this.score = await this.api.score(this.session.session);
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        this.score = null; // scene has no ground truth to score against
        return;
      }
      throw err;
    }
  }
}
