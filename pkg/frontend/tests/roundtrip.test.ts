// Scripted annotator session against a live service on a constructed
// topology-failure scene: one region click for the missed lane, one delete
// for the hallucinated lane, two clicks total, and the edit log replays to
// the identical final graph.

import { ChildProcess, spawn } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { createApi, LogEntry } from "../src/api.js";
import { pointToBin } from "../src/binmap.js";
import { decodeBase64, decodePgm } from "../src/pgm.js";
import { SessionController } from "../src/state.js";

const PORT = 8931;
const BASE = `http://127.0.0.1:${PORT}`;
const TAU = 0.5;

let serviceProc: ChildProcess | null = null;
let sceneDir = "";

function run(args: string[]): Promise<void> {
  return new Promise((resolve, reject) => {
    const proc = spawn("python3", ["-m", "lanegraph.cli", ...args], { stdio: "inherit" });
    proc.on("exit", (code) => (code === 0 ? resolve() : reject(new Error(`exit ${code}`))));
    proc.on("error", reject);
  });
}

async function waitForHealth(): Promise<void> {
  for (let i = 0; i < 100; i++) {
    try {
      const resp = await fetch(`${BASE}/health`);
      if (resp.ok) return;
    } catch {
      // not up yet
    }
    await new Promise((r) => setTimeout(r, 300));
  }
  throw new Error("service did not come up");
}

beforeAll(async () => {
  sceneDir = mkdtempSync(join(tmpdir(), "lanegraph-ui-"));
  await run(["generate", "--preset", "failure", "--count", "1", "--seed", "3", "--out", sceneDir]);
  serviceProc = spawn(
    "python3",
    ["-m", "lanegraph.cli", "serve", "--scenes", sceneDir, "--port", String(PORT)],
    { stdio: "ignore" },
  );
  await waitForHealth();
}, 120_000);

afterAll(() => {
  serviceProc?.kill();
  if (sceneDir) rmSync(sceneDir, { recursive: true, force: true });
});

/** The annotator's eye: lowest bin along a lane whose pixels show paint. */
function evidenceBinAlongLane(
  lane: [number, number][],
  raster: { width: number; height: number; data: Float32Array },
  k: number,
): [number, number] {
  const bh = raster.height / k;
  const bw = raster.width / k;
  const byBottom = [...lane].sort((a, b) => b[1] - a[1]);
  for (const [x, y] of byBottom) {
    const { row, col } = pointToBin(x, y, raster.width, raster.height, k);
    let found = false;
    for (let r = Math.floor(row * bh); r < Math.floor((row + 1) * bh) && !found; r++) {
      for (let c = Math.floor(col * bw); c < Math.floor((col + 1) * bw) && !found; c++) {
        if (raster.data[r * raster.width + c] >= TAU) found = true;
      }
    }
    if (found) return [row, col];
  }
  throw new Error("no evidence bin along the lane");
}

describe("annotator round trip", () => {
  it("fixes the failure scene with exactly two clicks and replays", async () => {
    const api = createApi(BASE);
    const controller = new SessionController(api);

    const { scenes } = await api.listScenes();
    expect(scenes.length).toBe(1);
    await controller.openScene(scenes[0]);
    expect(controller.session!.clicks).toBe(0);

    // automatic extraction: counts match but one lane is missed and one
    // hallucinated, so the lane-level topology error is 2
    await controller.runExtract();
    const score0 = controller.score!;
    expect(score0.lane_errors.total).toBe(2);
    expect(score0.lane_errors.missed_gt).toEqual([1]);
    expect(score0.lane_errors.hallucinated_pred.length).toBe(1);
    expect(score0.clicks).toBe(0);

    // click 1: trace the missed lane from a coarse region along it
    const revealed = await api.getScene(scenes[0], true);
    const raster = decodePgm(decodeBase64(revealed.raster_pgm_base64));
    const missedLane = revealed.ground_truth![1];
    const bin = evidenceBinAlongLane(missedLane, raster, revealed.k_grid);
    const traced = await controller.traceBin({ row: bin[0], col: bin[1] });
    expect(traced).toBe(true);
    expect(controller.score!.lane_errors.missed_gt).toEqual([]);

    // click 2: delete the hallucinated lane
    const extra = controller.score!.lane_errors.hallucinated_pred;
    expect(extra.length).toBe(1);
    await controller.deleteLane(extra[0]);

    const final = controller.score!;
    expect(final.lane_errors.total).toBe(0);
    expect(final.topology_deviation).toBe(0);
    expect(final.clicks).toBe(2);
    expect(controller.session!.clicks).toBe(2);

    // replay the edit log on a fresh session: identical final graph
    const finalLanes = controller.session!.lanes;
    const { actions } = await api.log(controller.session!.session);
    expect(actions.map((a: LogEntry) => a.action)).toEqual([
      "auto-extract",
      "add-trace",
      "delete-lane",
    ]);

    const replaySession = await api.createSession(scenes[0]);
    let state = replaySession;
    for (const entry of actions) {
      if (entry.action === "auto-extract") {
        state = await api.extract(state.session);
      } else if (entry.action === "add-trace" && entry.payload.ok) {
        state = await api.trace(state.session, entry.payload.bin as [number, number]);
      } else if (entry.action === "delete-lane") {
        state = await api.deleteLane(state.session, entry.payload.index as number);
      }
    }
    expect(state.lanes).toEqual(finalLanes);
  }, 120_000);

  it("keeps the click counter honest on a failed region click", async () => {
    const api = createApi(BASE);
    const controller = new SessionController(api);
    const { scenes } = await api.listScenes();
    await controller.openScene(scenes[0]);

    // top-left corner holds no paint: the trace 409s but the click still counts
    const ok = await controller.traceBin({ row: 0, col: 0 });
    expect(ok).toBe(false);
    expect(controller.lastError).toContain("409");
    expect(controller.session!.clicks).toBe(1);

    // out-of-range bins are rejected before costing anything
    const out = await controller.traceBin({ row: 99, col: 0 });
    expect(out).toBe(false);
    expect(controller.session!.clicks).toBe(1);
  }, 60_000);
});
