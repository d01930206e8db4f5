// Browser shell: wires the session controller, renderer, and DOM inputs.

import { createApi } from "./api.js";
import { SceneRenderer } from "./render.js";
import { SessionController } from "./state.js";

const api = createApi("");
const controller = new SessionController(api);

const canvas = document.getElementById("view") as HTMLCanvasElement;
const renderer = new SceneRenderer(canvas);

const sceneSelect = document.getElementById("scene-select") as HTMLSelectElement;
const extractBtn = document.getElementById("extract") as HTMLButtonElement;
const gridToggle = document.getElementById("toggle-grid") as HTMLInputElement;
const lanesToggle = document.getElementById("toggle-lanes") as HTMLInputElement;
const provToggle = document.getElementById("toggle-prov") as HTMLInputElement;
const gtToggle = document.getElementById("toggle-gt") as HTMLInputElement;
const laneList = document.getElementById("lane-list") as HTMLUListElement;
const scorePanel = document.getElementById("score") as HTMLDivElement;
const clickCounter = document.getElementById("clicks") as HTMLSpanElement;
const errorBanner = document.getElementById("error") as HTMLDivElement;

function fitTransform(): void {
  if (!controller.scene) return;
  const scale = Math.min(
    canvas.width / controller.scene.width,
    canvas.height / controller.scene.height,
  );
  controller.transform = {
    scale,
    offsetX: (canvas.width - controller.scene.width * scale) / 2,
    offsetY: (canvas.height - controller.scene.height * scale) / 2,
  };
}

function redraw(): void {
  renderer.draw(
    controller.scene,
    controller.session,
    controller.groundTruth,
    controller.overlays,
    controller.transform,
  );
}

function renderSidebar(): void {
  const session = controller.session;
  extractBtn.disabled = controller.busy || !session || session.extracted;
  clickCounter.textContent = String(session?.clicks ?? 0);
  errorBanner.textContent = controller.lastError ?? "";
  errorBanner.style.display = controller.lastError ? "block" : "none";

  laneList.replaceChildren();
  session?.lanes.forEach((lane, i) => {
    const item = document.createElement("li");
    item.textContent = `lane ${i} (${lane.length} vertices) `;
    const del = document.createElement("button");
    del.textContent = "delete";
    del.disabled = controller.busy;
    del.addEventListener("click", () => void controller.deleteLane(i));
    item.appendChild(del);
    laneList.appendChild(item);
  });

  if (controller.score) {
    const s = controller.score;
    const pr = Object.entries(s.precision)
      .map(([t, p]) => `${t}cm P=${p.toFixed(3)} R=${s.recall[t].toFixed(3)}`)
      .join("<br>");
    scorePanel.innerHTML =
      `topology deviation: ${s.topology_deviation}<br>` +
      `lane errors: ${s.lane_errors.total} ` +
      `(missed ${s.lane_errors.missed_gt.length}, extra ${s.lane_errors.hallucinated_pred.length})<br>${pr}`;
  } else {
    scorePanel.textContent = "no ground truth on this scene";
  }
}

controller.onChange(() => {
  renderSidebar();
  redraw();
});

// ---- pointer handling: click = trace, drag = pan, wheel = zoom ----

let down: { x: number; y: number; ox: number; oy: number } | null = null;
let dragging = false;

canvas.addEventListener("pointerdown", (e) => {
  down = {
    x: e.offsetX,
    y: e.offsetY,
    ox: controller.transform.offsetX,
    oy: controller.transform.offsetY,
  };
  dragging = false;
});

canvas.addEventListener("pointermove", (e) => {
  if (!down) return;
  const dx = e.offsetX - down.x;
  const dy = e.offsetY - down.y;
  if (Math.abs(dx) + Math.abs(dy) > 3) dragging = true;
  if (dragging) {
    controller.transform.offsetX = down.ox + dx;
    controller.transform.offsetY = down.oy + dy;
    redraw();
  }
});

canvas.addEventListener("pointerup", (e) => {
  const wasDrag = dragging;
  down = null;
  dragging = false;
  if (wasDrag || controller.busy) return;
  void controller.clickCanvas(e.offsetX, e.offsetY);
});

canvas.addEventListener("wheel", (e) => {
  e.preventDefault();
  const t = controller.transform;
  const factor = Math.exp(-e.deltaY * 0.0015);
  const scale = Math.min(Math.max(t.scale * factor, 0.1), 16);
  // keep the point under the cursor fixed
  t.offsetX = e.offsetX - ((e.offsetX - t.offsetX) / t.scale) * scale;
  t.offsetY = e.offsetY - ((e.offsetY - t.offsetY) / t.scale) * scale;
  t.scale = scale;
  redraw();
});

// ---- sidebar wiring ----

extractBtn.addEventListener("click", () => void controller.runExtract());
gridToggle.addEventListener("change", () => {
  controller.overlays.grid = gridToggle.checked;
  redraw();
});
lanesToggle.addEventListener("change", () => {
  controller.overlays.lanes = lanesToggle.checked;
  redraw();
});
provToggle.addEventListener("change", () => {
  controller.overlays.provenance = provToggle.checked;
  redraw();
});
gtToggle.addEventListener("change", () => void controller.toggleGtReveal());

sceneSelect.addEventListener("change", () => {
  void (async () => {
    await controller.openScene(sceneSelect.value);
    renderer.setScene(controller.scene!);
    fitTransform();
    redraw();
  })();
});

void (async () => {
  const { scenes } = await api.listScenes();
  sceneSelect.replaceChildren(
    ...scenes.map((id) => {
      const opt = document.createElement("option");
      opt.value = id;
      opt.textContent = id;
      return opt;
    }),
  );
  if (scenes.length) {
    sceneSelect.value = scenes[0];
    sceneSelect.dispatchEvent(new Event("change"));
  }
})();
