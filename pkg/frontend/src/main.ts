/** DOM wiring: toolbar, canvas loop, condition form, playback scrubber.
 * All authoritative state lives on the server; this file only routes input
 * into the store and repaints from it. */

import { Api } from "./api";
import { Camera } from "./camera";
import { PushChannel } from "./events";
import { Interactions } from "./interactions";
import { Playback } from "./playback";
import { drawScene } from "./render";
import { SceneStore } from "./sceneState";
import type { EditMode } from "./types";

const api = new Api("");
const store = new SceneStore(api);
const camera = new Camera();
const interactions = new Interactions(store, camera);
const playback = new Playback();
const push = new PushChannel();

const canvas = document.getElementById("scene") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const statusEl = document.getElementById("status")!;
const metricsEl = document.getElementById("metrics")!;
const scrubber = document.getElementById("scrubber") as HTMLInputElement;
const seedInput = document.getElementById("seed") as HTMLInputElement;
const intervalSelect = document.getElementById("interval") as HTMLSelectElement;

let lastPointer = { x: 0, y: 0 };

function resize(): void {
  canvas.width = canvas.clientWidth * devicePixelRatio;
  canvas.height = canvas.clientHeight * devicePixelRatio;
  ctx.setTransform(devicePixelRatio, 0, 0, devicePixelRatio, 0, 0);
  camera.viewportW = canvas.clientWidth;
  camera.viewportH = canvas.clientHeight;
}
window.addEventListener("resize", resize);

function repaint(): void {
  ctx.fillStyle = "#21252b";
  ctx.fillRect(0, 0, camera.viewportW, camera.viewportH);
  if (!store.summary) return;
  drawScene(ctx, camera, store.summary, store.renderedAgents(), store.rollout,
    store.selectedAgent, playback.cursor);
  const pending = interactions.pendingTarget(lastPointer);
  if (pending) {
    const p = camera.worldToScreen(pending);
    ctx.strokeStyle = "#e06c75";
    ctx.beginPath();
    ctx.arc(p.x, p.y, 6, 0, Math.PI * 2);
    ctx.stroke();
  }
}

function renderStatus(): void {
  if (store.lastError) {
    statusEl.textContent = `error: ${store.lastError}`;
    statusEl.className = "error";
    return;
  }
  statusEl.className = "";
  if (!store.summary) {
    statusEl.textContent = "no session - load a scenario";
    return;
  }
  const sel = store.selectedAgent ? ` | selected ${store.selectedAgent}` : "";
  statusEl.textContent =
    `session ${store.summary.session_id} rev ${store.summary.revision}` +
    ` | ${store.summary.agents.length} agents${sel}`;
}

function renderMetrics(): void {
  const res = store.lastGenerate;
  if (!res) {
    metricsEl.textContent = "";
    return;
  }
  const lines = [`SCR ${res.summary.scr_percent.toFixed(2)} %`];
  for (const a of res.summary.agents) {
    if (a.endpoint_error !== null) {
      lines.push(`${a.agent_id}: endpoint-target error ${a.endpoint_error.toFixed(2)} m`);
    }
  }
  metricsEl.textContent = lines.join("\n");
}

store.onChange(() => {
  if (store.rollout) {
    const len = Math.max(...store.rollout.agents.map((a) => a.trajectory.length), 0);
    playback.setLength(len);
    scrubber.max = String(playback.maxCursor);
  }
  renderStatus();
  renderMetrics();
});

// --- toolbar -------------------------------------------------------------

for (const mode of ["move", "rotate", "resize", "set-target"] as EditMode[]) {
  document.getElementById(`mode-${mode}`)!.addEventListener("click", () => {
    interactions.mode = mode;
    document.querySelectorAll(".mode").forEach((el) => el.classList.remove("active"));
    document.getElementById(`mode-${mode}`)!.classList.add("active");
  });
}

document.getElementById("undo")!.addEventListener("click", () => void store.undo());
document.getElementById("redo")!.addEventListener("click", () => void store.redo());
document.getElementById("fit")!.addEventListener("click", fitView);
document.getElementById("generate")!.addEventListener("click", () => {
  const seed = parseInt(seedInput.value, 10) || 0;
  const interval = parseInt(intervalSelect.value, 10);
  statusEl.textContent = "generating...";
  void store.generate(seed, interval > 0 ? interval : undefined,
    interval > 0 ? interval * 3 : undefined);
});

document.getElementById("load")!.addEventListener("click", async () => {
  const path = (document.getElementById("scenario-path") as HTMLInputElement).value;
  try {
    store.reconcile(await api.createSessionFromPath(path, 0));
    push.subscribe(store.summary!.session_id);
    fitView();
  } catch (e) {
    statusEl.textContent = `load failed: ${e}`;
  }
});

const fileInput = document.getElementById("scenario-file") as HTMLInputElement;
fileInput.addEventListener("change", async () => {
  const file = fileInput.files?.[0];
  if (!file) return;
  const text = await file.text();
  const first = text.split("\n").find((l) => l.trim().length > 0);
  if (!first) return;
  await store.create(JSON.parse(first));
  push.subscribe(store.summary!.session_id);
  fitView();
});

// --- condition form ------------------------------------------------------

document.getElementById("apply-condition")!.addEventListener("click", () => {
  const aid = store.selectedAgent;
  if (!aid) {
    statusEl.textContent = "select an agent first";
    return;
  }
  const num = (id: string) => parseFloat((document.getElementById(id) as HTMLInputElement).value) || 0;
  void store.setCondition(aid, {
    target_x: num("cond-x"),
    target_y: num("cond-y"),
    target_speed: num("cond-speed"),
    target_heading: num("cond-heading"),
  });
});
document.getElementById("clear-condition")!.addEventListener("click", () => {
  if (store.selectedAgent) void store.clearCondition(store.selectedAgent);
});

// --- playback ------------------------------------------------------------

scrubber.addEventListener("input", () => playback.seek(parseInt(scrubber.value, 10)));
document.getElementById("play")!.addEventListener("click", () => playback.toggle());

// --- push events ---------------------------------------------------------

push.on((event) => {
  if (event.kind === "denoise_progress") {
    statusEl.textContent = `refining ${event.agent_id}: step ${event.step}/${event.total}`;
  } else if (event.kind === "rollout_ready") {
    statusEl.textContent = `rollout ${event.rollout_id} ready`;
  }
});

// --- canvas input --------------------------------------------------------

canvas.addEventListener("pointerdown", (e) => {
  lastPointer = { x: e.offsetX, y: e.offsetY };
  interactions.pointerDown(lastPointer, e.button);
});
canvas.addEventListener("pointermove", (e) => {
  lastPointer = { x: e.offsetX, y: e.offsetY };
  interactions.pointerMove(lastPointer);
});
window.addEventListener("pointerup", (e) => {
  void interactions.pointerUp(lastPointer).then(renderStatus);
});
canvas.addEventListener("wheel", (e) => {
  e.preventDefault();
  camera.zoomAt({ x: e.offsetX, y: e.offsetY }, e.deltaY < 0 ? 1.15 : 1 / 1.15);
}, { passive: false });
canvas.addEventListener("contextmenu", (e) => e.preventDefault());

function fitView(): void {
  if (!store.summary) return;
  const xs: number[] = [];
  const ys: number[] = [];
  for (const lane of store.summary.map.lanes) {
    for (const [x, y] of lane.points) {
      xs.push(x);
      ys.push(y);
    }
  }
  for (const a of store.summary.agents) {
    xs.push(a.x);
    ys.push(a.y);
  }
  if (xs.length === 0) return;
  camera.fitBounds(Math.min(...xs), Math.min(...ys), Math.max(...xs), Math.max(...ys));
}

// --- main loop -----------------------------------------------------------

let frame = 0;
function loop(): void {
  frame += 1;
  if (frame % 6 === 0) {
    playback.tick();
    scrubber.value = String(playback.cursor);
  }
  repaint();
  requestAnimationFrame(loop);
}

resize();
renderStatus();
loop();
