// DOM wiring for the explorer: canvas display with nearest-neighbor
// upscaling, keyboard steering, history scrubber, minimap, and toasts.

import { HttpSessionApi } from "./api.js";
import { DEFAULT_BINDING, clampBinding, keyToDelta } from "./controls.js";
import { drawTrail } from "./minimap.js";
import { Viewer } from "./viewer.js";
import type { HistoryEntry } from "./viewer.js";

const $ = <T extends HTMLElement>(id: string) => document.getElementById(id) as T;

const view = $("view") as unknown as HTMLCanvasElement;
const mini = $("minimap") as unknown as HTMLCanvasElement;
const slider = $("scrub") as unknown as HTMLInputElement;
const toast = $("toast");
const status = $("status");
const seedInput = $("seed") as unknown as HTMLInputElement;

const api = new HttpSessionApi("");
let binding = clampBinding(DEFAULT_BINDING);

const viewCtx = view.getContext("2d")!;
viewCtx.imageSmoothingEnabled = false;
const miniCtx = mini.getContext("2d")!;

function showToast(message: string): void {
  toast.textContent = message;
  toast.classList.add("visible");
  setTimeout(() => toast.classList.remove("visible"), 2600);
}

function drawFrame(entry: HistoryEntry): void {
  const img = new Image();
  img.onload = () => {
    viewCtx.imageSmoothingEnabled = false; // nearest-neighbor upscale
    viewCtx.drawImage(img, 0, 0, view.width, view.height);
  };
  img.src = `data:image/png;base64,${entry.imageB64}`;
}

const viewer = new Viewer(api, {
  onFrame: (entry, index) => {
    drawFrame(entry);
    slider.max = String(viewer.history.length - 1);
    slider.value = String(index);
    const score = entry.beamScore === null ? "input frame" : `beam score ${entry.beamScore.toFixed(2)}`;
    const mode = viewer.atLiveEdge ? "live" : "history (stepping disabled)";
    status.textContent = `frame ${index + 1}/${viewer.history.length} — ${score} — ${mode}`;
    drawTrail(miniCtx, viewer.trail(), mini.width, mini.height, viewer.cursor);
  },
  onToast: showToast,
  onExpired: () => {
    showToast("session expired — start a new session (history stays viewable)");
    status.textContent = "session expired; history read-only";
  },
  onTrail: () => {
    drawTrail(miniCtx, viewer.trail(), mini.width, mini.height, viewer.cursor);
  },
});

async function newSession(): Promise<void> {
  const seed = parseInt(seedInput.value || "7", 10);
  try {
    await viewer.start({ scene_seed: seed });
    showToast(`session started on scene ${seed}`);
  } catch (err) {
    showToast(`could not start session: ${(err as Error).message}`);
  }
}

$("new-session").addEventListener("click", () => void newSession());

window.addEventListener("keydown", (ev) => {
  if (ev.target instanceof HTMLInputElement) return;
  const delta = keyToDelta(ev.key, binding);
  if (delta === null) return; // unbound key: no network traffic
  ev.preventDefault();
  if (!viewer.atLiveEdge) {
    showToast("viewing history — scrub to the end to keep walking");
    return;
  }
  void viewer.step(delta); // single-flight handled inside
});

slider.addEventListener("input", () => {
  viewer.scrub(parseInt(slider.value, 10));
});

$("to-live").addEventListener("click", () => {
  viewer.scrubToEnd();
});

for (const [id, key] of [
  ["btn-w", "W"], ["btn-s", "S"], ["btn-a", "A"], ["btn-d", "D"],
  ["btn-left", "ArrowLeft"], ["btn-right", "ArrowRight"],
] as const) {
  $(id).addEventListener("click", () => {
    const delta = keyToDelta(key, binding);
    if (delta && viewer.atLiveEdge) void viewer.step(delta);
  });
}

const stepInput = $("step-size") as unknown as HTMLInputElement;
const yawInput = $("yaw-size") as unknown as HTMLInputElement;
for (const input of [stepInput, yawInput]) {
  input.addEventListener("change", () => {
    binding = clampBinding({
      forwardStep: parseFloat(stepInput.value),
      strafeStep: parseFloat(stepInput.value),
      yawStepDeg: parseFloat(yawInput.value),
    });
    stepInput.value = String(binding.forwardStep);
    yawInput.value = String(binding.yawStepDeg);
  });
}

void newSession();
