/** Browser shell: wires DOM events to the pure viewer core.
 *
 * Load a bundle either from a directory URL (?bundle=path/) or by picking
 * the meta.json + frame files with the file input. All interaction flows
 * through interact() as events collected between animation frames; the
 * canvas is repainted from renderFrame() output only when the state
 * changed, so identical states paint identical pixels.
 */

import { assembleBundle, frameFileName, parseMeta } from "./format.js";
import type { Bundle } from "./format.js";
import { renderFrame } from "./render.js";
import type { ViewerEvent, ViewerState } from "./viewer.js";
import { cameraForState, createViewer, currentFrame, interact } from "./viewer.js";

const canvas = document.getElementById("view") as HTMLCanvasElement;
const statsEl = document.getElementById("stats") as HTMLElement;
const statusEl = document.getElementById("status") as HTMLElement;
const filesEl = document.getElementById("files") as HTMLInputElement;

let state: ViewerState | null = null;
let pending: ViewerEvent[] = [];
let lastPainted: ViewerState | null = null;
let lastTime = performance.now();

function setStatus(msg: string) {
  statusEl.textContent = msg;
}

async function loadFromUrl(base: string): Promise<Bundle> {
  const metaResp = await fetch(new URL("meta.json", base));
  if (!metaResp.ok) throw new Error(`fetch meta.json: HTTP ${metaResp.status}`);
  const metaText = await metaResp.text();
  const meta = parseMeta(metaText);
  const frames: Uint8Array[] = [];
  for (let k = 0; k < meta.frame_count; k++) {
    setStatus(`loading frame ${k + 1} / ${meta.frame_count}`);
    const resp = await fetch(new URL(frameFileName(k), base));
    if (!resp.ok) throw new Error(`fetch ${frameFileName(k)}: HTTP ${resp.status}`);
    frames.push(new Uint8Array(await resp.arrayBuffer()));
  }
  return assembleBundle(metaText, frames);
}

async function loadFromFiles(files: FileList): Promise<Bundle> {
  const byName = new Map<string, File>();
  for (const f of Array.from(files)) byName.set(f.name, f);
  const metaFile = byName.get("meta.json");
  if (!metaFile) throw new Error("selection must include meta.json");
  const metaText = await metaFile.text();
  const meta = parseMeta(metaText);
  const frames: Uint8Array[] = [];
  for (let k = 0; k < meta.frame_count; k++) {
    const f = byName.get(frameFileName(k));
    if (!f) throw new Error(`selection is missing ${frameFileName(k)}`);
    frames.push(new Uint8Array(await f.arrayBuffer()));
  }
  return assembleBundle(metaText, frames);
}

function attachBundle(bundle: Bundle) {
  state = createViewer(bundle);
  canvas.width = state.intrinsics.width;
  canvas.height = state.intrinsics.height;
  lastPainted = null;
  setStatus(
    `${bundle.meta.frame_count} frame(s), ` +
      `${bundle.meta.gaussian_counts[0]} Gaussians in frame 0` +
      (bundle.meta.frame_count > 1 ? " — space plays, [ ] scrub" : " — single frame, playback disabled"),
  );
}

function paint(s: ViewerState) {
  const t0 = performance.now();
  const out = renderFrame(currentFrame(s), cameraForState(s), s.bundle.meta.background);
  const ms = performance.now() - t0;
  const { width, height } = canvas;
  const img = new ImageData(width, height);
  for (let i = 0; i < width * height; i++) {
    img.data[i * 4] = Math.round(out.image[i * 3] * 255);
    img.data[i * 4 + 1] = Math.round(out.image[i * 3 + 1] * 255);
    img.data[i * 4 + 2] = Math.round(out.image[i * 3 + 2] * 255);
    img.data[i * 4 + 3] = 255;
  }
  canvas.getContext("2d")!.putImageData(img, 0, 0);
  statsEl.textContent =
    `frame ${s.frame + 1}/${s.bundle.meta.frame_count}  ` +
    `splats ${out.splatCount}  render ${ms.toFixed(1)} ms  mode ${s.mode}` +
    (s.playing ? `  playing @ ${s.fps} fps` : "");
}

function frameLoop(now: number) {
  const dt = Math.max(0, (now - lastTime) / 1000);
  lastTime = now;
  if (state) {
    pending.push({ kind: "tick", dt });
    const next = interact(state, pending);
    pending = [];
    if (next !== lastPainted) {
      paint(next);
      lastPainted = next;
    }
    state = next;
  }
  requestAnimationFrame(frameLoop);
}

// --- input bindings ---

let dragging = false;
canvas.addEventListener("mousedown", () => (dragging = true));
window.addEventListener("mouseup", () => (dragging = false));
window.addEventListener("mousemove", (ev) => {
  if (!dragging || !state) return;
  if (state.mode === "orbit") {
    pending.push({ kind: "orbit-drag", dAzimuth: ev.movementX * 0.01, dElevation: ev.movementY * 0.01 });
  } else {
    pending.push({ kind: "fly-look", yaw: ev.movementX * 0.005, pitch: ev.movementY * 0.005 });
  }
});
canvas.addEventListener("wheel", (ev) => {
  ev.preventDefault();
  pending.push({ kind: "dolly", factor: Math.exp(ev.deltaY * 0.001) });
});
window.addEventListener("keydown", (ev) => {
  if (!state) return;
  const step = 0.1;
  const moves: Record<string, ViewerEvent> = {
    w: { kind: "fly-move", right: 0, up: 0, forward: step },
    s: { kind: "fly-move", right: 0, up: 0, forward: -step },
    a: { kind: "fly-move", right: -step, up: 0, forward: 0 },
    d: { kind: "fly-move", right: step, up: 0, forward: 0 },
    q: { kind: "fly-move", right: 0, up: step, forward: 0 },
    e: { kind: "fly-move", right: 0, up: -step, forward: 0 },
    " ": { kind: "play-pause" },
    "[": { kind: "scrub", frame: state.frame - 1 },
    "]": { kind: "scrub", frame: state.frame + 1 },
    f: { kind: "set-mode", mode: state.mode === "fly" ? "orbit" : "fly" },
  };
  const ev2 = moves[ev.key];
  if (ev2) {
    pending.push(ev2);
    ev.preventDefault();
  }
});

filesEl.addEventListener("change", () => {
  if (!filesEl.files || filesEl.files.length === 0) return;
  loadFromFiles(filesEl.files)
    .then(attachBundle)
    .catch((e) => setStatus(`load failed: ${(e as Error).message}`));
});

const params = new URLSearchParams(window.location.search);
const bundleUrl = params.get("bundle");
if (bundleUrl) {
  loadFromUrl(new URL(bundleUrl, window.location.href).toString())
    .then(attachBundle)
    .catch((e) => setStatus(`load failed: ${(e as Error).message}`));
} else {
  setStatus("pick a bundle directory's meta.json + frame_*.bin files, or pass ?bundle=dir/");
}

requestAnimationFrame(frameLoop);
