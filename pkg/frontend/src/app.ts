/** Browser wiring: canvas painting, instruction box, history strip, and a
 * draggable before/after split. All logic lives in the pure modules; this
 * file only translates DOM events into editor events and repaints. */

import { SessionClient } from "./api.js";
import { CanvasSegmapCodec } from "./codec.js";
import { loadSession, submitEditAndApply, undoRedo } from "./controller.js";
import { applyEvent, canRedo, canUndo, visibleOutputUrl } from "./state.js";
import type { BrushMode, CanvasEditorState, Point } from "./types.js";

const client = new SessionClient();
const codec = new CanvasSegmapCodec();

let state: CanvasEditorState | null = null;

const els = {
  canvas: document.getElementById("editor") as HTMLCanvasElement,
  baseImage: document.getElementById("base-image") as HTMLImageElement,
  resultImage: document.getElementById("result-image") as HTMLImageElement,
  splitSlider: document.getElementById("split-slider") as HTMLInputElement,
  resultPane: document.getElementById("result-pane") as HTMLDivElement,
  instruction: document.getElementById("instruction") as HTMLInputElement,
  applyButton: document.getElementById("apply") as HTMLButtonElement,
  undoButton: document.getElementById("undo") as HTMLButtonElement,
  redoButton: document.getElementById("redo") as HTMLButtonElement,
  brushRadius: document.getElementById("brush-radius") as HTMLInputElement,
  brushMode: document.getElementById("brush-mode") as HTMLSelectElement,
  strip: document.getElementById("history-strip") as HTMLDivElement,
  status: document.getElementById("status") as HTMLDivElement,
  uploadImage: document.getElementById("upload-image") as HTMLInputElement,
  createButton: document.getElementById("create-session") as HTMLButtonElement,
};

function setState(next: CanvasEditorState): void {
  state = next;
  render();
}

function render(): void {
  if (!state) return;
  els.canvas.width = state.width;
  els.canvas.height = state.height;
  const ctx = els.canvas.getContext("2d")!;
  ctx.clearRect(0, 0, state.width, state.height);
  const overlayImage = ctx.createImageData(state.width, state.height);
  for (let i = 0; i < state.overlay.data.length; i++) {
    if (state.overlay.data[i]) {
      overlayImage.data[4 * i] = 255;
      overlayImage.data[4 * i + 1] = 64;
      overlayImage.data[4 * i + 2] = 64;
      overlayImage.data[4 * i + 3] = 128; // 50% target-class tint
    }
  }
  ctx.putImageData(overlayImage, 0, 0);
  els.undoButton.disabled = !canUndo(state) || state.pendingApply;
  els.redoButton.disabled = !canRedo(state) || state.pendingApply;
  els.applyButton.disabled = state.pendingApply;
  els.resultImage.src = `${visibleOutputUrl(state)}?t=${Date.now()}`;
  els.status.textContent = state.error ?? (state.dirty ? "mask edited (unsaved)" : "ready");
  els.strip.replaceChildren(
    ...state.history.steps.map((step) => {
      const img = document.createElement("img");
      img.src = step.outputUrl;
      img.title = `${step.index}: ${step.instruction}`;
      img.className = step.index === state!.history.cursor - 1 ? "thumb current" : "thumb";
      img.onclick = () => {
        els.resultImage.src = `${step.outputUrl}?t=${Date.now()}`;
      };
      return img;
    }),
  );
}

function canvasPoint(event: PointerEvent): Point {
  const rect = els.canvas.getBoundingClientRect();
  return {
    x: ((event.clientX - rect.left) / rect.width) * els.canvas.width,
    y: ((event.clientY - rect.top) / rect.height) * els.canvas.height,
  };
}

let strokePath: Point[] = [];
els.canvas.addEventListener("pointerdown", (event) => {
  if (!state) return;
  strokePath = [canvasPoint(event)];
  els.canvas.setPointerCapture(event.pointerId);
});
els.canvas.addEventListener("pointermove", (event) => {
  if (!state || strokePath.length === 0) return;
  strokePath.push(canvasPoint(event));
  setState(
    applyEvent(state, {
      kind: "stroke",
      path: strokePath.slice(-2),
      mode: els.brushMode.value as BrushMode,
    }),
  );
});
els.canvas.addEventListener("pointerup", () => {
  if (!state || strokePath.length === 0) return;
  setState(
    applyEvent(state, {
      kind: "stroke",
      path: strokePath,
      mode: els.brushMode.value as BrushMode,
    }),
  );
  strokePath = [];
});

els.brushRadius.addEventListener("change", () => {
  if (!state) return;
  setState(applyEvent(state, { kind: "brush", radius: Number(els.brushRadius.value) }));
});
els.brushMode.addEventListener("change", () => {
  if (!state) return;
  setState(applyEvent(state, { kind: "brush", mode: els.brushMode.value as BrushMode }));
});

els.applyButton.addEventListener("click", async () => {
  if (!state) return;
  setState(await submitEditAndApply(state, client, codec, els.instruction.value));
});
els.undoButton.addEventListener("click", async () => {
  if (!state) return;
  setState(await undoRedo(state, client, "undo"));
});
els.redoButton.addEventListener("click", async () => {
  if (!state) return;
  setState(await undoRedo(state, client, "redo"));
});

els.splitSlider.addEventListener("input", () => {
  els.resultPane.style.clipPath = `inset(0 0 0 ${els.splitSlider.value}%)`;
});

els.createButton.addEventListener("click", async () => {
  const file = els.uploadImage.files?.[0];
  if (!file) return;
  const bytes = new Uint8Array(await file.arrayBuffer());
  let binary = "";
  bytes.forEach((b) => (binary += String.fromCharCode(b)));
  const created = await client.createSession(btoa(binary), els.instruction.value);
  els.baseImage.src = URL.createObjectURL(file);
  setState(await loadSession(client, codec, created.id));
});

const params = new URLSearchParams(window.location.search);
const existing = params.get("session");
if (existing) {
  els.baseImage.src = `/sessions/${existing}/output`;
  loadSession(client, codec, existing).then(setState, (err) => {
    els.status.textContent = String(err);
  });
}
