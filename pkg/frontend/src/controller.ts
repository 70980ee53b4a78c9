/**
 * Service-facing workflows. The rules the tests pin down:
 *   - submit sends PUT /segmap only when the overlay is dirty, and always
 *     before POST /apply;
 *   - a failed apply leaves the history strip untouched and surfaces the
 *     error with its stage;
 *   - undo/redo at the range ends send no request at all;
 *   - after every service round trip the strip mirrors the server cursor.
 */

import { ServiceError, SessionClient } from "./api.js";
import type { SegmapCodec } from "./codec.js";
import { mergeOverlayIntoSeg, overlayFromSeg } from "./overlay.js";
import { applyEvent, canRedo, canUndo, createEditorState } from "./state.js";
import type { CanvasEditorState } from "./types.js";

export function targetClassIdFromPalette(
  palette: Record<string, string>,
  target: string | null,
): number {
  if (target) {
    for (const [id, label] of Object.entries(palette)) {
      if (label === target) return Number(id);
    }
  }
  const ids = Object.keys(palette).map(Number);
  return ids.length ? Math.min(...ids) : 1;
}

export async function loadSession(
  client: SessionClient,
  codec: SegmapCodec,
  sessionId: string,
): Promise<CanvasEditorState> {
  const view = await client.getSession(sessionId);
  const png = await client.getSegmapPng(sessionId);
  const { seg, width, height } = await codec.decode(png);
  if (width !== view.width || height !== view.height) {
    throw new ServiceError("segmap dimensions disagree with the session", 500);
  }
  const targetClassId = targetClassIdFromPalette(view.palette, view.target);
  const overlay = overlayFromSeg(seg, width, height, targetClassId);
  const baseSeg = Int32Array.from(seg, (v) => (v === targetClassId ? 0 : v));
  return createEditorState(view, baseSeg, targetClassId, overlay);
}

export async function submitEditAndApply(
  state: CanvasEditorState,
  client: SessionClient,
  codec: SegmapCodec,
  instruction: string,
  backgroundB64?: string,
): Promise<CanvasEditorState> {
  if (!state.dirty && instruction.trim() === "") {
    return applyEvent(state, { kind: "error", message: "nothing to apply" });
  }
  let next: CanvasEditorState = { ...state, pendingApply: true, error: null };
  try {
    if (next.dirty) {
      const merged = mergeOverlayIntoSeg(next.baseSeg, next.overlay, next.targetClassId);
      const png = await codec.encode(merged, next.width, next.height);
      await client.putSegmapPng(next.sessionId, png);
      next = { ...next, dirty: false };
    }
    await client.apply(next.sessionId, instruction, backgroundB64);
    const view = await client.getSession(next.sessionId);
    next = applyEvent(next, { kind: "history-sync", view });
    return { ...next, pendingApply: false };
  } catch (err) {
    const message =
      err instanceof ServiceError
        ? err.stage
          ? `[${err.stage}] ${err.message}`
          : err.message
        : String(err);
    // history untouched on failure; the dirty flag reflects whether the
    // segmap PUT already landed
    return { ...next, pendingApply: false, error: message };
  }
}

export async function undoRedo(
  state: CanvasEditorState,
  client: SessionClient,
  direction: "undo" | "redo",
): Promise<CanvasEditorState> {
  const allowed = direction === "undo" ? canUndo(state) : canRedo(state);
  if (!allowed) {
    return state; // control disabled: no request
  }
  const view = direction === "undo"
    ? await client.undo(state.sessionId)
    : await client.redo(state.sessionId);
  return applyEvent(state, { kind: "history-sync", view });
}
