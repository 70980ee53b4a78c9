/**
 * Editor state reducers. Every transition is a pure function of
 * (state, event), so replaying an event log reproduces the final state
 * exactly; this is what the replay acceptance test exercises.
 */

import { applyStroke, cloneOverlay, emptyOverlay } from "./overlay.js";
import type {
  CanvasEditorState,
  EditorEvent,
  HistoryStripState,
  Overlay,
  SessionView,
} from "./types.js";

export function historyFromView(view: SessionView): HistoryStripState {
  return {
    steps: view.steps.map((s) => ({
      index: s.index,
      instruction: s.instruction,
      action: s.action,
      target: s.target,
      outputUrl: s.output_url,
      segOutUrl: s.seg_out_url,
    })),
    cursor: view.cursor,
    comparison: null,
  };
}

export function createEditorState(
  view: SessionView,
  baseSeg: Int32Array,
  targetClassId: number,
  overlay?: Overlay,
): CanvasEditorState {
  return {
    sessionId: view.id,
    width: view.width,
    height: view.height,
    baseSeg,
    targetClassId,
    overlay: overlay ?? emptyOverlay(view.width, view.height),
    brush: { radius: 6, mode: "paint" },
    transform: { zoom: 1, panX: 0, panY: 0 },
    dirty: false,
    history: historyFromView(view),
    error: null,
    pendingApply: false,
  };
}

export function applyEvent(state: CanvasEditorState, event: EditorEvent): CanvasEditorState {
  switch (event.kind) {
    case "stroke": {
      const overlay = applyStroke(state.overlay, event.path, state.brush.radius, event.mode);
      return { ...state, overlay, dirty: true };
    }
    case "brush": {
      const radius = Math.max(1, event.radius ?? state.brush.radius);
      return { ...state, brush: { radius, mode: event.mode ?? state.brush.mode } };
    }
    case "transform": {
      return {
        ...state,
        transform: {
          zoom: event.zoom ?? state.transform.zoom,
          panX: event.panX ?? state.transform.panX,
          panY: event.panY ?? state.transform.panY,
        },
      };
    }
    case "overlay-replace": {
      return {
        ...state,
        overlay: cloneOverlay(event.overlay),
        dirty: event.markClean ? false : state.dirty,
      };
    }
    case "history-sync": {
      return { ...state, history: { ...historyFromView(event.view), comparison: state.history.comparison } };
    }
    case "compare": {
      return { ...state, history: { ...state.history, comparison: event.pair } };
    }
    case "error": {
      return { ...state, error: event.message };
    }
  }
}

export function replayEvents(initial: CanvasEditorState, events: EditorEvent[]): CanvasEditorState {
  return events.reduce(applyEvent, initial);
}

export function canUndo(state: CanvasEditorState): boolean {
  return state.history.cursor > 0;
}

export function canRedo(state: CanvasEditorState): boolean {
  return state.history.cursor < state.history.steps.length;
}

/** URL of the image the editor should display at the current cursor. */
export function visibleOutputUrl(state: CanvasEditorState): string {
  const { cursor, steps } = state.history;
  if (cursor === 0) return `/sessions/${state.sessionId}/output`;
  return steps[cursor - 1].outputUrl;
}
