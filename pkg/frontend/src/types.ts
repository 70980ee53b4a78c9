/** Shared editor types. All editor state is plain data; reducers never mutate. */

export interface Point {
  x: number;
  y: number;
}

export type BrushMode = "paint" | "erase";

export interface Brush {
  radius: number; // px, >= 1
  mode: BrushMode;
}

/** Binary overlay for the target class, one byte per pixel (0/1). */
export interface Overlay {
  width: number;
  height: number;
  data: Uint8Array;
}

export interface Transform {
  zoom: number;
  panX: number;
  panY: number;
}

export interface StepSummary {
  index: number;
  instruction: string;
  action: string;
  target: string | null;
  outputUrl: string;
  segOutUrl: string;
}

export interface HistoryStripState {
  steps: StepSummary[];
  cursor: number;
  /** [left step index or -1 for the input, right step index] */
  comparison: [number, number] | null;
}

export interface CanvasEditorState {
  sessionId: string;
  width: number;
  height: number;
  /** class ids as loaded from the service, target class cleared */
  baseSeg: Int32Array;
  targetClassId: number;
  overlay: Overlay;
  brush: Brush;
  transform: Transform;
  dirty: boolean;
  history: HistoryStripState;
  error: string | null;
  pendingApply: boolean;
}

/** Server-side session view (subset the editor consumes). */
export interface SessionView {
  id: string;
  cursor: number;
  state: string;
  target: string | null;
  width: number;
  height: number;
  palette: Record<string, string>;
  steps: Array<{
    index: number;
    instruction: string;
    action: string;
    target: string | null;
    output_url: string;
    seg_out_url: string;
  }>;
}

export type EditorEvent =
  | { kind: "stroke"; path: Point[]; mode: BrushMode }
  | { kind: "brush"; radius?: number; mode?: BrushMode }
  | { kind: "transform"; zoom?: number; panX?: number; panY?: number }
  | { kind: "overlay-replace"; overlay: Overlay; markClean?: boolean }
  | { kind: "history-sync"; view: SessionView }
  | { kind: "compare"; pair: [number, number] | null }
  | { kind: "error"; message: string | null };
