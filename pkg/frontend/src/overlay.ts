/** Pure overlay (binary mask) operations: stamped-disc strokes, merging. */

import type { BrushMode, Overlay, Point } from "./types.js";

export function emptyOverlay(width: number, height: number): Overlay {
  return { width, height, data: new Uint8Array(width * height) };
}

export function cloneOverlay(overlay: Overlay): Overlay {
  return {
    width: overlay.width,
    height: overlay.height,
    data: new Uint8Array(overlay.data),
  };
}

export function overlaysEqual(a: Overlay, b: Overlay): boolean {
  if (a.width !== b.width || a.height !== b.height) return false;
  for (let i = 0; i < a.data.length; i++) {
    if (a.data[i] !== b.data[i]) return false;
  }
  return true;
}

export function overlayPixelSet(overlay: Overlay): Set<number> {
  const set = new Set<number>();
  overlay.data.forEach((v, i) => {
    if (v) set.add(i);
  });
  return set;
}

function stampDisc(data: Uint8Array, width: number, height: number, center: Point, radius: number, value: 0 | 1): void {
  const r2 = radius * radius;
  const y0 = Math.max(0, Math.floor(center.y - radius));
  const y1 = Math.min(height - 1, Math.ceil(center.y + radius));
  const x0 = Math.max(0, Math.floor(center.x - radius));
  const x1 = Math.min(width - 1, Math.ceil(center.x + radius));
  for (let y = y0; y <= y1; y++) {
    for (let x = x0; x <= x1; x++) {
      const dy = y - center.y;
      const dx = x - center.x;
      if (dx * dx + dy * dy <= r2) {
        data[y * width + x] = value;
      }
    }
  }
}

/** Points along the polyline at spacing <= 1px, endpoints included. */
export function interpolatePath(path: Point[]): Point[] {
  if (path.length <= 1) return [...path];
  const out: Point[] = [path[0]];
  for (let i = 1; i < path.length; i++) {
    const a = path[i - 1];
    const b = path[i];
    const dist = Math.hypot(b.x - a.x, b.y - a.y);
    const steps = Math.max(1, Math.ceil(dist));
    for (let s = 1; s <= steps; s++) {
      out.push({ x: a.x + ((b.x - a.x) * s) / steps, y: a.y + ((b.y - a.y) * s) / steps });
    }
  }
  return out;
}

/**
 * Union (paint) or clear (erase) of discs stamped along the path.
 * Pure: returns a new overlay, the input is untouched.
 */
export function applyStroke(overlay: Overlay, path: Point[], radius: number, mode: BrushMode): Overlay {
  const next = cloneOverlay(overlay);
  const value: 0 | 1 = mode === "paint" ? 1 : 0;
  for (const point of interpolatePath(path)) {
    stampDisc(next.data, next.width, next.height, point, radius, value);
  }
  return next;
}

/** Overlay holding 1 where the seg map equals the class id. */
export function overlayFromSeg(seg: Int32Array, width: number, height: number, classId: number): Overlay {
  const overlay = emptyOverlay(width, height);
  for (let i = 0; i < seg.length; i++) {
    if (seg[i] === classId) overlay.data[i] = 1;
  }
  return overlay;
}

/** Merge the overlay back over the base map: target pixels win. */
export function mergeOverlayIntoSeg(baseSeg: Int32Array, overlay: Overlay, classId: number): Int32Array {
  const merged = Int32Array.from(baseSeg);
  for (let i = 0; i < overlay.data.length; i++) {
    if (overlay.data[i]) merged[i] = classId;
  }
  return merged;
}
