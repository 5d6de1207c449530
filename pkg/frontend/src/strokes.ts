/** Pointer-event capture into committed strokes.
 *
 * Points are kept in raw surface coordinates and never modified after a
 * stroke commits; the server owns all normalization. Move events closer
 * than the spacing threshold to the previous point are dropped.
 */

import type { Point, Stroke } from "./api.js";

export const MIN_SPACING_PX = 2;

export class StrokeBuffer {
  private committed: Stroke[] = [];
  private active: Point[] | null = null;

  /** Committed strokes (the active one is excluded until pointer-up). */
  get strokes(): Stroke[] {
    return this.committed.map((s) => s.map((p) => [...p] as Point));
  }

  get isDrawing(): boolean {
    return this.active !== null;
  }

  get isEmpty(): boolean {
    return this.committed.length === 0 && this.active === null;
  }

  start(x: number, y: number): void {
    this.active = [[x, y]];
  }

  move(x: number, y: number): boolean {
    if (!this.active) return false;
    const [px, py] = this.active[this.active.length - 1];
    if (Math.hypot(x - px, y - py) < MIN_SPACING_PX) return false;
    this.active.push([x, y]);
    return true;
  }

  /** Commit the active stroke; returns it, or null if nothing was active. */
  end(): Stroke | null {
    if (!this.active) return null;
    const stroke = this.active;
    this.active = null;
    this.committed.push(stroke);
    return stroke;
  }

  /** The in-progress polyline, for live rendering. */
  activePoints(): Stroke {
    return this.active ? this.active.map((p) => [...p] as Point) : [];
  }

  clear(): void {
    this.committed = [];
    this.active = null;
  }
}
