/** Graph overlay rendering: normalized [0,1]^2 coordinates onto a surface. */

import type { GraphPayload, Point } from "./api.js";

export interface FitTransform {
  scale: number;
  offsetX: number;
  offsetY: number;
}

/** Aspect-preserving map of the unit square into a (width x height) surface. */
export function fitTransform(width: number, height: number, margin = 12): FitTransform {
  const scale = Math.max(Math.min(width, height) - 2 * margin, 1);
  return {
    scale,
    offsetX: (width - scale) / 2,
    offsetY: (height - scale) / 2,
  };
}

export function project(p: Point, t: FitTransform): Point {
  return [t.offsetX + p[0] * t.scale, t.offsetY + p[1] * t.scale];
}

/** The subset of CanvasRenderingContext2D the overlay needs (fakeable in tests). */
export interface OverlayContext {
  strokeStyle: string | CanvasGradient | CanvasPattern;
  fillStyle: string | CanvasGradient | CanvasPattern;
  lineWidth: number;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  stroke(): void;
  fill(): void;
}

export const NODE_RADIUS = 2.5;

/** Draw edges as segments and nodes as dots; self-loops are not rendered. */
export function renderOverlay(
  ctx: OverlayContext,
  graph: GraphPayload,
  width: number,
  height: number,
): { dots: number; segments: number } {
  const t = fitTransform(width, height);
  let segments = 0;
  ctx.strokeStyle = "rgba(30, 120, 240, 0.55)";
  ctx.lineWidth = 1;
  for (const [src, dst] of graph.edges) {
    if (src === dst) continue;
    const a = project(graph.nodes[src], t);
    const b = project(graph.nodes[dst], t);
    ctx.beginPath();
    ctx.moveTo(a[0], a[1]);
    ctx.lineTo(b[0], b[1]);
    ctx.stroke();
    segments += 1;
  }
  ctx.fillStyle = "rgba(220, 60, 40, 0.85)";
  for (const node of graph.nodes) {
    const [x, y] = project(node, t);
    ctx.beginPath();
    ctx.arc(x, y, NODE_RADIUS, 0, 2 * Math.PI);
    ctx.fill();
  }
  return { dots: graph.nodes.length, segments };
}

/** Prediction rows as (label, percent string) pairs, descending by score. */
export function formatPredictions(
  predictions: { label: string; score: number }[],
): { label: string; percent: string }[] {
  return predictions.map((p) => ({
    label: p.label,
    percent: `${(100 * p.score).toFixed(1)}%`,
  }));
}
