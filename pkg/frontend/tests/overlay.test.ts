import { describe, expect, it } from "vitest";

import type { GraphPayload } from "../src/api.js";
import { fitTransform, formatPredictions, project, renderOverlay } from "../src/overlay.js";

class FakeContext {
  strokeStyle: string = "";
  fillStyle: string = "";
  lineWidth = 0;
  dots: [number, number][] = [];
  segments: [number, number, number, number][] = [];
  private path: [number, number][] = [];
  private arcAt: [number, number] | null = null;

  beginPath() {
    this.path = [];
    this.arcAt = null;
  }
  moveTo(x: number, y: number) {
    this.path = [[x, y]];
  }
  lineTo(x: number, y: number) {
    this.path.push([x, y]);
  }
  arc(x: number, y: number) {
    this.arcAt = [x, y];
  }
  stroke() {
    if (this.path.length === 2) {
      this.segments.push([...this.path[0], ...this.path[1]] as never);
    }
  }
  fill() {
    if (this.arcAt) this.dots.push(this.arcAt);
  }
}

describe("fitTransform / project", () => {
  it("centers the unit square with preserved aspect", () => {
    const t = fitTransform(400, 200, 10);
    expect(t.scale).toBe(180);
    const [cx, cy] = project([0.5, 0.5], t);
    expect(cx).toBeCloseTo(200);
    expect(cy).toBeCloseTo(100);
  });

  it("maps corners inside the surface", () => {
    const t = fitTransform(300, 300);
    for (const corner of [[0, 0], [1, 1], [0, 1], [1, 0]] as const) {
      const [x, y] = project([corner[0], corner[1]], t);
      expect(x).toBeGreaterThanOrEqual(0);
      expect(y).toBeGreaterThanOrEqual(0);
      expect(x).toBeLessThanOrEqual(300);
      expect(y).toBeLessThanOrEqual(300);
    }
  });
});

describe("renderOverlay", () => {
  it("draws two dots and one segment for a 2-node graph", () => {
    const ctx = new FakeContext();
    const graph: GraphPayload = { nodes: [[0.1, 0.1], [0.9, 0.9]], edges: [[0, 1]] };
    const stats = renderOverlay(ctx, graph, 100, 100);
    expect(stats).toEqual({ dots: 2, segments: 1 });
    expect(ctx.dots).toHaveLength(2);
    expect(ctx.segments).toHaveLength(1);
  });

  it("renders an empty graph without crashing", () => {
    const ctx = new FakeContext();
    const stats = renderOverlay(ctx, { nodes: [], edges: [] }, 100, 100);
    expect(stats).toEqual({ dots: 0, segments: 0 });
  });

  it("omits self-loops", () => {
    const ctx = new FakeContext();
    const graph: GraphPayload = {
      nodes: [[0.2, 0.2], [0.8, 0.2]],
      edges: [[0, 0], [1, 1], [0, 1], [1, 0]],
    };
    const stats = renderOverlay(ctx, graph, 100, 100);
    expect(stats.segments).toBe(2);
    expect(stats.dots).toBe(2);
  });

  it("places a node at (0.5, 0.5) in the surface center", () => {
    const ctx = new FakeContext();
    renderOverlay(ctx, { nodes: [[0.5, 0.5]], edges: [] }, 420, 420);
    expect(ctx.dots[0][0]).toBeCloseTo(210);
    expect(ctx.dots[0][1]).toBeCloseTo(210);
  });
});

describe("formatPredictions", () => {
  it("formats scores as percentages preserving order", () => {
    const rows = formatPredictions([
      { label: "3", score: 0.91234 },
      { label: "8", score: 0.0456 },
    ]);
    expect(rows).toEqual([
      { label: "3", percent: "91.2%" },
      { label: "8", percent: "4.6%" },
    ]);
  });
});
