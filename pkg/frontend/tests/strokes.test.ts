import { describe, expect, it } from "vitest";

import { MIN_SPACING_PX, StrokeBuffer } from "../src/strokes.js";

describe("StrokeBuffer", () => {
  it("down-move-up commits one stroke with the sampled points", () => {
    const buf = new StrokeBuffer();
    buf.start(10, 10);
    buf.move(14, 10);
    buf.move(18, 10);
    buf.move(22, 10);
    const stroke = buf.end();
    expect(stroke).not.toBeNull();
    expect(stroke!.length).toBeGreaterThanOrEqual(2);
    expect(buf.strokes).toHaveLength(1);
    expect(buf.strokes[0][0]).toEqual([10, 10]);
  });

  it("two separate gestures give two strokes", () => {
    const buf = new StrokeBuffer();
    buf.start(0, 0);
    buf.move(5, 0);
    buf.end();
    buf.start(50, 50);
    buf.move(55, 50);
    buf.end();
    expect(buf.strokes).toHaveLength(2);
  });

  it("throttles points closer than the spacing threshold", () => {
    const buf = new StrokeBuffer();
    buf.start(0, 0);
    expect(buf.move(MIN_SPACING_PX - 1, 0)).toBe(false);
    expect(buf.move(MIN_SPACING_PX + 1, 0)).toBe(true);
    const stroke = buf.end()!;
    expect(stroke).toEqual([
      [0, 0],
      [MIN_SPACING_PX + 1, 0],
    ]);
  });

  it("moves without a pointer-down are ignored", () => {
    const buf = new StrokeBuffer();
    expect(buf.move(10, 10)).toBe(false);
    expect(buf.end()).toBeNull();
    expect(buf.isEmpty).toBe(true);
  });

  it("clear empties committed and active strokes", () => {
    const buf = new StrokeBuffer();
    buf.start(0, 0);
    buf.move(10, 0);
    buf.end();
    buf.start(20, 20);
    buf.clear();
    expect(buf.isEmpty).toBe(true);
    expect(buf.strokes).toHaveLength(0);
    expect(buf.activePoints()).toHaveLength(0);
  });

  it("returned strokes are snapshots, not live references", () => {
    const buf = new StrokeBuffer();
    buf.start(0, 0);
    buf.move(10, 0);
    buf.end();
    const a = buf.strokes;
    a[0][0][0] = 999;
    expect(buf.strokes[0][0][0]).toBe(0);
  });
});
