import { describe, expect, it } from "vitest";

import {
  dragToRange,
  hitTest,
  makeScale,
  renderChart,
  severityColor,
  valueExtent,
} from "../src/chart.js";
import type { EventDoc, SignalData } from "../src/types.js";

const RANGE = { t0: 0, t1: 1000 };

function ev(id: string, tS: number, tE: number, severity = 0,
            source: "detected" | "manual" = "detected"): EventDoc {
  return { id, t_s: tS, t_e: tE, severity, source };
}

describe("scale", () => {
  it("round-trips pixels and time", () => {
    const scale = makeScale(RANGE, 500);
    expect(scale.toX(0)).toBe(0);
    expect(scale.toX(1000)).toBe(500);
    expect(scale.toT(scale.toX(250))).toBeCloseTo(250, 9);
  });
});

describe("value extent", () => {
  it("skips nulls and NaN", () => {
    const data: SignalData = {
      timestamps: [0, 1, 2, 3],
      values: [[1], [null], [NaN], [5]],
    };
    expect(valueExtent(data)).toEqual([1, 5]);
  });

  it("pads a constant signal", () => {
    const data: SignalData = { timestamps: [0, 1], values: [[2], [2]] };
    expect(valueExtent(data)).toEqual([1.5, 2.5]);
  });
});

describe("hit testing", () => {
  const events = [ev("a", 100, 200), ev("b", 500, 600)];
  const scale = makeScale(RANGE, 1000); // 1px per time unit

  it("prefers an edge over the body", () => {
    expect(hitTest(events, 100, scale)).toEqual({ kind: "start", event: events[0] });
    expect(hitTest(events, 203, scale)).toEqual({ kind: "end", event: events[0] });
  });

  it("hits the body away from edges", () => {
    expect(hitTest(events, 150, scale)).toEqual({ kind: "body", event: events[0] });
  });

  it("misses empty space", () => {
    expect(hitTest(events, 350, scale)).toBeNull();
  });
});

describe("drag selection", () => {
  const scale = makeScale(RANGE, 1000);

  it("normalizes direction", () => {
    expect(dragToRange(300, 100, scale)).toEqual({ t0: 100, t1: 300 });
  });

  it("rejects a zero-width selection", () => {
    expect(dragToRange(100, 100, scale)).toBeNull();
  });
});

describe("severity color", () => {
  it("is faint at zero and saturates at the max", () => {
    const low = severityColor(0, 10);
    const high = severityColor(10, 10);
    const alpha = (c: string) => parseFloat(c.match(/, ([\d.]+)\)$/)![1]);
    expect(alpha(low)).toBeCloseTo(0.15, 3);
    expect(alpha(high)).toBeCloseTo(0.6, 3);
    expect(alpha(severityColor(5, 10))).toBeGreaterThan(alpha(low));
  });

  it("handles an all-zero severity set", () => {
    expect(severityColor(0, 0)).toContain("0.150");
  });
});

class FakeCtx {
  ops: string[] = [];
  strokeStyle: string = "";
  fillStyle: string = "";
  lineWidth = 1;
  fills: Array<[number, number, number, number]> = [];
  strokeRects: Array<[number, number, number, number]> = [];
  dashes: number[][] = [];

  clearRect() { this.ops.push("clear"); }
  beginPath() { this.ops.push("begin"); }
  moveTo() { this.ops.push("move"); }
  lineTo() { this.ops.push("line"); }
  stroke() { this.ops.push("stroke"); }
  fillRect(x: number, y: number, w: number, h: number) { this.fills.push([x, y, w, h]); }
  strokeRect(x: number, y: number, w: number, h: number) { this.strokeRects.push([x, y, w, h]); }
  setLineDash(seg: number[]) { this.dashes.push(seg); }
}

describe("rendering", () => {
  const data: SignalData = {
    timestamps: [0, 250, 500, 750, 1000],
    values: [[0], [1], [null], [3], [4]],
  };

  it("shades events exactly at their API intervals", () => {
    const ctx = new FakeCtx();
    renderChart(ctx, 1000, 300, data, [ev("a", 100, 200, 2)], RANGE, null);
    // overlay rect spans the scaled interval with no snapping
    expect(ctx.fills[0][0]).toBe(100);
    expect(ctx.fills[0][2]).toBe(100);
  });

  it("outlines manual events with a dashed stroke", () => {
    const ctx = new FakeCtx();
    renderChart(ctx, 1000, 300, data, [ev("m", 300, 400, 0, "manual")], RANGE, null);
    expect(ctx.dashes[0]).toEqual([4, 3]);
    expect(ctx.strokeRects.length).toBe(1);
  });

  it("breaks the line at missing values", () => {
    const ctx = new FakeCtx();
    renderChart(ctx, 1000, 300, data, [], RANGE, null);
    const moves = ctx.ops.filter((o) => o === "move").length;
    expect(moves).toBe(2); // restart after the null gap
  });

  it("highlights the selected event", () => {
    const ctx = new FakeCtx();
    renderChart(ctx, 1000, 300, data, [ev("a", 100, 200)], RANGE, "a");
    expect(ctx.strokeRects.length).toBe(1);
  });
});
