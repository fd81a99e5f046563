/** Canvas line chart with an event overlay.
 *
 * Coordinate math and hit-testing are pure functions so they can be tested
 * without a DOM; rendering takes any 2d context. Event intervals are drawn
 * exactly as returned by the API — no snapping.
 */

import type { EventDoc, SignalData } from "./types.js";

export interface ViewRange {
  t0: number;
  t1: number;
}

export interface Scale {
  toX(t: number): number;
  toT(x: number): number;
}

export function makeScale(range: ViewRange, width: number): Scale {
  const span = range.t1 - range.t0;
  return {
    toX: (t) => ((t - range.t0) / span) * width,
    toT: (x) => range.t0 + (x / width) * span,
  };
}

export function valueExtent(data: SignalData, channel = 0): [number, number] {
  let lo = Infinity;
  let hi = -Infinity;
  for (const row of data.values) {
    const v = row[channel];
    if (v === null || v === undefined || Number.isNaN(v)) continue;
    if (v < lo) lo = v;
    if (v > hi) hi = v;
  }
  if (lo > hi) return [0, 1];
  if (lo === hi) return [lo - 0.5, hi + 0.5];
  return [lo, hi];
}

/** Severity 0 maps to a faint shade, higher severities saturate. */
export function severityColor(severity: number, maxSeverity: number): string {
  const unit = maxSeverity > 0 ? Math.min(severity / maxSeverity, 1) : 0;
  const alpha = 0.15 + 0.45 * unit;
  return `rgba(214, 69, 65, ${alpha.toFixed(3)})`;
}

export type EdgeHit =
  | { kind: "start" | "end"; event: EventDoc }
  | { kind: "body"; event: EventDoc }
  | null;

/** What an x pixel is pointing at, preferring edges within `tolerancePx`. */
export function hitTest(events: EventDoc[], x: number, scale: Scale,
                        tolerancePx = 5): EdgeHit {
  for (const ev of events) {
    if (Math.abs(scale.toX(ev.t_s) - x) <= tolerancePx) return { kind: "start", event: ev };
    if (Math.abs(scale.toX(ev.t_e) - x) <= tolerancePx) return { kind: "end", event: ev };
  }
  for (const ev of events) {
    if (x >= scale.toX(ev.t_s) && x <= scale.toX(ev.t_e)) return { kind: "body", event: ev };
  }
  return null;
}

/** Normalized drag selection in time units (always t_s < t_e, or null). */
export function dragToRange(xA: number, xB: number, scale: Scale): ViewRange | null {
  const a = Math.round(scale.toT(Math.min(xA, xB)));
  const b = Math.round(scale.toT(Math.max(xA, xB)));
  return b > a ? { t0: a, t1: b } : null;
}

interface Ctx2d {
  clearRect(x: number, y: number, w: number, h: number): void;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  stroke(): void;
  fillRect(x: number, y: number, w: number, h: number): void;
  strokeRect(x: number, y: number, w: number, h: number): void;
  strokeStyle: string | CanvasGradient | CanvasPattern;
  fillStyle: string | CanvasGradient | CanvasPattern;
  lineWidth: number;
  setLineDash(segments: number[]): void;
}

export function renderChart(ctx: Ctx2d, width: number, height: number,
                            data: SignalData, events: EventDoc[],
                            range: ViewRange, selectedId: string | null): void {
  ctx.clearRect(0, 0, width, height);
  const scale = makeScale(range, width);
  const [lo, hi] = valueExtent(data);
  const toY = (v: number) => height - ((v - lo) / (hi - lo)) * (height - 20) - 10;

  const maxSeverity = events.reduce((m, e) => Math.max(m, e.severity), 0);
  for (const ev of events) {
    const x0 = scale.toX(ev.t_s);
    const x1 = scale.toX(ev.t_e);
    ctx.fillStyle = severityColor(ev.severity, maxSeverity);
    ctx.fillRect(x0, 0, Math.max(x1 - x0, 1), height);
    if (ev.source === "manual") {
      ctx.strokeStyle = "#8e44ad";
      ctx.lineWidth = 1.5;
      ctx.setLineDash([4, 3]);
      ctx.strokeRect(x0, 1, Math.max(x1 - x0, 1), height - 2);
      ctx.setLineDash([]);
    }
    if (ev.id === selectedId) {
      ctx.strokeStyle = "#2c3e50";
      ctx.lineWidth = 2;
      ctx.strokeRect(x0, 0, Math.max(x1 - x0, 1), height);
    }
  }

  ctx.strokeStyle = "#2471a3";
  ctx.lineWidth = 1;
  ctx.beginPath();
  let started = false;
  for (let i = 0; i < data.timestamps.length; i++) {
    const v = data.values[i][0];
    if (v === null || v === undefined || Number.isNaN(v)) {
      started = false; // gap for missing values
      continue;
    }
    const x = scale.toX(data.timestamps[i]);
    const y = toY(v);
    if (started) ctx.lineTo(x, y);
    else ctx.moveTo(x, y);
    started = true;
  }
  ctx.stroke();
}
