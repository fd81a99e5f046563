/** Aggregation preset handling.
 *
 * Presets map to the server's `agg` query parameter (seconds per bucket,
 * 0 = raw). The server refuses responses above its point cap, so the chosen
 * interval is widened until the expected point count fits.
 */

export const POINT_CAP = 50_000;

export type AggPreset = "raw" | "1m" | "1h";

export const PRESETS: Record<AggPreset, number> = {
  raw: 0,
  "1m": 60,
  "1h": 3600,
};

/** Expected number of points a request would return. */
export function expectedPoints(spanSeconds: number, agg: number, sampleInterval: number): number {
  if (spanSeconds <= 0) return 0;
  const effective = agg > 0 ? Math.max(agg, sampleInterval) : sampleInterval;
  return Math.floor(spanSeconds / effective) + 1;
}

/**
 * Resolve a preset to the `agg` value actually sent.
 *
 * Starts at the preset's interval and doubles (from the sample interval when
 * the preset is raw) until the expected point count is within the cap. The
 * result is 0 only when raw data already fits.
 */
export function resolveAgg(
  preset: AggPreset,
  spanSeconds: number,
  sampleInterval: number,
  cap: number = POINT_CAP,
): number {
  let agg = PRESETS[preset];
  if (expectedPoints(spanSeconds, agg, sampleInterval) <= cap) {
    return agg;
  }
  let widened = agg > 0 ? agg : sampleInterval;
  while (expectedPoints(spanSeconds, widened, sampleInterval) > cap) {
    widened *= 2;
  }
  return widened;
}

/** Human label for what actually got requested ("raw", "1m", "2m", "1h", ...). */
export function aggLabel(agg: number): string {
  if (agg === 0) return "raw";
  if (agg % 3600 === 0) return `${agg / 3600}h`;
  if (agg % 60 === 0) return `${agg / 60}m`;
  return `${agg}s`;
}
