/**
 * Chart series derivation: turn the raw metrics log into plottable pieces.
 *
 * Pure functions of the polled snapshots; the chart widget just draws what
 * comes out of here.
 */

import type { MetricsRecord } from "./api.js";

export interface RatePoint {
  time: number;
  quantumIndex: number;
  rate: number;
  average: number;
  clique: string;
}

/** Contiguous stretch of violating quanta, for background shading. */
export interface ViolationSpan {
  startTime: number;
  endTime: number;
  quanta: number[];
}

/** Vertical marker for a lifecycle event (migration, restart, ...). */
export interface EventMarker {
  time: number;
  tag: string;
}

const MARKER_TAGS = new Set(["MIGRATED", "RESTARTED", "RECOVERED", "HIBERNATING", "SOURCE_LOST"]);

export function ratePoints(metrics: MetricsRecord[]): RatePoint[] {
  const points: RatePoint[] = [];
  for (const m of metrics) {
    if (m.quantumIndex === null || m.rate === null) continue;
    points.push({
      time: m.time,
      quantumIndex: m.quantumIndex,
      rate: m.rate,
      average: m.average ?? m.rate,
      clique: m.clique ?? "?",
    });
  }
  return points;
}

export function violationSpans(metrics: MetricsRecord[]): ViolationSpan[] {
  const spans: ViolationSpan[] = [];
  let open: ViolationSpan | null = null;
  for (const m of metrics) {
    if (m.quantumIndex === null) continue;
    if (m.violation) {
      if (open === null) {
        open = { startTime: m.time, endTime: m.time, quanta: [] };
        spans.push(open);
      }
      open.endTime = m.time;
      open.quanta.push(m.quantumIndex);
    } else {
      open = null;
    }
  }
  return spans;
}

export function eventMarkers(metrics: MetricsRecord[]): EventMarker[] {
  return metrics
    .filter((m) => m.eventTag !== null && MARKER_TAGS.has(m.eventTag))
    .map((m) => ({ time: m.time, tag: m.eventTag as string }));
}

/** Largest drop between consecutive quanta, for the headline readout. */
export function sharpestDrop(points: RatePoint[]): { from: RatePoint; to: RatePoint } | null {
  let best: { from: RatePoint; to: RatePoint } | null = null;
  for (let i = 1; i < points.length; i++) {
    const delta = points[i - 1].rate - points[i].rate;
    if (delta > 0 && (best === null || delta > best.from.rate - best.to.rate)) {
      best = { from: points[i - 1], to: points[i] };
    }
  }
  return best;
}
