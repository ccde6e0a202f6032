/**
 * Haemoglobin trend view: the history endpoint's screenings and lab reports
 * on one time axis, with the patient's severity threshold bands behind them.
 *
 * Points carry exactly the values the API returned (calibrated Hb for
 * screenings, the lab value for reports); rendering to an SVG string keeps
 * the chart testable without a browser.
 */

import { HistoryEntry, Severity, ThresholdRow } from "./api.js";

export interface TrendPoint {
  timestamp: string;
  hb: number;
  source: "screening" | "lab";
  severity: Severity | null;
  detail: HistoryEntry;
}

export interface TrendView {
  points: TrendPoint[];
  bands: ThresholdRow;
}

export function buildTrend(entries: HistoryEntry[], bands: ThresholdRow): TrendView {
  const points = entries.map((entry): TrendPoint => {
    if (entry.kind === "screening") {
      return {
        timestamp: entry.timestamp,
        hb: entry.calibrated_hb,
        source: "screening",
        severity: entry.severity,
        detail: entry,
      };
    }
    return {
      timestamp: entry.timestamp,
      hb: entry.hb,
      source: "lab",
      severity: null,
      detail: entry,
    };
  });
  points.sort((a, b) => a.timestamp.localeCompare(b.timestamp));
  return { points, bands };
}

const WIDTH = 640;
const HEIGHT = 320;
const PAD = 40;
const HB_MIN = 4;
const HB_MAX = 20;

function yFor(hb: number): number {
  const clamped = Math.min(Math.max(hb, HB_MIN), HB_MAX);
  const frac = (clamped - HB_MIN) / (HB_MAX - HB_MIN);
  return HEIGHT - PAD - frac * (HEIGHT - 2 * PAD);
}

function xFor(index: number, count: number): number {
  if (count <= 1) return WIDTH / 2;
  return PAD + (index / (count - 1)) * (WIDTH - 2 * PAD);
}

/** Chart as an SVG string: band rects, a connecting line, one marker per point
 *  (circles for screenings, squares for lab values). */
export function renderTrendSvg(view: TrendView): string {
  const parts: string[] = [];
  parts.push(
    `<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 ${WIDTH} ${HEIGHT}" ` +
    `width="${WIDTH}" height="${HEIGHT}" role="img" aria-label="haemoglobin trend">`,
  );

  const ySevere = yFor(view.bands.severe_below);
  const yMild = yFor(view.bands.mild_below);
  const top = PAD;
  const bottom = HEIGHT - PAD;
  parts.push(
    `<rect class="band band-severe" data-band="severe" data-below="${view.bands.severe_below}" ` +
    `x="${PAD}" y="${ySevere}" width="${WIDTH - 2 * PAD}" height="${bottom - ySevere}" />`,
    `<rect class="band band-mild" data-band="mild" data-below="${view.bands.mild_below}" ` +
    `x="${PAD}" y="${yMild}" width="${WIDTH - 2 * PAD}" height="${ySevere - yMild}" />`,
    `<rect class="band band-non" data-band="non_anaemic" ` +
    `x="${PAD}" y="${top}" width="${WIDTH - 2 * PAD}" height="${yMild - top}" />`,
  );

  if (view.points.length === 0) {
    parts.push(
      `<text class="empty-state" x="${WIDTH / 2}" y="${HEIGHT / 2}" text-anchor="middle">` +
      "No data yet. Run a first screening to start the trend.</text>",
    );
    parts.push("</svg>");
    return parts.join("\n");
  }

  const coords = view.points.map((p, i) => ({
    x: xFor(i, view.points.length),
    y: yFor(p.hb),
    point: p,
  }));
  if (coords.length > 1) {
    const path = coords.map((c) => `${c.x.toFixed(1)},${c.y.toFixed(1)}`).join(" ");
    parts.push(`<polyline class="trend-line" fill="none" points="${path}" />`);
  }
  for (const { x, y, point } of coords) {
    const label = `${point.hb} g/dL at ${point.timestamp}`;
    if (point.source === "lab") {
      parts.push(
        `<rect class="point point-lab" data-source="lab" data-hb="${point.hb}" ` +
        `data-ts="${point.timestamp}" x="${(x - 5).toFixed(1)}" y="${(y - 5).toFixed(1)}" ` +
        `width="10" height="10"><title>${label}</title></rect>`,
      );
    } else {
      parts.push(
        `<circle class="point point-screening" data-source="screening" data-hb="${point.hb}" ` +
        `data-severity="${point.severity}" data-ts="${point.timestamp}" ` +
        `cx="${x.toFixed(1)}" cy="${y.toFixed(1)}" r="5"><title>${label}</title></circle>`,
      );
    }
  }
  parts.push("</svg>");
  return parts.join("\n");
}
