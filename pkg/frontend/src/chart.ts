/** Hand-rolled SVG charts.
 *
 * Pure string builders so they are unit-testable without a DOM. The only
 * client-side math applied to server data is the cumulative-percentage
 * transform; everything else is plotted as received.
 */

export interface SeriesPoint {
  second: number;
  value: number;
}

export interface GroupCounts {
  second: number;
  success: number;
  error: number;
}

export interface ChartOptions {
  title: string;
  unit?: string;
  width?: number;
  height?: number;
  injection?: { start: number; end: number } | null;
  stop?: { second: number; reason: string } | null;
  gaps?: number[];
}

export const BASELINE_COLOR = "#1c7ed6";
export const CANARY_COLOR = "#e8590c";

/** Share of all events so far that were errors, per second, 0-100. */
export function cumulativeErrorPct(counts: GroupCounts[]): SeriesPoint[] {
  const sorted = [...counts].sort((a, b) => a.second - b.second);
  const out: SeriesPoint[] = [];
  let errors = 0;
  let total = 0;
  for (const c of sorted) {
    errors += c.error;
    total += c.success + c.error;
    out.push({ second: c.second, value: total === 0 ? 0 : (100 * errors) / total });
  }
  return out;
}

function esc(text: string): string {
  return text.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

function fmt(n: number): string {
  return Number.isInteger(n) ? String(n) : n.toFixed(1);
}

export function twoGroupChart(
  baseline: SeriesPoint[],
  canary: SeriesPoint[],
  opts: ChartOptions,
): string {
  const width = opts.width ?? 560;
  const height = opts.height ?? 180;
  const margin = { top: 26, right: 12, bottom: 20, left: 46 };
  const innerW = width - margin.left - margin.right;
  const innerH = height - margin.top - margin.bottom;

  const all = [...baseline, ...canary];
  const parts: string[] = [];
  parts.push(
    `<svg class="chart" viewBox="0 0 ${width} ${height}" role="img" ` +
    `aria-label="${esc(opts.title)}">`,
    `<text class="chart-title" x="${margin.left}" y="16">${esc(opts.title)}</text>`,
  );

  if (all.length === 0) {
    parts.push(
      `<text class="chart-empty" x="${width / 2}" y="${height / 2}" ` +
      `text-anchor="middle">no data yet</text>`,
      "</svg>",
    );
    return parts.join("");
  }

  let x0 = Math.min(...all.map((p) => p.second));
  let x1 = Math.max(...all.map((p) => p.second));
  if (opts.injection) {
    x0 = Math.min(x0, opts.injection.start);
    x1 = Math.max(x1, opts.injection.end);
  }
  if (x1 === x0) x1 = x0 + 1;
  const yMax = Math.max(1, ...all.map((p) => p.value)) * 1.05;

  const sx = (s: number) => margin.left + ((s - x0) / (x1 - x0)) * innerW;
  const sy = (v: number) => margin.top + innerH - (v / yMax) * innerH;

  if (opts.injection) {
    const ix0 = sx(Math.max(opts.injection.start, x0));
    const ix1 = sx(Math.min(opts.injection.end, x1));
    parts.push(
      `<rect class="injection-window" x="${fmt(ix0)}" y="${margin.top}" ` +
      `width="${fmt(Math.max(0, ix1 - ix0))}" height="${innerH}" ` +
      `fill="#2f9e44" fill-opacity="0.13"/>`,
    );
  }

  for (let i = 0; i <= 4; i++) {
    const v = (yMax * i) / 4;
    const y = sy(v);
    parts.push(
      `<line class="grid" x1="${margin.left}" y1="${fmt(y)}" ` +
      `x2="${margin.left + innerW}" y2="${fmt(y)}" stroke="#000" ` +
      `stroke-opacity="0.08"/>`,
      `<text class="tick" x="${margin.left - 6}" y="${fmt(y + 3)}" ` +
      `text-anchor="end">${fmt(v)}</text>`,
    );
  }
  parts.push(
    `<text class="tick" x="${margin.left}" y="${height - 4}">${fmt(x0)}s</text>`,
    `<text class="tick" x="${margin.left + innerW}" y="${height - 4}" ` +
    `text-anchor="end">${fmt(x1)}s</text>`,
  );

  const line = (points: SeriesPoint[], cls: string, color: string) => {
    if (points.length === 0) return "";
    const path = [...points]
      .sort((a, b) => a.second - b.second)
      .map((p) => `${fmt(sx(p.second))},${fmt(sy(p.value))}`)
      .join(" ");
    return `<polyline class="${cls}" fill="none" stroke="${color}" ` +
      `stroke-width="1.5" points="${path}"/>`;
  };
  parts.push(line(baseline, "line-baseline", BASELINE_COLOR));
  parts.push(line(canary, "line-canary", CANARY_COLOR));

  for (const gap of opts.gaps ?? []) {
    if (gap < x0 || gap > x1) continue;
    const x = sx(gap);
    parts.push(
      `<line class="gap-marker" x1="${fmt(x)}" y1="${margin.top}" ` +
      `x2="${fmt(x)}" y2="${margin.top + innerH}" stroke="#868e96" ` +
      `stroke-dasharray="3 3"/>`,
    );
  }

  if (opts.stop && opts.stop.second >= x0 && opts.stop.second <= x1) {
    const x = sx(opts.stop.second);
    parts.push(
      `<line class="stop-marker" x1="${fmt(x)}" y1="${margin.top}" ` +
      `x2="${fmt(x)}" y2="${margin.top + innerH}" stroke="#e03131" ` +
      `stroke-width="1.5"/>`,
      `<text class="stop-label" x="${fmt(Math.min(x + 4, width - 90))}" ` +
      `y="${margin.top + 12}" fill="#e03131">${esc(opts.stop.reason)}</text>`,
    );
  }

  const legendX = width - margin.right - 150;
  parts.push(
    `<rect x="${legendX}" y="8" width="10" height="3" fill="${BASELINE_COLOR}"/>`,
    `<text class="tick" x="${legendX + 14}" y="13">baseline</text>`,
    `<rect x="${legendX + 78}" y="8" width="10" height="3" fill="${CANARY_COLOR}"/>`,
    `<text class="tick" x="${legendX + 92}" y="13">canary</text>`,
    "</svg>",
  );
  return parts.join("");
}
