/**
 * Pure session state and geometry helpers for the review UI.
 *
 * Everything here is side-effect free so it can be unit tested in node;
 * the DOM layer in ui.ts only wires these functions to events and canvas
 * drawing. The UI never computes contours or scores itself: every overlay
 * comes from the HTTP API.
 */

export type Point = [number, number];

export interface SeedEntry {
  slice: number;
  p0: Point;
  p1: Point;
  lambda?: number;
  mask_inner_px?: number;
  mask_outer_mm?: number;
  convex_hull?: boolean;
}

export interface SeedsDoc {
  slices: SeedEntry[];
}

export interface VolumeInfo {
  id: string;
  dims: [number, number, number];
  spacing_mm: [number, number, number];
  n_phases: number | null;
}

export interface ContourRow {
  slice: number;
  lambda: number | null;
  lambda_bounds?: [number, number];
  endo_avg: Point[];
  epi_avg: Point[];
  endo_ed: Point[];
  repaired: boolean;
  preview_png_base64?: string;
}

export interface ScoresDoc {
  slices: { sub_segments: number[] }[];
}

export interface UiSession {
  volumes: VolumeInfo[];
  volumeId: string;
  sliceIndex: number;
  phase: number;
  window: number | null;
  level: number | null;
  seeds: SeedsDoc;
  savedSeeds: SeedsDoc;
  dirty: boolean;
  pendingClick: "p0" | "p1";
  preview: ContourRow | null;
  lambdaBounds: [number, number] | null;
  accepted: Set<number>;
}

export function clamp(v: number, lo: number, hi: number): number {
  return Math.min(Math.max(v, lo), hi);
}

export function volumeById(session: UiSession, id: string): VolumeInfo | undefined {
  return session.volumes.find((v) => v.id === id);
}

export function sliceCount(session: UiSession): number {
  const vol = volumeById(session, session.volumeId);
  return vol ? vol.dims[2] : 1;
}

export function phaseCount(session: UiSession): number {
  const vol = volumeById(session, session.volumeId);
  return vol && vol.n_phases ? vol.n_phases : 1;
}

export function newSession(volumes: VolumeInfo[], seeds: SeedsDoc): UiSession {
  const first = volumes.length ? volumes[0].id : "";
  return {
    volumes,
    volumeId: first,
    sliceIndex: 0,
    phase: 0,
    window: null,
    level: null,
    seeds: cloneSeeds(seeds),
    savedSeeds: cloneSeeds(seeds),
    dirty: false,
    pendingClick: "p0",
    preview: null,
    lambdaBounds: null,
    accepted: new Set(),
  };
}

export function cloneSeeds(doc: SeedsDoc): SeedsDoc {
  return { slices: doc.slices.map((s) => ({ ...s, p0: [...s.p0] as Point, p1: [...s.p1] as Point })) };
}

export function selectVolume(session: UiSession, id: string): UiSession {
  const next = { ...session, volumeId: id };
  next.sliceIndex = clamp(session.sliceIndex, 0, sliceCount(next) - 1);
  next.phase = clamp(session.phase, 0, phaseCount(next) - 1);
  return next;
}

/** Navigation clamps instead of wrapping: stepping past the last slice stays. */
export function stepSlice(session: UiSession, delta: number): UiSession {
  const k = clamp(session.sliceIndex + delta, 0, sliceCount(session) - 1);
  return { ...session, sliceIndex: k, preview: null };
}

export function stepPhase(session: UiSession, delta: number): UiSession {
  const p = clamp(session.phase + delta, 0, phaseCount(session) - 1);
  return { ...session, phase: p };
}

export function sliceUrl(session: UiSession): string {
  const params: string[] = [];
  if (session.window !== null) params.push(`window=${session.window}`);
  if (session.level !== null) params.push(`level=${session.level}`);
  if (phaseCount(session) > 1) params.push(`phase=${session.phase}`);
  const base = `/api/volumes/${session.volumeId}/slices/${session.sliceIndex}`;
  return params.length ? `${base}?${params.join("&")}` : base;
}

// ---------------------------------------------------------------------------
// seeds

export function seedForSlice(doc: SeedsDoc, k: number): SeedEntry | undefined {
  return doc.slices.find((s) => s.slice === k);
}

/** First click places P0, the second P1; edits mark the session dirty. */
export function placeSeed(session: UiSession, xy: Point): UiSession {
  const seeds = cloneSeeds(session.seeds);
  let entry = seedForSlice(seeds, session.sliceIndex);
  if (!entry) {
    entry = { slice: session.sliceIndex, p0: xy, p1: [xy[0] + 1, xy[1] + 1] };
    seeds.slices.push(entry);
    seeds.slices.sort((a, b) => a.slice - b.slice);
  }
  if (session.pendingClick === "p0") {
    entry.p0 = xy;
  } else {
    entry.p1 = xy;
  }
  return {
    ...session,
    seeds,
    dirty: true,
    pendingClick: session.pendingClick === "p0" ? "p1" : "p0",
  };
}

/** Undo before save restores the last persisted seeds and clears dirty. */
export function undoSeeds(session: UiSession): UiSession {
  return {
    ...session,
    seeds: cloneSeeds(session.savedSeeds),
    dirty: false,
    pendingClick: "p0",
  };
}

export function markSaved(session: UiSession): UiSession {
  return { ...session, savedSeeds: cloneSeeds(session.seeds), dirty: false };
}

/** ROI preview square: centered on P0, side three times the seed distance. */
export function roiSide(p0: Point, p1: Point): number {
  return 3 * Math.hypot(p1[0] - p0[0], p1[1] - p0[1]);
}

export function roiRect(p0: Point, p1: Point): { x: number; y: number; side: number } {
  const side = roiSide(p0, p1);
  return { x: p0[0] - side / 2, y: p0[1] - side / 2, side };
}

// ---------------------------------------------------------------------------
// lambda slider

/** The slider is bound to the server-reported 5..80% grid bounds. */
export function clampLambda(value: number, bounds: [number, number] | null): number {
  if (!bounds) return value;
  return clamp(value, bounds[0], bounds[1]);
}

export function applyPreview(session: UiSession, row: ContourRow): UiSession {
  const bounds = row.lambda_bounds ?? session.lambdaBounds;
  return { ...session, preview: row, lambdaBounds: bounds ?? null };
}

export function acceptSlice(session: UiSession): UiSession {
  const accepted = new Set(session.accepted);
  accepted.add(session.sliceIndex);
  return { ...session, accepted };
}

// ---------------------------------------------------------------------------
// score overlay

/** 0..4 transmurality palette: healthy gray-green to transmural red. */
export const SCORE_COLORS = ["#3c6e47", "#a6c34c", "#e8c547", "#e07f2d", "#c43131"];

export function scoreColor(score: number): string {
  return SCORE_COLORS[clamp(Math.round(score), 0, 4)];
}

/**
 * Closed outline of one 20-degree sub-segment band between two radii,
 * clockwise-as-displayed from the reference ray (the same convention the
 * pipeline uses; the UI only draws what the server scored).
 */
export function sectorOutline(
  center: Point, refAngleDeg: number, sub: number,
  rInner: number, rOuter: number, stepsPerArc = 8,
): Point[] {
  const a0 = ((refAngleDeg + 20 * (sub - 1)) * Math.PI) / 180;
  const a1 = ((refAngleDeg + 20 * sub) * Math.PI) / 180;
  const pts: Point[] = [];
  for (let i = 0; i <= stepsPerArc; i++) {
    const a = a0 + ((a1 - a0) * i) / stepsPerArc;
    pts.push([center[0] + rInner * Math.cos(a), center[1] + rInner * Math.sin(a)]);
  }
  for (let i = stepsPerArc; i >= 0; i--) {
    const a = a0 + ((a1 - a0) * i) / stepsPerArc;
    pts.push([center[0] + rOuter * Math.cos(a), center[1] + rOuter * Math.sin(a)]);
  }
  return pts;
}

export function polygonCentroid(points: Point[]): Point {
  let x = 0;
  let y = 0;
  for (const p of points) {
    x += p[0];
    y += p[1];
  }
  return [x / points.length, y / points.length];
}

export function meanRadius(points: Point[], center: Point): number {
  let r = 0;
  for (const p of points) r += Math.hypot(p[0] - center[0], p[1] - center[1]);
  return r / points.length;
}
