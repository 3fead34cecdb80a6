/** DOM wiring: slice browser, seed editor, contour review and score overlay. */

import * as api from "./api.js";
import {
  ContourRow,
  Point,
  ScoresDoc,
  UiSession,
  acceptSlice,
  applyPreview,
  clampLambda,
  markSaved,
  meanRadius,
  newSession,
  placeSeed,
  polygonCentroid,
  roiRect,
  scoreColor,
  sectorOutline,
  seedForSlice,
  selectVolume,
  sliceCount,
  sliceUrl,
  stepPhase,
  stepSlice,
  undoSeeds,
} from "./state.js";

let session: UiSession;
let scores: ScoresDoc | null = null;
let overlayScores = false;
let image = new Image();

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function banner(message: string | null): void {
  const box = el<HTMLDivElement>("error-banner");
  if (message) {
    box.textContent = message;
    box.style.display = "block";
  } else {
    box.style.display = "none";
  }
}

async function guard<T>(work: () => Promise<T>): Promise<T | undefined> {
  try {
    const out = await work();
    banner(null);
    return out;
  } catch (err) {
    banner(String(err));
    return undefined;
  }
}

function canvas(): HTMLCanvasElement {
  return el<HTMLCanvasElement>("view");
}

function drawPolygon(ctx: CanvasRenderingContext2D, pts: Point[], stroke: string,
                     fill: string | null = null): void {
  if (!pts.length) return;
  ctx.beginPath();
  ctx.moveTo(pts[0][0], pts[0][1]);
  for (const p of pts.slice(1)) ctx.lineTo(p[0], p[1]);
  ctx.closePath();
  if (fill) {
    ctx.fillStyle = fill;
    ctx.fill();
  }
  ctx.strokeStyle = stroke;
  ctx.lineWidth = 1.2;
  ctx.stroke();
}

function drawMarker(ctx: CanvasRenderingContext2D, p: Point, color: string, label: string): void {
  ctx.strokeStyle = color;
  ctx.lineWidth = 1.5;
  ctx.beginPath();
  ctx.moveTo(p[0] - 4, p[1]);
  ctx.lineTo(p[0] + 4, p[1]);
  ctx.moveTo(p[0], p[1] - 4);
  ctx.lineTo(p[0], p[1] + 4);
  ctx.stroke();
  ctx.fillStyle = color;
  ctx.font = "10px sans-serif";
  ctx.fillText(label, p[0] + 5, p[1] - 5);
}

function redraw(): void {
  const ctx = canvas().getContext("2d");
  if (!ctx) return;
  ctx.clearRect(0, 0, canvas().width, canvas().height);
  ctx.drawImage(image, 0, 0);

  const seed = seedForSlice(session.seeds, session.sliceIndex);
  if (seed) {
    drawMarker(ctx, seed.p0, "#4ec9f5", "P0");
    drawMarker(ctx, seed.p1, "#f5d34e", "P1");
    const roi = roiRect(seed.p0, seed.p1);
    ctx.strokeStyle = "rgba(78, 201, 245, 0.6)";
    ctx.setLineDash([4, 3]);
    ctx.strokeRect(roi.x, roi.y, roi.side, roi.side);
    ctx.setLineDash([]);
  }

  const preview = session.preview;
  if (preview && preview.slice === session.sliceIndex) {
    drawPolygon(ctx, preview.endo_avg, "#49e06a");
    drawPolygon(ctx, preview.epi_avg, "#e0a549");
    if (overlayScores && scores && scores.slices[session.sliceIndex]) {
      const subs = scores.slices[session.sliceIndex].sub_segments;
      const center = polygonCentroid(preview.endo_avg);
      const rIn = meanRadius(preview.endo_avg, center);
      const rOut = meanRadius(preview.epi_avg, center);
      const seed = seedForSlice(session.seeds, session.sliceIndex);
      const ref = seed
        ? (Math.atan2(seed.p1[1] - center[1], seed.p1[0] - center[0]) * 180) / Math.PI
        : -90;
      for (let sub = 1; sub <= 18; sub++) {
        const outline = sectorOutline(center, ref, sub, rIn, rOut);
        const color = scoreColor(subs[sub - 1]);
        drawPolygon(ctx, outline, color, color + "55");
      }
    }
  }

  el<HTMLSpanElement>("status").textContent =
    `${session.volumeId}  slice ${session.sliceIndex + 1}/${sliceCount(session)}` +
    `  phase ${session.phase}` +
    (session.dirty ? "  [unsaved seeds]" : "") +
    (session.accepted.has(session.sliceIndex) ? "  [accepted]" : "");
}

function reloadImage(): void {
  image = new Image();
  image.onload = () => {
    canvas().width = image.width;
    canvas().height = image.height;
    redraw();
  };
  image.onerror = () => banner(`cannot load ${sliceUrl(session)}`);
  image.src = sliceUrl(session);
}

function setSession(next: UiSession, reload = true): void {
  session = next;
  if (reload) reloadImage();
  else redraw();
}

async function refreshPreview(overrides: api.SegmentOverrides = {}): Promise<void> {
  const row = await guard(() => api.postSegment(session.sliceIndex, overrides));
  if (!row) return;
  setSession(applyPreview(session, row), false);
  const slider = el<HTMLInputElement>("lambda-slider");
  if (session.lambdaBounds) {
    slider.min = String(Math.floor(session.lambdaBounds[0]));
    slider.max = String(Math.ceil(session.lambdaBounds[1]));
  }
  if (row.lambda !== null) slider.value = String(Math.round(row.lambda));
  el<HTMLSpanElement>("lambda-value").textContent =
    row.lambda === null ? "-" : String(Math.round(row.lambda));
  if (row.preview_png_base64) {
    // show the filtered image while tuning lambda
    image = new Image();
    image.onload = () => redraw();
    image.src = `data:image/png;base64,${row.preview_png_base64}`;
  }
}

function wireEvents(): void {
  el<HTMLSelectElement>("volume-select").addEventListener("change", (ev) => {
    const id = (ev.target as HTMLSelectElement).value;
    setSession(selectVolume(session, id));
  });

  document.addEventListener("keydown", (ev) => {
    if (ev.key === "ArrowUp") setSession(stepSlice(session, 1));
    else if (ev.key === "ArrowDown") setSession(stepSlice(session, -1));
    else if (ev.key === "ArrowRight") setSession(stepPhase(session, 1));
    else if (ev.key === "ArrowLeft") setSession(stepPhase(session, -1));
  });

  canvas().addEventListener("click", (ev) => {
    const rect = canvas().getBoundingClientRect();
    const x = ((ev.clientX - rect.left) / rect.width) * canvas().width;
    const y = ((ev.clientY - rect.top) / rect.height) * canvas().height;
    setSession(placeSeed(session, [x, y]), false);
  });

  el<HTMLButtonElement>("save-seeds").addEventListener("click", async () => {
    const saved = await guard(() => api.putSeeds(session.seeds));
    if (saved) setSession(markSaved(session), false);
  });

  el<HTMLButtonElement>("undo-seeds").addEventListener("click", () => {
    setSession(undoSeeds(session), false);
  });

  el<HTMLButtonElement>("run-segment").addEventListener("click", () => {
    void refreshPreview();
  });

  el<HTMLInputElement>("lambda-slider").addEventListener("change", (ev) => {
    const raw = Number((ev.target as HTMLInputElement).value);
    const lam = clampLambda(raw, session.lambdaBounds);
    void refreshPreview({ lambda: lam });
  });

  el<HTMLInputElement>("mask-inner").addEventListener("change", () => {
    void refreshPreview(maskOverrides());
  });
  el<HTMLInputElement>("mask-outer").addEventListener("change", () => {
    void refreshPreview(maskOverrides());
  });

  el<HTMLButtonElement>("accept-slice").addEventListener("click", () => {
    setSession(acceptSlice(session), false);
  });

  el<HTMLButtonElement>("show-original").addEventListener("click", () => {
    setSession({ ...session, preview: session.preview }, true);
  });

  el<HTMLInputElement>("score-overlay").addEventListener("change", async (ev) => {
    overlayScores = (ev.target as HTMLInputElement).checked;
    if (overlayScores && !scores) scores = (await guard(() => api.getScores())) ?? null;
    redraw();
  });

  for (const [id, key] of [["window-input", "window"], ["level-input", "level"]] as const) {
    el<HTMLInputElement>(id).addEventListener("change", (ev) => {
      const raw = (ev.target as HTMLInputElement).value;
      const value = raw === "" ? null : Number(raw);
      setSession({ ...session, [key]: value } as UiSession);
    });
  }
}

export async function boot(): Promise<void> {
  const volumes = await guard(() => api.getVolumes());
  const seeds = (await guard(() => api.getSeeds())) ?? { slices: [] };
  if (!volumes) return;
  session = newSession(volumes, seeds);
  const select = el<HTMLSelectElement>("volume-select");
  select.innerHTML = "";
  for (const v of volumes) {
    const opt = document.createElement("option");
    opt.value = v.id;
    opt.textContent = `${v.id} (${v.dims.join("x")})`;
    select.appendChild(opt);
  }
  wireEvents();
  reloadImage();
}

function maskOverrides(): api.SegmentOverrides {
  const inner = Number(el<HTMLInputElement>("mask-inner").value);
  const outer = Number(el<HTMLInputElement>("mask-outer").value);
  const out: api.SegmentOverrides = {};
  if (inner > 0) out.mask_inner_px = inner;
  if (outer > 0) out.mask_outer_mm = outer;
  return out;
}
