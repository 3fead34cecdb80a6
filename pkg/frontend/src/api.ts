/** Thin typed wrappers over the review HTTP API. */

import type { ContourRow, ScoresDoc, SeedsDoc, VolumeInfo } from "./state.js";

async function getJson<T>(url: string): Promise<T> {
  const res = await fetch(url);
  if (!res.ok) throw new Error(`${url}: ${res.status} ${await res.text()}`);
  return (await res.json()) as T;
}

export function getVolumes(): Promise<VolumeInfo[]> {
  return getJson<VolumeInfo[]>("/api/volumes");
}

export function getSeeds(): Promise<SeedsDoc> {
  return getJson<SeedsDoc>("/api/seeds");
}

export async function putSeeds(doc: SeedsDoc): Promise<SeedsDoc> {
  const res = await fetch("/api/seeds", {
    method: "PUT",
    headers: { "content-type": "application/json" },
    body: JSON.stringify(doc),
  });
  if (!res.ok) throw new Error(`save seeds failed: ${res.status} ${await res.text()}`);
  return (await res.json()) as SeedsDoc;
}

export interface SegmentOverrides {
  lambda?: number;
  mask_inner_px?: number;
  mask_outer_mm?: number;
}

export async function postSegment(k: number, overrides: SegmentOverrides,
                                  includePreview = true): Promise<ContourRow> {
  const res = await fetch(`/api/segment/${k}`, {
    method: "POST",
    headers: { "content-type": "application/json" },
    body: JSON.stringify({ ...overrides, include_preview: includePreview }),
  });
  if (!res.ok) throw new Error(`segment slice ${k} failed: ${res.status} ${await res.text()}`);
  return (await res.json()) as ContourRow;
}

export function getContours(): Promise<{ slices: ContourRow[] }> {
  return getJson<{ slices: ContourRow[] }>("/api/contours");
}

export function getScores(): Promise<ScoresDoc> {
  return getJson<ScoresDoc>("/api/scores");
}
