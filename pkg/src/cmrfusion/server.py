"""HTTP JSON API for the operator-in-the-loop review workflow.

Serve mode exposes the slice browser, seed editing and interactive
segmentation preview used by the review UI.  All state lives in the same
files the batch pipeline uses, so edits made here feed the CLI stages and
the contours returned by POST /api/segment are identical to batch output.
Writes to shared files are serialized behind a process-wide lock
(last-writer-wins).
"""

from __future__ import annotations

import base64
import io
import json
import threading
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import Response
from fastapi.staticfiles import StaticFiles
from PIL import Image
from pydantic import BaseModel, Field

from cmrfusion.pipeline import (
    MissingArtifactError,
    PipelineConfig,
    load_seeds,
    segment_slice,
)
from cmrfusion.segmentation import SegmentationError
from cmrfusion.volume import CineSequence, load_cine, load_volume

_write_lock = threading.Lock()


class SeedEntry(BaseModel):
    slice: int = Field(ge=0)
    p0: tuple[float, float]
    p1: tuple[float, float]
    lambda_: float | None = Field(default=None, alias="lambda", gt=0)
    mask_inner_px: float = Field(default=2.5, gt=0)
    mask_outer_mm: float = Field(default=10.0, gt=0)
    convex_hull: bool = False

    model_config = {"populate_by_name": True}

    def to_json(self) -> dict:
        out = {
            "slice": self.slice,
            "p0": list(self.p0),
            "p1": list(self.p1),
            "mask_inner_px": self.mask_inner_px,
            "mask_outer_mm": self.mask_outer_mm,
            "convex_hull": self.convex_hull,
        }
        if self.lambda_ is not None:
            out["lambda"] = self.lambda_
        return out


class SeedsPayload(BaseModel):
    slices: list[SeedEntry]


class SegmentRequest(BaseModel):
    lambda_: float | None = Field(default=None, alias="lambda", gt=0)
    mask_inner_px: float | None = Field(default=None, gt=0)
    mask_outer_mm: float | None = Field(default=None, gt=0)
    include_preview: bool = True

    model_config = {"populate_by_name": True}


class VolumeInfo(BaseModel):
    id: str
    dims: tuple[int, int, int]
    spacing_mm: tuple[float, float, float]
    n_phases: int | None = None


def _to_png(plane: np.ndarray, window: float | None, level: float | None) -> bytes:
    lo = float(plane.min())
    hi = float(plane.max())
    if level is None:
        level = (lo + hi) / 2.0
    if window is None or window <= 0:
        window = max(hi - lo, 1e-6)
    a = (np.asarray(plane, dtype=float) - (level - window / 2.0)) / window
    img = (np.clip(a, 0.0, 1.0) * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(img, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def create_app(cfg: PipelineConfig) -> FastAPI:
    app = FastAPI(title="cmrfusion review API")
    out = Path(cfg.out_dir)

    def volume_entries() -> dict:
        entries = {}
        cine_path = cfg.path_cine()
        if cine_path.exists():
            entries["cine"] = ("cine", cine_path)
        if (out / "avg_cine.mvol.json").exists():
            entries["avg"] = ("volume", out / "avg_cine.mvol.json")
        k = 0
        while (out / f"de_{k}.mvol.json").exists():
            entries[f"de_{k}"] = ("volume", out / f"de_{k}.mvol.json")
            k += 1
        k = 0
        while (out / f"de_registered_{k}.mvol.json").exists():
            entries[f"de_registered_{k}"] = ("volume", out / f"de_registered_{k}.mvol.json")
            k += 1
        return entries

    def load_entry(vol_id: str):
        entries = volume_entries()
        if vol_id not in entries:
            raise HTTPException(status_code=404, detail=f"unknown volume {vol_id!r}")
        kind, path = entries[vol_id]
        if kind == "cine":
            return load_cine(path)
        return load_volume(path)

    @app.get("/api/volumes")
    def list_volumes() -> list[VolumeInfo]:
        infos = []
        for vol_id in sorted(volume_entries()):
            obj = load_entry(vol_id)
            if isinstance(obj, CineSequence):
                geo = obj.geometry()
                infos.append(VolumeInfo(id=vol_id, dims=geo.dims,
                                        spacing_mm=geo.spacing, n_phases=obj.n_phases))
            else:
                infos.append(VolumeInfo(id=vol_id, dims=obj.dims,
                                        spacing_mm=obj.spacing))
        return infos

    @app.get("/api/volumes/{vol_id}/slices/{k}")
    def get_slice(vol_id: str, k: int, window: float | None = None,
                  level: float | None = None, phase: int = 0):
        obj = load_entry(vol_id)
        if isinstance(obj, CineSequence):
            if not 0 <= phase < obj.n_phases:
                raise HTTPException(status_code=404, detail=f"phase {phase} out of range")
            vol = obj.phases[phase]
        else:
            vol = obj
        if not 0 <= k < vol.nz:
            raise HTTPException(status_code=404, detail=f"slice {k} out of range")
        return Response(content=_to_png(vol.slice(k), window, level),
                        media_type="image/png")

    @app.get("/api/seeds")
    def get_seeds() -> dict:
        try:
            return load_seeds(cfg)
        except MissingArtifactError as exc:
            raise HTTPException(status_code=404, detail=str(exc))

    @app.put("/api/seeds")
    def put_seeds(payload: SeedsPayload) -> dict:
        data = {"slices": [entry.to_json() for entry in payload.slices]}
        with _write_lock:
            out.mkdir(parents=True, exist_ok=True)
            with open(cfg.path_seeds(), "w") as fh:
                json.dump(data, fh, indent=2, sort_keys=True)
        return data

    @app.post("/api/segment/{k}")
    def post_segment(k: int, req: SegmentRequest) -> dict:
        overrides = {
            "lambda": req.lambda_,
            "mask_inner_px": req.mask_inner_px,
            "mask_outer_mm": req.mask_outer_mm,
        }
        try:
            result = segment_slice(cfg, k, overrides)
        except MissingArtifactError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except SegmentationError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        except (IndexError, KeyError) as exc:
            raise HTTPException(status_code=404, detail=f"slice {k}: {exc}")
        if req.include_preview:
            # the operator judges lambda by the filtered image's appearance
            from cmrfusion.pipeline import load_seeds as _load_seeds
            from cmrfusion.pipeline import slice_seeds as _slice_seeds
            from cmrfusion.segmentation import area_open_close, seed_roi

            avg = load_volume(out / "avg_cine.mvol.json")
            s = _slice_seeds(_load_seeds(cfg), k, overrides)
            x0, y0, x1, y1 = seed_roi(avg.slice(k).shape, s)
            preview = np.array(avg.slice(k), dtype=float)
            preview[y0:y1, x0:x1] = area_open_close(preview[y0:y1, x0:x1],
                                                    result["lambda"])
            result["preview_png_base64"] = base64.b64encode(
                _to_png(preview, None, None)).decode("ascii")
        # persist into contours.json so UI edits feed the batch pipeline
        with _write_lock:
            contours_path = out / "contours.json"
            doc = {"slices": []}
            if contours_path.exists():
                with open(contours_path) as fh:
                    doc = json.load(fh)
            doc["slices"] = [row for row in doc["slices"] if row["slice"] != k]
            doc["slices"].append({key: result[key] for key in
                                  ("slice", "lambda", "endo_avg", "epi_avg",
                                   "endo_ed", "repaired")})
            doc["slices"].sort(key=lambda row: row["slice"])
            with open(contours_path, "w") as fh:
                json.dump(doc, fh, indent=2, sort_keys=True)
        return result

    @app.get("/api/contours")
    def get_contours() -> dict:
        path = out / "contours.json"
        if not path.exists():
            raise HTTPException(status_code=404, detail=f"missing {path}")
        with open(path) as fh:
            return json.load(fh)

    @app.get("/api/scores")
    def get_scores() -> dict:
        path = out / "scores_auto.json"
        if not path.exists():
            raise HTTPException(status_code=404, detail=f"missing {path}")
        with open(path) as fh:
            return json.load(fh)

    @app.get("/api/config")
    def get_config() -> dict:
        return cfg.to_json()

    static_dir = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    if static_dir.exists():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app
