"""Pipeline stages and their on-disk artifacts.

Every stage reads and writes files under the configured output directory,
so stages are idempotent and the CLI, the HTTP API and the tests all drive
one implementation.  Artifact names are fixed:

    cine.mvol.json            input cine sequence (phantom stage writes it)
    de_<k>.mvol.json          DE exams
    seeds.json                operator seeds per slice
    truth.json                phantom ground truth (when generated)
    expert_scores.json        visual scores (phantom truth doubles as expert)
    avg_cine.mvol.json        temporal mean over the DE acquisition window
    de_aligned_<k>.mvol.json  scan-aligned DE exams
    transform_<k>.json        refined rigid transform per exam
    de_registered_<k>.mvol.json
    contours.json             endo/epi polygons (averaged + end-diastolic)
    sectors_avg.mvol.json     packed sector labels (+ sectors_legend.json)
    sectors_ed.mvol.json      cavity sectors from the end-diastolic endo
    maps_<name>.mvol.json     PAMM parameter maps (ab, av, ton, toff, sse)
    segmental.json            per-slice segmental amplitude/time/ATR
    scores_exam_<k>.json, scores_auto.json, mie_report.json
    report.json, summary.txt
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from cmrfusion import mie, pamm, stats

from cmrfusion.phantom import (
    PhantomSpec,
    ScarSpec,
    SegmentMotion,
    default_seeds,
    make_cine,
    make_de,
)
from cmrfusion.registration import RigidTransform, RoiBox, apply_transform, register
from cmrfusion.sectors import SectorMap, pack_labels, save_legend, sectorize, unpack_labels
from cmrfusion.segmentation import (
    SliceSeeds,
    SnakeParams,
    seed_roi,
    segment_endo,
    segment_epi,
)
from cmrfusion.sync import average_cine_window, scan_align
from cmrfusion.volume import Volume, load_cine, load_volume, make_volume, save_cine, save_volume

STAGES = ("phantom", "sync", "register", "segment", "sectorize", "mie", "pamm", "report")


class MissingArtifactError(Exception):
    """An upstream stage output is absent; the message names the file."""


class StageError(Exception):
    pass


@dataclass
class PipelineConfig:
    out_dir: str = "out"
    cine_path: str | None = None          # defaults to <out>/cine.mvol.json
    de_paths: list = field(default_factory=list)
    seeds_path: str | None = None
    expert_scores_path: str | None = None
    window_start_ms: float = 300.0
    window_len_ms: float = 130.0
    roi_factor: float = 2.4
    bins: int = 100
    layer_threshold: float = 0.5
    excluded_slices: list = field(default_factory=list)
    snake: dict = field(default_factory=dict)
    phantom: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 2.0 <= self.roi_factor <= 2.8:
            raise ValueError("roi_factor must stay in [2, 2.8]")

    @classmethod
    def from_json(cls, path) -> "PipelineConfig":
        with open(path) as fh:
            return cls(**json.load(fh))

    def to_json(self) -> dict:
        return {
            "out_dir": self.out_dir,
            "cine_path": self.cine_path,
            "de_paths": list(self.de_paths),
            "seeds_path": self.seeds_path,
            "expert_scores_path": self.expert_scores_path,
            "window_start_ms": self.window_start_ms,
            "window_len_ms": self.window_len_ms,
            "roi_factor": self.roi_factor,
            "bins": self.bins,
            "layer_threshold": self.layer_threshold,
            "excluded_slices": list(self.excluded_slices),
            "snake": dict(self.snake),
            "phantom": dict(self.phantom),
        }

    # artifact paths -------------------------------------------------------

    def out(self) -> Path:
        return Path(self.out_dir)

    def path_cine(self) -> Path:
        return Path(self.cine_path) if self.cine_path else self.out() / "cine.mvol.json"

    def path_de(self, k: int) -> Path:
        if self.de_paths:
            return Path(self.de_paths[k])
        return self.out() / f"de_{k}.mvol.json"

    def n_exams(self) -> int:
        if self.de_paths:
            return len(self.de_paths)
        k = 0
        while (self.out() / f"de_{k}.mvol.json").exists():
            k += 1
        return k

    def path_seeds(self) -> Path:
        return Path(self.seeds_path) if self.seeds_path else self.out() / "seeds.json"

    def path_expert(self) -> Path:
        if self.expert_scores_path:
            return Path(self.expert_scores_path)
        return self.out() / "expert_scores.json"

    def snake_params(self) -> SnakeParams:
        return SnakeParams(**self.snake)


def _require(path: Path, producer: str) -> Path:
    if not Path(path).exists():
        raise MissingArtifactError(
            f"missing {path}; run the '{producer}' stage first")
    return Path(path)


def _write_json(path: Path, payload) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)


def _read_json(path: Path):
    with open(path) as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# seeds


def load_seeds(cfg: PipelineConfig) -> dict:
    path = _require(cfg.path_seeds(), "phantom (or provide seeds.json)")
    return _read_json(path)


def slice_seeds(seeds: dict, k: int, overrides: dict | None = None) -> SliceSeeds:
    entry = None
    for row in seeds.get("slices", []):
        if int(row.get("slice", -1)) == k:
            entry = dict(row)
            break
    if entry is None:
        raise MissingArtifactError(f"no seeds for slice {k} in seeds.json")
    if overrides:
        entry.update({k2: v for k2, v in overrides.items() if v is not None})
    return SliceSeeds(
        p0=tuple(entry["p0"]),
        p1=tuple(entry["p1"]),
        lambda_override=entry.get("lambda"),
        mask_inner_px=float(entry.get("mask_inner_px", 2.5)),
        mask_outer_mm=float(entry.get("mask_outer_mm", 10.0)),
        convex_hull=bool(entry.get("convex_hull", False)),
    )


# ---------------------------------------------------------------------------
# stage: phantom


def _phantom_spec(cfg: PipelineConfig) -> PhantomSpec:
    d = dict(cfg.phantom)
    if "motions" in d:
        d["motions"] = tuple(SegmentMotion(**m) for m in d["motions"])
    if d.get("scar") is not None:
        d["scar"] = ScarSpec(**d["scar"])
    if d.get("misalignment") is not None:
        d["misalignment"] = RigidTransform(**d["misalignment"])
    if "marker_disks" in d:
        d["marker_disks"] = tuple(tuple(m) for m in d["marker_disks"])
    return PhantomSpec(**d)


def stage_phantom(cfg: PipelineConfig) -> dict:
    spec = _phantom_spec(cfg)
    out = cfg.out()
    out.mkdir(parents=True, exist_ok=True)
    cine, cine_truth = make_cine(spec)
    de, de_truth = make_de(spec)
    save_cine(cine, out / "cine")
    for k, exam in enumerate(de.exams):
        save_volume(exam, out / f"de_{k}")
    _write_json(out / "seeds.json", default_seeds(spec))
    expert = mie.ScoreGrid(slices=de_truth.scores)
    expert.save(out / "expert_scores.json")
    truth = {
        "registration": de_truth.registration.to_json(),
        "scores": [list(r) for r in de_truth.scores],
        "segment_tiers": list(cine_truth.segment_tiers),
        "segment_amplitude_mm": list(cine_truth.segment_amplitude_mm),
        "segment_window_frames": [list(f) if f else None
                                  for f in cine_truth.segment_window_frames],
        "center_px": list(spec.center_px),
        "reference_angle_deg": spec.reference_angle_deg,
        "endo_radius_mm": [spec.endo_radius(k) for k in range(spec.nz)],
        "epi_radius_mm": [spec.epi_radius(k) for k in range(spec.nz)],
    }
    _write_json(out / "truth.json", truth)
    return {"cine": str(out / "cine.mvol.json"), "n_exams": len(de.exams)}


# ---------------------------------------------------------------------------
# stage: sync (temporal average + scan alignment)


def stage_sync(cfg: PipelineConfig) -> dict:
    out = cfg.out()
    cine = load_cine(_require(cfg.path_cine(), "phantom"))
    res = average_cine_window(cine, cfg.window_start_ms, cfg.window_len_ms)
    save_volume(res.averaged_cine, out / "avg_cine")
    n = cfg.n_exams()
    if n == 0:
        raise MissingArtifactError(f"missing {out / 'de_0.mvol.json'}; run the 'phantom' stage first")
    for k in range(n):
        de = load_volume(_require(cfg.path_de(k), "phantom"))
        aligned, _mask = scan_align(de, res.averaged_cine)
        save_volume(aligned, out / f"de_aligned_{k}")
    _write_json(out / "sync.json", {
        "selected_phase_indices": list(res.selected_phase_indices),
        "window_start_ms": res.window_start_ms,
        "window_len_ms": res.window_len_ms,
        "n_exams": n,
    })
    return {"selected": list(res.selected_phase_indices), "n_exams": n}


# ---------------------------------------------------------------------------
# stage: register


def registration_roi_box(cfg: PipelineConfig, avg: Volume, seeds: dict) -> RoiBox:
    """Segmentation ROI of the median slice enlarged by the configured
    factor (the enlargement pulls in the right ventricle by construction)."""
    mid = avg.nz // 2
    s = slice_seeds(seeds, mid)
    side = 3.0 * math.hypot(s.p1[0] - s.p0[0], s.p1[1] - s.p0[1])
    half = side / 2.0
    seg_box = RoiBox(
        x0=max(0, int(s.p0[0] - half)), y0=max(0, int(s.p0[1] - half)),
        x1=min(avg.nx, int(s.p0[0] + half) + 1),
        y1=min(avg.ny, int(s.p0[1] + half) + 1),
        z0=0, z1=avg.nz)
    return seg_box.enlarged(cfg.roi_factor, avg.dims)


def stage_register(cfg: PipelineConfig) -> dict:
    out = cfg.out()
    avg = load_volume(_require(out / "avg_cine.mvol.json", "sync"))
    seeds = load_seeds(cfg)
    roi = registration_roi_box(cfg, avg, seeds)
    results = []
    k = 0
    while (out / f"de_aligned_{k}.mvol.json").exists():
        de = load_volume(out / f"de_aligned_{k}.mvol.json")
        t = register(de, avg, roi, bins=cfg.bins)
        t.save(out / f"transform_{k}.json")
        registered, _mask = apply_transform(de, t, center=roi.center)
        save_volume(registered, out / f"de_registered_{k}")
        results.append(t.to_json())
        k += 1
    if k == 0:
        raise MissingArtifactError(
            f"missing {out / 'de_aligned_0.mvol.json'}; run the 'sync' stage first")
    return {"transforms": results}


# ---------------------------------------------------------------------------
# stage: segment


def segment_slice(cfg: PipelineConfig, k: int, overrides: dict | None = None) -> dict:
    """Shared per-slice segmentation used by the batch stage and the HTTP
    API: averaged-image endo + epi, end-diastolic endo."""
    out = cfg.out()
    avg = load_volume(_require(out / "avg_cine.mvol.json", "sync"))
    cine = load_cine(_require(cfg.path_cine(), "phantom"))
    seeds = load_seeds(cfg)
    s = slice_seeds(seeds, k, overrides)
    params = cfg.snake_params()
    pixel_mm = avg.spacing[0]
    endo_avg = segment_endo(avg.slice(k), s, params)
    epi_avg = segment_epi(avg.slice(k), endo_avg, s, params, pixel_mm=pixel_mm)
    endo_ed = segment_endo(cine.phases[0].slice(k), s, params)
    x0, y0, x1, y1 = seed_roi(avg.slice(k).shape, s)
    roi_area = (x1 - x0) * (y1 - y0)
    return {
        "slice": k,
        "lambda": endo_avg.lambda_used,
        "lambda_bounds": [max(1.0, 0.05 * roi_area), 0.80 * roi_area],
        "endo_avg": [[float(x), float(y)] for x, y in endo_avg.points],
        "epi_avg": [[float(x), float(y)] for x, y in epi_avg.points],
        "endo_ed": [[float(x), float(y)] for x, y in endo_ed.points],
        "repaired": bool(endo_avg.repaired or epi_avg.repaired),
    }


def stage_segment(cfg: PipelineConfig) -> dict:
    out = cfg.out()
    avg = load_volume(_require(out / "avg_cine.mvol.json", "sync"))
    slices = [segment_slice(cfg, k) for k in range(avg.nz)]
    _write_json(out / "contours.json", {"slices": slices})
    return {"n_slices": len(slices)}


# ---------------------------------------------------------------------------
# stage: sectorize


def _contours(cfg: PipelineConfig) -> dict:
    return _read_json(_require(cfg.out() / "contours.json", "segment"))


def stage_sectorize(cfg: PipelineConfig) -> dict:
    out = cfg.out()
    avg = load_volume(_require(out / "avg_cine.mvol.json", "sync"))
    contours = _contours(cfg)
    seeds = load_seeds(cfg)
    shape = (avg.ny, avg.nx)
    maps_avg, maps_ed = [], []
    for row in contours["slices"]:
        k = row["slice"]
        s = slice_seeds(seeds, k)
        smap = sectorize(np.asarray(row["endo_avg"]), np.asarray(row["epi_avg"]),
                         s.p1, shape)
        smap_ed = sectorize(np.asarray(row["endo_ed"]), None, s.p1, shape)
        maps_avg.append(smap)
        maps_ed.append(smap_ed)
    packed_avg = np.stack([pack_labels(m) for m in maps_avg])
    packed_ed = np.stack([pack_labels(m) for m in maps_ed])
    save_volume(make_volume(packed_avg, spacing=avg.spacing, origin=avg.origin,
                            orientation=avg.orientation), out / "sectors_avg")
    save_volume(make_volume(packed_ed, spacing=avg.spacing, origin=avg.origin,
                            orientation=avg.orientation), out / "sectors_ed")
    _write_json(out / "sectors_legend.json",
                {"avg": _legend_payload(maps_avg), "ed": _legend_payload(maps_ed)})
    return {"n_slices": len(maps_avg)}


def _legend_payload(maps: list[SectorMap]) -> dict:
    from cmrfusion.sectors import legend
    return legend(maps)


def load_sector_maps(cfg: PipelineConfig, which: str) -> list[SectorMap]:
    out = cfg.out()
    vol = load_volume(_require(out / f"sectors_{which}.mvol.json", "sectorize"))
    legend_d = _read_json(_require(out / "sectors_legend.json", "sectorize"))
    cents = legend_d[which]["centroids_px"]
    return [unpack_labels(vol.slice(k), cents[k]) for k in range(vol.nz)]


# ---------------------------------------------------------------------------
# stage: mie


def stage_mie(cfg: PipelineConfig) -> dict:
    out = cfg.out()
    maps_avg = load_sector_maps(cfg, "avg")
    grids = []
    k = 0
    while (out / f"de_registered_{k}.mvol.json").exists():
        de = load_volume(out / f"de_registered_{k}.mvol.json")
        myo = np.stack([m.myocardium_mask() for m in maps_avg])
        enhanced = mie.classify_enhanced(de, myo)
        rows = []
        for j, smap in enumerate(maps_avg):
            rows.append(tuple(mie.score_slice(enhanced[j], smap,
                                              cfg.layer_threshold)))
        grid = mie.ScoreGrid(slices=tuple(rows))
        grid.save(out / f"scores_exam_{k}.json")
        grids.append(grid)
        k += 1
    if k == 0:
        raise MissingArtifactError(
            f"missing {out / 'de_registered_0.mvol.json'}; run the 'register' stage first")
    combined = mie.combine_exams(grids)
    combined.save(out / "scores_auto.json")
    _write_json(out / "mie_report.json", mie.mie_report(combined))
    return {"n_exams": k}


# ---------------------------------------------------------------------------
# stage: pamm


def stage_pamm(cfg: PipelineConfig) -> dict:
    out = cfg.out()
    cine = load_cine(_require(cfg.path_cine(), "phantom"))
    maps_ed = load_sector_maps(cfg, "ed")
    per_slice_entries = []
    planes = {name: [] for name in ("ab", "av", "ton", "toff", "sse")}
    for k, smap in enumerate(maps_ed):
        maps = pamm.compute_maps(cine, smap.cavity_mask(), k)
        entries = pamm.segmental_function(maps, smap)
        per_slice_entries.append(entries)
        planes["ab"].append(maps.a_b)
        planes["av"].append(maps.a_v)
        planes["ton"].append(maps.t_on.astype(np.float32))
        planes["toff"].append(maps.t_off.astype(np.float32))
        planes["sse"].append(maps.sse)
    geo = cine.geometry()
    for name, stackv in planes.items():
        save_volume(make_volume(np.stack(stackv), spacing=geo.spacing,
                                origin=geo.origin, orientation=geo.orientation),
                    out / f"maps_{name}")
    pamm.save_segmental(per_slice_entries, out / "segmental.json")
    return {"n_slices": len(maps_ed)}


# ---------------------------------------------------------------------------
# stage: report


def stage_report(cfg: PipelineConfig) -> dict:
    out = cfg.out()
    auto = mie.ScoreGrid.load(_require(out / "scores_auto.json", "mie"))
    report: dict = {"stages": {}}

    expert_path = cfg.path_expert()
    if expert_path.exists():
        expert = mie.ScoreGrid.load(expert_path)
        table = stats.build_confusion(auto, expert, cfg.excluded_slices)
        report["agreement"] = {
            "confusion": table.to_json(),
            "absolute": stats.agreement(table, 0),
            "one_grade": stats.agreement(table, 1),
            "excluded_slices": list(cfg.excluded_slices),
        }

    segmental_path = _require(out / "segmental.json", "pamm")
    segmental = _read_json(segmental_path)
    report["segmental"] = segmental

    truth_path = out / "truth.json"
    if truth_path.exists():
        truth = _read_json(truth_path)
        tiers = truth.get("segment_tiers")
        if tiers:
            atr, labels = [], []
            for row in segmental["slices"]:
                for e in row["segments"]:
                    if e["atr"] is not None:
                        atr.append(e["atr"])
                        labels.append(tiers[e["segment"] - 1])
            report["anova_by_tier"] = stats.group_by_contraction(
                np.asarray(atr, dtype=float), np.asarray(labels))

    transforms = []
    k = 0
    while (out / f"transform_{k}.json").exists():
        transforms.append(_read_json(out / f"transform_{k}.json"))
        k += 1
    report["transforms"] = transforms

    _write_json(out / "report.json", report)
    lines = ["cmrfusion report", "================"]
    if "agreement" in report:
        lines.append(f"absolute agreement: {report['agreement']['absolute']:.4f}")
        lines.append(f"one-grade agreement: {report['agreement']['one_grade']:.4f}")
    for name, block in report.get("anova_by_tier", {}).items():
        if "p" in block:
            lines.append(f"ANOVA {name}: F={block['F']:.4g} p={block['p']:.4g}")
        else:
            lines.append(f"ANOVA {name}: {block['skipped']}")
    lines.append(f"transforms: {len(transforms)}")
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    return {"report": str(out / "report.json")}


# ---------------------------------------------------------------------------


_STAGE_FN = {
    "phantom": stage_phantom,
    "sync": stage_sync,
    "register": stage_register,
    "segment": stage_segment,
    "sectorize": stage_sectorize,
    "mie": stage_mie,
    "pamm": stage_pamm,
    "report": stage_report,
}


def run_stage(stage: str, cfg: PipelineConfig) -> dict:
    if stage not in _STAGE_FN:
        raise StageError(f"unknown stage {stage!r}; choose from {STAGES}")
    return _STAGE_FN[stage](cfg)


def run_all(cfg: PipelineConfig) -> dict:
    results = {}
    for stage in STAGES:
        results[stage] = run_stage(stage, cfg)
    return results
