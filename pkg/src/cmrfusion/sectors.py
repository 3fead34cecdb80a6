"""Myocardial sector subdivision: 6 equiangular segments, 18 sub-segments,
4 transmural layers per short-axis slice.

The angular origin is the ray from the endocardial centroid to the anterior
RV insertion point (P1); angles grow clockwise as displayed (y down), which
is normative here and recorded in the output legend.  Layers follow
normalized distance-transform depth between the two contours, quartile bins
half-open with the last closed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from cmrfusion.geometry import (
    clockwise_angle_deg,
    distance_to_polygon,
    points_in_polygon,
    polygon_centroid,
    polygon_signed_area,
)

SEGMENT_NAMES = ("A", "AL", "IL", "I", "IS", "AS")

REGION_OUTSIDE = 0
REGION_CAVITY = 1
REGION_MYOCARDIUM = 2


class SectorGeometryError(Exception):
    pass


@dataclass(frozen=True)
class SectorMap:
    """Per-pixel labels for one slice.

    region: 0 outside, 1 cavity, 2 myocardium.  sub_segment: 1..18 inside
    the epicardium, 0 outside.  layer: 1..4 on myocardium only, else 0.
    """

    region: np.ndarray        # uint8 (ny, nx)
    sub_segment: np.ndarray   # uint8 (ny, nx)
    layer: np.ndarray         # uint8 (ny, nx)
    centroid: tuple[float, float]

    @property
    def segment(self) -> np.ndarray:
        """Segment labels 1..6 derived from sub-segments (0 outside)."""
        seg = (self.sub_segment + 2) // 3
        return seg.astype(np.uint8)

    def myocardium_mask(self) -> np.ndarray:
        return self.region == REGION_MYOCARDIUM

    def cavity_mask(self) -> np.ndarray:
        return self.region == REGION_CAVITY


def sectorize(endo: np.ndarray, epi: np.ndarray | None, p1,
              shape: tuple[int, int]) -> SectorMap:
    """Label every pixel of a (ny, nx) slice from the two contours and P1.

    Segment s covers clockwise angles [(s-1)*60, s*60) from the
    centroid-to-P1 ray, ordered A, AL, IL, I, IS, AS; sub-segments are 20
    degree thirds.  epi may be None for cavity-only maps (the contraction
    analysis needs segment labels inside the end-diastolic endocardium).
    """
    endo = np.asarray(endo, dtype=float)
    if abs(polygon_signed_area(endo)) < 4.0:
        raise SectorGeometryError("endocardial contour area is degenerate")
    if epi is not None:
        epi = np.asarray(epi, dtype=float)
        if abs(polygon_signed_area(epi)) < 4.0:
            raise SectorGeometryError("epicardial contour area is degenerate")
    ny, nx = shape
    centroid = polygon_centroid(endo)
    p1 = np.asarray(p1, dtype=float)
    ref = p1 - centroid
    if np.hypot(*ref) < 1e-9:
        raise SectorGeometryError("P1 coincides with the centroid")

    outer = endo if epi is None else epi
    xmin = max(0, int(np.floor(outer[:, 0].min())) - 1)
    xmax = min(nx, int(np.ceil(outer[:, 0].max())) + 2)
    ymin = max(0, int(np.floor(outer[:, 1].min())) - 1)
    ymax = min(ny, int(np.ceil(outer[:, 1].max())) + 2)
    yy, xx = np.mgrid[ymin:ymax, xmin:xmax]
    pts = np.column_stack([xx.ravel().astype(float), yy.ravel().astype(float)])

    in_endo = points_in_polygon(pts, endo)
    in_epi = in_endo if epi is None else points_in_polygon(pts, epi)

    region = np.zeros((ny, nx), dtype=np.uint8)
    sub = np.zeros((ny, nx), dtype=np.uint8)
    layer = np.zeros((ny, nx), dtype=np.uint8)

    box_region = np.where(in_endo, REGION_CAVITY,
                          np.where(in_epi, REGION_MYOCARDIUM, REGION_OUTSIDE))

    angles = clockwise_angle_deg(pts - centroid, ref)
    box_sub = (1 + np.minimum((angles / 20.0).astype(int), 17)).astype(np.uint8)
    box_sub[box_region == REGION_OUTSIDE] = 0

    box_layer = np.zeros(len(pts), dtype=np.uint8)
    myo = box_region == REGION_MYOCARDIUM
    if myo.any():
        d_endo = distance_to_polygon(pts[myo], endo)
        d_epi = distance_to_polygon(pts[myo], epi)
        depth = d_endo / np.maximum(d_endo + d_epi, 1e-12)
        box_layer[myo] = np.minimum(1 + (4.0 * depth).astype(int), 4).astype(np.uint8)

    sel = (slice(ymin, ymax), slice(xmin, xmax))
    region[sel] = box_region.reshape(ymax - ymin, xmax - xmin)
    sub[sel] = box_sub.reshape(ymax - ymin, xmax - xmin)
    layer[sel] = box_layer.reshape(ymax - ymin, xmax - xmin)
    return SectorMap(region=region, sub_segment=sub, layer=layer,
                     centroid=(float(centroid[0]), float(centroid[1])))


def sector_masks(smap: SectorMap, which: str, label: int) -> np.ndarray:
    """Pixel mask of a sub-segment (1..18) or segment (1..6).

    Masks are restricted to the myocardium for layered queries and to the
    full endocardial interior for cavity-sector queries; here the mask
    covers every labeled pixel (cavity + myocardium) and callers intersect
    with the region they need.
    """
    if which == "sub_segment":
        if not 1 <= label <= 18:
            raise ValueError(f"unknown sub-segment {label}")
        return smap.sub_segment == label
    if which == "segment":
        if not 1 <= label <= 6:
            raise ValueError(f"unknown segment {label}")
        return smap.segment == label
    raise ValueError(f"unknown mask kind {which!r}")


# ---------------------------------------------------------------------------
# serialization: label volume (u16 values stored as f32) + JSON legend

_PACK_REGION = 10000
_PACK_SUB = 100


def pack_labels(smap: SectorMap) -> np.ndarray:
    """One u16-valued plane: region*10000 + sub_segment*100 + layer."""
    return (smap.region.astype(np.uint32) * _PACK_REGION
            + smap.sub_segment.astype(np.uint32) * _PACK_SUB
            + smap.layer.astype(np.uint32)).astype(np.float32)


def unpack_labels(plane: np.ndarray, centroid) -> SectorMap:
    v = np.rint(np.asarray(plane)).astype(np.uint32)
    return SectorMap(
        region=(v // _PACK_REGION).astype(np.uint8),
        sub_segment=((v // _PACK_SUB) % 100).astype(np.uint8),
        layer=(v % 100).astype(np.uint8),
        centroid=(float(centroid[0]), float(centroid[1])),
    )


def legend(maps: list[SectorMap]) -> dict:
    return {
        "encoding": "region*10000 + sub_segment*100 + layer",
        "regions": {"0": "outside", "1": "cavity", "2": "myocardium"},
        "segments": {str(i + 1): name for i, name in enumerate(SEGMENT_NAMES)},
        "sub_segments_per_segment": 3,
        "layers": 4,
        "angle_convention": "clockwise as displayed (y down) from centroid->P1",
        "centroids_px": [[smap.centroid[0], smap.centroid[1]] for smap in maps],
    }


def save_legend(maps: list[SectorMap], path) -> None:
    with open(path, "w") as fh:
        json.dump(legend(maps), fh, indent=2, sort_keys=True)
