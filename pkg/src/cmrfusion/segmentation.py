"""Semi-automated endocardial / epicardial contour extraction per SA slice.

Chain per slice: a square ROI centered on the cavity seed (side three times
the seed distance), connected-set area open/close filtering with automatic
size selection, gradient-magnitude edge map, gradient vector flow, and a
closed snake evolved with elasticity/rigidity, balloon pressure and the GVF
force.  The epicardial snake is restrained to an annular mask around the
endocardial result, with pressure decaying through the iterations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from skimage.morphology import area_closing, area_opening

from cmrfusion.geometry import (
    circle_polygon,
    convex_hull,
    ensure_positive_orientation,
    nearest_on_polygon,
    points_in_polygon,
    polygon_centroid,
    polygon_signed_area,
    polyline_self_intersects,
    resample_closed,
)

EIGHT = np.ones((3, 3), dtype=int)


class SegmentationError(Exception):
    pass


class LambdaSelectionError(SegmentationError):
    """No nonempty flat zone around the seed at any tested size."""


class SnakeCollapseError(SegmentationError):
    """Contour area fell below the collapse floor (4 px^2)."""


class MaskConfigError(SegmentationError):
    """Annular mask limits are inverted or empty."""


@dataclass(frozen=True)
class SnakeParams:
    alpha: float = 1.0        # elasticity
    beta: float = 40.0        # rigidity
    kappa_p: float = 0.6      # balloon pressure
    kappa: float = 1.7        # GVF force weight
    mu_gvf: float = 0.3       # GVF regularization
    n_points: int = 100
    max_iters: int = 400
    convergence_px: float = 0.1
    gvf_iters: int = 80

    def __post_init__(self):
        if min(self.alpha, self.beta, self.kappa, self.mu_gvf) < 0:
            raise ValueError("alpha, beta, kappa, mu_gvf must be >= 0")
        if self.n_points < 16:
            raise ValueError("n_points must be >= 16")


@dataclass(frozen=True)
class SliceSeeds:
    """Operator seeds for one slice: P0 inside the cavity, P1 at the
    anterior RV insertion; optional filter/mask overrides."""

    p0: tuple[float, float]
    p1: tuple[float, float]
    lambda_override: float | None = None
    mask_inner_px: float = 2.5
    mask_outer_mm: float = 10.0
    convex_hull: bool = False

    def __post_init__(self):
        if tuple(self.p0) == tuple(self.p1):
            raise ValueError("P0 and P1 must differ")


@dataclass(frozen=True)
class Contour:
    """Closed sub-pixel polygon, positively oriented, tagged endo or epi."""

    points: np.ndarray
    kind: str = ""
    repaired: bool = False
    lambda_used: float | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if len(pts) < 16:
            raise ValueError("contour needs >= 16 points")
        object.__setattr__(self, "points", ensure_positive_orientation(pts))

    def area(self) -> float:
        return abs(polygon_signed_area(self.points))

    def centroid(self) -> np.ndarray:
        return polygon_centroid(self.points)


# ---------------------------------------------------------------------------
# connected-set filtering


def area_open_close(img: np.ndarray, lam: float) -> np.ndarray:
    """Grayscale area opening then closing with size parameter lam.

    Connected-set operators (8-connectivity): the result contains only
    components of area >= lam; idempotent.  Backed by the max-tree
    implementation in scikit-image.  The image is treated as sitting on an
    infinite dark exterior (padded with its minimum for both passes): a
    dark border cannot join any bright component, and dark zones touching
    the border are never filled by the closing.
    """
    img = np.asarray(img, dtype=float)
    lam = int(max(1, min(round(lam), img.size)))
    if lam == 1:
        return img.copy()
    lo = np.pad(img, 1, mode="constant", constant_values=img.min())
    opened = area_opening(lo, area_threshold=lam, connectivity=2)
    closed = area_closing(opened, area_threshold=lam, connectivity=2)
    return closed[1:-1, 1:-1]


def flat_zone_area(img: np.ndarray, p0: tuple[float, float]) -> int:
    """Size of the constant-value connected zone containing p0 (8-conn)."""
    x, y = int(round(p0[0])), int(round(p0[1]))
    labels, _ = ndimage.label(img == img[y, x], structure=EIGHT)
    return int((labels == labels[y, x]).sum())


def lambda_grid(roi_area: int, n: int = 16) -> np.ndarray:
    """Log-spaced size grid spanning 5% to 80% of the ROI surface."""
    lo = max(1.0, 0.05 * roi_area)
    hi = max(lo + 1.0, 0.80 * roi_area)
    return np.unique(np.round(np.geomspace(lo, hi, n)).astype(int))


def select_lambda(img: np.ndarray, p0: tuple[float, float],
                  grid=None):
    """Pick the size whose filtered flat zone around p0 best matches it.

    Minimizes |area / lam - 1| over the grid; ties keep the smaller lam.
    A candidate only counts while the zone is still a bright region (value
    above the filtered midrange): once the cavity peak has been flattened
    into the myocardium, its zone no longer represents the cavity, and an
    accidental size match there would derail the selection.
    Returns (lambda_best, filtered_img).
    """
    if grid is None:
        grid = lambda_grid(img.size)
    x, y = int(round(p0[0])), int(round(p0[1]))
    best = None
    for lam in np.sort(np.asarray(grid, dtype=float)):
        filtered = area_open_close(img, lam)
        midrange = 0.5 * (float(filtered.min()) + float(filtered.max()))
        if filtered[y, x] <= midrange:
            continue
        area = flat_zone_area(filtered, p0)
        if area == 0:
            continue
        ratio = abs(area / lam - 1.0)
        if best is None or ratio < best[0]:
            best = (ratio, float(lam), filtered)
    if best is None:
        raise LambdaSelectionError(
            "no bright flat zone around P0 at any tested size")
    return best[1], best[2]


# ---------------------------------------------------------------------------
# gradient vector flow


def edge_map(img: np.ndarray) -> np.ndarray:
    """Gradient magnitude normalized to [0, 1]."""
    gy, gx = np.gradient(np.asarray(img, dtype=float))
    mag = np.hypot(gx, gy)
    top = mag.max()
    return mag / top if top > 0 else mag


def gvf_field(edge: np.ndarray, mu: float = 0.3, iters: int = 80,
              tol: float = 1e-3) -> np.ndarray:
    """Gradient vector flow of an edge map: (H, W, 2) field (x, y components).

    Explicit diffusion u += dt * (mu * lap(u) - b * (u - fx)) with the
    4-neighbor laplacian, replicated borders, and dt = 1 / (4 mu + 1);
    stops early when the max update falls below tol.
    """
    if mu <= 0:
        raise ValueError("mu must be positive")
    f = np.asarray(edge, dtype=float)
    gy, gx = np.gradient(f)
    b = gx * gx + gy * gy
    u = gx.copy()
    v = gy.copy()
    dt = 1.0 / (4.0 * mu + 1.0)

    def lap(w):
        p = np.pad(w, 1, mode="edge")
        return p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:] - 4.0 * w

    for _ in range(iters):
        du = dt * (mu * lap(u) - b * (u - gx))
        dv = dt * (mu * lap(v) - b * (v - gy))
        u += du
        v += dv
        if max(np.abs(du).max(), np.abs(dv).max()) < tol:
            break
    return np.stack([u, v], axis=-1)


def _sample_field(field: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Bilinear field values at sub-pixel points, clamped to the grid."""
    h, w = field.shape[:2]
    x = np.clip(pts[:, 0], 0, w - 1)
    y = np.clip(pts[:, 1], 0, h - 1)
    i0 = np.minimum(x.astype(int), w - 2) if w > 1 else np.zeros(len(pts), int)
    j0 = np.minimum(y.astype(int), h - 2) if h > 1 else np.zeros(len(pts), int)
    fx = (x - i0)[:, None]
    fy = (y - j0)[:, None]
    i1 = np.minimum(i0 + 1, w - 1)
    j1 = np.minimum(j0 + 1, h - 1)
    c00 = field[j0, i0]
    c10 = field[j0, i1]
    c01 = field[j1, i0]
    c11 = field[j1, i1]
    return (c00 * (1 - fx) * (1 - fy) + c10 * fx * (1 - fy)
            + c01 * (1 - fx) * fy + c11 * fx * fy)


def _outward_normals(pts: np.ndarray) -> np.ndarray:
    nxt = np.roll(pts, -1, axis=0)
    prv = np.roll(pts, 1, axis=0)
    tang = nxt - prv
    normals = np.column_stack([tang[:, 1], -tang[:, 0]])
    norms = np.hypot(normals[:, 0], normals[:, 1])
    norms[norms == 0] = 1.0
    normals /= norms[:, None]
    outward = pts - pts.mean(axis=0)
    flip = np.sum(normals * outward, axis=1) < 0
    normals[flip] *= -1.0
    return normals


@dataclass(frozen=True)
class AnnularMask:
    """Band around a reference polygon: clamps points to a distance range."""

    reference: np.ndarray
    inner_px: float
    outer_px: float

    def __post_init__(self):
        if self.outer_px <= self.inner_px:
            raise MaskConfigError(
                f"mask limits inverted: inner {self.inner_px} px >= outer {self.outer_px} px")

    def clamp(self, pts: np.ndarray) -> np.ndarray:
        dist, near = nearest_on_polygon(pts, self.reference)
        inside = points_in_polygon(pts, self.reference)
        signed = np.where(inside, -dist, dist)
        clipped = np.clip(signed, self.inner_px, self.outer_px)
        direction = pts - near
        norms = np.hypot(direction[:, 0], direction[:, 1])
        # points exactly on the reference have no direction; push outward
        degenerate = norms < 1e-9
        if degenerate.any():
            fallback = _outward_normals(np.asarray(pts))
            direction[degenerate] = fallback[degenerate]
            norms[degenerate] = 1.0
        unit = direction / norms[:, None]
        unit[signed < 0] *= -1.0  # inside the reference: flip to point outward
        return near + unit * clipped[:, None]


def _internal_matrix(n: int, alpha: float, beta: float, gamma: float) -> np.ndarray:
    a = np.zeros(n)
    a[0] = gamma + 2.0 * alpha + 6.0 * beta
    a[1] = a[-1] = -alpha - 4.0 * beta
    a[2] = a[-2] = beta
    m = np.empty((n, n))
    for i in range(n):
        m[i] = np.roll(a, i)
    return np.linalg.inv(m)


def evolve_snake(init: np.ndarray, field: np.ndarray, params: SnakeParams,
                 mask: AnnularMask | None = None,
                 pressure_decay: float = 1.0) -> Contour:
    """Semi-implicit closed-snake evolution under internal, balloon and GVF
    forces; points are resampled to uniform arc length each iteration.

    Stops when the max per-point displacement drops below convergence_px or
    the iteration budget runs out.  Raises SnakeCollapseError when the
    polygon area falls below 4 px^2; a self-intersecting result is repaired
    by its convex hull and flagged.
    """
    # viscosity: caps per-iteration displacement at ~|F|/gamma so the snake
    # cannot overshoot the ~1 px capture basin of an edge and limit-cycle
    gamma = 5.0
    n = params.n_points
    pts = resample_closed(np.asarray(init, dtype=float), n)
    minv = _internal_matrix(n, params.alpha, params.beta, gamma)
    kp = params.kappa_p
    for _ in range(params.max_iters):
        raw = _sample_field(field, pts)
        mag = np.hypot(raw[:, 0], raw[:, 1])[:, None]
        # near-unit direction field: the balloon must lose against kappa at
        # edges regardless of how much diffusion diluted the ridge magnitude
        ext = params.kappa * raw / (mag + 0.01)
        if kp != 0.0:
            ext = ext + kp * _outward_normals(pts)
        new = minv @ (gamma * pts + ext)
        disp = np.abs(new - pts).max()
        new = resample_closed(new, n)
        if mask is not None:
            new = mask.clamp(new)
        pts = new
        kp *= pressure_decay
        if abs(polygon_signed_area(pts)) < 4.0:
            raise SnakeCollapseError("contour collapsed below 4 px^2")
        if disp < params.convergence_px:
            break
    repaired = False
    if polyline_self_intersects(pts):
        pts = resample_closed(convex_hull(pts), n)
        repaired = True
    return Contour(points=pts, repaired=repaired)


# ---------------------------------------------------------------------------
# per-slice drivers


def seed_roi(shape: tuple[int, int], seeds: SliceSeeds):
    """Square ROI centered on P0 with side 3 |P0P1|, clamped to the image."""
    h, w = shape
    side = 3.0 * math.hypot(seeds.p1[0] - seeds.p0[0], seeds.p1[1] - seeds.p0[1])
    half = side / 2.0
    x0 = int(max(0, math.floor(seeds.p0[0] - half)))
    y0 = int(max(0, math.floor(seeds.p0[1] - half)))
    x1 = int(min(w, math.ceil(seeds.p0[0] + half) + 1))
    y1 = int(min(h, math.ceil(seeds.p0[1] + half) + 1))
    if x1 - x0 < 8 or y1 - y0 < 8:
        raise SegmentationError("ROI degenerate: seeds too close together")
    return x0, y0, x1, y1


def _prepared_roi(img: np.ndarray, seeds: SliceSeeds, params: SnakeParams):
    x0, y0, x1, y1 = seed_roi(img.shape, seeds)
    roi = np.asarray(img, dtype=float)[y0:y1, x0:x1]
    p0_local = (seeds.p0[0] - x0, seeds.p0[1] - y0)
    if seeds.lambda_override is not None:
        lam = float(seeds.lambda_override)
        filtered = area_open_close(roi, lam)
    else:
        lam, filtered = select_lambda(roi, p0_local)
    field = gvf_field(edge_map(filtered), mu=params.mu_gvf, iters=params.gvf_iters)
    return (x0, y0), p0_local, lam, filtered, field


def segment_endo(img: np.ndarray, seeds: SliceSeeds,
                 params: SnakeParams = SnakeParams()) -> Contour:
    """Endocardial contour: balloon-inflated snake from a small circle at P0."""
    origin, p0_local, lam, _filtered, field = _prepared_roi(img, seeds, params)
    init = circle_polygon(p0_local, 3.0, params.n_points)
    result = evolve_snake(init, field, params)
    pts = result.points
    repaired = result.repaired
    if seeds.convex_hull:
        pts = resample_closed(convex_hull(pts), params.n_points)
    pts = pts + np.asarray(origin, dtype=float)
    return Contour(points=pts, kind="endo", repaired=repaired, lambda_used=lam)


def segment_epi(img: np.ndarray, endo: Contour, seeds: SliceSeeds,
                params: SnakeParams = SnakeParams(),
                pixel_mm: float = 1.0,
                pressure_decay: float = 0.99) -> Contour:
    """Epicardial contour: snake restrained to an annulus around the
    endocardium (inner limit a couple of pixels out, outer limit near the
    anatomical wall thickness), balloon pressure decaying each iteration.

    The edge map is restricted to the same annular band before the GVF is
    computed: without that, the much stronger endocardial edge captures the
    snake and the band clamp alone cannot free it.
    """
    origin, _p0, lam, filtered, _field = _prepared_roi(img, seeds, params)
    inner = float(seeds.mask_inner_px)
    outer = float(seeds.mask_outer_mm) / float(pixel_mm)
    endo_local = endo.points - np.asarray(origin, dtype=float)
    mask = AnnularMask(reference=endo_local, inner_px=inner, outer_px=outer)

    h, w = filtered.shape
    yy, xx = np.mgrid[0:h, 0:w]
    grid = np.column_stack([xx.ravel().astype(float), yy.ravel().astype(float)])
    dist = np.empty(len(grid))
    dist_abs, _ = nearest_on_polygon(grid, endo_local)
    inside = points_in_polygon(grid, endo_local)
    dist = np.where(inside, -dist_abs, dist_abs).reshape(h, w)
    band = (dist >= inner) & (dist <= outer)
    em = edge_map(filtered) * band
    field = gvf_field(em, mu=params.mu_gvf, iters=params.gvf_iters)

    normals = _outward_normals(endo_local)
    init = endo_local + normals * ((inner + outer) / 2.0)
    result = evolve_snake(init, field, params, mask=mask,
                          pressure_decay=pressure_decay)
    pts = result.points + np.asarray(origin, dtype=float)
    epi = Contour(points=pts, kind="epi", repaired=result.repaired, lambda_used=lam)
    if not np.all(points_in_polygon(endo.points, epi.points)):
        raise SegmentationError("epicardial contour does not enclose the endocardium")
    return epi
