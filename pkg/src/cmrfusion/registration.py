"""Refined rigid DE-to-cine registration over a heart ROI.

The displacement model is an in-plane rigid transform (tx, ty in mm, theta
in degrees about a fixed center) plus an integer slice shift dz limited to
{-1, 0, +1}.  Similarity is normalized mutual information computed from a
joint histogram over the ROI; the optimizer minimizes cost = exp(-NMI)
with Powell's direction-set method, one run per candidate dz.

theta rotates in pixel coordinates (positive = clockwise as displayed,
y down); in-plane pixels are assumed square, as in the source acquisitions.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass

import numpy as np

from cmrfusion.volume import Volume, sample_trilinear_many

log = logging.getLogger(__name__)

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0  # 0.618...


class EmptyOverlapError(Exception):
    """Transformed ROI has no voxel falling inside the moving volume."""


class OptimizationError(Exception):
    """Line search hit a non-finite function value."""


@dataclass(frozen=True)
class RigidTransform:
    """In-plane rigid motion plus an integer slice shift."""

    tx: float = 0.0          # mm
    ty: float = 0.0          # mm
    theta: float = 0.0       # degrees
    dz: int = 0              # slices, in {-1, 0, +1}
    cost: float | None = None

    def __post_init__(self):
        if self.dz not in (-1, 0, 1):
            raise ValueError(f"dz must be in {{-1, 0, +1}}, got {self.dz}")
        if abs(self.theta) >= 45.0:
            raise ValueError(f"|theta| must stay below 45 degrees, got {self.theta}")

    def inverse(self) -> "RigidTransform":
        """Inverse motion about the same rotation center."""
        th = math.radians(-self.theta)
        c, s = math.cos(th), math.sin(th)
        tx = -(c * self.tx - s * self.ty)
        ty = -(s * self.tx + c * self.ty)
        return RigidTransform(tx=tx, ty=ty, theta=-self.theta, dz=-self.dz)

    def to_json(self) -> dict:
        out = {
            "tx_mm": self.tx,
            "ty_mm": self.ty,
            "theta_deg": self.theta,
            "dz_slices": self.dz,
        }
        if self.cost is not None:
            out["cost"] = self.cost
        return out

    @classmethod
    def from_json(cls, d: dict) -> "RigidTransform":
        return cls(tx=float(d["tx_mm"]), ty=float(d["ty_mm"]),
                   theta=float(d["theta_deg"]), dz=int(d["dz_slices"]),
                   cost=d.get("cost"))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "RigidTransform":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


@dataclass(frozen=True)
class RoiBox:
    """Axis-aligned pixel box (half-open) with a half-open slice range."""

    x0: int
    y0: int
    x1: int
    y1: int
    z0: int
    z1: int

    def __post_init__(self):
        if self.x1 <= self.x0 or self.y1 <= self.y0 or self.z1 <= self.z0:
            raise ValueError("RoiBox must have positive extent on every axis")

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x0 + self.x1 - 1) / 2.0, (self.y0 + self.y1 - 1) / 2.0)

    def enlarged(self, factor: float, dims: tuple[int, int, int]) -> "RoiBox":
        """Scale the in-plane box about its center by `factor`, clamped to dims."""
        cx, cy = self.center
        hx = (self.x1 - self.x0) * factor / 2.0
        hy = (self.y1 - self.y0) * factor / 2.0
        nx, ny, _ = dims
        return RoiBox(
            x0=max(0, int(math.floor(cx - hx))),
            y0=max(0, int(math.floor(cy - hy))),
            x1=min(nx, int(math.ceil(cx + hx)) + 1),
            y1=min(ny, int(math.ceil(cy + hy)) + 1),
            z0=self.z0, z1=self.z1,
        )

    @classmethod
    def full(cls, v: Volume) -> "RoiBox":
        return cls(0, 0, v.nx, v.ny, 0, v.nz)


def _roi_mesh(roi: RoiBox):
    """Pixel coordinates (N, 2) and slice indices (N,) of every ROI voxel."""
    xs = np.arange(roi.x0, roi.x1)
    ys = np.arange(roi.y0, roi.y1)
    zs = np.arange(roi.z0, roi.z1)
    kk, jj, ii = np.meshgrid(zs, ys, xs, indexing="ij")
    pts = np.column_stack([ii.ravel().astype(float), jj.ravel().astype(float)])
    return pts, kk.ravel().astype(float), (ii.ravel(), jj.ravel(), kk.ravel())


def _map_points(tx: float, ty: float, theta: float, dz: int,
                pts_xy: np.ndarray, zs: np.ndarray,
                center: tuple[float, float], spacing) -> np.ndarray:
    """Pull-map pixel coordinates: rotate about center, translate (mm), shift slices."""
    th = math.radians(theta)
    c, s = math.cos(th), math.sin(th)
    dx = pts_xy[:, 0] - center[0]
    dy = pts_xy[:, 1] - center[1]
    qx = c * dx - s * dy + center[0] + tx / spacing[0]
    qy = s * dx + c * dy + center[1] + ty / spacing[1]
    return np.column_stack([qx, qy, zs + float(dz)])


def _histogram_from_pairs(va: np.ndarray, vb: np.ndarray, bins: int):
    """Joint counts binned linearly over each sample set's min-max."""
    n = len(va)
    if n == 0:
        raise EmptyOverlapError("no overlapping voxels between ROI and moving volume")

    def _bin(v):
        lo, hi = float(v.min()), float(v.max())
        if hi <= lo:
            return np.zeros(len(v), dtype=np.intp)
        idx = ((v - lo) * (bins / (hi - lo))).astype(np.intp)
        return np.minimum(idx, bins - 1)

    ia = _bin(va)
    ib = _bin(vb)
    counts = np.bincount(ia * bins + ib, minlength=bins * bins)
    return counts.reshape(bins, bins), n


def joint_histogram(a: Volume, b: Volume, roi: RoiBox, t: RigidTransform,
                    bins: int = 100):
    """Joint intensity histogram of a's ROI voxels against b sampled through t.

    Returns (counts[bins, bins], n_samples).  Voxels mapping outside b are
    excluded, so the marginals always describe the actual overlap.
    """
    if bins < 2:
        raise ValueError("bins must be >= 2")
    pts, zs, (ii, jj, kk) = _roi_mesh(roi)
    va = a.data[kk, jj, ii].astype(float)
    mapped = _map_points(t.tx, t.ty, t.theta, t.dz, pts, zs, roi.center, a.spacing)
    vb, inside = sample_trilinear_many(b, mapped)
    return _histogram_from_pairs(va[inside], vb[inside], bins)


def nmi(hist) -> float:
    """Normalized mutual information (H(I) + H(J)) / H(I, J) of a count matrix.

    Equals 2 for a deterministic bijection with nondegenerate marginals and
    1 for independent or degenerate variables.  A single occupied cell has
    H(I, J) = 0; the independence limit 1 is returned (and logged).
    """
    h = np.asarray(hist, dtype=float)
    total = h.sum()
    if total <= 0:
        raise ValueError("histogram is empty")
    p = h / total

    def entropy(q):
        q = q[q > 0]
        return float(-(q * np.log(q)).sum())

    h_joint = entropy(p.ravel())
    if h_joint == 0.0:
        log.warning("joint histogram has a single occupied cell; NMI defined as 1")
        return 1.0
    return (entropy(p.sum(axis=1)) + entropy(p.sum(axis=0))) / h_joint


def cost(a: Volume, b: Volume, roi: RoiBox, t: RigidTransform,
         bins: int = 100) -> float:
    """exp(-NMI): strictly decreasing in similarity, minimized at alignment."""
    h, _ = joint_histogram(a, b, roi, t, bins)
    return math.exp(-nmi(h))


# ---------------------------------------------------------------------------
# Powell direction-set minimizer


def _golden_section(g, lo: float, hi: float, xtol: float) -> tuple[float, float]:
    x1 = hi - GOLDEN * (hi - lo)
    x2 = lo + GOLDEN * (hi - lo)
    f1, f2 = g(x1), g(x2)
    while hi - lo > xtol:
        if f1 < f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - GOLDEN * (hi - lo)
            f1 = g(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + GOLDEN * (hi - lo)
            f2 = g(x2)
    xm = (lo + hi) / 2.0
    return xm, g(xm)


def _line_minimize(f, x: np.ndarray, direction: np.ndarray, fx: float,
                   xtol: float, span: float = 2.0):
    """Minimize along x + alpha * direction.

    A two-level coarse scan first locates the global basin along the line
    (similarity objectives carry interpolation ripple that defeats naive
    downhill bracketing), then golden section refines inside it.
    """
    evaluated = {0.0: fx}

    def g(alpha: float) -> float:
        alpha = round(alpha, 12)
        if alpha in evaluated:
            return evaluated[alpha]
        val = f(x + alpha * direction)
        if not math.isfinite(val):
            raise OptimizationError(
                f"non-finite objective at {x + alpha * direction}")
        evaluated[alpha] = val
        return val

    norm = float(np.linalg.norm(direction))
    if norm == 0.0:
        return x, fx, 0.0
    atol = max(xtol / norm, 1e-12)

    best_a, best_f = 0.0, fx
    step = span / 4.0
    for a in np.linspace(-span, span, 9):
        fa = g(float(a))
        if fa < best_f:
            best_a, best_f = float(a), fa
    # expand while the scan minimum sits on the boundary
    while abs(best_a) >= span - 1e-12 and abs(best_a) < 64.0:
        a = best_a + math.copysign(step * 2.0, best_a)
        fa = g(float(a))
        if fa >= best_f:
            break
        best_a, best_f = float(a), fa
    for a in np.linspace(best_a - step, best_a + step, 9):
        fa = g(float(a))
        if fa < best_f:
            best_a, best_f = float(a), fa
    lo, hi = best_a - step / 4.0, best_a + step / 4.0
    if hi - lo > atol:
        alpha, falpha = _golden_section(g, lo, hi, atol)
    else:
        alpha, falpha = best_a, best_f
    if best_f < falpha:
        alpha, falpha = best_a, best_f
    if falpha >= fx:
        return x, fx, 0.0
    return x + alpha * direction, falpha, fx - falpha


def powell_minimize(f, x0, tol: float = 1e-4, max_cycles: int = 50,
                    initial_step: float = 1.0, line_xtol: float | None = None):
    """Derivative-free direction-set minimization.

    Runs successive bracketed golden-section line searches along a maintained
    direction set; after each cycle the direction of largest decrease is
    replaced by the cycle's net displacement (unless nearly parallel to a
    kept direction).  Stops when the per-cycle improvement falls below
    tol * (|f| + tol) or the cycle budget is exhausted.  Deterministic.
    """
    x = np.array(x0, dtype=float)
    n = len(x)
    if line_xtol is None:
        line_xtol = tol
    fx = f(x)
    if not math.isfinite(fx):
        raise OptimizationError(f"objective not finite at start point {x0}")
    directions = np.eye(n) * initial_step
    for _ in range(max_cycles):
        f_start = fx
        x_start = x.copy()
        biggest_dec = 0.0
        biggest_i = 0
        for i in range(n):
            x, fx, dec = _line_minimize(f, x, directions[i], fx, line_xtol)
            if dec > biggest_dec:
                biggest_dec, biggest_i = dec, i
        net = x - x_start
        norm = float(np.linalg.norm(net))
        if norm > 1e-12:
            new_dir = net
            x, fx, _ = _line_minimize(f, x, new_dir, fx, line_xtol)
            keep = [directions[i] for i in range(n) if i != biggest_i]
            unit = new_dir / norm
            parallel = any(
                abs(float(unit @ (d / np.linalg.norm(d)))) > 0.999
                for d in keep if np.linalg.norm(d) > 0)
            if not parallel:
                directions[biggest_i] = new_dir
        if f_start - fx < tol * (abs(f_start) + tol):
            break
    return x, fx


# ---------------------------------------------------------------------------
# registration driver


def register(de_aligned: Volume, cine_avg: Volume, roi: RoiBox,
             bins: int = 100, tol: float = 1e-5, max_cycles: int = 12,
             line_xtol: float = 0.02, initial_step: float = 2.0,
             theta_profile_deg: float = 2.0) -> RigidTransform:
    """Find the rigid transform minimizing cost over (tx, ty, theta) per dz.

    dz is enumerated exhaustively over {-1, 0, +1} (the longitudinal search
    must stay within one slice or it locks onto the wrong anatomical level);
    the in-plane parameters are optimized by Powell from (0, 0, 0).  The
    rotation couples with translation into a curved, shallow valley, so the
    winning branch is refined by a theta profile search: translation-only
    Powell runs at fixed theta offsets around the incumbent, then one final
    joint polish.  The cheapest pose wins; ties prefer smaller |dz|.
    """
    pts, zs, (ii, jj, kk) = _roi_mesh(roi)
    va_full = cine_avg.data[kk, jj, ii].astype(np.float32)
    center = roi.center
    spacing = cine_avg.spacing
    px = (pts[:, 0] - center[0]).astype(np.float32)
    py = (pts[:, 1] - center[1]).astype(np.float32)
    nx, ny, nz = de_aligned.dims
    flat = de_aligned.data.reshape(-1)
    # per-dz precomputation: which ROI voxels land on a valid slice, and the
    # flat-index offset of that slice
    slice_cache = {}
    for dzc in (-1, 0, 1):
        kq = kk + dzc
        valid = (kq >= 0) & (kq <= nz - 1)
        slice_cache[dzc] = (valid,
                           (kq[valid] * ny * nx).astype(np.intp),
                           va_full[valid], px[valid], py[valid])

    def raw_cost(tx: float, ty: float, theta: float, dz: int) -> float:
        z_valid, k_off, va_z, px_z, py_z = slice_cache[dz]
        if len(k_off) == 0:
            return float("inf")
        th = math.radians(theta)
        c, s = np.float32(math.cos(th)), np.float32(math.sin(th))
        xq = c * px_z - s * py_z + np.float32(center[0] + tx / spacing[0])
        yq = s * px_z + c * py_z + np.float32(center[1] + ty / spacing[1])
        inside = (xq >= 0) & (xq <= nx - 1) & (yq >= 0) & (yq <= ny - 1)
        if not inside.any():
            return float("inf")
        xq = xq[inside]
        yq = yq[inside]
        i0 = xq.astype(np.intp)
        j0 = yq.astype(np.intp)
        np.minimum(i0, nx - 2, out=i0)
        np.minimum(j0, ny - 2, out=j0)
        fx = xq - i0
        fy = yq - j0
        base = k_off[inside] + j0 * nx + i0
        c00 = np.take(flat, base)
        c10 = np.take(flat, base + 1)
        c01 = np.take(flat, base + nx)
        c11 = np.take(flat, base + nx + 1)
        w0 = c00 + (c10 - c00) * fx
        w1 = c01 + (c11 - c01) * fx
        vb = w0 + (w1 - w0) * fy
        h, _ = _histogram_from_pairs(va_z[inside], vb, bins)
        return math.exp(-nmi(h))

    best: RigidTransform | None = None
    for dz in (0, -1, 1):
        def objective(p, dz=dz):
            return raw_cost(float(p[0]), float(p[1]), float(p[2]), dz)
        f0 = objective(np.zeros(3))
        if not math.isfinite(f0):
            continue
        x_opt, f_opt = powell_minimize(
            objective, np.zeros(3), tol=tol, max_cycles=max_cycles,
            initial_step=initial_step, line_xtol=line_xtol)
        if best is None or f_opt < best.cost:
            best = RigidTransform(tx=float(x_opt[0]), ty=float(x_opt[1]),
                                  theta=float(x_opt[2]), dz=dz, cost=f_opt)
    if best is None:
        raise EmptyOverlapError("no overlap between volumes at any slice shift")

    if theta_profile_deg > 0:
        dz = best.dz
        incumbent = (best.tx, best.ty, best.theta, best.cost)
        for theta in np.linspace(best.theta - theta_profile_deg,
                                 best.theta + theta_profile_deg, 9):
            def objective_2d(p, theta=float(theta)):
                return raw_cost(float(p[0]), float(p[1]), theta, dz)
            xy, f_xy = powell_minimize(
                objective_2d, np.array([incumbent[0], incumbent[1]]),
                tol=tol, max_cycles=6, initial_step=0.5, line_xtol=line_xtol)
            if f_xy < incumbent[3]:
                incumbent = (float(xy[0]), float(xy[1]), float(theta), f_xy)

        def objective_3d(p):
            return raw_cost(float(p[0]), float(p[1]), float(p[2]), dz)
        x_fin, f_fin = powell_minimize(
            objective_3d, np.array(incumbent[:3]), tol=tol,
            max_cycles=6, initial_step=0.25, line_xtol=line_xtol)
        if f_fin <= incumbent[3]:
            final = (float(x_fin[0]), float(x_fin[1]), float(x_fin[2]), f_fin)
        else:
            final = incumbent
        if final[3] <= best.cost:
            best = RigidTransform(tx=final[0], ty=final[1], theta=final[2],
                                  dz=dz, cost=final[3])
    return best


def apply_transform(v: Volume, t: RigidTransform, center=None):
    """Resample the whole volume through t (pull semantics, no holes).

    Returns (volume, inside_mask); voxels sampling outside the input are
    filled with 0 and False in the mask.  An integer dz moves whole slices
    without interpolation.
    """
    if center is None:
        center = ((v.nx - 1) / 2.0, (v.ny - 1) / 2.0)
    xs = np.arange(v.nx, dtype=float)
    ys = np.arange(v.ny, dtype=float)
    zs = np.arange(v.nz, dtype=float)
    kk, jj, ii = np.meshgrid(zs, ys, xs, indexing="ij")
    pts = np.column_stack([ii.ravel(), jj.ravel()])
    mapped = _map_points(t.tx, t.ty, t.theta, t.dz, pts, kk.ravel(), center, v.spacing)
    vals, inside = sample_trilinear_many(v, mapped)
    out = v.with_data(vals.reshape(v.nz, v.ny, v.nx))
    return out, inside.reshape(v.nz, v.ny, v.nx)


def registration_roi(seg_roi: RoiBox, factor: float, v: Volume) -> RoiBox:
    """Enlarge the segmentation ROI by the configured factor (2 to 2.8)."""
    if not 1.0 <= factor <= 4.0:
        raise ValueError("ROI enlargement factor out of sane range")
    return seg_roi.enlarged(factor, v.dims)
