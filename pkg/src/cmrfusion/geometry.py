"""Planar geometry helpers shared by segmentation, sector division and phantoms.

All polygons are (N, 2) float arrays of [x, y] pixel coordinates, implicitly
closed (last vertex connects back to the first).  Image coordinates have y
pointing down; "clockwise" below always means clockwise as displayed, which
is the direction of increasing atan2(y, x) in these coordinates.
"""

from __future__ import annotations

import numpy as np

_CHUNK = 8192


def polygon_signed_area(poly: np.ndarray) -> float:
    """Shoelace area; positive when vertices wind counter-clockwise in (x, y)."""
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def polygon_centroid(poly: np.ndarray) -> np.ndarray:
    """Area-weighted centroid; falls back to vertex mean for degenerate area."""
    x, y = poly[:, 0], poly[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = 0.5 * np.sum(cross)
    if abs(area) < 1e-9:
        return poly.mean(axis=0)
    cx = np.sum((x + xn) * cross) / (6.0 * area)
    cy = np.sum((y + yn) * cross) / (6.0 * area)
    return np.array([cx, cy])


def ensure_positive_orientation(poly: np.ndarray) -> np.ndarray:
    """Reverse vertex order if the signed area is negative."""
    if polygon_signed_area(poly) < 0:
        return poly[::-1].copy()
    return poly


def points_in_polygon(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Even-odd (crossing number) point-in-polygon test, vectorized.

    Boundary points land on either side depending on rounding; callers that
    need a consistent partition must derive all regions from the same call.
    """
    points = np.asarray(points, dtype=float)
    poly = np.asarray(poly, dtype=float)
    x1, y1 = poly[:, 0], poly[:, 1]
    x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
    dy = y2 - y1
    # guard horizontal edges: they never satisfy the straddle test anyway
    dy_safe = np.where(dy == 0, 1.0, dy)
    out = np.zeros(len(points), dtype=bool)
    for start in range(0, len(points), _CHUNK):
        px = points[start:start + _CHUNK, 0][:, None]
        py = points[start:start + _CHUNK, 1][:, None]
        straddle = (y1 > py) != (y2 > py)
        xint = x1 + (py - y1) * (x2 - x1) / dy_safe
        crossings = np.sum(straddle & (px < xint), axis=1)
        out[start:start + _CHUNK] = (crossings % 2) == 1
    return out


def distance_to_polygon(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Euclidean distance from each point to the closed polygon outline."""
    points = np.asarray(points, dtype=float)
    poly = np.asarray(poly, dtype=float)
    a = poly
    b = np.roll(poly, -1, axis=0)
    ab = b - a
    ab_len2 = np.sum(ab ** 2, axis=1)
    ab_len2 = np.where(ab_len2 == 0, 1.0, ab_len2)
    out = np.empty(len(points))
    for start in range(0, len(points), _CHUNK):
        p = points[start:start + _CHUNK]
        ap = p[:, None, :] - a[None, :, :]
        t = np.clip(np.sum(ap * ab[None, :, :], axis=2) / ab_len2[None, :], 0.0, 1.0)
        proj = a[None, :, :] + t[:, :, None] * ab[None, :, :]
        d2 = np.sum((p[:, None, :] - proj) ** 2, axis=2)
        out[start:start + _CHUNK] = np.sqrt(d2.min(axis=1))
    return out


def nearest_on_polygon(points: np.ndarray, poly: np.ndarray):
    """Distance to the closed polygon outline and the nearest outline point."""
    points = np.asarray(points, dtype=float)
    poly = np.asarray(poly, dtype=float)
    a = poly
    b = np.roll(poly, -1, axis=0)
    ab = b - a
    ab_len2 = np.sum(ab ** 2, axis=1)
    ab_len2 = np.where(ab_len2 == 0, 1.0, ab_len2)
    dists = np.empty(len(points))
    nearest = np.empty_like(points)
    for start in range(0, len(points), _CHUNK):
        p = points[start:start + _CHUNK]
        ap = p[:, None, :] - a[None, :, :]
        t = np.clip(np.sum(ap * ab[None, :, :], axis=2) / ab_len2[None, :], 0.0, 1.0)
        proj = a[None, :, :] + t[:, :, None] * ab[None, :, :]
        d2 = np.sum((p[:, None, :] - proj) ** 2, axis=2)
        idx = d2.argmin(axis=1)
        rows = np.arange(len(p))
        dists[start:start + _CHUNK] = np.sqrt(d2[rows, idx])
        nearest[start:start + _CHUNK] = proj[rows, idx]
    return dists, nearest


def resample_closed(poly: np.ndarray, n: int) -> np.ndarray:
    """Resample a closed polyline to n points at uniform arc length."""
    poly = np.asarray(poly, dtype=float)
    closed = np.vstack([poly, poly[:1]])
    seg = np.diff(closed, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = cum[-1]
    if total <= 0:
        return np.repeat(poly[:1], n, axis=0)
    targets = np.linspace(0.0, total, n, endpoint=False)
    x = np.interp(targets, cum, closed[:, 0])
    y = np.interp(targets, cum, closed[:, 1])
    return np.column_stack([x, y])


def clockwise_angle_deg(vectors: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Angle of each vector clockwise (as displayed, y down) from reference, [0, 360)."""
    vectors = np.atleast_2d(np.asarray(vectors, dtype=float))
    ang = np.degrees(np.arctan2(vectors[:, 1], vectors[:, 0]))
    ref = np.degrees(np.arctan2(reference[1], reference[0]))
    return np.mod(ang - ref, 360.0)


def circle_polygon(center, radius: float, n: int = 64) -> np.ndarray:
    """Closed circle approximation, counter-clockwise in (x, y)."""
    t = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    return np.column_stack([center[0] + radius * np.cos(t),
                            center[1] + radius * np.sin(t)])


def smoothstep(u: np.ndarray) -> np.ndarray:
    """Cubic 0..1 ramp, clamped outside [0, 1]."""
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


def polyline_self_intersects(poly: np.ndarray) -> bool:
    """True when any two non-adjacent edges of the closed polyline cross."""
    poly = np.asarray(poly, dtype=float)
    n = len(poly)
    a = poly
    b = np.roll(poly, -1, axis=0)

    def orient(p, q, r):
        return (q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1]) - \
               (q[..., 1] - p[..., 1]) * (r[..., 0] - p[..., 0])

    p1 = a[:, None, :]
    p2 = b[:, None, :]
    q1 = a[None, :, :]
    q2 = b[None, :, :]
    d1 = orient(p1, p2, q1)
    d2 = orient(p1, p2, q2)
    d3 = orient(q1, q2, p1)
    d4 = orient(q1, q2, p2)
    crosses = (np.sign(d1) * np.sign(d2) < 0) & (np.sign(d3) * np.sign(d4) < 0)
    idx = np.arange(n)
    adjacent = (np.abs(idx[:, None] - idx[None, :]) <= 1) | \
               (np.abs(idx[:, None] - idx[None, :]) == n - 1)
    return bool(np.any(crosses & ~adjacent))


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Andrew's monotone chain; returns hull vertices counter-clockwise in (x, y)."""
    pts = np.unique(np.asarray(points, dtype=float), axis=0)
    if len(pts) <= 2:
        return pts
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(tuple(p))
    upper = []
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(tuple(p))
    return np.array(lower[:-1] + upper[:-1])


def mean_contour_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric mean point-to-outline distance between two closed contours."""
    da = distance_to_polygon(a, b)
    db = distance_to_polygon(b, a)
    return 0.5 * (float(da.mean()) + float(db.mean()))
