"""Automatic myocardial infarct extent scoring.

Enhancement is separated from healthy myocardium by two-class fuzzy
c-means over the myocardial intensities of each DE exam.  Each of the 18
sub-segments is scored 0..4 by walking the four transmural layers from the
endocardium outward, stopping at the first healthy layer (epicardial scar
cannot occur without the endocardial part, so isolated sub-epicardial
enhancement is rejected).  Scores from successive DE exams are fused by a
majority rule.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from cmrfusion.sectors import SectorMap
from cmrfusion.volume import Volume

LAYER_ENHANCED_FRACTION = 0.5
ALL_HEALTHY_IQR_FRACTION = 0.10
ALL_HEALTHY_MAJORITY_FRACTION = 0.45


class DegenerateInputError(Exception):
    """FCM cannot split a constant intensity sample."""


@dataclass(frozen=True)
class FcmResult:
    centers: np.ndarray         # c cluster centers, ascending order not guaranteed
    memberships: np.ndarray     # (n, c), rows sum to 1
    enhanced_cluster: int       # index of the higher-center cluster


def fcm(intensities, c: int = 2, m: float = 2.0, tol: float = 1e-5,
        max_iters: int = 200) -> FcmResult:
    """Fuzzy c-means with deterministic percentile initialization.

    Memberships u_ik = 1 / sum_j (d_ik / d_jk)^(2/(m-1)); centers are the
    u^m-weighted means.  Points coinciding with a center get membership 1
    there.  Converged when the largest center shift drops below tol.
    """
    x = np.asarray(intensities, dtype=float).ravel()
    if len(np.unique(x)) < c:
        raise DegenerateInputError(
            f"need at least {c} distinct intensities, got {len(np.unique(x))}")
    qs = np.linspace(25.0, 75.0, c)
    centers = np.percentile(x, qs)
    expo = 2.0 / (m - 1.0)
    u = np.zeros((len(x), c))
    for _ in range(max_iters):
        d = np.abs(x[:, None] - centers[None, :])
        zero = d < 1e-12
        any_zero = zero.any(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = (d[:, :, None] / d[:, None, :]) ** expo
            u = 1.0 / ratio.sum(axis=2)
        if any_zero.any():
            u[any_zero] = zero[any_zero].astype(float)
            u[any_zero] /= u[any_zero].sum(axis=1, keepdims=True)
        w = u ** m
        new_centers = (w * x[:, None]).sum(axis=0) / w.sum(axis=0)
        shift = np.abs(new_centers - centers).max()
        centers = new_centers
        if shift < tol:
            break
    return FcmResult(centers=centers, memberships=u,
                     enhanced_cluster=int(np.argmax(centers)))


def classify_enhanced(de: Volume, myocardium: np.ndarray) -> np.ndarray:
    """Per-pixel enhancement decision over the whole volume's myocardium.

    Runs FCM once over all masked intensities (per-volume clustering is
    more stable than per-slice for thin slices); a pixel is enhanced when
    its membership to the higher-center cluster exceeds 0.5.  FCM always
    yields two clusters, even in a heart without any infarct, so two
    all-healthy guards apply: centers collapsed within 10% of the masked
    interquartile range (near-uniform tissue), or an enhanced class that
    is not a clear minority of the myocardium (splitting unimodal noise
    puts roughly half the pixels in each cluster; scar cannot cover most
    of the wall).
    """
    myocardium = np.asarray(myocardium, dtype=bool)
    if not myocardium.any():
        raise ValueError("empty myocardium mask")
    vals = de.data[myocardium].astype(float)
    out = np.zeros(myocardium.shape, dtype=bool)
    try:
        res = fcm(vals)
    except DegenerateInputError:
        return out
    q75, q25 = np.percentile(vals, [75.0, 25.0])
    iqr = max(q75 - q25, 1e-12)
    lo, hi = np.sort(res.centers)
    if hi - lo < ALL_HEALTHY_IQR_FRACTION * iqr:
        return out
    enhanced = res.memberships[:, res.enhanced_cluster] > 0.5
    if enhanced.mean() > ALL_HEALTHY_MAJORITY_FRACTION:
        return out
    out[myocardium] = enhanced
    return out


def score_sub_segment(enhanced: np.ndarray, smap: SectorMap, sub: int,
                      layer_threshold: float = LAYER_ENHANCED_FRACTION) -> int:
    """Walk layers endocardium -> epicardium; +1 per enhanced layer, stop at
    the first healthy one.  A layer is enhanced when at least the threshold
    fraction of its pixels is; empty cells count as healthy."""
    if not 1 <= sub <= 18:
        raise ValueError(f"unknown sub-segment {sub}")
    myo = smap.myocardium_mask() & (smap.sub_segment == sub)
    score = 0
    for layer in (1, 2, 3, 4):
        cell = myo & (smap.layer == layer)
        n = int(cell.sum())
        if n == 0:
            break
        if float(enhanced[cell].mean()) >= layer_threshold:
            score += 1
        else:
            break
    return score


def score_slice(enhanced: np.ndarray, smap: SectorMap,
                layer_threshold: float = LAYER_ENHANCED_FRACTION) -> list[int]:
    return [score_sub_segment(enhanced, smap, sub, layer_threshold)
            for sub in range(1, 19)]


# ---------------------------------------------------------------------------
# score grids


@dataclass(frozen=True)
class ScoreGrid:
    """Per-slice, per-sub-segment transmurality scores 0..4."""

    slices: tuple  # tuple of 18-int tuples

    def __post_init__(self):
        rows = tuple(tuple(int(v) for v in row) for row in self.slices)
        for row in rows:
            if len(row) != 18:
                raise ValueError("each slice carries 18 sub-segment scores")
            if any(not 0 <= v <= 4 for v in row):
                raise ValueError("scores must lie in 0..4")
        object.__setattr__(self, "slices", rows)

    @property
    def n_slices(self) -> int:
        return len(self.slices)

    def transmural(self) -> tuple:
        """Per-cell flag: score >= 3 marks a transmural sub-segment."""
        return tuple(tuple(v >= 3 for v in row) for row in self.slices)

    def to_json(self) -> dict:
        return {"slices": [{"sub_segments": list(row)} for row in self.slices]}

    @classmethod
    def from_json(cls, d: dict) -> "ScoreGrid":
        return cls(slices=tuple(tuple(s["sub_segments"]) for s in d["slices"]))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "ScoreGrid":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def combine_exams(grids: list[ScoreGrid]) -> ScoreGrid:
    """Majority rule per cell across 1..3 exams; all-distinct cells fall
    back to the (lower) median, which keeps the result an integer score."""
    if not 1 <= len(grids) <= 3:
        raise ValueError("1 to 3 score grids")
    shape = (grids[0].n_slices,)
    for g in grids[1:]:
        if g.n_slices != shape[0]:
            raise ValueError("score grids have different slice counts")
    if len(grids) == 1:
        return grids[0]
    out = []
    for k in range(shape[0]):
        row = []
        for s in range(18):
            votes = sorted(g.slices[k][s] for g in grids)
            best, best_count = votes[0], 0
            for v in set(votes):
                cnt = votes.count(v)
                if cnt > best_count or (cnt == best_count and v < best):
                    best, best_count = v, cnt
            if best_count == 1:
                best = votes[(len(votes) - 1) // 2]
            row.append(best)
        out.append(tuple(row))
    return ScoreGrid(slices=tuple(out))


def mie_report(combined: ScoreGrid) -> dict:
    """Per-segment mean transmurality (average of its 3 sub-segments),
    per-slice table, and the DE / NDE classification (enhanced iff the
    segment mean is positive)."""
    slices = []
    for k, row in enumerate(combined.slices):
        segs = []
        for s in range(6):
            sub = row[3 * s:3 * s + 3]
            mean = sum(sub) / 3.0
            segs.append({
                "segment": s + 1,
                "mean_score": mean,
                "classification": "DE" if mean > 0 else "NDE",
            })
        slices.append({"slice": k, "segments": segs,
                       "sub_segments": list(row)})
    return {"slices": slices}
