"""Parametric analysis of main motion: per-pixel window-model fits over the
cardiac cycle and the segmental amplitude / timing indices.

Each intensity-time curve is modeled as a baseline A_b dropping by A_v
inside a contiguous frame window [T_on, T_off] (the pixel leaves the bright
cavity for the darker myocardium during contraction).  The fit is an
exhaustive least-squares search over all window placements, which is exact
for the piecewise-constant model and cheap at cine phase counts.  The ATR
index divides the segmental relative amplitude by the mean transition time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from cmrfusion.sectors import SectorMap
from cmrfusion.volume import CineSequence

MIN_RELIABLE_PIXELS = 5
_TIE_EPS = 1e-9


def window_g(t: int, t_on: int, t_off: int) -> int:
    """Indicator of the closed frame interval [t_on, t_off]."""
    if t_on > t_off:
        raise ValueError("need t_on <= t_off")
    return 1 if t_on <= t <= t_off else 0


def _window_pairs(n: int) -> list[tuple[int, int]]:
    """All (t_on, t_off) windows leaving at least one baseline frame,
    ordered by window length then onset (the tie-break order)."""
    pairs = [(a, b) for a in range(n) for b in range(a, n)
             if not (a == 0 and b == n - 1)]
    pairs.sort(key=lambda p: (p[1] - p[0], p[0]))
    return pairs


def fit_many(curves: np.ndarray):
    """Vectorized exhaustive window fit of (n_pixels, n_frames) curves.

    Returns (a_b, a_v, t_on, t_off, sse, valid); invalid pixels (best
    amplitude <= 0, i.e. no cavity-to-myocardium transition) carry a_v = 0,
    t_on = t_off = -1 and the constant-model residual.
    """
    curves = np.asarray(curves, dtype=float)
    n_px, n = curves.shape
    if n < 4:
        raise ValueError("need at least 4 frames")
    pairs = _window_pairs(n)
    cs = np.concatenate([np.zeros((n_px, 1)), np.cumsum(curves, axis=1)], axis=1)
    total = cs[:, -1]
    sq_total = (curves ** 2).sum(axis=1)

    n_pairs = len(pairs)
    sse = np.empty((n_pairs, n_px))
    mean_in = np.empty((n_pairs, n_px))
    mean_out = np.empty((n_pairs, n_px))
    for idx, (a, b) in enumerate(pairs):
        n_in = b - a + 1
        n_out = n - n_in
        s_in = cs[:, b + 1] - cs[:, a]
        s_out = total - s_in
        mean_in[idx] = s_in / n_in
        mean_out[idx] = s_out / n_out
        sse[idx] = sq_total - s_in ** 2 / n_in - s_out ** 2 / n_out
    np.maximum(sse, 0.0, out=sse)

    best_sse = sse.min(axis=0)
    tol = _TIE_EPS * (1.0 + sq_total)
    ties = sse <= best_sse + tol
    # among SSE ties prefer a positive drop, then the (shorter, earlier)
    # pair order: an edge-touching window and its complement explain the
    # same curve, but only the positive-amplitude one is the model
    positive = ties & (mean_out > mean_in)
    has_positive = positive.any(axis=0)
    best_idx = np.where(has_positive,
                        np.argmax(positive, axis=0),
                        np.argmax(ties, axis=0))
    rows = np.arange(n_px)
    m_in = mean_in[best_idx, rows]
    m_out = mean_out[best_idx, rows]
    a_v = m_out - m_in
    a_b = m_out
    pair_arr = np.asarray(pairs)
    t_on = pair_arr[best_idx, 0].astype(int)
    t_off = pair_arr[best_idx, 1].astype(int)
    out_sse = sse[best_idx, rows]

    # invalid pixels (no positive drop anywhere) keep the minimum SSE found
    # but carry no window parameters
    valid = a_v > 0
    mean_all = total / n
    a_b = np.where(valid, a_b, mean_all)
    a_v = np.where(valid, a_v, 0.0)
    t_on = np.where(valid, t_on, -1)
    t_off = np.where(valid, t_off, -1)
    return a_b, a_v, t_on, t_off, out_sse, valid


def fit_pixel(curve):
    """Exhaustive window fit of one intensity-time curve.

    Ties prefer the shorter window, then the earlier onset.  A constant
    curve is invalid (a_v = 0), not an error.
    """
    a_b, a_v, t_on, t_off, sse, valid = fit_many(np.asarray(curve, dtype=float)[None])
    return (float(a_b[0]), float(a_v[0]), int(t_on[0]), int(t_off[0]),
            float(sse[0]), bool(valid[0]))


def mean_transition_time(t_on: int, t_off: int, n_phases: int) -> float:
    """Window midpoint as a fraction of the cycle."""
    if t_on < 0 or t_off < t_on:
        raise ValueError("invalid fit times")
    return ((t_on + t_off) / 2.0) / n_phases


@dataclass(frozen=True)
class ParametricMaps:
    """Per-pixel window-model parameters for one slice."""

    a_b: np.ndarray
    a_v: np.ndarray
    t_on: np.ndarray       # frame index, -1 where invalid
    t_off: np.ndarray
    sse: np.ndarray
    valid: np.ndarray      # bool
    n_phases: int


def compute_maps(seq: CineSequence, region: np.ndarray, k: int) -> ParametricMaps:
    """Fit every pixel of `region` (bool mask on slice k) across phases."""
    region = np.asarray(region, dtype=bool)
    if not region.any():
        raise ValueError("empty analysis region")
    ny, nx = region.shape
    curves = np.stack([ph.slice(k)[region] for ph in seq.phases], axis=1)
    a_b, a_v, t_on, t_off, sse, valid = fit_many(curves)

    def full(vals, fill=0.0, dtype=float):
        out = np.full((ny, nx), fill, dtype=dtype)
        out[region] = vals
        return out

    return ParametricMaps(
        a_b=full(a_b), a_v=full(a_v),
        t_on=full(t_on, fill=-1, dtype=int), t_off=full(t_off, fill=-1, dtype=int),
        sse=full(sse), valid=full(valid, fill=False, dtype=bool),
        n_phases=seq.n_phases,
    )


@dataclass(frozen=True)
class SegmentEntry:
    segment: int
    amplitude_index: float      # mean A_v / A_b over valid pixels
    mean_transition_time: float
    atr: float
    pixel_count: int
    reliable: bool

    def to_json(self) -> dict:
        def num(v):
            return v if np.isfinite(v) else None  # strict JSON: no NaN/inf

        return {
            "segment": self.segment,
            "amplitude_index": num(self.amplitude_index),
            "mean_transition_time": num(self.mean_transition_time),
            "atr": num(self.atr),
            "pixel_count": self.pixel_count,
            "reliable": self.reliable,
        }


def segmental_function(maps: ParametricMaps, smap: SectorMap) -> list[SegmentEntry]:
    """Per-segment amplitude index, mean transition time and their ratio.

    Aggregates valid pixels with positive baseline inside each cavity
    segment; segments with fewer than 5 valid pixels are flagged
    unreliable (their ATR is still reported when computable).
    """
    entries = []
    any_valid = False
    segment = smap.segment
    usable = maps.valid & (maps.a_b > 0)
    for s in range(1, 7):
        cell = usable & (segment == s)
        n = int(cell.sum())
        if n == 0:
            entries.append(SegmentEntry(s, float("nan"), float("nan"),
                                        float("nan"), 0, False))
            continue
        any_valid = True
        rel_amp = float((maps.a_v[cell] / maps.a_b[cell]).mean())
        mtt = float(((maps.t_on[cell] + maps.t_off[cell]) / 2.0).mean() / maps.n_phases)
        atr = rel_amp / mtt if mtt > 0 else float("inf")
        entries.append(SegmentEntry(s, rel_amp, mtt, atr, n,
                                    n >= MIN_RELIABLE_PIXELS))
    if not any_valid:
        raise ValueError("no valid contraction pixels in any segment")
    return entries


def save_segmental(entries_per_slice: list[list[SegmentEntry]], path) -> None:
    payload = {"slices": [{"slice": k,
                           "segments": [e.to_json() for e in entries]}
                          for k, entries in enumerate(entries_per_slice)]}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
