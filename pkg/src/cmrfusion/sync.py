"""Temporal synchronization of cine to the DE acquisition window, and
coarse scan alignment of a DE volume onto the cine grid.

The averaged cine image is the temporal mean of the phases whose trigger
times fall inside the DE acquisition window (about 130 ms, typically 4 or
5 cine phases).  Scan alignment resamples the DE volume onto the target
grid through the world coordinate maps of both volumes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cmrfusion.volume import (
    CineSequence,
    Volume,
    sample_trilinear_many,
    voxel_to_world,
    world_to_voxel,
)

DEFAULT_WINDOW_START_MS = 300.0   # inversion-recovery trigger delay
DEFAULT_WINDOW_LEN_MS = 130.0


@dataclass(frozen=True)
class SyncResult:
    averaged_cine: Volume
    selected_phase_indices: tuple[int, ...]
    window_start_ms: float
    window_len_ms: float


def average_cine_window(seq: CineSequence,
                        window_start_ms: float = DEFAULT_WINDOW_START_MS,
                        window_len_ms: float = DEFAULT_WINDOW_LEN_MS) -> SyncResult:
    """Voxelwise mean of the phases triggered inside [start, start+len).

    Falls back to the single nearest phase when the window contains none.
    """
    if window_len_ms <= 0:
        raise ValueError("window length must be positive")
    tt = np.asarray(seq.trigger_times)
    inside = np.nonzero((tt >= window_start_ms) & (tt < window_start_ms + window_len_ms))[0]
    if len(inside) == 0:
        center = window_start_ms + window_len_ms / 2.0
        inside = np.array([int(np.argmin(np.abs(tt - center)))])
    stack = np.stack([seq.phases[i].data for i in inside], axis=0)
    mean = stack.mean(axis=0).astype(np.float32)
    return SyncResult(
        averaged_cine=seq.phases[0].with_data(mean),
        selected_phase_indices=tuple(int(i) for i in inside),
        window_start_ms=window_start_ms,
        window_len_ms=window_len_ms,
    )


def scan_align(de: Volume, target: Volume):
    """Resample de onto target's grid via voxel(target) -> world -> voxel(de).

    Returns (aligned_volume, overlap_mask); voxels mapping outside de are
    filled with 0 and False in the mask (no extrapolation: overlap must be
    explicit because similarity measures misbehave on thin overlaps).
    """
    xs = np.arange(target.nx, dtype=float)
    ys = np.arange(target.ny, dtype=float)
    zs = np.arange(target.nz, dtype=float)
    kk, jj, ii = np.meshgrid(zs, ys, xs, indexing="ij")
    ijk = np.column_stack([ii.ravel(), jj.ravel(), kk.ravel()])
    world = voxel_to_world(target, ijk)
    de_coords = world_to_voxel(de, world)
    vals, inside = sample_trilinear_many(de, de_coords)
    data = vals.reshape(target.nz, target.ny, target.nx).astype(np.float32)
    aligned = Volume(target.dims, target.spacing, target.origin,
                     target.orientation, data)
    return aligned, inside.reshape(target.nz, target.ny, target.nx)
