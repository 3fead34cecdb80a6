"""Geometric volume / sequence data model and its on-disk container.

A volume is a 3D scalar grid with physical geometry (spacing, origin,
orientation).  On disk each volume is a pair of files: a JSON text header
(``*.mvol.json``) and a raw little-endian float32 payload, z-major (slice
index slowest-varying) so one slice is a contiguous block.

Volumes are immutable after load; every operation here is a pure function.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

HEADER_SUFFIX = ".mvol.json"
ORTHO_TOL = 1e-6


class VolumeError(Exception):
    """Base class for volume container errors."""


class VolumeFormatError(VolumeError):
    """Missing or undecodable header."""


class VolumeSizeError(VolumeError):
    """Payload byte count disagrees with the declared dims."""


class VolumeGeometryError(VolumeError):
    """Orientation matrix is not orthonormal, or dims/spacing invalid."""


class OutOfBoundsError(VolumeError):
    """Continuous sample point lies outside the voxel grid."""


def _check_orientation(orientation: np.ndarray) -> None:
    if orientation.shape != (3, 3):
        raise VolumeGeometryError("orientation must be a 3x3 matrix")
    gram = orientation.T @ orientation
    if not np.allclose(gram, np.eye(3), atol=ORTHO_TOL):
        raise VolumeGeometryError("orientation columns must be orthonormal within 1e-6")


@dataclass(frozen=True)
class Volume:
    """3D scalar grid with physical geometry.

    data is float32, shape (nz, ny, nx): x fastest, z slowest, matching
    the on-disk payload ordering.
    """

    dims: tuple[int, int, int]            # (nx, ny, nz)
    spacing: tuple[float, float, float]   # mm / voxel
    origin: tuple[float, float, float]    # mm
    orientation: np.ndarray               # 3x3 direction cosines
    data: np.ndarray                      # (nz, ny, nx) float32

    def __post_init__(self):
        nx, ny, nz = self.dims
        if min(nx, ny, nz) < 1:
            raise VolumeGeometryError("all dims must be >= 1")
        if min(self.spacing) <= 0:
            raise VolumeGeometryError("all spacings must be > 0")
        orientation = np.asarray(self.orientation, dtype=float)
        _check_orientation(orientation)
        data = np.ascontiguousarray(np.asarray(self.data, dtype=np.float32).reshape(nz, ny, nx))
        data.setflags(write=False)
        orientation.setflags(write=False)
        object.__setattr__(self, "orientation", orientation)
        object.__setattr__(self, "data", data)

    @property
    def nx(self) -> int:
        return self.dims[0]

    @property
    def ny(self) -> int:
        return self.dims[1]

    @property
    def nz(self) -> int:
        return self.dims[2]

    def slice(self, k: int) -> np.ndarray:
        """Slice k as a read-only (ny, nx) array."""
        return self.data[k]

    def with_data(self, data: np.ndarray) -> "Volume":
        """Same geometry, new intensities."""
        return Volume(self.dims, self.spacing, self.origin, self.orientation, data)


def make_volume(data: np.ndarray,
                spacing=(1.0, 1.0, 1.0),
                origin=(0.0, 0.0, 0.0),
                orientation=None) -> Volume:
    """Build a Volume from a (nz, ny, nx) array with default geometry."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 2:
        data = data[None]
    nz, ny, nx = data.shape
    if orientation is None:
        orientation = np.eye(3)
    return Volume((nx, ny, nz), tuple(spacing), tuple(origin), orientation, data)


@dataclass(frozen=True)
class CineSequence:
    """Ordered cine phases sharing one geometry, with ECG trigger times."""

    phases: tuple[Volume, ...]
    trigger_times: tuple[float, ...]   # ms from the R-wave
    cycle_duration: float              # RR interval, ms

    def __post_init__(self):
        if len(self.phases) < 2:
            raise VolumeGeometryError("cine sequence needs >= 2 phases")
        if len(self.trigger_times) != len(self.phases):
            raise VolumeGeometryError("one trigger time per phase required")
        ref = self.phases[0]
        for ph in self.phases[1:]:
            same = (ph.dims == ref.dims and ph.spacing == ref.spacing
                    and ph.origin == ref.origin
                    and np.array_equal(ph.orientation, ref.orientation))
            if not same:
                raise VolumeGeometryError("all phases must share one geometry")
        tt = self.trigger_times
        if any(t2 <= t1 for t1, t2 in zip(tt, tt[1:])):
            raise VolumeGeometryError("trigger times must be strictly increasing")
        if tt[0] < 0 or tt[-1] >= self.cycle_duration:
            raise VolumeGeometryError("trigger times must lie in [0, cycle_duration)")

    @property
    def n_phases(self) -> int:
        return len(self.phases)

    def geometry(self) -> Volume:
        return self.phases[0]


@dataclass(frozen=True)
class DEStudySet:
    """1 to 3 delayed-enhancement exams (successive minutes post-injection)."""

    exams: tuple[Volume, ...]
    acquisition_window_ms: float = 130.0

    def __post_init__(self):
        if not 1 <= len(self.exams) <= 3:
            raise VolumeGeometryError("DE study set holds 1 to 3 exams")
        if self.acquisition_window_ms <= 0:
            raise VolumeGeometryError("acquisition window must be > 0 ms")


# ---------------------------------------------------------------------------
# container IO


def _header_path(path) -> Path:
    path = Path(path)
    if not str(path).endswith(HEADER_SUFFIX):
        path = path.with_name(path.name + HEADER_SUFFIX)
    return path


def save_volume(v: Volume, path) -> None:
    """Write header + raw float32 payload; load_volume inverts it."""
    header_path = _header_path(path)
    stem = header_path.name[: -len(HEADER_SUFFIX)]
    payload_name = stem + ".bin"
    header = {
        "dims": list(v.dims),
        "spacing_mm": list(v.spacing),
        "origin_mm": list(v.origin),
        "orientation": [float(x) for x in np.asarray(v.orientation).reshape(9)],
        "dtype": "f32le",
        "payload": payload_name,
    }
    header_path.parent.mkdir(parents=True, exist_ok=True)
    (header_path.parent / payload_name).write_bytes(v.data.astype("<f4").tobytes())
    header_path.write_text(json.dumps(header, indent=2, sort_keys=True))


def _read_header(path) -> tuple[dict, Path]:
    header_path = _header_path(path)
    if not header_path.exists():
        raise VolumeFormatError(f"header not found: {header_path}")
    try:
        header = json.loads(header_path.read_text())
    except json.JSONDecodeError as exc:
        raise VolumeFormatError(f"corrupt header {header_path}: {exc}") from exc
    for key in ("dims", "spacing_mm", "origin_mm", "orientation", "dtype"):
        if key not in header:
            raise VolumeFormatError(f"header {header_path} missing field '{key}'")
    if header["dtype"] != "f32le":
        raise VolumeFormatError(f"unsupported dtype {header['dtype']!r}")
    return header, header_path


def _read_payload(header_path: Path, payload_name: str, dims) -> np.ndarray:
    nx, ny, nz = dims
    payload_path = header_path.parent / payload_name
    if not payload_path.exists():
        raise VolumeFormatError(f"payload not found: {payload_path}")
    raw = payload_path.read_bytes()
    expected = nx * ny * nz * 4
    if len(raw) != expected:
        raise VolumeSizeError(
            f"{payload_path}: payload holds {len(raw)} bytes, dims {dims} require {expected}")
    return np.frombuffer(raw, dtype="<f4").reshape(nz, ny, nx)


def load_volume(path) -> Volume:
    """Load a volume from its header file (payload must sit alongside)."""
    header, header_path = _read_header(path)
    if "payload" not in header:
        raise VolumeFormatError(f"header {header_path} missing field 'payload'")
    dims = tuple(int(d) for d in header["dims"])
    data = _read_payload(header_path, header["payload"], dims)
    orientation = np.asarray(header["orientation"], dtype=float).reshape(3, 3)
    return Volume(
        dims=dims,
        spacing=tuple(float(s) for s in header["spacing_mm"]),
        origin=tuple(float(o) for o in header["origin_mm"]),
        orientation=orientation,
        data=data,
    )


def save_cine(seq: CineSequence, path) -> None:
    """Write a cine header (one payload per phase) plus trigger metadata."""
    header_path = _header_path(path)
    stem = header_path.name[: -len(HEADER_SUFFIX)]
    geo = seq.geometry()
    payload_names = [f"{stem}_phase{i:03d}.bin" for i in range(seq.n_phases)]
    header = {
        "dims": list(geo.dims),
        "spacing_mm": list(geo.spacing),
        "origin_mm": list(geo.origin),
        "orientation": [float(x) for x in np.asarray(geo.orientation).reshape(9)],
        "dtype": "f32le",
        "trigger_times_ms": list(seq.trigger_times),
        "rr_ms": seq.cycle_duration,
        "payloads": payload_names,
    }
    header_path.parent.mkdir(parents=True, exist_ok=True)
    for name, phase in zip(payload_names, seq.phases):
        (header_path.parent / name).write_bytes(phase.data.astype("<f4").tobytes())
    header_path.write_text(json.dumps(header, indent=2, sort_keys=True))


def load_cine(path) -> CineSequence:
    header, header_path = _read_header(path)
    for key in ("payloads", "trigger_times_ms", "rr_ms"):
        if key not in header:
            raise VolumeFormatError(f"cine header {header_path} missing field '{key}'")
    dims = tuple(int(d) for d in header["dims"])
    orientation = np.asarray(header["orientation"], dtype=float).reshape(3, 3)
    phases = []
    for name in header["payloads"]:
        data = _read_payload(header_path, name, dims)
        phases.append(Volume(
            dims=dims,
            spacing=tuple(float(s) for s in header["spacing_mm"]),
            origin=tuple(float(o) for o in header["origin_mm"]),
            orientation=orientation,
            data=data,
        ))
    return CineSequence(
        phases=tuple(phases),
        trigger_times=tuple(float(t) for t in header["trigger_times_ms"]),
        cycle_duration=float(header["rr_ms"]),
    )


# ---------------------------------------------------------------------------
# sampling and coordinate maps


def sample_trilinear(v: Volume, p) -> float:
    """Trilinear blend of the 8 grid values around continuous voxel coord p.

    p = (x, y, z) in voxel units; exact at integer grid points.  Raises
    OutOfBoundsError outside [0, dim-1] per axis; callers clamp or skip.
    """
    x, y, z = float(p[0]), float(p[1]), float(p[2])
    nx, ny, nz = v.dims
    if not (0.0 <= x <= nx - 1 and 0.0 <= y <= ny - 1 and 0.0 <= z <= nz - 1):
        raise OutOfBoundsError(f"point {p} outside grid {v.dims}")
    vals, _ = sample_trilinear_many(v, np.array([[x, y, z]]))
    return float(vals[0])


def sample_trilinear_many(v: Volume, pts: np.ndarray, fill: float = 0.0):
    """Vectorized trilinear sampling.

    pts: (N, 3) continuous voxel coordinates (x, y, z).  Returns
    (values, inside) where values has `fill` wherever inside is False.
    """
    pts = np.asarray(pts, dtype=float)
    nx, ny, nz = v.dims
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    inside = ((x >= 0) & (x <= nx - 1) &
              (y >= 0) & (y <= ny - 1) &
              (z >= 0) & (z <= nz - 1))
    xc = np.clip(x, 0, nx - 1)
    yc = np.clip(y, 0, ny - 1)
    zc = np.clip(z, 0, nz - 1)
    i0 = np.minimum(xc.astype(np.intp), nx - 2) if nx > 1 else np.zeros(len(pts), np.intp)
    j0 = np.minimum(yc.astype(np.intp), ny - 2) if ny > 1 else np.zeros(len(pts), np.intp)
    k0 = np.minimum(zc.astype(np.intp), nz - 2) if nz > 1 else np.zeros(len(pts), np.intp)
    fx = xc - i0
    fy = yc - j0
    fz = zc - k0
    d = v.data
    i1 = np.minimum(i0 + 1, nx - 1)
    j1 = np.minimum(j0 + 1, ny - 1)
    k1 = np.minimum(k0 + 1, nz - 1)
    c000 = d[k0, j0, i0]
    c100 = d[k0, j0, i1]
    c010 = d[k0, j1, i0]
    c110 = d[k0, j1, i1]
    c001 = d[k1, j0, i0]
    c101 = d[k1, j0, i1]
    c011 = d[k1, j1, i0]
    c111 = d[k1, j1, i1]
    w00 = c000 * (1 - fx) + c100 * fx
    w10 = c010 * (1 - fx) + c110 * fx
    w01 = c001 * (1 - fx) + c101 * fx
    w11 = c011 * (1 - fx) + c111 * fx
    w0 = w00 * (1 - fy) + w10 * fy
    w1 = w01 * (1 - fy) + w11 * fy
    values = w0 * (1 - fz) + w1 * fz
    values = np.where(inside, values, fill)
    return values.astype(float), inside


def voxel_to_world(v: Volume, ijk) -> np.ndarray:
    """Affine map origin + orientation @ diag(spacing) @ ijk (mm)."""
    ijk = np.asarray(ijk, dtype=float)
    scaled = ijk * np.asarray(v.spacing)
    return np.asarray(v.origin) + scaled @ np.asarray(v.orientation).T


def world_to_voxel(v: Volume, xyz) -> np.ndarray:
    """Inverse of voxel_to_world (orientation is orthonormal: inverse = transpose)."""
    xyz = np.asarray(xyz, dtype=float)
    local = (xyz - np.asarray(v.origin)) @ np.asarray(v.orientation)
    return local / np.asarray(v.spacing)
