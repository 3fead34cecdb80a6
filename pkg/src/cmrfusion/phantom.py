"""Deterministic synthetic cardiac phantoms with exact ground truth.

Generates cine sequences (contracting annulus, per-segment motion model)
and delayed-enhancement study sets (wedge scar with known transmural
fraction, optional injected misalignment), plus the truth needed to
validate every pipeline stage: exact contours per phase, per-segment
motion parameters, analytic infarct scores, and the rigid transform the
registration stage is expected to recover.

Fixed intensity conventions (arbitrary units, chosen for reproducible
tests): cine cavity 200 / myocardium 80 / background 150; DE healthy
myocardium 100 / scar 300 / cavity 150 / background 50.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from cmrfusion.geometry import circle_polygon, smoothstep
from cmrfusion.registration import RigidTransform
from cmrfusion.volume import CineSequence, DEStudySet, Volume, make_volume

CINE_CAVITY = 200.0
CINE_MYO = 80.0
CINE_BG = 150.0
DE_HEALTHY = 100.0
DE_SCAR_DEFAULT_RATIO = 3.0
DE_CAVITY = 150.0
DE_BG = 50.0

TIERS = ("N", "H", "AD")


@dataclass(frozen=True)
class SegmentMotion:
    """Endocardial motion of one angular segment over the cycle."""

    tier: str = "N"
    amplitude_mm: float = 4.0     # inward excursion while contracted
    t_on_frac: float = 0.25       # window start, fraction of the cycle
    t_off_frac: float = 0.55

    def __post_init__(self):
        if self.tier not in TIERS:
            raise ValueError(f"tier must be one of {TIERS}")
        if not 0.0 <= self.t_on_frac <= self.t_off_frac < 1.0:
            raise ValueError("need 0 <= t_on <= t_off < 1")


def tiered_motions(tiers, base_amplitude_mm: float = 4.0,
                   t_on_frac: float = 0.25, t_off_frac: float = 0.55,
                   ad_scale: float = 0.0):
    """Standard tier scaling: N full amplitude, H halved, AD ad_scale (default 0)."""
    scale = {"N": 1.0, "H": 0.5, "AD": ad_scale}
    return tuple(
        SegmentMotion(tier=t, amplitude_mm=base_amplitude_mm * scale[t],
                      t_on_frac=t_on_frac, t_off_frac=t_off_frac)
        for t in tiers)


@dataclass(frozen=True)
class ScarSpec:
    """Wedge scar: angular span clockwise from the reference ray, endocardial origin."""

    center_deg: float = 30.0
    span_deg: float = 60.0
    transmural_fraction: float = 0.5
    contrast_ratio: float = DE_SCAR_DEFAULT_RATIO

    def __post_init__(self):
        if not 0.0 <= self.transmural_fraction <= 1.0:
            raise ValueError("transmural fraction must lie in [0, 1]")
        if self.span_deg <= 0 or self.span_deg > 360:
            raise ValueError("span must lie in (0, 360]")


@dataclass(frozen=True)
class PhantomSpec:
    """Everything needed to generate one synthetic case, bitwise reproducible."""

    nx: int = 96
    ny: int = 96
    nz: int = 4
    spacing: tuple[float, float, float] = (1.0, 1.0, 8.0)
    n_phases: int = 10
    rr_ms: float = 800.0
    endo_radius_mm: float = 16.0
    epi_radius_mm: float = 26.0
    radius_taper_mm: float = 1.0   # per-slice shrink toward the apex (z+)
    motions: tuple[SegmentMotion, ...] = field(
        default_factory=lambda: tiered_motions(("N",) * 6))
    scar: ScarSpec | None = None
    misalignment: RigidTransform | None = None  # transform register() should recover
    n_exams: int = 1
    noise_sigma: float = 0.0
    seed: int = 0
    reference_angle_deg: float = -90.0  # P1 ray direction in atan2 terms (up on screen)
    edge_width_px: float = 1.5
    rv_radius_mm: float = 11.0     # RV blood pool; 0 disables it
    rv_angle_deg: float = 300.0    # clockwise from the reference ray (septal side)
    rv_wall_mm: float = 3.0        # free-wall ring around the RV pool
    papillary_radius_mm: float = 0.0           # notch insets; 0 disables them
    papillary_angles_deg: tuple[float, float] = (210.0, 330.0)
    papillary_orbit_frac: float = 0.55         # of the endo radius
    aorta_radius_mm: float = 5.5               # descending aorta pool; 0 disables it
    aorta_angle_deg: float = 160.0             # clockwise from the reference ray
    aorta_distance_mm: float = 36.0            # from the LV center
    # extra blood-bright disks (angle_deg, distance_mm, radius_mm): far-field
    # anchors that make rotation observable against noise
    marker_disks: tuple = ()
    noise_sigma_de: float | None = None        # None: same as noise_sigma

    def __post_init__(self):
        if len(self.motions) != 6:
            raise ValueError("exactly 6 segment motions required")
        if self.endo_radius_mm >= self.epi_radius_mm:
            raise ValueError("endo radius must stay below epi radius")
        if not 1 <= self.n_exams <= 3:
            raise ValueError("1 to 3 DE exams")

    @property
    def center_px(self) -> tuple[float, float]:
        return ((self.nx - 1) / 2.0, (self.ny - 1) / 2.0)

    def endo_radius(self, k: float) -> float:
        return max(2.0, self.endo_radius_mm - self.radius_taper_mm * k)

    def epi_radius(self, k: float) -> float:
        return max(3.0, self.epi_radius_mm - self.radius_taper_mm * k)

    def rv_center_mm(self, k: float) -> tuple[float, float]:
        """RV pool center relative to the LV center, mm (abuts the epicardium)."""
        ang = math.radians(self.reference_angle_deg + self.rv_angle_deg)
        d = self.epi_radius(k) + self.rv_radius_mm - 2.0
        return d * math.cos(ang), d * math.sin(ang)


@dataclass(frozen=True)
class CineTruth:
    endo_contours: tuple            # [phase][slice] -> (n, 2) polygon, pixel coords
    epi_contours: tuple             # [slice] -> (n, 2) polygon
    segment_amplitude_mm: tuple     # 6 floats, after tier scaling
    segment_tiers: tuple            # 6 of {"N","H","AD"}
    segment_window_frac: tuple      # 6 of (t_on, t_off) cycle fractions
    segment_window_frames: tuple    # 6 of (T_on, T_off) frame indices (or None)
    intensity_drop: float           # cavity-to-myocardium drop seen by swept pixels
    center_px: tuple
    reference_angle_deg: float


@dataclass(frozen=True)
class DeTruth:
    scores: tuple                   # [slice] -> 18 ints, analytic wedge scores
    registration: RigidTransform    # what register() should recover
    endo_contours: tuple            # diastolic, aligned grid (pre-misalignment)
    epi_contours: tuple
    center_px: tuple
    reference_angle_deg: float


def _pixel_polar(spec: PhantomSpec):
    """Radius (mm) and clockwise angle (deg, from the reference ray) per pixel."""
    cx, cy = spec.center_px
    yy, xx = np.mgrid[0:spec.ny, 0:spec.nx]
    dx = (xx - cx) * spec.spacing[0]
    dy = (yy - cy) * spec.spacing[1]
    r = np.hypot(dx, dy)
    ang = np.degrees(np.arctan2(dy, dx)) - spec.reference_angle_deg
    return r, np.mod(ang, 360.0), dx, dy


def _base_with_rv(spec: PhantomSpec, dx_mm, dy_mm, k: float,
                  bg: float, blood: float, muscle: float, w_mm: float):
    """Background field with RV (wall + pool) and aorta blended in (LV on top)."""
    base = np.full_like(dx_mm, bg)
    if spec.rv_radius_mm > 0:
        rvx, rvy = spec.rv_center_mm(k)
        d_rv = np.hypot(dx_mm - rvx, dy_mm - rvy)
        if spec.rv_wall_mm > 0:
            outer = 1.0 - smoothstep(
                (d_rv - spec.rv_radius_mm - spec.rv_wall_mm) / w_mm + 0.5)
            base = base + (muscle - bg) * outer
            inside = 1.0 - smoothstep((d_rv - spec.rv_radius_mm) / w_mm + 0.5)
            base = base + (blood - muscle) * inside
        else:
            inside = 1.0 - smoothstep((d_rv - spec.rv_radius_mm) / w_mm + 0.5)
            base = base + (blood - bg) * inside
    disks = list(spec.marker_disks)
    if spec.aorta_radius_mm > 0:
        disks.append((spec.aorta_angle_deg, spec.aorta_distance_mm,
                      spec.aorta_radius_mm))
    for ang_deg, dist, radius in disks:
        ang = math.radians(spec.reference_angle_deg + ang_deg)
        ax = dist * math.cos(ang)
        ay = dist * math.sin(ang)
        d = np.hypot(dx_mm - ax, dy_mm - ay)
        inside = 1.0 - smoothstep((d - radius) / w_mm + 0.5)
        base = base + (blood - bg) * inside
    return base


def _blend_papillaries(spec: PhantomSpec, img, dx_mm, dy_mm, k: float,
                       muscle: float, w_mm: float):
    """Inset papillary-muscle disks inside the cavity (muscle intensity)."""
    if spec.papillary_radius_mm <= 0:
        return img
    orbit = spec.papillary_orbit_frac * spec.endo_radius(k)
    for a in spec.papillary_angles_deg:
        ang = math.radians(spec.reference_angle_deg + a)
        px, py = orbit * math.cos(ang), orbit * math.sin(ang)
        d = np.hypot(dx_mm - px, dy_mm - py)
        nb = 1.0 - smoothstep((d - spec.papillary_radius_mm) / w_mm + 0.5)
        img = img * (1.0 - nb) + muscle * nb
    return img


def _edge_blend(r: np.ndarray, edge_mm: float, width_mm: float) -> np.ndarray:
    """0 inside the edge, 1 outside, cubic ramp of the given width across it."""
    return smoothstep((r - edge_mm) / width_mm + 0.5)


def window_indicator(frac: float, t_on: float, t_off: float) -> float:
    return 1.0 if t_on <= frac <= t_off else 0.0


def _segment_of_angle(angle_deg: np.ndarray) -> np.ndarray:
    """Segment index 0..5 for clockwise angles in [0, 360)."""
    return np.minimum((angle_deg / 60.0).astype(int), 5)


def make_cine(spec: PhantomSpec):
    """Contracting-annulus cine sequence plus exact motion/contour truth."""
    r_px, ang, dx_mm, dy_mm = _pixel_polar(spec)
    seg_idx = _segment_of_angle(ang)
    amp = np.array([m.amplitude_mm for m in spec.motions])
    w_mm = spec.edge_width_px * spec.spacing[0]
    trigger_times = tuple(spec.rr_ms * i / spec.n_phases for i in range(spec.n_phases))
    rng = np.random.default_rng(spec.seed)

    phases = []
    endo_truth_per_phase = []
    thetas = np.linspace(0.0, 2.0 * math.pi, 720, endpoint=False)
    cx, cy = spec.center_px
    for t_ms in trigger_times:
        frac = t_ms / spec.rr_ms
        g = np.array([window_indicator(frac, m.t_on_frac, m.t_off_frac)
                      for m in spec.motions])
        inward = amp * g
        data = np.empty((spec.nz, spec.ny, spec.nx), dtype=np.float32)
        slice_contours = []
        for k in range(spec.nz):
            r_endo = spec.endo_radius(k) - inward[seg_idx]
            r_epi = spec.epi_radius(k)
            b_endo = smoothstep((r_px - r_endo) / w_mm + 0.5)
            b_epi = _edge_blend(r_px, r_epi, w_mm)
            base = _base_with_rv(spec, dx_mm, dy_mm, k, CINE_BG, CINE_CAVITY, CINE_MYO, w_mm)
            img = CINE_CAVITY + (CINE_MYO - CINE_CAVITY) * b_endo \
                + (base - CINE_MYO) * b_epi
            img = _blend_papillaries(spec, img, dx_mm, dy_mm, k, CINE_MYO, w_mm)
            data[k] = img
            # exact truth contour: per-angle radius in pixel units
            ang_cw = np.mod(np.degrees(thetas) - spec.reference_angle_deg, 360.0)
            seg_of = _segment_of_angle(ang_cw)
            r_truth = (spec.endo_radius(k) - inward[seg_of]) / spec.spacing[0]
            slice_contours.append(np.column_stack([
                cx + r_truth * np.cos(thetas), cy + r_truth * np.sin(thetas)]))
        if spec.noise_sigma > 0:
            data = data + rng.normal(0.0, spec.noise_sigma,
                                     size=data.shape).astype(np.float32)
        phases.append(make_volume(data, spacing=spec.spacing))
        endo_truth_per_phase.append(tuple(slice_contours))

    epi_truth = tuple(
        circle_polygon((cx, cy), spec.epi_radius(k) / spec.spacing[0], 720)
        for k in range(spec.nz))

    frames = []
    for m in spec.motions:
        inside = [i for i in range(spec.n_phases)
                  if m.t_on_frac <= i / spec.n_phases <= m.t_off_frac]
        if m.amplitude_mm > 0 and inside:
            frames.append((inside[0], inside[-1]))
        else:
            frames.append(None)

    seq = CineSequence(tuple(phases), trigger_times, spec.rr_ms)
    truth = CineTruth(
        endo_contours=tuple(endo_truth_per_phase),
        epi_contours=epi_truth,
        segment_amplitude_mm=tuple(float(a) for a in amp),
        segment_tiers=tuple(m.tier for m in spec.motions),
        segment_window_frac=tuple((m.t_on_frac, m.t_off_frac) for m in spec.motions),
        segment_window_frames=tuple(frames),
        intensity_drop=CINE_CAVITY - CINE_MYO,
        center_px=spec.center_px,
        reference_angle_deg=spec.reference_angle_deg,
    )
    return seq, truth


def score_from_fraction(f: float) -> int:
    """Transmural extent band to 5-point score: 0, then quartile bands to 4."""
    if f <= 0.0:
        return 0
    if f <= 0.25:
        return 1
    if f <= 0.5:
        return 2
    if f <= 0.75:
        return 3
    return 4


def _wedge_angular_mask(ang: np.ndarray, scar: ScarSpec) -> np.ndarray:
    half = scar.span_deg / 2.0
    delta = np.mod(ang - scar.center_deg + 180.0, 360.0) - 180.0
    return np.abs(delta) <= half


def _arc_overlap_deg(lo: float, hi: float, start: float, span: float) -> float:
    """Overlap length of circular arcs [lo, hi) and [start, start+span), degrees."""
    a = (lo - start) % 360.0
    b = a + (hi - lo)
    total = max(0.0, min(b, span) - a)
    if b > 360.0:
        total += max(0.0, min(b - 360.0, span))
    return total


def truth_scores(spec: PhantomSpec) -> tuple:
    """Analytic per-sub-segment scores from the wedge geometry (18 per slice).

    A sub-segment is scored when the wedge covers at least half of its 20
    degree span; the score comes from the transmural-fraction bands.
    """
    per_slice = []
    for _ in range(spec.nz):
        row = [0] * 18
        if spec.scar is not None and spec.scar.transmural_fraction > 0:
            s = spec.scar
            for sub in range(18):
                overlap = _arc_overlap_deg(20.0 * sub, 20.0 * (sub + 1),
                                           s.center_deg - s.span_deg / 2.0,
                                           s.span_deg)
                if overlap >= 10.0:
                    row[sub] = score_from_fraction(s.transmural_fraction)
        per_slice.append(tuple(row))
    return tuple(per_slice)


def make_de(spec: PhantomSpec):
    """DE study set (wedge scar, injected misalignment) plus analytic truth.

    spec.misalignment is the transform register() should recover; the
    volume content is drawn through its inverse, analytically (no
    resampling), so edge slices keep valid anatomy.  Rotation center is
    the image center, matching a centered registration ROI.
    """
    recover = spec.misalignment or RigidTransform()
    gen = recover.inverse()
    th = math.radians(gen.theta)
    c, s = math.cos(th), math.sin(th)
    cx, cy = spec.center_px
    w_mm = spec.edge_width_px * spec.spacing[0]
    rng = np.random.default_rng(spec.seed + 104729)

    yy, xx = np.mgrid[0:spec.ny, 0:spec.nx]
    dx0 = xx - cx
    dy0 = yy - cy
    qx = c * dx0 - s * dy0 + gen.tx / spec.spacing[0]
    qy = s * dx0 + c * dy0 + gen.ty / spec.spacing[1]
    r_px = np.hypot(qx * spec.spacing[0], qy * spec.spacing[1])
    ang = np.mod(np.degrees(np.arctan2(qy, qx)) - spec.reference_angle_deg, 360.0)

    def draw_slice(k_src: float) -> np.ndarray:
        r_endo = spec.endo_radius(k_src)
        r_epi = spec.epi_radius(k_src)
        b_endo = smoothstep((r_px - r_endo) / w_mm + 0.5)
        b_epi = smoothstep((r_px - r_epi) / w_mm + 0.5)
        base = _base_with_rv(spec, qx * spec.spacing[0], qy * spec.spacing[1],
                             k_src, DE_BG, DE_CAVITY, DE_HEALTHY, w_mm)
        img = DE_CAVITY + (DE_HEALTHY - DE_CAVITY) * b_endo \
            + (base - DE_HEALTHY) * b_epi
        if spec.scar is not None and spec.scar.transmural_fraction > 0:
            depth = (r_px - r_endo) / max(r_epi - r_endo, 1e-9)
            in_scar = (_wedge_angular_mask(ang, spec.scar)
                       & (depth >= 0.0)
                       & (depth <= spec.scar.transmural_fraction))
            scar_val = DE_HEALTHY * spec.scar.contrast_ratio
            img = np.where(in_scar & (b_endo > 0.5) & (b_epi < 0.5), scar_val, img)
        img = _blend_papillaries(spec, img, qx * spec.spacing[0],
                                 qy * spec.spacing[1], k_src, DE_HEALTHY, w_mm)
        return img.astype(np.float32)

    sigma_de = spec.noise_sigma if spec.noise_sigma_de is None else spec.noise_sigma_de
    exams = []
    for _ in range(spec.n_exams):
        data = np.empty((spec.nz, spec.ny, spec.nx), dtype=np.float32)
        for k in range(spec.nz):
            data[k] = draw_slice(k + gen.dz)
        if sigma_de > 0:
            data = data + rng.normal(0.0, sigma_de,
                                     size=data.shape).astype(np.float32)
        exams.append(make_volume(data, spacing=spec.spacing))

    endo_truth = tuple(
        circle_polygon((cx, cy), spec.endo_radius(k) / spec.spacing[0], 720)
        for k in range(spec.nz))
    epi_truth = tuple(
        circle_polygon((cx, cy), spec.epi_radius(k) / spec.spacing[0], 720)
        for k in range(spec.nz))

    study = DEStudySet(tuple(exams), acquisition_window_ms=130.0)
    truth = DeTruth(
        scores=truth_scores(spec),
        registration=recover,
        endo_contours=endo_truth,
        epi_contours=epi_truth,
        center_px=spec.center_px,
        reference_angle_deg=spec.reference_angle_deg,
    )
    return study, truth


def default_seeds(spec: PhantomSpec) -> dict:
    """Operator seed points for every slice: P0 at the cavity center, P1 on
    the reference ray just outside the epicardium.  The epicardial mask
    outer limit clears the wall thickness by 2 mm so the epi edge lies in
    the band interior."""
    cx, cy = spec.center_px
    ref = math.radians(spec.reference_angle_deg)
    slices = []
    for k in range(spec.nz):
        r_p1 = spec.epi_radius(k) / spec.spacing[0] + 4.0
        wall = spec.epi_radius(k) - spec.endo_radius(k)
        slices.append({
            "slice": k,
            "p0": [cx, cy],
            "p1": [cx + r_p1 * math.cos(ref), cy + r_p1 * math.sin(ref)],
            "mask_inner_px": 2.5,
            "mask_outer_mm": wall + 2.0,
        })
    return {"slices": slices}
