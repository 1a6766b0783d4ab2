"""Synthetic standing-body phantoms with zone and threat ground truth.

The body is assembled slice by slice from elliptic cross-sections: feet,
calves and thighs as two leg ellipses, a torso ellipse from the pelvis to the
shoulders, arms held at the sides, then neck and a truncated-sphere head.
Segment boundaries (ankle, knee, hip, waist, ...) sit on the band edges of
the zone table, so each band has its own cross-section shape. Leg sections
are rotated and carry an off-centre low-reflectivity core ("bone"), which
makes right and left crops mirror images rather than identical copies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import BoundsError, ParameterError, PlacementError
from .scanio import ScanVolume, ThreatAnnotation
from .zoner import DEFAULT_TABLE, ZoneBandTable, label_slice

MAX_PLACEMENT_TRIES = 500


@dataclass(frozen=True)
class PhantomSpec:
    nx: int = 64
    ny: int = 40
    nz: int = 48
    height_voxels: int = 44
    z_offset: int = 2
    torso_radius: float = 12.0
    limb_radius: float = 6.0
    center_x: float | None = None
    center_y: float | None = None
    foreground: float = 1.0
    core_intensity: float = 0.85
    noise_sigma: float = 0.08
    threat_count: int = 0
    threat_intensity_boost: float = 0.6
    seed: int = 0
    body_id: str = "phantom"

    def __post_init__(self):
        if min(self.nx, self.ny, self.nz) < 1:
            raise ParameterError("grid dimensions must be positive")
        if self.height_voxels < 2:
            raise ParameterError("height_voxels must be at least 2")
        if self.z_offset < 0 or self.z_offset + self.height_voxels > self.nz:
            raise BoundsError(f"body z-range [{self.z_offset}, {self.z_offset + self.height_voxels}) exceeds nz={self.nz}")
        if self.torso_radius <= 0 or self.limb_radius <= 0:
            raise ParameterError("radii must be positive")
        if self.noise_sigma < 0:
            raise ParameterError("noise_sigma must be non-negative")
        if self.threat_count < 0:
            raise ParameterError("threat_count must be >= 0")
        if self.threat_intensity_boost <= 0:
            raise ParameterError("threat_intensity_boost must be > 0")

    @property
    def cx(self) -> float:
        return (self.nx - 1) / 2.0 if self.center_x is None else self.center_x

    @property
    def cy(self) -> float:
        return (self.ny - 1) / 2.0 if self.center_y is None else self.center_y


@dataclass(frozen=True)
class _Ellipse:
    x: float
    y: float
    ax: float
    ay: float
    rot: float = 0.0  # radians
    core: bool = False

    def inside(self, uu: np.ndarray, vv: np.ndarray) -> np.ndarray:
        dx, dy = uu - self.x, vv - self.y
        c, s = math.cos(self.rot), math.sin(self.rot)
        p, q = dx * c + dy * s, -dx * s + dy * c
        return (p / self.ax) ** 2 + (q / self.ay) ** 2 <= 1.0

    def x_extent(self) -> float:
        c, s = math.cos(self.rot), math.sin(self.rot)
        return math.hypot(self.ax * c, self.ay * s)

    def y_extent(self) -> float:
        c, s = math.cos(self.rot), math.sin(self.rot)
        return math.hypot(self.ax * s, self.ay * c)


def _pair(spec: PhantomSpec, offset, y, ax, ay, rot_deg=0.0, core=False, core_dx=0.0, core_dy=0.0, core_r=0.0):
    """One primitive per side; ``offset``/``core_dx`` are lateral distances, ``rot_deg`` outward."""
    out = []
    for sign in (-1.0, 1.0):  # -1: subject's right (low u)
        x = spec.cx + sign * offset
        rot = math.radians(-sign * rot_deg)
        out.append(_Ellipse(x, y, ax, ay, rot))
        if core:
            out.append(_Ellipse(x + sign * core_dx, y + core_dy, core_r, core_r, core=True))
    return out


def cross_section(spec: PhantomSpec, h: float, table: ZoneBandTable = DEFAULT_TABLE) -> list[_Ellipse]:
    """Primitives making up the body at relative height ``h`` in [0, 1]."""
    T, L = spec.torso_radius, spec.limb_radius
    cy = spec.cy
    band = int(table.band_index(h))
    b = table.bands[band]
    t = (h - b.h_lo) / (b.h_hi - b.h_lo)
    leg_off = 1.15 * L
    arm = 0.5 * L
    if band == 0:  # feet and ankles
        return _pair(spec, leg_off, cy + 0.3 * L, 0.55 * L, 1.05 * L, 30.0,
                     core=True, core_dx=0.15 * L, core_dy=-0.45 * L, core_r=0.22 * L)
    if band == 1:  # calves
        return _pair(spec, leg_off, cy, 0.75 * L, 0.88 * L, -25.0,
                     core=True, core_dx=-0.3 * L, core_dy=0.35 * L, core_r=0.22 * L)
    if band == 2:  # thighs, hands hanging beside the upper half
        prims = _pair(spec, leg_off, cy, L, 1.05 * L, 0.0,
                      core=True, core_dx=0.3 * L, core_dy=0.0, core_r=0.25 * L)
        if t >= 0.5:
            prims += _pair(spec, leg_off + L + 1.5 + 0.45 * L, cy, 0.4 * L, 0.5 * L, 15.0)
        return prims
    if band == 3:  # pelvis, wrists at the sides
        ax = 0.95 * T
        return [_Ellipse(spec.cx, cy, ax, 0.6 * T)] + _pair(spec, ax + 2.0 + 0.4 * L, cy, 0.4 * L, 0.45 * L)
    if band == 4:  # waist, forearms
        ax = 0.8 * T
        return [_Ellipse(spec.cx, cy, ax, 0.55 * T)] + _pair(spec, ax + 3.2 + 0.45 * L, cy, 0.45 * L, 0.45 * L)
    if band == 5:  # abdomen, elbows
        ax = 0.9 * T
        return [_Ellipse(spec.cx, cy, ax, 0.62 * T)] + _pair(spec, ax + 1.8 + arm, cy - 0.1 * T, arm, arm)
    if band == 6:  # chest with lungs, upper arms close to the torso
        ax = T
        prims = [_Ellipse(spec.cx, cy, ax, 0.7 * T)]
        prims += _pair(spec, 0.45 * T, cy - 0.05 * T, 0.25 * T, 0.35 * T, 10.0)
        prims = [prims[0]] + [replace(p, core=True) for p in prims[1:]]
        return prims + _pair(spec, ax + 0.8 + 1.2 * arm, cy, 1.2 * arm, 1.2 * arm)
    # shoulders, neck, head
    if t < 0.35:
        return [_Ellipse(spec.cx, cy, T + 2.4 * arm, 0.65 * T)]
    if t < 0.5:
        return [_Ellipse(spec.cx, cy, 0.3 * T, 0.3 * T)]
    s = max(0.6, math.sqrt(max(0.0, 1.0 - ((t - 0.72) / 0.3) ** 2)))
    return [_Ellipse(spec.cx, cy + 0.05 * T, 0.45 * T * s, 0.52 * T * s)]


def _render(prims, uu, vv, fg: float, core: float):
    mask = np.zeros(uu.shape, dtype=bool)
    for p in prims:
        if not p.core:
            mask |= p.inside(uu, vv)
    img = np.where(mask, fg, 0.0).astype(np.float32)
    for p in prims:
        if p.core:
            img[p.inside(uu, vv) & mask] = core
    return mask, img


def _check_bounds(spec: PhantomSpec, table: ZoneBandTable):
    for h in np.linspace(0.0, 1.0, 201):
        for p in cross_section(spec, float(h), table):
            if p.x - p.x_extent() < 0 or p.x + p.x_extent() > spec.nx - 1 or p.y - p.y_extent() < 0 or p.y + p.y_extent() > spec.ny - 1:
                raise BoundsError(f"phantom limb at h={h:.3f} exceeds the {spec.nx}x{spec.ny} grid")


def phantom_geometry(spec: PhantomSpec, table: ZoneBandTable = DEFAULT_TABLE):
    """Noise-free ``(intensity, labels)`` volumes before threats."""
    _check_bounds(spec, table)
    vv, uu = np.mgrid[0 : spec.ny, 0 : spec.nx].astype(np.float64)
    clean = np.zeros((spec.nz, spec.ny, spec.nx), dtype=np.float32)
    labels = np.zeros(clean.shape, dtype=np.uint8)
    top = spec.height_voxels - 1
    for i in range(spec.height_voxels):
        z = spec.z_offset + i
        h = i / top
        mask, img = _render(cross_section(spec, h, table), uu, vv, spec.foreground, spec.core_intensity * spec.foreground)
        if not mask.any():
            raise BoundsError(f"phantom slice z={z} rendered empty; radii too small for the grid")
        clean[z] = img
        labels[z] = label_slice(mask, h, table, mid=spec.cx)
    return clean, labels


def _place_threats(spec: PhantomSpec, labels: np.ndarray, rng: np.random.Generator) -> list[ThreatAnnotation]:
    present = sorted(int(k) for k in np.unique(labels) if k)
    scale = max(1.0, spec.nx / 64.0)
    taken = np.zeros(labels.shape, dtype=bool)
    out = []
    for _ in range(spec.threat_count):
        zone = int(rng.choice(present))
        zz, yy, xx = np.nonzero(labels == zone)
        for _attempt in range(MAX_PLACEMENT_TRIES):
            sx = int(rng.integers(2, 4) * scale)
            sy = int(rng.integers(2, 4) * scale)
            sz = int(rng.integers(1, 4))
            j = int(rng.integers(len(zz)))
            x0, y0, z0 = int(xx[j]) - sx // 2, int(yy[j]) - sy // 2, int(zz[j]) - sz // 2
            if min(x0, y0, z0) < 0:
                continue
            box = np.s_[z0 : z0 + sz, y0 : y0 + sy, x0 : x0 + sx]
            block = labels[box]
            if block.shape != (sz, sy, sx) or not (block == zone).all() or taken[box].any():
                continue
            taken[box] = True
            out.append(ThreatAnnotation(spec.body_id, zone, z0, z0 + sz - 1, x0, x0 + sx - 1, y0, y0 + sy - 1))
            break
        else:
            raise PlacementError(f"could not place a threat in zone {zone} of body {spec.body_id}")
    return out


def generate_phantom(spec: PhantomSpec, table: ZoneBandTable = DEFAULT_TABLE):
    """Build ``(ScanVolume, zone labels, threat annotations)`` for ``spec``.

    Deterministic in ``spec.seed``. Threat boxes are filled with
    ``foreground + threat_intensity_boost`` before noise; noise is additive
    Gaussian clipped at zero.
    """
    rng = np.random.default_rng(spec.seed)
    clean, labels = phantom_geometry(spec, table)
    threats = _place_threats(spec, labels, rng)
    for a in threats:
        clean[a.z_start : a.z_stop + 1, a.y_start : a.y_stop + 1, a.x_start : a.x_stop + 1] = spec.foreground + spec.threat_intensity_boost
    if spec.noise_sigma > 0:
        for z in range(spec.nz):
            clean[z] += spec.noise_sigma * rng.standard_normal((spec.ny, spec.nx), dtype=np.float32)
        np.maximum(clean, 0.0, out=clean)
    return ScanVolume(spec.body_id, clean), labels, threats
