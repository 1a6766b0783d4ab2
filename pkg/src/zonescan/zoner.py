"""Per-voxel body-zone labeling.

A body is cut into eight horizontal bands by relative height measured from
the lowest foreground slice. Each band maps to a (right, left) zone pair; the
groin band additionally owns a central strip labeled zone 9. "Right" is the
subject's right, i.e. the low-``u`` side of the image.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, NoForegroundError
from .scanio import atomic_write_text

BACKGROUND = 0
RIGHT = 1
LEFT = 2


@dataclass(frozen=True)
class ZoneBand:
    h_lo: float
    h_hi: float
    right_zone: int
    left_zone: int


@dataclass(frozen=True)
class ZoneBandTable:
    bands: tuple[ZoneBand, ...]
    groin_band: int
    strip_fraction: float
    strip_zone: int = 9

    def __post_init__(self):
        if len(self.bands) != 8:
            raise ConfigError(f"expected 8 bands, got {len(self.bands)}")
        if self.bands[0].h_lo != 0.0 or self.bands[-1].h_hi != 1.0:
            raise ConfigError("bands must start at 0 and end at 1")
        for a, b in zip(self.bands, self.bands[1:]):
            if a.h_hi != b.h_lo:
                raise ConfigError(f"bands do not tile: {a.h_hi} != {b.h_lo}")
        for b in self.bands:
            if not b.h_lo < b.h_hi:
                raise ConfigError(f"empty band [{b.h_lo}, {b.h_hi})")
        ids = [z for b in self.bands for z in (b.right_zone, b.left_zone)] + [self.strip_zone]
        if sorted(ids) != list(range(1, 18)):
            raise ConfigError(f"zone ids must cover 1..17 exactly once, got {sorted(ids)}")
        if not 0 <= self.groin_band < 8:
            raise ConfigError(f"groin band index {self.groin_band} out of range")
        if not 0 < self.strip_fraction <= 1:
            raise ConfigError(f"strip_fraction must be in (0, 1], got {self.strip_fraction}")

    def band_index(self, h):
        """Band index for relative height(s) ``h``; the top band is closed at 1."""
        edges = np.array([b.h_hi for b in self.bands[:-1]])
        return np.searchsorted(edges, h, side="right")

    def mirror_map(self) -> np.ndarray:
        """``m[zone]`` is the zone a voxel lands in after an x-mirror (index 0 is background)."""
        m = np.arange(18)
        for b in self.bands:
            m[b.right_zone], m[b.left_zone] = b.left_zone, b.right_zone
        return m

    def lookup(self, h: float, side: int, centered: bool = False) -> int:
        i = int(self.band_index(h))
        if centered and i == self.groin_band:
            return self.strip_zone
        b = self.bands[i]
        return b.right_zone if side == RIGHT else b.left_zone


DEFAULT_TABLE = ZoneBandTable(
    bands=(
        ZoneBand(0.00, 0.10, 15, 16),
        ZoneBand(0.10, 0.25, 13, 14),
        ZoneBand(0.25, 0.42, 11, 12),
        ZoneBand(0.42, 0.50, 8, 10),
        ZoneBand(0.50, 0.58, 6, 7),
        ZoneBand(0.58, 0.70, 5, 17),
        ZoneBand(0.70, 0.82, 2, 4),
        ZoneBand(0.82, 1.00, 1, 3),
    ),
    groin_band=3,
    strip_fraction=0.25,
)


def read_band_table(path) -> ZoneBandTable:
    """Load a band table CSV.

    Columns are ``band,h_lo,h_hi,right_zone,left_zone,strip_fraction``; the
    one row with a non-empty ``strip_fraction`` is the groin band.
    """
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"band", "h_lo", "h_hi", "right_zone", "left_zone"}
        if not need.issubset(reader.fieldnames or []):
            raise ConfigError(f"{path}: band table needs columns {sorted(need)}")
        rows = sorted(reader, key=lambda r: int(r["band"]))
    bands, groin, strip = [], None, None
    for i, r in enumerate(rows):
        bands.append(ZoneBand(float(r["h_lo"]), float(r["h_hi"]), int(r["right_zone"]), int(r["left_zone"])))
        if (r.get("strip_fraction") or "").strip():
            if groin is not None:
                raise ConfigError(f"{path}: more than one groin row")
            groin, strip = i, float(r["strip_fraction"])
    if groin is None:
        raise ConfigError(f"{path}: no row carries strip_fraction")
    return ZoneBandTable(tuple(bands), groin, strip)


def write_band_table(table: ZoneBandTable, path) -> None:
    lines = ["band,h_lo,h_hi,right_zone,left_zone,strip_fraction"]
    for i, b in enumerate(table.bands):
        strip = repr(table.strip_fraction) if i == table.groin_band else ""
        lines.append(f"{i},{b.h_lo!r},{b.h_hi!r},{b.right_zone},{b.left_zone},{strip}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def body_extent(masks: np.ndarray) -> tuple[int, int]:
    """Lowest and highest z holding any foreground in a ``(nz, ny, nx)`` mask stack."""
    occupied = np.flatnonzero(np.asarray(masks).reshape(len(masks), -1).any(axis=1))
    if occupied.size == 0:
        raise NoForegroundError("mask stack has no foreground")
    return int(occupied[0]), int(occupied[-1])


def relative_height(z, z_bottom: int, z_top: int):
    if z_top == z_bottom:
        return np.zeros_like(np.asarray(z, dtype=float))
    return (np.asarray(z, dtype=float) - z_bottom) / (z_top - z_bottom)


def midline(mask: np.ndarray) -> float:
    """Foreground centroid along x (``u``)."""
    _, u = np.nonzero(mask)
    if u.size == 0:
        raise NoForegroundError("slice has no foreground")
    return float(u.mean())


def split_left_right(mask: np.ndarray) -> np.ndarray:
    """Side map: RIGHT where ``u < midline``, LEFT where ``u >= midline``, 0 off the mask."""
    mask = np.asarray(mask, dtype=bool)
    mid = midline(mask)
    u = np.arange(mask.shape[1])
    sides = np.where(u < mid, RIGHT, LEFT).astype(np.int8)
    return np.where(mask, sides[None, :], BACKGROUND).astype(np.int8)


def label_slice(mask: np.ndarray, h: float, table: ZoneBandTable = DEFAULT_TABLE, mid: float | None = None) -> np.ndarray:
    """Zone labels for one slice at relative height ``h``.

    ``mid`` overrides the centroid midline (the phantom generator passes its
    geometric axis here).
    """
    mask = np.asarray(mask, dtype=bool)
    labels = np.zeros(mask.shape, dtype=np.uint8)
    if not mask.any():
        return labels
    if mid is None:
        mid = midline(mask)
    band = table.bands[int(table.band_index(h))]
    u = np.arange(mask.shape[1], dtype=float)
    row = np.where(u < mid, band.right_zone, band.left_zone)
    if int(table.band_index(h)) == table.groin_band:
        cols = np.flatnonzero(mask.any(axis=0))
        width = cols[-1] - cols[0] + 1
        row = np.where(np.abs(u - mid) <= table.strip_fraction * width / 2.0, table.strip_zone, row)
    labels[mask] = np.broadcast_to(row, mask.shape)[mask]
    return labels


def assign_zones(masks: np.ndarray, table: ZoneBandTable = DEFAULT_TABLE) -> np.ndarray:
    """Label every foreground voxel of a ``(nz, ny, nx)`` stack with a zone in 1..17."""
    masks = np.asarray(masks, dtype=bool)
    z_bottom, z_top = body_extent(masks)
    labels = np.zeros(masks.shape, dtype=np.uint8)
    for z in range(z_bottom, z_top + 1):
        if masks[z].any():
            labels[z] = label_slice(masks[z], float(relative_height(z, z_bottom, z_top)), table)
    return labels


def extract_zone_points(labels: np.ndarray, zone: int) -> np.ndarray:
    """``(n, 3)`` integer array of ``(x, y, z)`` for voxels carrying ``zone``, raster order."""
    if not 1 <= zone <= 17:
        raise ConfigError(f"zone {zone} outside 1..17")
    z, y, x = np.nonzero(np.asarray(labels) == zone)
    return np.column_stack([x, y, z]).astype(np.int64)


def write_point_clouds(labels: np.ndarray, out_dir, zones: Sequence[int] = range(1, 18)) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for k in zones:
        pts = extract_zone_points(labels, k)
        body = "\n".join(f"{x},{y},{z}" for x, y, z in pts.tolist())
        path = out_dir / f"zone{k}_points.csv"
        atomic_write_text(path, "x,y,z\n" + (body + "\n" if body else ""))
        paths.append(path)
    return paths
