"""Scan volume and threat table I/O.

Volumes use the ``SCANVOL1`` layout::

    bytes 0..7    b"SCANVOL1"
    bytes 8..19   nx, ny, nz as little-endian uint32
    bytes 20..    nx*ny*nz little-endian float32, x fastest, then y, then z

In memory the voxels are a C-ordered ``(nz, ny, nx)`` array, so
``voxels[z, y, x]`` is the voxel at ``(x, y, z)`` and the flat buffer order
matches the file order.
"""

from __future__ import annotations

import csv
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import BoundsError, CorruptionError, DataError, FormatError, SchemaError, ValidationError

MAGIC = b"SCANVOL1"
_HEADER = struct.Struct("<8sIII")

THREAT_COLUMNS = ("body_Id", "z_start", "z_stop", "zone", "x_start", "x_stop", "y_start", "y_stop")


@dataclass(frozen=True, eq=False)
class ScanVolume:
    body_id: str
    voxels: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.voxels, dtype=np.float32)
        if v.ndim != 3 or min(v.shape) < 1:
            raise DataError(f"voxels must be a non-empty 3-D array, got shape {v.shape}")
        if not np.isfinite(v).all():
            raise DataError(f"volume {self.body_id!r} contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "voxels", v)

    @property
    def nx(self) -> int:
        return self.voxels.shape[2]

    @property
    def ny(self) -> int:
        return self.voxels.shape[1]

    @property
    def nz(self) -> int:
        return self.voxels.shape[0]

    @property
    def intensity_range(self) -> tuple[float, float]:
        return float(self.voxels.min()), float(self.voxels.max())

    def __eq__(self, other):
        if not isinstance(other, ScanVolume):
            return NotImplemented
        return self.body_id == other.body_id and np.array_equal(self.voxels, other.voxels)

    def __hash__(self):
        return hash((self.body_id, self.voxels.shape))


def write_volume(volume: ScanVolume, path) -> None:
    """Write ``volume`` in SCANVOL1 layout, atomically."""
    payload = _HEADER.pack(MAGIC, volume.nx, volume.ny, volume.nz) + volume.voxels.astype("<f4").tobytes()
    atomic_write_bytes(path, payload)


def read_volume(path, body_id: str | None = None) -> ScanVolume:
    """Read a SCANVOL1 file.

    The body id is not stored in the file; it defaults to the file stem.
    """
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 8 or data[:8] != MAGIC:
        raise FormatError(f"{path}: bad magic, expected {MAGIC!r}")
    if len(data) < _HEADER.size:
        raise CorruptionError(f"{path}: truncated header")
    _, nx, ny, nz = _HEADER.unpack_from(data)
    if min(nx, ny, nz) < 1:
        raise FormatError(f"{path}: zero dimension in header ({nx}, {ny}, {nz})")
    count = nx * ny * nz
    have = (len(data) - _HEADER.size) // 4
    if have < count:
        raise CorruptionError(f"{path}: expected {count} voxels, found {have}")
    voxels = np.frombuffer(data, dtype="<f4", count=count, offset=_HEADER.size)
    if not np.isfinite(voxels).all():
        raise DataError(f"{path}: non-finite voxel values")
    return ScanVolume(body_id if body_id is not None else path.stem, voxels.reshape(nz, ny, nx))


def slice_xy(volume: ScanVolume, z: int) -> np.ndarray:
    """Return the ``(ny, nx)`` image at height ``z``; pixel ``[v, u]`` is voxel ``(u, v, z)``."""
    if not 0 <= z < volume.nz:
        raise BoundsError(f"z={z} outside [0, {volume.nz})")
    return volume.voxels[z]


def atomic_write_bytes(path, payload: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


# --- threat annotations ------------------------------------------------------


@dataclass(frozen=True)
class ThreatAnnotation:
    """Axis-aligned threat box; all bounds are inclusive voxel indices."""

    body_id: str
    zone: int
    z_start: int
    z_stop: int
    x_start: int
    x_stop: int
    y_start: int
    y_stop: int

    def __post_init__(self):
        if not 1 <= self.zone <= 17:
            raise ValidationError(f"zone {self.zone} outside 1..17")
        for axis in "zxy":
            lo, hi = getattr(self, f"{axis}_start"), getattr(self, f"{axis}_stop")
            if lo > hi:
                raise ValidationError(f"{axis}_start={lo} > {axis}_stop={hi} for body {self.body_id}")

    def check_bounds(self, nx: int, ny: int, nz: int) -> None:
        if min(self.x_start, self.y_start, self.z_start) < 0 or self.x_stop >= nx or self.y_stop >= ny or self.z_stop >= nz:
            raise BoundsError(f"threat box for body {self.body_id} exceeds volume ({nx}, {ny}, {nz})")

    def contains_z(self, z: int) -> bool:
        return self.z_start <= z <= self.z_stop

    def overlaps_xy(self, x0: int, x1: int, y0: int, y1: int) -> bool:
        """True if the inclusive box ``[x0, x1] x [y0, y1]`` shares at least one pixel."""
        return x0 <= self.x_stop and self.x_start <= x1 and y0 <= self.y_stop and self.y_start <= y1


def read_threat_table(path) -> list[ThreatAnnotation]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in THREAT_COLUMNS if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            try:
                values = {c: int(row[c]) for c in THREAT_COLUMNS[1:]}
            except (TypeError, ValueError) as exc:
                raise ValidationError(f"{path}:{lineno}: non-integer coordinate") from exc
            rows.append(ThreatAnnotation(body_id=row["body_Id"].strip(), **values))
    return rows


def write_threat_table(annotations: Iterable[ThreatAnnotation], path) -> None:
    lines = [",".join(THREAT_COLUMNS)]
    for a in annotations:
        lines.append(f"{a.body_id},{a.z_start},{a.z_stop},{a.zone},{a.x_start},{a.x_stop},{a.y_start},{a.y_stop}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def threats_by_body(annotations: Sequence[ThreatAnnotation]) -> dict[str, list[ThreatAnnotation]]:
    out: dict[str, list[ThreatAnnotation]] = {}
    for a in annotations:
        out.setdefault(a.body_id, []).append(a)
    return out
