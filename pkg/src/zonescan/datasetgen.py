"""Labeled slice dataset: crops, directory layout, split manifest, mean image.

Class ids run 0..33: ``zone - 1`` for a clean zone and ``zone - 1 + 17`` for
the same zone carrying a threat. Images live under ``zone<k>/`` or
``zone<k>_threat/`` below the dataset root; manifest paths are relative to
that root.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import shutil
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from .errors import ParameterError, SchemaError, ValidationError, ZonescanError
from .imgproc import mask_multiply, to_png_gray
from .scanio import ScanVolume, ThreatAnnotation, atomic_write_text, read_volume, write_volume
from .zoner import DEFAULT_TABLE, ZoneBandTable

log = logging.getLogger(__name__)

NUM_ZONES = 17
NUM_CLASSES = 2 * NUM_ZONES
IMAGE_SIZE = 256
SPLITS = ("train", "val", "test")
MANIFEST_COLUMNS = ("image_path", "class_id", "body_id", "z", "split")


def class_id(zone: int, threat: bool) -> int:
    if not 1 <= zone <= NUM_ZONES:
        raise ValidationError(f"zone {zone} outside 1..17")
    return zone - 1 + (NUM_ZONES if threat else 0)


def zone_of(cid: int) -> int:
    return cid % NUM_ZONES + 1


def is_threat(cid: int) -> bool:
    return cid >= NUM_ZONES


def class_name(cid: int) -> str:
    return f"zone{zone_of(cid)}" + ("_threat" if is_threat(cid) else "")


CLASS_NAMES = tuple(class_name(c) for c in range(NUM_CLASSES))


@dataclass(frozen=True)
class DatasetSample:
    image_path: str
    class_id: int
    body_id: str
    z: int
    split: str = ""

    @property
    def zone(self) -> int:
        return zone_of(self.class_id)

    @property
    def key(self):
        return (self.body_id, self.z, self.zone)


# --- resampling ---------------------------------------------------------------


def _bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row ``i`` holds the weights of output sample ``i`` (pixel-centre convention, clamped edges)."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w = src - i0
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - w)
    np.add.at(m, (rows, i1), w)
    return m


def bilinear_resize(img, height: int, width: int) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    return _bilinear_matrix(a.shape[0], height) @ a @ _bilinear_matrix(a.shape[1], width).T


def pad_to_square(img) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    h, w = a.shape
    side = max(h, w)
    out = np.zeros((side, side))
    top, left = (side - h) // 2, (side - w) // 2
    out[top : top + h, left : left + w] = a
    return out


def resize_to_256(img, size: int = IMAGE_SIZE) -> np.ndarray:
    """Zero-pad to a centred square, then bilinear-resample to ``size x size``."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 2 or a.size == 0:
        raise ParameterError(f"cannot resize image of shape {a.shape}")
    sq = pad_to_square(a)
    if sq.shape[0] == size:
        return sq
    return bilinear_resize(sq, size, size)


def encode_png(img8: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(img8, dtype=np.uint8)).save(buf, format="PNG")
    return buf.getvalue()


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.uint8)


# --- sample building ----------------------------------------------------------


def _is_threat_sample(zone: int, z: int, bbox, threats: Sequence[ThreatAnnotation]) -> bool:
    x0, y0, x1, y1 = bbox
    return any(a.zone == zone and a.contains_z(z) and a.overlaps_xy(x0, x1, y0, y1) for a in threats)


def _check_annotations(volume: ScanVolume, zl: np.ndarray, threats: Sequence[ThreatAnnotation]) -> None:
    for a in threats:
        a.check_bounds(volume.nx, volume.ny, volume.nz)
        box = zl[a.z_start : a.z_stop + 1, a.y_start : a.y_stop + 1, a.x_start : a.x_stop + 1]
        if not (box == a.zone).any():
            log.warning("threat box for body %s names zone %d but the segmentation has no such voxels in it; affected samples stay clean", a.body_id, a.zone)


def build_samples(
    volume: ScanVolume,
    zl: np.ndarray,
    threats: Sequence[ThreatAnnotation],
    out_dir,
    min_area: int = 20,
    size: int = IMAGE_SIZE,
) -> list[DatasetSample]:
    """Write one PNG per (slice, zone) with at least ``min_area`` pixels and return the samples."""
    zl = np.asarray(zl)
    if zl.shape != volume.voxels.shape:
        raise ValidationError(f"label volume {zl.shape} does not match scan {volume.voxels.shape}")
    threats = [a for a in threats if a.body_id == volume.body_id]
    _check_annotations(volume, zl, threats)
    out_dir = Path(out_dir)
    samples = []
    for z in range(volume.nz):
        labels = zl[z]
        present = np.unique(labels)
        for zone in present[present > 0].tolist():
            zmask = labels == zone
            if zmask.sum() < min_area:
                continue
            vs, us = np.nonzero(zmask)
            bbox = (int(us.min()), int(vs.min()), int(us.max()), int(vs.max()))
            threat = _is_threat_sample(zone, z, bbox, threats)
            cid = class_id(zone, threat)
            product = mask_multiply(volume.voxels[z], zmask)
            crop = product[bbox[1] : bbox[3] + 1, bbox[0] : bbox[2] + 1]
            img8 = to_png_gray(resize_to_256(crop, size))
            rel = f"{class_name(cid)}/{volume.body_id}_z{z:04d}.png"
            dest = out_dir / rel
            try:
                dest.parent.mkdir(parents=True, exist_ok=True)
                dest.write_bytes(encode_png(img8))
            except OSError as exc:
                raise ZonescanError(f"cannot write {dest}: {exc}") from exc
            samples.append(DatasetSample(rel, cid, volume.body_id, z))
    return samples


def clear_class_dirs(out_dir) -> None:
    """Remove the ``zone<k>[_threat]`` directories this module owns under ``out_dir``."""
    for name in CLASS_NAMES:
        d = Path(out_dir) / name
        if d.is_dir():
            shutil.rmtree(d)


# --- splitting ----------------------------------------------------------------


def split_counts(n: int, ratios: Sequence[float]) -> tuple[int, ...]:
    """Per-split sizes: floor of each share, leftovers dealt one at a time starting with train."""
    base = [int(math.floor(r * n + 1e-9)) for r in ratios]
    left = n - sum(base)
    i = 0
    while left > 0:
        base[i % len(base)] += 1
        left -= 1
        i += 1
    return tuple(base)


def split_dataset(samples: Sequence[DatasetSample], ratios=(0.6, 0.2, 0.2), seed: int = 0) -> list[DatasetSample]:
    """Stratified, seeded split; returns the samples in ``(body, z, zone)`` order with splits set."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) <= 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ParameterError(f"ratios must be three positive values summing to 1, got {ratios}")
    ordered = sorted(samples, key=lambda s: s.key)
    if len({s.key for s in ordered}) != len(ordered):
        raise ValidationError("duplicate (body, z, zone) rows")
    by_class: dict[int, list[int]] = {}
    for i, s in enumerate(ordered):
        by_class.setdefault(s.class_id, []).append(i)
    rng = np.random.default_rng(seed)
    split_of = [""] * len(ordered)
    for cid in sorted(by_class):
        idx = by_class[cid]
        perm = [idx[j] for j in rng.permutation(len(idx))]
        if len(idx) < 3:
            log.warning("class %s has only %d sample(s); all go to train", class_name(cid), len(idx))
            counts = (len(idx), 0, 0)
        else:
            counts = split_counts(len(idx), ratios)
        start = 0
        for name, c in zip(SPLITS, counts):
            for j in perm[start : start + c]:
                split_of[j] = name
            start += c
    return [replace(s, split=sp) for s, sp in zip(ordered, split_of)]


def class_histogram(samples: Iterable[DatasetSample], split: str | None = None) -> np.ndarray:
    h = np.zeros(NUM_CLASSES, dtype=np.int64)
    for s in samples:
        if split is None or s.split == split:
            h[s.class_id] += 1
    return h


# --- manifest -----------------------------------------------------------------


def write_manifest(samples: Sequence[DatasetSample], path) -> None:
    lines = [",".join(MANIFEST_COLUMNS)]
    lines += [f"{s.image_path},{s.class_id},{s.body_id},{s.z},{s.split}" for s in samples]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_manifest(path) -> list[DatasetSample]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != MANIFEST_COLUMNS:
            raise SchemaError(f"{path}: manifest header must be {','.join(MANIFEST_COLUMNS)}")
        return [DatasetSample(r["image_path"], int(r["class_id"]), r["body_id"], int(r["z"]), r["split"]) for r in reader]


# --- mean image and augmentation ---------------------------------------------


def compute_mean_image(samples: Sequence[DatasetSample], root, size: int = IMAGE_SIZE) -> np.ndarray:
    """Per-pixel mean of the train-split PNGs, in 0..255 units."""
    train = [s for s in samples if s.split == "train"]
    if not train:
        raise ValidationError("train split is empty; cannot compute a mean image")
    acc = np.zeros((size, size), dtype=np.float64)
    for s in train:
        acc += read_png(Path(root) / s.image_path)
    return acc / len(train)


def write_mean_image(mean: np.ndarray, path) -> None:
    write_volume(ScanVolume("mean", np.asarray(mean)[None, :, :]), path)


def read_mean_image(path) -> np.ndarray:
    return read_volume(path).voxels[0].astype(np.float64)


def flip_class(cid: int, table: ZoneBandTable = DEFAULT_TABLE) -> int:
    """Class of the x-mirrored sample: zone goes through the band table's right/left pairing."""
    mirrored = int(table.mirror_map()[zone_of(cid)])
    return class_id(mirrored, is_threat(cid))


def augment(image, cid: int, kind: str, factor: float = 0.8, table: ZoneBandTable = DEFAULT_TABLE):
    """Return ``(image, class_id)`` after a horizontal flip or a contrast change about the mean.

    Contrast results are clamped to the 0..255 range the dataset images use.
    """
    a = np.asarray(image)
    if kind == "flip":
        return a[..., ::-1].copy(), flip_class(cid, table)
    if kind == "contrast":
        m = a.mean()
        return np.clip(m + factor * (a - m), 0.0, 255.0), cid
    raise ParameterError(f"unknown augmentation {kind!r}")


def load_images(samples: Sequence[DatasetSample], root, size: int = 64) -> np.ndarray:
    """``(N, size, size)`` float32 stack of the samples' PNGs, bilinear-downsampled."""
    out = np.empty((len(samples), size, size), dtype=np.float32)
    ry = rx = None
    for i, s in enumerate(samples):
        img = read_png(Path(root) / s.image_path).astype(np.float64)
        if img.shape != (size, size):
            if ry is None or ry.shape[1] != img.shape[0]:
                ry, rx = _bilinear_matrix(img.shape[0], size), _bilinear_matrix(img.shape[1], size)
            img = ry @ img @ rx.T
        out[i] = img
    return out
