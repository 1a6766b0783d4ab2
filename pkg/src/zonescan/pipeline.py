"""Pipeline stages behind the command-line interface.

Each stage reads the previous stage's files under the configured
directories, writes its own, and returns a one-line summary.
"""

from __future__ import annotations

import csv
import logging
import shutil
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .cnn import TrainConfig, layer_stats, load_checkpoint, save_checkpoint, train, write_layer_stats
from .cnn.train import ArraySet, TrainingLog, downsample_mean, evaluate_arrays, hyperparameters
from .config import PipelineConfig
from .datasetgen import (
    CLASS_NAMES,
    IMAGE_SIZE,
    NUM_CLASSES,
    bilinear_resize,
    build_samples,
    class_histogram,
    clear_class_dirs,
    compute_mean_image,
    load_images,
    read_manifest,
    read_mean_image,
    read_png,
    resize_to_256,
    split_dataset,
    write_manifest,
    write_mean_image,
)
from .errors import DataError, UndefinedAUCError, ValidationError
from .evalrep import confusion, precision_recall, roc_for_class, topk_accuracy
from .imgproc import SegmentParams, binarize_volume
from .phantom import PhantomSpec, generate_phantom
from .reports import render_reports
from .scanio import ScanVolume, atomic_write_text, read_threat_table, read_volume, threats_by_body, write_threat_table, write_volume
from .zoner import DEFAULT_TABLE, assign_zones, read_band_table, write_point_clouds

log = logging.getLogger(__name__)

VOLUME_SUFFIX = ".scanvol"
MASK_SUFFIX = "_mask.scanvol"
ZONES_SUFFIX = "_zones.scanvol"


def _zone_table(cfg: PipelineConfig):
    return read_band_table(cfg.zone_table) if cfg.zone_table else DEFAULT_TABLE


def _map(cfg: PipelineConfig, fn, items):
    items = list(items)
    if cfg.threads <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        return list(pool.map(fn, items))


def _clear(directory: Path, pattern: str) -> None:
    for p in directory.glob(pattern):
        p.unlink()


def _body_ids(directory: Path, suffix: str) -> list[str]:
    ids = sorted(p.name[: -len(suffix)] for p in directory.glob("*" + suffix))
    if not ids:
        raise DataError(f"no *{suffix} files in {directory}")
    return ids


def _label_volume(body_id: str, labels: np.ndarray) -> ScanVolume:
    return ScanVolume(body_id, labels.astype(np.float32))


# --- synth --------------------------------------------------------------------


def phantom_specs(cfg: PipelineConfig) -> list[PhantomSpec]:
    """Per-body phantom parameters drawn from one generator, so the set depends only on the seed."""
    if cfg.bodies < 1:
        raise ValidationError("bodies must be >= 1")
    if cfg.threats < 0 or not 0 <= cfg.threat_fraction <= 1:
        raise ValidationError("threats must be >= 0 and threat_fraction in [0, 1]")
    rng = np.random.default_rng(cfg.synth_seed)
    sx, sy = cfg.nx / 64.0, cfg.ny / 40.0
    specs = []
    for i in range(cfg.bodies):
        threat = cfg.threats > 0 and rng.random() < cfg.threat_fraction
        count = int(rng.integers(1, cfg.threats + 1)) if threat else 0
        height = min(cfg.nz, max(2, int(round(cfg.height * rng.uniform(0.9, 1.0)))))
        specs.append(
            PhantomSpec(
                nx=cfg.nx,
                ny=cfg.ny,
                nz=cfg.nz,
                height_voxels=height,
                z_offset=int(rng.integers(0, cfg.nz - height + 1)),
                torso_radius=12.0 * sx * rng.uniform(0.92, 1.08),
                limb_radius=6.0 * sx * rng.uniform(0.92, 1.08),
                center_x=(cfg.nx - 1) / 2.0 + 2.0 * sx * rng.uniform(-1, 1),
                center_y=(cfg.ny - 1) / 2.0 + 1.5 * sy * rng.uniform(-1, 1),
                noise_sigma=cfg.noise_sigma,
                threat_count=count,
                threat_intensity_boost=cfg.threat_boost,
                seed=int(rng.integers(2**31)),
                body_id=f"{i:05x}",
            )
        )
    return specs


def run_synth(cfg: PipelineConfig) -> str:
    vol_dir, truth_dir = cfg.path("volumes_dir"), cfg.path("truth_dir")
    for d in (vol_dir, truth_dir):
        d.mkdir(parents=True, exist_ok=True)
    _clear(vol_dir, "*" + VOLUME_SUFFIX)
    _clear(truth_dir, "*" + ZONES_SUFFIX)
    table = _zone_table(cfg)

    def one(spec):
        volume, labels, threats = generate_phantom(spec, table)
        write_volume(volume, vol_dir / f"{spec.body_id}{VOLUME_SUFFIX}")
        write_volume(_label_volume(spec.body_id, labels), truth_dir / f"{spec.body_id}{ZONES_SUFFIX}")
        return threats

    threats = [a for batch in _map(cfg, one, phantom_specs(cfg)) for a in batch]
    write_threat_table(threats, cfg.path("threat_table"))
    return f"synth: {cfg.bodies} volumes in {vol_dir}, {len(threats)} threat rows in {cfg.path('threat_table')}"


# --- preprocess and segment ---------------------------------------------------


def segment_params(cfg: PipelineConfig) -> SegmentParams:
    return SegmentParams(
        sigma=cfg.sigma,
        window=cfg.sauvola_window,
        k=cfg.sauvola_k,
        R=cfg.sauvola_R or None,
        floor=cfg.global_floor if cfg.global_floor >= 0 else None,
        dilation_radius=cfg.dilation_radius,
        min_area=cfg.min_area,
        connectivity=cfg.connectivity,
    )


def run_preprocess(cfg: PipelineConfig) -> str:
    vol_dir, mask_dir = cfg.path("volumes_dir"), cfg.path("masks_dir")
    ids = _body_ids(vol_dir, VOLUME_SUFFIX)
    mask_dir.mkdir(parents=True, exist_ok=True)
    _clear(mask_dir, "*" + MASK_SUFFIX)
    params = segment_params(cfg)

    def one(body_id):
        volume = read_volume(vol_dir / f"{body_id}{VOLUME_SUFFIX}")
        mask = binarize_volume(volume.voxels, params)
        write_volume(_label_volume(body_id, mask), mask_dir / f"{body_id}{MASK_SUFFIX}")
        return int(mask.sum())

    counts = _map(cfg, one, ids)
    return f"preprocess: {len(ids)} masks in {mask_dir}, {sum(counts)} foreground voxels"


def run_segment(cfg: PipelineConfig) -> str:
    mask_dir, zone_dir, truth_dir = cfg.path("masks_dir"), cfg.path("zones_dir"), cfg.path("truth_dir")
    ids = _body_ids(mask_dir, MASK_SUFFIX)
    zone_dir.mkdir(parents=True, exist_ok=True)
    _clear(zone_dir, "*" + ZONES_SUFFIX)
    table = _zone_table(cfg)

    def one(body_id):
        masks = read_volume(mask_dir / f"{body_id}{MASK_SUFFIX}").voxels > 0
        labels = assign_zones(masks, table)
        write_volume(_label_volume(body_id, labels), zone_dir / f"{body_id}{ZONES_SUFFIX}")
        if cfg.write_points:
            pts = zone_dir / body_id
            if pts.is_dir():
                shutil.rmtree(pts)
            write_point_clouds(labels, pts)
        truth = truth_dir / f"{body_id}{ZONES_SUFFIX}"
        if not truth.is_file():
            return None
        gt = read_volume(truth).voxels.astype(np.uint8)
        fg = gt > 0
        return int((labels[fg] == gt[fg]).sum()), int(fg.sum())

    matches = [m for m in _map(cfg, one, ids) if m is not None]
    msg = f"segment: {len(ids)} zone volumes in {zone_dir}"
    if matches:
        hit, total = map(sum, zip(*matches))
        msg += f", zone match vs truth {hit / max(total, 1):.4f}"
    return msg


# --- dataset ------------------------------------------------------------------


def run_build_dataset(cfg: PipelineConfig) -> str:
    vol_dir, zone_dir, out = cfg.path("volumes_dir"), cfg.path("zones_dir"), cfg.path("dataset_dir")
    ids = _body_ids(zone_dir, ZONES_SUFFIX)
    table_path = cfg.path("threat_table")
    threats = threats_by_body(read_threat_table(table_path)) if table_path.is_file() else {}
    out.mkdir(parents=True, exist_ok=True)
    clear_class_dirs(out)

    def one(body_id):
        volume = read_volume(vol_dir / f"{body_id}{VOLUME_SUFFIX}", body_id=body_id)
        zl = read_volume(zone_dir / f"{body_id}{ZONES_SUFFIX}").voxels.astype(np.uint8)
        return build_samples(volume, zl, threats.get(body_id, []), out, cfg.min_area)

    samples = [s for batch in _map(cfg, one, ids) for s in batch]
    if not samples:
        raise DataError("no slice reached min_area; the dataset would be empty")
    samples = split_dataset(samples, cfg.ratios, cfg.split_seed)
    write_manifest(samples, out / "manifest.csv")
    write_mean_image(compute_mean_image(samples, out), out / "mean.scanvol")
    sizes = [int(class_histogram(samples, s).sum()) for s in ("train", "val", "test")]
    present = int((class_histogram(samples) > 0).sum())
    return f"build-dataset: {len(samples)} images over {present} classes (train {sizes[0]}, val {sizes[1]}, test {sizes[2]}) in {out}"


# --- train and evaluate -------------------------------------------------------


def train_config(cfg: PipelineConfig) -> TrainConfig:
    data = cfg.path("dataset_dir")
    return TrainConfig(
        manifest=str(data / "manifest.csv"),
        mean_image=str(data / "mean.scanvol"),
        dataset_root=str(data),
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        lr=cfg.lr,
        momentum=cfg.momentum,
        seed=cfg.train_seed,
        flip_threats=cfg.flip_threats,
        contrast=cfg.contrast,
        contrast_prob=cfg.contrast_prob,
        dropout=cfg.dropout,
        threads=cfg.threads,
    )


def run_train(cfg: PipelineConfig) -> str:
    tc = train_config(cfg)
    model, history = train(tc)
    model_dir = cfg.path("model_dir")
    model_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, model_dir / "model.ckpt", hyperparameters(tc))
    shutil.copyfile(tc.mean_image, model_dir / "mean.scanvol")
    history.write(model_dir / "training_log.csv")
    best = history.rows[history.best_epoch - 1]
    return f"train: {len(history.rows)} epochs, best val accuracy {best.val_accuracy:.4f} at epoch {best.epoch}, model in {model_dir / 'model.ckpt'}"


def _load_model(cfg: PipelineConfig):
    model_dir = cfg.path("model_dir")
    model, _ = load_checkpoint(model_dir / "model.ckpt")
    mean64 = downsample_mean(read_mean_image(model_dir / "mean.scanvol"), model.input_shape[-1])
    return model, mean64


def write_predictions(rows, probs: np.ndarray, path) -> None:
    header = ["image_path", "class_id", "predicted"] + [f"p_{c:02d}" for c in range(probs.shape[1])]
    lines = [",".join(header)]
    for s, p in zip(rows, probs):
        lines.append(",".join([s.image_path, str(s.class_id), str(int(p.argmax()))] + [repr(float(v)) for v in p]))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_predictions(path) -> tuple[np.ndarray, np.ndarray]:
    """``(truths, probabilities)`` from a predictions file."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    if header[:3] != ["image_path", "class_id", "predicted"]:
        raise DataError(f"{path}: not a predictions file")
    truths = np.array([int(r[1]) for r in rows], dtype=np.int64)
    probs = np.array([[float(v) for v in r[3:]] for r in rows], dtype=np.float64).reshape(len(rows), len(header) - 3)
    return truths, probs


def run_evaluate(cfg: PipelineConfig) -> str:
    data = cfg.path("dataset_dir")
    model, mean64 = _load_model(cfg)
    rows = [s for s in read_manifest(data / "manifest.csv") if s.split == cfg.eval_split]
    if not rows:
        raise DataError(f"split {cfg.eval_split!r} is empty")
    arrays = ArraySet(load_images(rows, data, model.input_shape[-1]), np.array([s.class_id for s in rows], dtype=np.int64))
    _, acc, probs = evaluate_arrays(model, arrays, mean64)
    out = cfg.path("eval_dir")
    out.mkdir(parents=True, exist_ok=True)
    write_predictions(rows, probs, out / "predictions.csv")
    top5 = topk_accuracy(probs, arrays.labels, 5)
    return f"evaluate: {len(rows)} {cfg.eval_split} images, top-1 {acc:.4f}, top-5 {top5:.4f}"


def run_report(cfg: PipelineConfig) -> str:
    truths, probs = read_predictions(cfg.path("eval_dir") / "predictions.csv")
    history = TrainingLog.read(cfg.path("model_dir") / "training_log.csv")
    cm = confusion(probs.argmax(axis=1), truths, NUM_CLASSES)
    metrics = precision_recall(cm)
    rocs = {}
    for k in range(NUM_CLASSES):
        try:
            rocs[k] = roc_for_class(probs, truths, k)
        except UndefinedAUCError:
            pass
    out = cfg.path("reports_dir")
    paths = render_reports(history, cm, metrics, out, rocs)
    return f"report: {len(paths)} files in {out}, macro precision {metrics.macro_precision:.4f}, macro recall {metrics.macro_recall:.4f}"


# --- single image -------------------------------------------------------------


def prepare_image(path, size: int) -> np.ndarray:
    """A PNG as the network sees it before mean subtraction: 0..255, ``size`` square."""
    img = read_png(path).astype(np.float64)
    if img.shape != (IMAGE_SIZE, IMAGE_SIZE):
        img = resize_to_256(img)
    return bilinear_resize(img, size, size).astype(np.float32)


def classify_one(cfg: PipelineConfig, image, stats_path=None) -> tuple[np.ndarray, list[tuple[str, float]]]:
    """Class probabilities for one image and the five most likely class names."""
    model, mean64 = _load_model(cfg)
    x = ((prepare_image(image, model.input_shape[-1]) - mean64) / np.float32(255.0))[None, None].astype(np.float32)
    probs = model.forward(x)[0].astype(np.float64)
    order = sorted(range(len(probs)), key=lambda c: (-probs[c], c))[:5]
    if stats_path is not None:
        Path(stats_path).parent.mkdir(parents=True, exist_ok=True)
        write_layer_stats(layer_stats(model, x), stats_path)
    return probs, [(CLASS_NAMES[c], float(probs[c])) for c in order]


STAGES = {
    "synth": run_synth,
    "preprocess": run_preprocess,
    "segment": run_segment,
    "build-dataset": run_build_dataset,
    "train": run_train,
    "evaluate": run_evaluate,
    "report": run_report,
}
