"""Minibatch SGD training over the slice dataset."""

from __future__ import annotations

import logging
import time
from contextlib import nullcontext
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from ..datasetgen import (
    NUM_CLASSES,
    DatasetSample,
    augment,
    bilinear_resize,
    is_threat,
    load_images,
    read_manifest,
    read_mean_image,
)
from ..errors import ConfigError, DivergenceError
from ..scanio import atomic_write_text
from .model import CnnModel, architecture, sgd_step

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    manifest: str = ""
    mean_image: str = ""
    dataset_root: str = ""
    epochs: int = 30
    batch_size: int = 32
    lr: float = 0.01
    momentum: float = 0.9
    seed: int = 0
    flip_threats: bool = True
    contrast: float = 0.8
    contrast_prob: float = 0.5
    dropout: float = 0.0
    input_size: int = 64
    threads: int = 1

    def validate(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must be in [0, 1)")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0 <= self.contrast_prob <= 1:
            raise ConfigError("contrast_prob must be in [0, 1]")


@dataclass
class EpochRow:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float
    seconds: float


@dataclass
class TrainingLog:
    rows: list[EpochRow] = field(default_factory=list)
    best_epoch: int = 0

    def to_csv(self, include_time: bool = True) -> str:
        cols = ["epoch", "train_loss", "val_loss", "val_accuracy"] + (["seconds"] if include_time else [])
        lines = [",".join(cols)]
        for r in self.rows:
            vals = [str(r.epoch), repr(r.train_loss), repr(r.val_loss), repr(r.val_accuracy)]
            if include_time:
                vals.append(f"{r.seconds:.3f}")
            lines.append(",".join(vals))
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        atomic_write_text(path, self.to_csv())

    @classmethod
    def read(cls, path) -> "TrainingLog":
        import csv

        with open(path, newline="") as fh:
            rows = [
                EpochRow(int(r["epoch"]), float(r["train_loss"]), float(r["val_loss"]), float(r["val_accuracy"]), float(r.get("seconds") or 0.0))
                for r in csv.DictReader(fh)
            ]
        best = max(rows, key=lambda r: (r.val_accuracy, -r.epoch)).epoch if rows else 0
        return cls(rows, best)


@dataclass
class ArraySet:
    """Images in 0..255 units (N, H, W) and their class ids."""

    images: np.ndarray
    labels: np.ndarray


def prepare_arrays(samples: Sequence[DatasetSample], root, size: int) -> dict[str, ArraySet]:
    out = {}
    for split in ("train", "val", "test"):
        rows = [s for s in samples if s.split == split]
        out[split] = ArraySet(load_images(rows, root, size), np.array([s.class_id for s in rows], dtype=np.int64))
    return out


def downsample_mean(mean: np.ndarray, size: int) -> np.ndarray:
    if mean.shape == (size, size):
        return mean.astype(np.float32)
    return bilinear_resize(mean, size, size).astype(np.float32)


def normalize(images: np.ndarray, mean64: np.ndarray) -> np.ndarray:
    """Mean-subtracted, scaled to roughly [-1, 1], NCHW."""
    return ((images - mean64) / np.float32(255.0))[:, None].astype(np.float32)


def with_flipped_threats(train: ArraySet) -> ArraySet:
    idx = [i for i, c in enumerate(train.labels) if is_threat(int(c))]
    if not idx:
        return train
    flipped = [augment(train.images[i], int(train.labels[i]), "flip") for i in idx]
    imgs = np.concatenate([train.images, np.stack([f[0] for f in flipped]).astype(np.float32)])
    labels = np.concatenate([train.labels, np.array([f[1] for f in flipped], dtype=np.int64)])
    return ArraySet(imgs, labels)


def _contrast_batch(x: np.ndarray, chosen: np.ndarray, factor: float) -> np.ndarray:
    if not chosen.any():
        return x
    x = x.copy()
    m = x[chosen].mean(axis=(1, 2), keepdims=True)
    x[chosen] = np.clip(m + factor * (x[chosen] - m), 0.0, 255.0)
    return x


def evaluate_arrays(model: CnnModel, data: ArraySet, mean64: np.ndarray, batch_size: int = 256) -> tuple[float, float, np.ndarray]:
    """``(loss, accuracy, probabilities)`` over an array set."""
    if len(data.labels) == 0:
        return float("nan"), float("nan"), np.zeros((0, model.num_classes), dtype=np.float32)
    probs = np.concatenate([model.forward(normalize(data.images[i : i + batch_size], mean64)) for i in range(0, len(data.labels), batch_size)])
    p = np.clip(probs[np.arange(len(data.labels)), data.labels].astype(np.float64), 1e-300, None)
    loss = float(-np.log(p).mean())
    acc = float((probs.argmax(axis=1) == data.labels).mean())
    return loss, acc, probs


def train_arrays(
    model: CnnModel,
    train: ArraySet,
    val: ArraySet,
    mean64: np.ndarray,
    config: TrainConfig,
) -> tuple[CnnModel, TrainingLog]:
    """Train ``model`` in place; on return it holds the best-validation weights."""
    config.validate()
    if len(train.labels) == 0 or len(val.labels) == 0:
        raise ConfigError("train and val splits must both be non-empty")
    rng = np.random.default_rng(config.seed)
    if config.flip_threats:
        train = with_flipped_threats(train)
    weights = [p for _, p in model.parameters()]
    velocity = [np.zeros_like(w) for w in weights]
    lr, mom = np.float32(config.lr) if model.dtype == np.float32 else config.lr, config.momentum
    history = TrainingLog()
    best_acc, best = -1.0, model.copy_parameters()
    n = len(train.labels)
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        contrast_pick = rng.random(n) < config.contrast_prob if config.contrast else np.zeros(n, dtype=bool)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            x = _contrast_batch(train.images[idx], contrast_pick[idx], config.contrast)
            loss, grads = model.loss_and_grads(normalize(x, mean64), train.labels[idx])
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}, batch starting at {start}; lower the learning rate")
            sgd_step(weights, grads, velocity, lr, mom)
            total += loss * len(idx)
        val_loss, val_acc, _ = evaluate_arrays(model, val, mean64)
        row = EpochRow(epoch, total / n, val_loss, val_acc, time.perf_counter() - t0)
        history.rows.append(row)
        log.info("epoch %d train_loss %.4f val_loss %.4f val_acc %.4f (%.1fs)", epoch, row.train_loss, val_loss, val_acc, row.seconds)
        if val_acc > best_acc:
            best_acc, best, history.best_epoch = val_acc, model.copy_parameters(), epoch
    model.set_parameters(best)
    return model, history


def train(config: TrainConfig) -> tuple[CnnModel, TrainingLog]:
    """Train the default architecture from a dataset manifest and mean image."""
    config.validate()
    root = Path(config.dataset_root or Path(config.manifest).parent)
    samples = read_manifest(config.manifest)
    limit = threadpool_limits(limits=config.threads) if config.threads else nullcontext()
    with limit:
        arrays = prepare_arrays(samples, root, config.input_size)
        if len(arrays["train"].labels) == 0 or len(arrays["val"].labels) == 0:
            raise ConfigError("manifest needs non-empty train and val splits")
        mean64 = downsample_mean(read_mean_image(config.mean_image), config.input_size)
        model = CnnModel(architecture(config.dropout), (1, config.input_size, config.input_size), seed=config.seed)
        return train_arrays(model, arrays["train"], arrays["val"], mean64, config)


def hyperparameters(config: TrainConfig) -> dict:
    d = asdict(config)
    for k in ("manifest", "mean_image", "dataset_root", "threads"):
        d.pop(k)
    d["num_classes"] = NUM_CLASSES
    return d
