"""Sequential CNN model, loss, SGD update and layer statistics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import ConfigError, ShapeError, ValidationError
from ..scanio import atomic_write_text
from .layers import Conv2D, Dense, Dropout, Layer, MaxPool2D, ReLU, Softmax

TOY_ALEXNET = (
    "conv:8:5:1",
    "relu",
    "maxpool:2:2",
    "conv:16:5:1",
    "relu",
    "maxpool:2:2",
    "dense:128",
    "relu",
    "dense:34",
    "softmax",
)
INPUT_SHAPE = (1, 64, 64)
HIST_BINS = 20


def architecture(dropout: float = 0.0) -> tuple[str, ...]:
    """The default layer list, optionally with dropout after the hidden dense layer."""
    if not dropout:
        return TOY_ALEXNET
    i = TOY_ALEXNET.index("dense:128") + 2
    return TOY_ALEXNET[:i] + (f"dropout:{dropout}",) + TOY_ALEXNET[i:]


class CnnModel:
    def __init__(self, arch: Sequence[str] = TOY_ALEXNET, input_shape=INPUT_SHAPE, seed: int = 0, dtype=np.float32, init: str = "glorot"):
        self.arch = tuple(arch)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.dtype = np.dtype(dtype)
        self.rng = np.random.default_rng(seed)
        self.layers: list[Layer] = []
        shape = self.input_shape
        for i, s in enumerate(self.arch):
            layer = self._make(s, shape)
            shape = layer.output_shape(shape)
            self.layers.append(layer)
        if not self.layers or not isinstance(self.layers[-1], Softmax):
            raise ConfigError("the last layer must be softmax")
        if len(shape) != 1:
            raise ConfigError(f"softmax input must be flat, got shape {shape}")
        self.num_classes = shape[0]
        first = next((l for l in self.layers if isinstance(l, Conv2D)), None)
        if first is not None:
            first.needs_input_grad = False
        for layer in self.layers:
            for name, p in layer.params.items():
                layer.params[name] = p.astype(self.dtype)
        if init == "glorot":
            self._glorot()
        elif init != "zeros":
            raise ConfigError(f"unknown init {init!r}")

    def _make(self, s: str, shape) -> Layer:
        parts = s.split(":")
        kind, args = parts[0], parts[1:]
        try:
            if kind == "conv":
                out, k = int(args[0]), int(args[1])
                stride = int(args[2]) if len(args) > 2 else 1
                return Conv2D(shape[0], out, k, stride)
            if kind == "relu":
                return ReLU()
            if kind == "maxpool":
                return MaxPool2D(int(args[0]), int(args[1]) if len(args) > 1 else int(args[0]))
            if kind == "dense":
                return Dense(int(np.prod(shape)), int(args[0]))
            if kind == "dropout":
                return Dropout(float(args[0]), self.rng)
            if kind == "softmax":
                return Softmax()
        except (IndexError, ValueError) as exc:
            raise ConfigError(f"bad layer spec {s!r}") from exc
        raise ConfigError(f"unknown layer kind {kind!r}")

    def _glorot(self):
        for layer in self.layers:
            if isinstance(layer, Conv2D):
                k2 = layer.kernel**2
                fan_in, fan_out = layer.in_channels * k2, layer.out_channels * k2
            elif isinstance(layer, Dense):
                fan_in, fan_out = layer.in_features, layer.units
            else:
                continue
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            W = layer.params["W"]
            layer.params["W"] = self.rng.uniform(-lim, lim, size=W.shape).astype(self.dtype)

    # --- parameters -----------------------------------------------------------

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        """``(name, array)`` pairs in layer order; arrays are the live weights."""
        out = []
        for i, layer in enumerate(self.layers):
            for name in sorted(layer.params):
                out.append((f"{i}.{layer.kind}.{name}", layer.params[name]))
        return out

    def set_parameters(self, arrays: Sequence[np.ndarray]) -> None:
        slots = [(layer, name) for layer in self.layers for name in sorted(layer.params)]
        if len(slots) != len(arrays):
            raise ShapeError(f"expected {len(slots)} tensors, got {len(arrays)}")
        for (layer, name), a in zip(slots, arrays):
            if a.shape != layer.params[name].shape:
                raise ShapeError(f"tensor {name} shape {a.shape} != {layer.params[name].shape}")
            layer.params[name] = np.array(a, dtype=self.dtype)

    def copy_parameters(self) -> list[np.ndarray]:
        return [p.copy() for _, p in self.parameters()]

    # --- passes ---------------------------------------------------------------

    def _check_batch(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == 3 and self.input_shape[0] == 1:
            x = x[:, None]
        if x.ndim != 4 or x.shape[1:] != self.input_shape:
            raise ShapeError(f"batch shape {x.shape} does not match input {self.input_shape}")
        return x

    def logits(self, x, train: bool = False) -> np.ndarray:
        out = self._check_batch(x)
        for layer in self.layers[:-1]:
            out = layer.forward(out, train)
        return out

    def forward(self, x, train: bool = False) -> np.ndarray:
        """Class probabilities, one softmax row per sample."""
        return self.layers[-1].forward(self.logits(x, train))

    def trace(self, x) -> list[np.ndarray]:
        """Output of every layer for ``x``, in order."""
        out = self._check_batch(x)
        acts = []
        for layer in self.layers:
            out = layer.forward(out)
            acts.append(out)
        return acts

    def predict(self, x, batch_size: int = 256) -> np.ndarray:
        x = np.asarray(x)
        rows = [self.forward(x[i : i + batch_size]) for i in range(0, len(x), batch_size)]
        return np.concatenate(rows) if rows else np.zeros((0, self.num_classes), dtype=self.dtype)

    def loss_and_grads(self, x, labels, train: bool = True) -> tuple[float, list[np.ndarray]]:
        """Mean cross-entropy and its gradient for every parameter (order of ``parameters()``)."""
        labels = np.asarray(labels)
        if labels.ndim != 1 or ((labels < 0) | (labels >= self.num_classes)).any():
            raise ValidationError(f"labels must be integers in 0..{self.num_classes - 1}")
        z = self.logits(x, train)
        if len(labels) != len(z):
            raise ShapeError(f"{len(labels)} labels for a batch of {len(z)}")
        n = len(labels)
        shifted = z - z.max(axis=1, keepdims=True)
        logsum = np.log(np.exp(shifted).sum(axis=1))
        logp = shifted[np.arange(n), labels] - logsum
        loss = float(-logp.mean())
        d = np.exp(shifted - logsum[:, None])
        d[np.arange(n), labels] -= 1.0
        d /= n
        for layer in reversed(self.layers[:-1]):
            d = layer.backward(d)
            if d is None:
                break
        grads = [layer.grads[name] for layer in self.layers for name in sorted(layer.params)]
        return loss, grads


def cross_entropy(probs, labels) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    return float(-np.log(probs[np.arange(len(labels)), np.asarray(labels)]).mean())


def sgd_step(weights: Sequence[np.ndarray], grads: Sequence[np.ndarray], velocity: Sequence[np.ndarray], lr: float, momentum: float) -> None:
    """In place: ``v <- momentum * v - lr * g``; ``w <- w + v``."""
    for w, g, v in zip(weights, grads, velocity):
        if v.shape != w.shape or g.shape != w.shape:
            raise ShapeError(f"velocity/gradient shape mismatch for weight of shape {w.shape}")
        v *= momentum
        v -= lr * g
        w += v


@dataclass(frozen=True)
class LayerStats:
    layer: int
    name: str
    kind: str  # "activation" or "weights"
    mean: float
    std: float
    min: float
    max: float
    hist: tuple[int, ...]
    bin_edges: tuple[float, ...]


def tensor_stats(layer: int, name: str, kind: str, values: np.ndarray) -> LayerStats:
    v = np.asarray(values, dtype=np.float64).ravel()
    lo, hi = float(v.min()), float(v.max())
    counts, edges = np.histogram(v, bins=HIST_BINS, range=(lo, hi))
    return LayerStats(layer, name, kind, float(v.mean()), float(v.std()), lo, hi, tuple(int(c) for c in counts), tuple(float(e) for e in edges))


def layer_stats(model: CnnModel, image) -> list[LayerStats]:
    """Activation statistics for every layer and weight statistics for parametric ones."""
    x = np.asarray(image)
    if x.ndim == 2:
        x = x[None, None]
    elif x.ndim == 3:
        x = x[None]
    if len(x) != 1:
        raise ShapeError("layer_stats takes a single image")
    rows = []
    for i, (layer, act) in enumerate(zip(model.layers, model.trace(x))):
        name = layer.spec()
        rows.append(tensor_stats(i, name, "activation", act))
        if "W" in layer.params:
            rows.append(tensor_stats(i, name, "weights", layer.params["W"]))
    return rows


def write_layer_stats(stats: Sequence[LayerStats], path) -> None:
    header = ["layer", "name", "kind", "mean", "std", "min", "max"] + [f"hist_{i:02d}" for i in range(HIST_BINS)]
    lines = [",".join(header)]
    for s in stats:
        vals = [str(s.layer), s.name, s.kind] + [repr(v) for v in (s.mean, s.std, s.min, s.max)] + [str(c) for c in s.hist]
        lines.append(",".join(vals))
    atomic_write_text(path, "\n".join(lines) + "\n")
