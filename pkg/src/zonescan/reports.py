"""Report files: delimited tables plus matplotlib figures.

Figures are written with a fixed SVG hash salt, no date metadata and path
simplification off, so identical inputs give identical bytes and every
plotted point survives into the markup. Plotted series and bars carry
``gid`` attributes (``loss``, ``accuracy``, ``bar-precision-<k>``, ...).
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.ticker import MaxNLocator  # noqa: E402
import numpy as np  # noqa: E402

from .datasetgen import CLASS_NAMES  # noqa: E402
from .errors import ValidationError, ZonescanError  # noqa: E402
from .evalrep import ClassMetrics, RocCurve  # noqa: E402
from .scanio import atomic_write_text  # noqa: E402

RC = {
    "svg.hashsalt": "zonescan",
    "svg.fonttype": "path",
    "path.simplify": False,
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
}


def _fmt(v: float) -> str:
    return "n/a" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def _figure(width: float = 7.0, height: float | None = None):
    golden = (math.sqrt(5) - 1.0) / 2.0
    return plt.figure(figsize=(width, height or width * golden), facecolor="w")


def _save(fig, path: Path) -> Path:
    tmp = path.with_name(path.name + ".tmp")
    fig.savefig(tmp, format=path.suffix.lstrip("."), metadata={"Date": None} if path.suffix == ".svg" else {"Software": None})
    plt.close(fig)
    tmp.replace(path)
    return path


# --- delimited output ---------------------------------------------------------


def write_confusion_csv(cm, path, names: Sequence[str] = CLASS_NAMES) -> Path:
    cm = np.asarray(cm)
    lines = ["actual\\predicted," + ",".join(names[: cm.shape[1]])]
    for i, row in enumerate(cm):
        lines.append(names[i] + "," + ",".join(str(int(v)) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")
    return Path(path)


def write_metrics_csv(m: ClassMetrics, path, names: Sequence[str] = CLASS_NAMES) -> Path:
    lines = ["class,precision,recall,f1,support"]
    for i in range(len(m.support)):
        lines.append(f"{names[i]},{_fmt(m.precision[i])},{_fmt(m.recall[i])},{_fmt(m.f1[i])},{int(m.support[i])}")
    lines.append(f"macro,{_fmt(m.macro_precision)},{_fmt(m.macro_recall)},{_fmt(m.macro_f1)},{int(m.support.sum())}")
    atomic_write_text(path, "\n".join(lines) + "\n")
    return Path(path)


def write_roc_csv(curve: RocCurve, path) -> Path:
    lines = ["threshold,fpr,tpr"]
    for t, f, p in zip(curve.thresholds, curve.fpr, curve.tpr):
        lines.append(f"{'inf' if np.isinf(t) else repr(float(t))},{float(f)!r},{float(p)!r}")
    atomic_write_text(path, "\n".join(lines) + "\n")
    return Path(path)


# --- figures ------------------------------------------------------------------


def plot_curves(log, path) -> Path:
    """Training loss and validation accuracy per epoch on twin axes."""
    epochs = [r.epoch for r in log.rows]
    with plt.rc_context(RC):
        fig = _figure(7.0)
        ax = fig.add_subplot(111)
        (loss,) = ax.plot(epochs, [r.train_loss for r in log.rows], color="tab:red", label="train loss")
        loss.set_gid("loss")
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        ax.xaxis.set_major_locator(MaxNLocator(integer=True))
        ax2 = ax.twinx()
        (acc,) = ax2.plot(epochs, [r.val_accuracy for r in log.rows], color="tab:blue", label="val accuracy")
        acc.set_gid("accuracy")
        ax2.set_ylabel("accuracy")
        ax2.set_ylim(0.0, 1.02)
        ax2.grid(False)
        ax2.spines["right"].set_visible(True)
        ax.legend(handles=[loss, acc], loc="center right", frameon=False)
        fig.tight_layout()
        return _save(fig, Path(path))


def plot_pr_bars(m: ClassMetrics, path, names: Sequence[str] = CLASS_NAMES) -> Path:
    """Grouped precision/recall bars per class; undefined rates are drawn at zero height."""
    n = len(m.support)
    x = np.arange(n)
    w = 0.4
    with plt.rc_context(RC):
        fig = _figure(11.0, 4.0)
        ax = fig.add_subplot(111)
        for offset, key, values, color in ((-w / 2, "precision", m.precision, "tab:green"), (w / 2, "recall", m.recall, "tab:orange")):
            bars = ax.bar(x + offset, np.nan_to_num(values, nan=0.0), width=w, color=color, label=key)
            for k, bar in enumerate(bars):
                bar.set_gid(f"bar-{key}-{k}")
                if np.isnan(values[k]):
                    ax.text(x[k] + offset, 0.01, "n/a", rotation=90, ha="center", va="bottom", fontsize=5, color="0.5")
        ax.set_xticks(x)
        ax.set_xticklabels(names[:n], rotation=90, fontsize=6)
        ax.set_ylim(0.0, 1.05)
        ax.set_ylabel("rate")
        ax.set_title(f"macro precision {_fmt(m.macro_precision)[:6]}  macro recall {_fmt(m.macro_recall)[:6]}", fontsize=9)
        ax.legend(frameon=False, ncol=2, loc="lower right")
        fig.tight_layout()
        return _save(fig, Path(path))


def plot_confusion(cm, path, names: Sequence[str] = CLASS_NAMES) -> Path:
    cm = np.asarray(cm)
    with plt.rc_context({**RC, "axes.grid": False}):
        fig = _figure(8.0, 7.0)
        ax = fig.add_subplot(111)
        rows = np.maximum(cm.sum(axis=1, keepdims=True), 1)
        im = ax.imshow(cm / rows, cmap="Blues", vmin=0.0, vmax=1.0, interpolation="nearest")
        ax.set_xticks(range(cm.shape[1]))
        ax.set_yticks(range(cm.shape[0]))
        ax.set_xticklabels(names[: cm.shape[1]], rotation=90, fontsize=5)
        ax.set_yticklabels(names[: cm.shape[0]], fontsize=5)
        ax.set_xlabel("predicted")
        ax.set_ylabel("actual")
        fig.colorbar(im, ax=ax, fraction=0.046, label="row share")
        fig.tight_layout()
        return _save(fig, Path(path))


def plot_roc(rocs: Mapping[int, RocCurve], path, names: Sequence[str] = CLASS_NAMES) -> Path:
    with plt.rc_context(RC):
        fig = _figure(6.0, 6.0)
        ax = fig.add_subplot(111)
        ax.plot([0, 1], [0, 1], color="0.6", linestyle="--", linewidth=0.8)
        for k in sorted(rocs):
            (line,) = ax.plot(rocs[k].fpr, rocs[k].tpr, linewidth=0.8, label=f"{names[k]} ({rocs[k].auc:.3f})")
            line.set_gid(f"roc-{k}")
        ax.set_xlabel("false positive rate")
        ax.set_ylabel("true positive rate")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.01)
        if len(rocs) <= 34:
            ax.legend(fontsize=4, ncol=2, loc="lower right", frameon=False)
        fig.tight_layout()
        return _save(fig, Path(path))


def render_reports(log, cm, metrics: ClassMetrics, out_dir, rocs: Mapping[int, RocCurve] | None = None) -> list[Path]:
    """Write every report table and figure into ``out_dir``; returns the paths written."""
    if not log.rows:
        raise ValidationError("training log is empty")
    if np.asarray(cm).sum() == 0:
        raise ValidationError("confusion matrix is empty")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = [
            write_confusion_csv(cm, out / "confusion_matrix.csv"),
            write_metrics_csv(metrics, out / "metrics.csv"),
        ]
        for k in sorted(rocs or {}):
            paths.append(write_roc_csv(rocs[k], out / f"roc_class{k}.csv"))
        paths.append(plot_curves(log, out / "curves.svg"))
        paths.append(plot_pr_bars(metrics, out / "pr_bars.svg"))
        paths.append(plot_confusion(cm, out / "confusion_matrix.svg"))
        if rocs:
            paths.append(plot_roc(rocs, out / "roc_curves.svg"))
    except OSError as exc:
        raise ZonescanError(f"cannot write reports to {out}: {exc}") from exc
    return paths
