"""Classifier evaluation: confusion matrix, precision/recall, top-k, ROC.

Rates with a zero denominator are NaN here and ``n/a`` in CSV output; they
are left out of macro averages.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UndefinedAUCError, ValidationError


def confusion(preds, truths, num_classes: int = 34) -> np.ndarray:
    """Counts with rows = actual class and columns = predicted class."""
    p = np.asarray(preds, dtype=np.int64)
    t = np.asarray(truths, dtype=np.int64)
    if p.shape != t.shape:
        raise ValidationError(f"{p.size} predictions for {t.size} truths")
    if p.size and (min(p.min(), t.min()) < 0 or max(p.max(), t.max()) >= num_classes):
        raise ValidationError(f"class ids must lie in 0..{num_classes - 1}")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    return cm


@dataclass(frozen=True)
class ClassMetrics:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray

    @property
    def macro_precision(self) -> float:
        return _nanmean(self.precision)

    @property
    def macro_recall(self) -> float:
        return _nanmean(self.recall)

    @property
    def macro_f1(self) -> float:
        return _nanmean(self.f1)


def _nanmean(a: np.ndarray) -> float:
    ok = ~np.isnan(a)
    return float(a[ok].mean()) if ok.any() else float("nan")


def _ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.full(num.shape, np.nan)
    nz = den > 0
    out[nz] = num[nz] / den[nz]
    return out


def precision_recall(cm) -> ClassMetrics:
    cm = np.asarray(cm)
    tp = np.diag(cm).astype(np.float64)
    support = cm.sum(axis=1)
    recall = _ratio(tp, support.astype(np.float64))
    precision = _ratio(tp, cm.sum(axis=0).astype(np.float64))
    with np.errstate(invalid="ignore"):
        s = precision + recall
        f1 = np.where(s > 0, 2 * precision * recall / np.where(s > 0, s, 1.0), 0.0)
    f1[np.isnan(precision) | np.isnan(recall)] = np.nan
    return ClassMetrics(precision, recall, f1, support)


def micro_precision(cm) -> float:
    """Pooled TP / (TP + FP), with false positives counted off the column sums."""
    cm = np.asarray(cm)
    tp = np.diag(cm)
    fp = cm.sum(axis=0) - tp
    return float(tp.sum() / (tp.sum() + fp.sum()))


def micro_recall(cm) -> float:
    """Pooled TP / (TP + FN), with false negatives counted off the row sums."""
    cm = np.asarray(cm)
    tp = np.diag(cm)
    fn = cm.sum(axis=1) - tp
    return float(tp.sum() / (tp.sum() + fn.sum()))


def accuracy(preds, truths) -> float:
    return float(np.mean(np.asarray(preds) == np.asarray(truths)))


def topk_accuracy(probs, truths, k: int) -> float:
    """Share of rows whose true class ranks within the top ``k``.

    Ranking is by probability, ties going to the lower class id.
    """
    p = np.asarray(probs)
    t = np.asarray(truths, dtype=np.int64)
    if not 1 <= k <= p.shape[1]:
        raise ValidationError(f"k={k} outside 1..{p.shape[1]}")
    pt = p[np.arange(len(t)), t][:, None]
    ids = np.arange(p.shape[1])[None, :]
    rank = ((p > pt) | ((p == pt) & (ids < t[:, None]))).sum(axis=1)
    return float((rank < k).mean())


@dataclass(frozen=True)
class RocCurve:
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float


def roc_points(scores, positives) -> RocCurve:
    """Threshold sweep over distinct scores, highest first, predicting positive for ``score >= t``.

    ``positives`` is a boolean per sample. The curve starts at (0, 0) with an
    infinite threshold and ends at (1, 1).
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(positives, dtype=bool)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUCError(f"ROC needs both classes, got {n_pos} positive and {n_neg} negative")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    thresholds = np.r_[np.inf, s[last]]
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(thresholds, fpr, tpr, auc)


def roc_for_class(probs, truths, cls: int) -> RocCurve:
    """One-vs-rest ROC for ``cls`` from softmax scores."""
    p = np.asarray(probs)
    return roc_points(p[:, cls], np.asarray(truths) == cls)
