import math
import re

import numpy as np
import pytest

import oracles
from zonescan.cnn.train import EpochRow, TrainingLog
from zonescan.errors import UndefinedAUCError, ValidationError
from zonescan.evalrep import (
    accuracy,
    confusion,
    micro_precision,
    micro_recall,
    precision_recall,
    roc_for_class,
    roc_points,
    topk_accuracy,
)
from zonescan.reports import render_reports, write_metrics_csv


def test_confusion_basics():
    cm = confusion([0, 1, 2], [0, 1, 2], 3)
    assert np.array_equal(cm, np.eye(3)) and np.trace(cm) == 3
    cm = confusion([1, 1], [0, 0], 3)
    assert cm[0, 1] == 2 and cm.sum() == 2
    with pytest.raises(ValidationError):
        confusion([0, 34], [0, 0])
    with pytest.raises(ValidationError):
        confusion([0], [0, 1])


def test_confusion_rows_are_truth_histogram():
    rng = np.random.default_rng(0)
    t, p = rng.integers(0, 34, 1000), rng.integers(0, 34, 1000)
    cm = confusion(p, t)
    assert np.array_equal(cm.sum(axis=1), np.bincount(t, minlength=34))
    assert cm.sum() == 1000


def test_precision_recall_values():
    m = precision_recall(np.diag([3, 4, 5]))
    assert (m.precision == 1).all() and (m.recall == 1).all()
    m = precision_recall(np.array([[8, 2], [2, 8]]))
    assert np.allclose(m.precision, 0.8) and np.allclose(m.recall, 0.8) and np.allclose(m.f1, 0.8)


def test_undefined_rates_excluded():
    cm = np.array([[5, 0, 0], [1, 2, 0], [0, 0, 0]])
    m = precision_recall(cm)
    assert math.isnan(m.recall[2]) and math.isnan(m.precision[2])
    assert m.macro_recall == pytest.approx((1.0 + 2 / 3) / 2)


def test_na_in_metrics_csv(tmp_path):
    m = precision_recall(np.array([[2, 0], [0, 0]]))
    p = tmp_path / "m.csv"
    write_metrics_csv(m, p, names=("a", "b"))
    lines = p.read_text().splitlines()
    assert lines[0] == "class,precision,recall,f1,support"
    assert lines[2] == "b,n/a,n/a,n/a,0"


def test_micro_identities():
    rng = np.random.default_rng(1)
    for _ in range(200):
        t, p = rng.integers(0, 34, 50), rng.integers(0, 34, 50)
        cm = confusion(p, t)
        assert micro_precision(cm) == micro_recall(cm) == accuracy(p, t) == np.trace(cm) / cm.sum()


def test_topk():
    rng = np.random.default_rng(2)
    probs = rng.dirichlet(np.ones(34), 100)
    truths = rng.integers(0, 34, 100)
    assert topk_accuracy(probs, truths, 34) == 1.0
    assert topk_accuracy(np.eye(34)[truths], truths, 1) == 1.0
    for k in (1, 3, 5):
        assert topk_accuracy(probs, truths, k) == oracles.topk_by_sort(probs, truths, k)
    with pytest.raises(ValidationError):
        topk_accuracy(probs, truths, 0)


def test_topk_ties_go_to_lower_id():
    probs = np.array([[0.25, 0.25, 0.25, 0.25]])
    assert topk_accuracy(probs, [1], 2) == 1.0
    assert topk_accuracy(probs, [2], 2) == 0.0


def test_roc_edges():
    c = roc_points([0.9, 0.8, 0.2, 0.1], [True, True, False, False])
    assert c.auc == 1.0
    c = roc_points([0.5] * 6, [True, False] * 3)
    assert c.auc == 0.5
    assert c.fpr.tolist() == [0.0, 1.0] and c.tpr.tolist() == [0.0, 1.0]
    with pytest.raises(UndefinedAUCError):
        roc_points([0.1, 0.2], [True, True])


def test_auc_matches_pair_counting():
    rng = np.random.default_rng(3)
    for _ in range(20):
        s = np.round(rng.random(50), 2)  # rounding forces ties
        y = rng.random(50) < 0.4
        if y.all() or not y.any():
            continue
        assert abs(roc_points(s, y).auc - oracles.mann_whitney_auc(s, y)) <= 1e-9


def test_roc_for_class_uses_one_vs_rest():
    probs = np.array([[0.7, 0.3], [0.2, 0.8], [0.6, 0.4]])
    c = roc_for_class(probs, [0, 1, 0], 1)
    assert c.auc == 1.0 and np.isinf(c.thresholds[0])


# --- rendered reports ---------------------------------------------------------


def _log(n=30):
    return TrainingLog([EpochRow(i, 3.0 / i, 3.2 / i, 1 - 0.5 / i, 1.0) for i in range(1, n + 1)], n)


def _inputs():
    rng = np.random.default_rng(4)
    truths = np.repeat(np.arange(34), 3)
    probs = rng.dirichlet(np.ones(34), len(truths))
    probs[np.arange(len(truths)), truths] += 1.0
    probs /= probs.sum(axis=1, keepdims=True)
    cm = confusion(probs.argmax(axis=1), truths)
    rocs = {k: roc_for_class(probs, truths, k) for k in (0, 13, 30)}
    return cm, precision_recall(cm), rocs


def test_render_reports(tmp_path):
    cm, m, rocs = _inputs()
    paths = render_reports(_log(), cm, m, tmp_path, rocs)
    names = {p.name for p in paths}
    assert {"confusion_matrix.csv", "metrics.csv", "curves.svg", "pr_bars.svg", "confusion_matrix.svg", "roc_curves.svg", "roc_class13.csv"} <= names
    header = (tmp_path / "confusion_matrix.csv").read_text().splitlines()
    assert len(header) == 35 and len(header[0].split(",")) == 35
    assert (tmp_path / "roc_class13.csv").read_text().startswith("threshold,fpr,tpr\ninf,0.0,0.0\n")


def _polyline_points(svg: str, gid: str) -> int:
    m = re.search(rf'<g id="{gid}">\s*<path d="([^"]*)"', svg)
    assert m, gid
    return len(re.findall(r"[ML]\s*-?[\d.]+\s+-?[\d.]+", m.group(1)))


def test_svg_structure(tmp_path):
    cm, m, rocs = _inputs()
    render_reports(_log(30), cm, m, tmp_path, rocs)
    curves = (tmp_path / "curves.svg").read_text()
    assert _polyline_points(curves, "loss") == 30
    assert _polyline_points(curves, "accuracy") == 30
    bars = (tmp_path / "pr_bars.svg").read_text()
    assert len(re.findall(r'<g id="bar-(?:precision|recall)-\d+">', bars)) == 68


def test_reports_are_byte_identical(tmp_path):
    cm, m, rocs = _inputs()
    a = render_reports(_log(), cm, m, tmp_path / "a", rocs)
    b = render_reports(_log(), cm, m, tmp_path / "b", rocs)
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes(), pa.name


def test_render_rejects_empty(tmp_path):
    cm, m, _ = _inputs()
    with pytest.raises(ValidationError):
        render_reports(TrainingLog(), cm, m, tmp_path)
    with pytest.raises(ValidationError):
        render_reports(_log(), np.zeros((34, 34), int), m, tmp_path)
