"""Acceptance criteria 1-7, one test each, each recording a PASS/FAIL line."""

import math
import time
from collections import Counter

import numpy as np
import pytest

import gradcheck
import oracles
from acceptance_log import report
from zonescan.cli import main
from zonescan.cnn import CnnModel
from zonescan.cnn.model import cross_entropy
from zonescan.cnn.train import TrainingLog
from zonescan.config import PipelineConfig
from zonescan.datasetgen import DatasetSample, split_counts, split_dataset
from zonescan.evalrep import accuracy, confusion, micro_precision, micro_recall, roc_points
from zonescan.imgproc import binarize_volume, connected_components, gaussian_smooth, reconstruct_by_dilation, threshold_sauvola
from zonescan.phantom import generate_phantom
from zonescan.pipeline import phantom_specs, read_predictions
from zonescan.zoner import assign_zones, extract_zone_points


def test_criterion_1_kernel_oracles():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    n = 100
    bad = Counter()
    gauss_err = 0.0
    for _ in range(n):
        h, w = rng.integers(16, 33, 2)
        img = rng.random((h, w))
        window = int(rng.choice([3, 5, 7]))
        if not np.array_equal(threshold_sauvola(img, window, 0.2, 0.5), oracles.sauvola(img, window, 0.2, 0.5)):
            bad["sauvola"] += 1
        mask = rng.random((h, w)) < rng.uniform(0.3, 0.7)
        conn = int(rng.choice([4, 8]))
        if not np.array_equal(connected_components(mask, conn).labels, oracles.flood_labels(mask, conn)):
            bad["components"] += 1
        seed = mask & (rng.random((h, w)) < 0.03)
        if not np.array_equal(reconstruct_by_dilation(seed, mask, conn), oracles.flood_reconstruct(seed, mask, conn)):
            bad["reconstruction"] += 1
        sigma = float(rng.uniform(0.5, 2.0))
        gauss_err = max(gauss_err, float(np.abs(gaussian_smooth(img, sigma) - oracles.gaussian_2d(img, sigma)).max()))
    elapsed = time.perf_counter() - t0
    ok = not bad and gauss_err <= 1e-6 and elapsed < 30
    report(1, "kernel oracles", ok, f"{n} images, mismatches {dict(bad) or 0}, gaussian max err {gauss_err:.2e}, {elapsed:.1f}s")
    assert ok


def test_criterion_2_gradient_check():
    t0 = time.perf_counter()
    errors = {kind: gradcheck.layer_error(kind) for kind in gradcheck.LAYER_KINDS}
    elapsed = time.perf_counter() - t0
    worst = max(errors, key=errors.get)
    ok = errors[worst] < 1e-4 and elapsed < 60
    report(2, "gradient check", ok, f"{len(errors)} layer kinds, worst {worst} {errors[worst]:.2e}, {elapsed:.1f}s")
    assert ok


def test_criterion_3_zone_partition():
    specs = phantom_specs(PipelineConfig(bodies=10, threats=3, synth_seed=3))
    worst_match, overlaps, omissions = 1.0, 0, 0
    for spec in specs:
        vol, truth, _ = generate_phantom(spec)
        masks = binarize_volume(vol.voxels).astype(bool)
        zl = assign_zones(masks)
        coverage = np.zeros(masks.shape, dtype=np.int64)
        for zone in range(1, 18):
            pts = extract_zone_points(zl, zone)
            np.add.at(coverage, (pts[:, 2], pts[:, 1], pts[:, 0]), 1)
        overlaps += int((coverage > 1).sum()) + int((coverage[~masks] > 0).sum())
        omissions += int((coverage[masks] == 0).sum())
        fg = masks & (truth > 0)
        worst_match = min(worst_match, float((zl[fg] == truth[fg]).mean()))
    ok = worst_match >= 0.95 and overlaps == 0 and omissions == 0
    report(3, "zone partition", ok, f"10 phantoms, worst match {worst_match:.4f}, overlaps {overlaps}, omissions {omissions}")
    assert ok


STAGES = ("synth", "preprocess", "segment", "build-dataset", "train", "evaluate")


@pytest.mark.slow
def test_criterion_4_end_to_end_benchmark(tmp_path):
    common = ["--work-dir", str(tmp_path), "--threads", "1"]
    extra = {"synth": ["--bodies", "200", "--threats", "3", "--threat-fraction", "0.5", "--seed", "0"], "train": ["--epochs", "30"]}
    t0 = time.perf_counter()
    for stage in STAGES:
        assert main([stage, *common, *extra.get(stage, [])]) == 0, stage
    elapsed = time.perf_counter() - t0
    history = TrainingLog.read(tmp_path / "model" / "training_log.csv")
    final_val = history.rows[-1].val_accuracy
    truths, probs = read_predictions(tmp_path / "eval" / "predictions.csv")
    order = np.argsort(-probs, axis=1, kind="stable")[:, :5]
    top5 = float((order == truths[:, None]).any(axis=1).mean())
    ok = len(history.rows) == 30 and final_val >= 0.90 and top5 >= 0.99 and elapsed < 1800
    report(4, "end-to-end benchmark", ok, f"200 phantoms, val accuracy {final_val:.4f} after 30 epochs, test top-5 {top5:.4f}, {elapsed / 60:.1f} min")
    assert ok


def test_criterion_5_metric_identities():
    rng = np.random.default_rng(5)
    identity_failures = 0
    for _ in range(1000):
        n = int(rng.integers(1, 200))
        t, p = rng.integers(0, 34, n), rng.integers(0, 34, n)
        cm = confusion(p, t)
        if not micro_precision(cm) == micro_recall(cm) == accuracy(p, t):
            identity_failures += 1
    auc_err = 0.0
    for _ in range(200):
        s = np.round(rng.random(60), int(rng.integers(1, 4)))
        y = rng.random(60) < 0.5
        if y.all() or not y.any():
            continue
        auc_err = max(auc_err, abs(roc_points(s, y).auc - oracles.mann_whitney_auc(s, y)))
    uniform = cross_entropy(np.full((8, 34), 1 / 34), rng.integers(0, 34, 8))
    zero_model, _ = CnnModel(init="zeros", dtype=np.float64).loss_and_grads(np.zeros((4, 1, 64, 64)), rng.integers(0, 34, 4))
    ln_err = max(abs(uniform - math.log(34)), abs(zero_model - math.log(34)))
    ok = identity_failures == 0 and auc_err <= 1e-9 and ln_err <= 1e-12
    report(5, "metric identities", ok, f"1000 sets, {identity_failures} identity failures, AUC err {auc_err:.1e}, ln34 err {ln_err:.1e}")
    assert ok


def test_criterion_6_determinism(tmp_path):
    shared = ["--work-dir", str(tmp_path), "--threads", "1"]
    assert main(["synth", *shared, "--bodies", "8", "--seed", "6"]) == 0
    assert main(["preprocess", *shared]) == 0
    assert main(["segment", *shared, "--no-points"]) == 0

    def run(tag):
        root = tmp_path / tag
        dirs = ["--set", f"dataset_dir={root / 'dataset'}", "--set", f"model_dir={root / 'model'}", "--set", f"eval_dir={root / 'eval'}", "--set", f"reports_dir={root / 'reports'}"]
        for stage, extra in (("build-dataset", []), ("train", ["--epochs", "2"]), ("evaluate", []), ("report", [])):
            assert main([stage, *shared, *dirs, *extra]) == 0, stage
        return root

    a, b = run("a"), run("b")
    files = ["dataset/manifest.csv", "dataset/mean.scanvol", "model/model.ckpt", "eval/predictions.csv"]
    files += sorted(str(p.relative_to(a)) for p in (a / "reports").iterdir())
    differing = [f for f in files if (a / f).read_bytes() != (b / f).read_bytes()]
    logs_equal = TrainingLog.read(a / "model/training_log.csv").to_csv(False) == TrainingLog.read(b / "model/training_log.csv").to_csv(False)
    ok = not differing and logs_equal
    report(6, "determinism", ok, f"{len(files)} files compared, differing {differing or 'none'}, training log (without wall time) equal {logs_equal}")
    assert ok


def test_criterion_7_split_counts():
    rng = np.random.default_rng(7)
    total = 287660
    cuts = np.sort(rng.choice(np.arange(1, total), 33, replace=False))
    sizes = np.diff(np.concatenate([[0], cuts, [total]]))
    samples = [DatasetSample(f"c{c}/{i}.png", c, f"{c:02d}_{i}", 0) for c in range(34) for i in range(int(sizes[c]))]
    out = split_dataset(samples, (0.6, 0.2, 0.2), seed=7)
    per = Counter((s.class_id, s.split) for s in out)
    rule_failures = sum(
        1
        for c in range(34)
        if (per[(c, "train")], per[(c, "val")], per[(c, "test")]) != (split_counts(int(sizes[c]), (0.6, 0.2, 0.2)) if sizes[c] >= 3 else (int(sizes[c]), 0, 0))
    )
    totals = [sum(v for (_, sp), v in per.items() if sp == name) for name in ("train", "val", "test")]
    dev = max(abs(g - e) for g, e in zip(totals, (172596, 57532, 57532)))
    ok = rule_failures == 0 and dev <= 34 and sum(totals) == total
    report(7, "split counts", ok, f"{total} samples, train/val/test {totals[0]}/{totals[1]}/{totals[2]}, max deviation {dev}, rule failures {rule_failures}")
    assert ok
