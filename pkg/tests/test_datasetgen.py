from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from zonescan.datasetgen import (
    CLASS_NAMES,
    DatasetSample,
    augment,
    bilinear_resize,
    build_samples,
    class_histogram,
    class_id,
    clear_class_dirs,
    compute_mean_image,
    encode_png,
    flip_class,
    is_threat,
    load_images,
    read_manifest,
    read_mean_image,
    read_png,
    resize_to_256,
    split_counts,
    split_dataset,
    write_manifest,
    write_mean_image,
    zone_of,
)
from zonescan.errors import ParameterError, SchemaError, ValidationError
from zonescan.imgproc import binarize_volume
from zonescan.phantom import PhantomSpec, generate_phantom
from zonescan.scanio import ScanVolume, ThreatAnnotation
from zonescan.zoner import assign_zones


def test_class_encoding():
    assert class_id(14, True) == 30 and class_id(14, False) == 13
    assert zone_of(30) == 14 and is_threat(30) and not is_threat(13)
    assert CLASS_NAMES[30] == "zone14_threat" and CLASS_NAMES[0] == "zone1"
    assert len(set(CLASS_NAMES)) == 34


# --- threat labelling ---------------------------------------------------------


@pytest.fixture(scope="module")
def body_00360():
    nz, ny, nx = 201, 380, 345
    zl = np.zeros((nz, ny, nx), dtype=np.uint8)
    vox = np.zeros((nz, ny, nx), dtype=np.float32)
    for z in (100, 200):
        zl[z, 355:371, 300:331] = 14
        vox[z, 355:371, 300:331] = np.linspace(0.5, 1.0, 31, dtype=np.float32)
    return ScanVolume("00360", vox), zl


def test_threat_row_drives_class(tmp_path, body_00360):
    vol, zl = body_00360
    row = ThreatAnnotation("00360", 14, 88, 127, 290, 340, 350, 373)
    samples = build_samples(vol, zl, [row], tmp_path)
    by_z = {s.z: s for s in samples}
    assert by_z[100].class_id == 30 and by_z[100].image_path.startswith("zone14_threat/")
    assert by_z[200].class_id == 13 and by_z[200].image_path.startswith("zone14/")
    assert read_png(tmp_path / by_z[100].image_path).shape == (256, 256)


def test_other_bodies_threats_ignored(tmp_path, body_00360):
    vol, zl = body_00360
    row = ThreatAnnotation("0043d", 14, 88, 127, 290, 340, 350, 373)
    assert {s.class_id for s in build_samples(vol, zl, [row], tmp_path)} == {13}


def test_phantom_dataset_layout(tmp_path):
    vol, _, threats = generate_phantom(PhantomSpec(seed=3, threat_count=2))
    zl = assign_zones(binarize_volume(vol.voxels))
    samples = build_samples(vol, zl, threats, tmp_path)
    assert any(is_threat(s.class_id) for s in samples)
    per_dir = Counter(p.parent.name for p in tmp_path.rglob("*.png"))
    per_class = Counter(CLASS_NAMES[s.class_id] for s in samples)
    assert per_dir == per_class
    clear_class_dirs(tmp_path)
    assert not list(tmp_path.rglob("*.png"))


# --- resampling ---------------------------------------------------------------


def test_resize_identity_and_constant():
    rng = np.random.default_rng(0)
    img = rng.random((256, 256))
    assert np.array_equal(resize_to_256(img), img)
    out = resize_to_256(np.full((40, 40), 3.0))
    assert out.shape == (256, 256) and np.allclose(out, 3.0)
    wide = resize_to_256(np.full((20, 80), 3.0))
    assert wide[128, 128] == pytest.approx(3.0) and wide[0, 128] == 0.0 and wide[255, 128] == 0.0


def test_checkerboard_upsample_matches_bilinear_oracle():
    board = np.array([[0.0, 1.0], [1.0, 0.0]])
    out = bilinear_resize(board, 8, 8)
    for i in (0, 2, 5, 7):
        for j in (0, 3, 4, 7):
            assert out[i, j] == pytest.approx(oracles.resize_probe(board, 8, 8, i, j), abs=1e-12)


def test_png_roundtrip(tmp_path):
    img = (np.arange(64, dtype=np.uint8) * 4).reshape(8, 8)
    p = tmp_path / "a.png"
    p.write_bytes(encode_png(img))
    assert np.array_equal(read_png(p), img)


# --- splitting ----------------------------------------------------------------


def _samples(counts: dict[int, int]):
    return [DatasetSample(f"{CLASS_NAMES[c]}/{i:05d}.png", c, f"{c:02d}{i:04x}", 0) for c, n in counts.items() for i in range(n)]


def test_split_counts_rule():
    assert split_counts(10, (0.6, 0.2, 0.2)) == (6, 2, 2)
    assert split_counts(7, (0.6, 0.2, 0.2)) == (5, 1, 1)
    assert split_counts(9, (0.6, 0.2, 0.2)) == (6, 2, 1)  # 5+1, 1+1, 1


def test_split_per_class_and_deterministic():
    s = _samples({0: 10, 5: 7, 30: 2})
    a = split_dataset(s, seed=4)
    b = split_dataset(list(reversed(s)), seed=4)
    assert a == b
    for cid, expected in ((0, (6, 2, 2)), (5, (5, 1, 1)), (30, (2, 0, 0))):
        got = tuple(sum(1 for x in a if x.class_id == cid and x.split == sp) for sp in ("train", "val", "test"))
        assert got == expected
    assert split_dataset(s, seed=5) != a


@settings(max_examples=40, deadline=None)
@given(st.dictionaries(st.integers(0, 33), st.integers(1, 60), min_size=1, max_size=10), st.integers(0, 1000))
def test_split_is_partition(counts, seed):
    s = _samples(counts)
    out = split_dataset(s, seed=seed)
    assert sorted(x.key for x in out) == sorted(x.key for x in s)
    assert all(x.split in ("train", "val", "test") for x in out)
    for cid, n in counts.items():
        if n < 3:
            continue
        for sp, r in zip(("train", "val", "test"), (0.6, 0.2, 0.2)):
            got = sum(1 for x in out if x.class_id == cid and x.split == sp)
            assert abs(got - r * n) <= 1


def test_split_rejects_bad_input():
    with pytest.raises(ParameterError):
        split_dataset(_samples({0: 5}), ratios=(0.6, 0.4))
    with pytest.raises(ParameterError):
        split_dataset(_samples({0: 5}), ratios=(0.6, 0.3, 0.2))
    dup = _samples({0: 2})
    with pytest.raises(ValidationError):
        split_dataset(dup + dup[:1])


def test_manifest_roundtrip(tmp_path):
    s = split_dataset(_samples({1: 5, 2: 4}), seed=0)
    p = tmp_path / "manifest.csv"
    write_manifest(s, p)
    assert p.read_text().splitlines()[0] == "image_path,class_id,body_id,z,split"
    assert read_manifest(p) == s
    assert class_histogram(s, "train").sum() == sum(1 for x in s if x.split == "train")
    p.write_text("image,class\n")
    with pytest.raises(SchemaError):
        read_manifest(p)


# --- mean image ---------------------------------------------------------------


def _write_images(root, images, splits):
    samples = []
    for i, (img, sp) in enumerate(zip(images, splits)):
        rel = f"zone1/{i:04d}.png"
        (root / "zone1").mkdir(exist_ok=True)
        (root / rel).write_bytes(encode_png(img.astype(np.uint8)))
        samples.append(DatasetSample(rel, 0, f"{i:05x}", 0, sp))
    return samples


def test_mean_of_two(tmp_path):
    s = _write_images(tmp_path, [np.zeros((4, 4)), np.full((4, 4), 10)], ["train", "train"])
    assert np.array_equal(compute_mean_image(s, tmp_path, size=4), np.full((4, 4), 5.0))
    one = _write_images(tmp_path, [np.arange(16).reshape(4, 4)], ["train"])
    assert np.array_equal(compute_mean_image(one, tmp_path, size=4), np.arange(16).reshape(4, 4))


def test_mean_matches_batch_oracle_and_ignores_test(tmp_path):
    rng = np.random.default_rng(9)
    imgs = [rng.integers(0, 256, (8, 8)) for _ in range(100)]
    splits = ["train"] * 80 + ["test"] * 20
    s = _write_images(tmp_path, imgs, splits)
    mean = compute_mean_image(s, tmp_path, size=8)
    assert np.abs(mean - np.mean(np.stack(imgs[:80]).astype(np.float64), axis=0)).max() <= 1e-5
    (tmp_path / s[-1].image_path).write_bytes(encode_png(np.full((8, 8), 255, dtype=np.uint8)))
    assert np.array_equal(compute_mean_image(s, tmp_path, size=8), mean)
    p = tmp_path / "mean.scanvol"
    write_mean_image(mean, p)
    assert np.allclose(read_mean_image(p), mean, atol=1e-4)
    with pytest.raises(ValidationError):
        compute_mean_image([x for x in s if x.split == "test"], tmp_path, size=8)


def test_load_images_downsamples(tmp_path):
    img = np.tile(np.arange(256, dtype=np.uint8), (256, 1))
    s = _write_images(tmp_path, [img], ["train"])
    out = load_images(s, tmp_path, 64)
    assert out.shape == (1, 64, 64) and out.dtype == np.float32
    assert np.allclose(out[0], bilinear_resize(img, 64, 64))


# --- augmentation -------------------------------------------------------------


def test_flip_relabels_through_mirror():
    assert flip_class(30) == 29
    assert flip_class(8) == 8  # zone 9 stays put
    img = np.arange(12.0).reshape(3, 4)
    f, c = augment(img, 30, "flip")
    assert np.array_equal(f, img[:, ::-1]) and c == 29
    back, c2 = augment(f, c, "flip")
    assert np.array_equal(back, img) and c2 == 30
    assert all(flip_class(flip_class(k)) == k for k in range(34))


def test_contrast():
    flat = np.full((5, 5), 77.0)
    out, c = augment(flat, 3, "contrast", 0.8)
    assert np.array_equal(out, flat) and c == 3
    img = np.array([[0.0, 100.0]])
    assert augment(img, 0, "contrast", 0.8)[0].tolist() == [[10.0, 90.0]]
    assert augment(np.array([[0.0, 255.0]]), 0, "contrast", 3.0)[0].tolist() == [[0.0, 255.0]]
    with pytest.raises(ParameterError):
        augment(img, 0, "rotate")
