import hashlib

import numpy as np
import pytest

from zonescan.errors import BoundsError, ParameterError
from zonescan.imgproc import connected_components
from zonescan.phantom import PhantomSpec, generate_phantom, phantom_geometry
from zonescan.scanio import read_volume, slice_xy, write_volume
from zonescan.zoner import LEFT, body_extent, split_left_right


def test_clean_phantom_has_no_threats():
    vol, labels, threats = generate_phantom(PhantomSpec(seed=1))
    assert threats == []
    fg = labels > 0
    assert fg.any()
    assert set(np.unique(labels[fg]).tolist()) <= set(range(1, 18))


def test_same_seed_same_bytes(tmp_path):
    spec = PhantomSpec(seed=5, threat_count=2)
    for name in ("a", "b"):
        write_volume(generate_phantom(spec)[0], tmp_path / f"{name}.scanvol")
    assert (tmp_path / "a.scanvol").read_bytes() == (tmp_path / "b.scanvol").read_bytes()
    assert not np.array_equal(generate_phantom(PhantomSpec(seed=6))[0].voxels, generate_phantom(PhantomSpec(seed=5))[0].voxels)


@pytest.mark.parametrize("seed", range(5))
def test_threat_boxes_are_boosted_and_inside_foreground(seed):
    spec = PhantomSpec(seed=seed, threat_count=2)
    vol, labels, threats = generate_phantom(spec)
    assert len(threats) == 2
    fg_mean = vol.voxels[labels > 0].mean()
    for a in threats:
        a.check_bounds(vol.nx, vol.ny, vol.nz)
        box = np.s_[a.z_start : a.z_stop + 1, a.y_start : a.y_stop + 1, a.x_start : a.x_stop + 1]
        assert (labels[box] == a.zone).all()
        assert (vol.voxels[box] >= fg_mean).all()


def test_mid_torso_slice_has_foreground():
    spec = PhantomSpec(seed=2)
    vol, _, _ = generate_phantom(spec)
    z = spec.z_offset + int(0.64 * (spec.height_voxels - 1))
    assert (slice_xy(vol, z) > 0.5).sum() > 0


def test_extent_of_tall_body():
    spec = PhantomSpec(nx=64, ny=40, nz=640, height_voxels=600, z_offset=20, noise_sigma=0.0)
    _, labels = phantom_geometry(spec)
    assert body_extent(labels > 0) == (20, 619)


def test_left_arm_is_left():
    spec = PhantomSpec(noise_sigma=0.0)
    _, labels = phantom_geometry(spec)
    z = spec.z_offset + int(0.76 * (spec.height_voxels - 1))  # chest and upper-arm band
    mask = labels[z] > 0
    comps = connected_components(mask, connectivity=4)
    assert comps.count == 3  # two arms and the chest
    left_arm = max(comps.stats, key=lambda s: s.centroid[0])
    sides = split_left_right(mask)
    assert (sides[comps.labels == left_arm.label] == LEFT).all()


def test_spec_validation():
    with pytest.raises(BoundsError):
        PhantomSpec(nz=40, height_voxels=44)
    with pytest.raises(ParameterError):
        PhantomSpec(noise_sigma=-1.0)
    with pytest.raises(BoundsError):
        generate_phantom(PhantomSpec(torso_radius=40.0))


@pytest.mark.slow
def test_full_size_phantom_file(tmp_path):
    spec = PhantomSpec(nx=512, ny=512, nz=660, height_voxels=640, z_offset=10, torso_radius=96.0, limb_radius=48.0, threat_count=2, seed=3, body_id="big")
    vol, _, _ = generate_phantom(spec)
    p = tmp_path / "big.scanvol"
    write_volume(vol, p)
    expected = hashlib.sha256(vol.voxels.astype("<f4").tobytes()).hexdigest()
    del vol
    back = read_volume(p)
    assert back.nz == 660
    assert hashlib.sha256(back.voxels.tobytes()).hexdigest() == expected
