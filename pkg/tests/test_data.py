"""Dataset scanning, preprocessing and the synthetic scene generator."""

import numpy as np
import pytest
import torch

from coadain.data import (
    SYNTHETIC_LABEL_MAP,
    ArrayDataset,
    SceneSpec,
    Vehicle,
    batch_iterator,
    epoch_batches,
    generate_synthetic_scene,
    labels_to_onehot,
    load_entry,
    preprocess,
    resize_labels,
    scan_dataset,
    write_synthetic_dataset,
)
from coadain.exceptions import ShapeMismatchError, ValidationError
from coadain.ops import downsample_mask


@pytest.fixture
def toy_root(tmp_path):
    return write_synthetic_dataset(tmp_path / "toy", num_scenes=5, seed=7).root


class TestScan:
    def test_empty_directory(self, tmp_path):
        for sub in ("rgb", "thermal", "seg"):
            (tmp_path / sub).mkdir()
        manifest, report = scan_dataset(tmp_path, "train", SYNTHETIC_LABEL_MAP)
        assert len(manifest) == 0 and report.ok

    def test_orphans_reported(self, toy_root):
        (toy_root / "rgb" / "orphan.png").write_bytes(
            (toy_root / "rgb" / "scene_00000.png").read_bytes())
        manifest, report = scan_dataset(toy_root, "train", SYNTHETIC_LABEL_MAP)
        assert len(manifest) == 5
        assert report.orphans == ["rgb/orphan.png"]

    def test_fixture_sorted_by_filename(self, toy_root):
        manifest, report = scan_dataset(toy_root, "train", SYNTHETIC_LABEL_MAP)
        assert report.ok
        stems = [e.stem for e in manifest.entries]
        assert stems == sorted(stems) and len(stems) == 5

    def test_missing_subtree_rejected(self, tmp_path):
        with pytest.raises(ValidationError):
            scan_dataset(tmp_path / "nope", "train", SYNTHETIC_LABEL_MAP)


class TestPreprocess:
    def test_constant_gray_rgb(self):
        rgb = np.full((8, 16, 3), 127.5)
        thermal = np.zeros((8, 16), dtype=np.uint16)
        seg = np.zeros((8, 16), dtype=np.uint8)
        rgb_t, th_t, mask = preprocess(rgb, thermal, seg, SYNTHETIC_LABEL_MAP,
                                       0.0, 65535.0, image_size=(4, 8))
        assert torch.allclose(rgb_t, torch.zeros_like(rgb_t), atol=1e-6)
        assert torch.allclose(th_t, torch.full_like(th_t, -1.0))

    def test_background_only_seg(self):
        rgb = np.zeros((8, 8, 3))
        seg = np.zeros((8, 8), dtype=np.uint8)
        _, _, mask = preprocess(rgb, np.zeros((8, 8)), seg, SYNTHETIC_LABEL_MAP,
                                0.0, 1.0, image_size=(8, 8))
        assert (mask[1] == 1).all() and (mask[0] == 0).all()

    def test_checkerboard_seg_matches_mask_downsampling(self):
        seg = np.indices((8, 8)).sum(axis=0) % 2
        seg = seg.astype(np.uint8)
        rgb = np.zeros((8, 8, 3))
        _, _, mask = preprocess(rgb, np.zeros((8, 8)), seg, SYNTHETIC_LABEL_MAP,
                                0.0, 1.0, image_size=(4, 4))
        full = torch.from_numpy(labels_to_onehot(seg, SYNTHETIC_LABEL_MAP))[None]
        expected = downsample_mask(full, (4, 4))[0]
        assert torch.equal(mask, expected)

    def test_size_mismatch_rejected(self):
        with pytest.raises(ShapeMismatchError):
            preprocess(np.zeros((8, 8, 3)), np.zeros((4, 4)), np.zeros((8, 8), dtype=np.uint8),
                       SYNTHETIC_LABEL_MAP, 0.0, 1.0)

    def test_unmapped_label_named(self):
        seg = np.full((4, 4), 9, dtype=np.uint8)
        with pytest.raises(ValidationError, match="9"):
            labels_to_onehot(seg, SYNTHETIC_LABEL_MAP)

    def test_value_ranges(self, toy_root):
        manifest, _ = scan_dataset(toy_root, "train", SYNTHETIC_LABEL_MAP)
        rgb, thermal, seg = load_entry(manifest.entries[0])
        rgb_t, th_t, mask = preprocess(rgb, thermal, seg, manifest.label_map,
                                       manifest.thermal_min, manifest.thermal_max,
                                       image_size=(32, 64))
        for t in (rgb_t, th_t):
            assert float(t.min()) >= -1.0 and float(t.max()) <= 1.0
        assert (mask.sum(dim=0) == 1).all()

    def test_label_resize_uses_floor_indexing(self):
        labels = np.arange(16).reshape(4, 4).astype(np.uint8)
        out = resize_labels(labels, (2, 2))
        assert (out == np.array([[0, 2], [8, 10]])).all()


def spec_with_temperature(temp):
    return SceneSpec(background_temperature=0.4,
                     vehicles=[Vehicle((10, 20), (16, 30), temp, 0.5),
                               Vehicle((40, 80), (12, 24), 0.8, 0.3)],
                     noise_level=0.01, seed=99)


class TestSyntheticScenes:
    def test_temperature_changes_only_thermal_inside_vehicle(self):
        rgb1, th1, mask1 = generate_synthetic_scene(spec_with_temperature(0.2))
        rgb2, th2, mask2 = generate_synthetic_scene(spec_with_temperature(0.9))
        assert torch.equal(rgb1, rgb2)
        assert torch.equal(mask1, mask2)
        diff = (th1 - th2).abs()[0]
        region = _footprint(mask1, (10, 20), (16, 30))
        assert float(diff[~region].max()) == 0.0
        assert float(diff[region].max()) > 0.0

    def test_albedo_invariance_of_thermal(self):
        s1 = spec_with_temperature(0.5)
        s2 = spec_with_temperature(0.5)
        s2.vehicles[0].albedo = 0.9
        rgb1, th1, _ = generate_synthetic_scene(s1)
        rgb2, th2, _ = generate_synthetic_scene(s2)
        assert torch.equal(th1, th2)
        assert not torch.equal(rgb1, rgb2)

    def test_zero_vehicles_all_background(self):
        spec = SceneSpec(0.3, [], 0.0, 1)
        _, _, mask = generate_synthetic_scene(spec)
        assert (mask[1] == 1).all()

    def test_fixed_seed_reproducible(self):
        a = generate_synthetic_scene(spec_with_temperature(0.5))
        b = generate_synthetic_scene(spec_with_temperature(0.5))
        assert all(torch.equal(x, y) for x, y in zip(a, b))

    def test_out_of_bounds_vehicle_rejected(self):
        spec = SceneSpec(0.3, [Vehicle((60, 120), (16, 30), 0.5, 0.5)], 0.0, 1)
        with pytest.raises(ValidationError):
            generate_synthetic_scene(spec)

    def test_written_dataset_round_trips(self, toy_root):
        manifest, report = scan_dataset(toy_root, "train", SYNTHETIC_LABEL_MAP)
        assert report.ok
        ds = ArrayDataset.from_manifest(manifest, "thermal", (64, 128))
        assert ds.images.shape == (5, 1, 64, 128)
        assert (ds.masks.sum(dim=1) == 1).all()

    def test_deterministic_tree(self, tmp_path):
        write_synthetic_dataset(tmp_path / "d1", 3, seed=5)
        write_synthetic_dataset(tmp_path / "d2", 3, seed=5)
        for sub in ("rgb", "thermal", "seg"):
            for p1 in sorted((tmp_path / "d1" / sub).glob("*.png")):
                p2 = tmp_path / "d2" / sub / p1.name
                assert p1.read_bytes() == p2.read_bytes()


def _footprint(mask, pos, size):
    region = torch.zeros_like(mask[0], dtype=torch.bool)
    region[pos[0] : pos[0] + size[0], pos[1] : pos[1] + size[1]] = True
    return region


class TestBatchIterator:
    def test_counting(self):
        assert len(epoch_batches(10, 4, seed=0, epoch=0)) == 2

    def test_same_seed_same_order(self):
        a = [b.tolist() for b in epoch_batches(20, 4, seed=3, epoch=1)]
        b = [b.tolist() for b in epoch_batches(20, 4, seed=3, epoch=1)]
        assert a == b

    def test_different_seeds_differ_statistically(self):
        orders = {tuple(np.concatenate(epoch_batches(12, 4, seed=s, epoch=0)))
                  for s in range(100)}
        assert len(orders) > 90

    def test_resume_matches_uninterrupted(self):
        full = [b.tolist() for _, b in zip(range(9), batch_iterator(10, 4, seed=1))]
        resumed = [b.tolist() for _, b in zip(range(4),
                                              batch_iterator(10, 4, seed=1, start_iteration=5))]
        assert full[5:] == resumed

    def test_oversized_batch_rejected(self):
        with pytest.raises(ValidationError):
            next(batch_iterator(3, 8, seed=0))
