import json

import numpy as np
import pytest

from qnerf.dataio import (SceneFormatError, SceneLoadError, downscale_avg,
                          load_blender)


class TestLoadScene:
    def test_split_counts_and_shapes(self, tiny_scene):
        assert len(tiny_scene.train) == 4
        assert len(tiny_scene.test) == 2
        assert tiny_scene.height == tiny_scene.width == 30
        for frame in tiny_scene.train + tiny_scene.test:
            assert frame.image.shape == (30, 30, 3)

    def test_pose_rotation_orthonormal(self, tiny_scene):
        for frame in tiny_scene.train + tiny_scene.test:
            rot = frame.pose[:3, :3]
            assert np.max(np.abs(rot @ rot.T - np.eye(3))) < 1e-4

    def test_pixels_in_unit_range(self, tiny_scene):
        for frame in tiny_scene.train:
            assert frame.image.min() >= 0.0
            assert frame.image.max() <= 1.0

    def test_alpha_composited_over_white(self, tiny_scene):
        # background pixels (alpha 0) must come out white
        corner = tiny_scene.train[0].image[0, 0]
        assert np.allclose(corner, 1.0, atol=2 / 255)

    def test_downscale_on_load(self, tiny_scene_dir):
        ds = load_blender(tiny_scene_dir, downscale=2)
        assert ds.height == ds.width == 15

    def test_missing_directory(self, tmp_path):
        with pytest.raises(SceneLoadError, match="nowhere"):
            load_blender(tmp_path / "nowhere")

    def test_missing_metadata_has_path(self, tmp_path):
        scene = tmp_path / "empty"
        scene.mkdir()
        with pytest.raises(SceneLoadError, match="transforms_train.json"):
            load_blender(scene)

    def test_malformed_json(self, tmp_path):
        scene = tmp_path / "bad"
        scene.mkdir()
        (scene / "transforms_train.json").write_text("{not json")
        with pytest.raises(SceneLoadError, match="malformed JSON"):
            load_blender(scene)

    def test_non_square_pose(self, tmp_path):
        scene = tmp_path / "badpose"
        (scene / "train").mkdir(parents=True)
        from PIL import Image
        Image.new("RGB", (4, 4)).save(scene / "train" / "r_0.png")
        meta = {"camera_angle_x": 0.7, "frames": [
            {"file_path": "./train/r_0", "transform_matrix": [[1, 0], [0, 1]]}]}
        (scene / "transforms_train.json").write_text(json.dumps(meta))
        with pytest.raises(SceneFormatError, match="4x4"):
            load_blender(scene)

    def test_missing_image_file(self, tmp_path):
        scene = tmp_path / "noimg"
        scene.mkdir()
        meta = {"camera_angle_x": 0.7, "frames": [
            {"file_path": "./train/r_0", "transform_matrix": np.eye(4).tolist()}]}
        (scene / "transforms_train.json").write_text(json.dumps(meta))
        with pytest.raises(SceneLoadError, match="r_0.png"):
            load_blender(scene)


class TestDownscale:
    def test_constant_image(self):
        img = np.full((8, 8, 3), 0.37)
        out = downscale_avg(img, 4)
        assert out.shape == (2, 2, 3)
        assert np.allclose(out, 0.37)

    def test_two_by_two_block_mean(self):
        img = np.array([[0.0, 0.0], [1.0, 1.0]])
        assert np.allclose(downscale_avg(img, 2), [[0.5]])

    def test_matches_double_loop_oracle(self, rng):
        img = rng.uniform(0, 1, (8, 8, 3))
        out = downscale_avg(img, 4)
        for i in range(2):
            for j in range(2):
                block = img[4 * i:4 * (i + 1), 4 * j:4 * (j + 1)]
                assert np.allclose(out[i, j], block.mean(axis=(0, 1)), atol=1e-15)

    def test_energy_preserved(self, rng):
        img = rng.uniform(0, 1, (16, 24, 3))
        out = downscale_avg(img, 8)
        assert abs(out.mean() - img.mean()) < 1e-12

    def test_non_divisible_rejected(self):
        with pytest.raises(ValueError):
            downscale_avg(np.zeros((9, 8)), 4)


def test_deterministic_regeneration(tmp_path):
    from qnerf.synthetic import make_synthetic_scene
    a = tmp_path / "a"
    b = tmp_path / "b"
    make_synthetic_scene(a, n_train=2, n_test=1, size=16, seed=3, n_samples=32)
    make_synthetic_scene(b, n_train=2, n_test=1, size=16, seed=3, n_samples=32)
    da, db = load_blender(a), load_blender(b)
    for fa, fb in zip(da.train, db.train):
        assert np.array_equal(fa.image, fb.image)
        assert np.array_equal(fa.pose, fb.pose)
