import numpy as np
import pytest

from qnerf.synthetic import make_synthetic_scene
from qnerf.dataio import load_blender


@pytest.fixture(scope="session")
def tiny_scene_dir(tmp_path_factory):
    """Small posed-image scene shared across tests: 4 train / 2 test frames
    at 30x30, rendered from the analytic volume."""
    root = tmp_path_factory.mktemp("scene") / "spheres30"
    make_synthetic_scene(root, n_train=4, n_test=2, size=30, seed=7,
                         n_samples=96)
    return root


@pytest.fixture(scope="session")
def tiny_scene(tiny_scene_dir):
    return load_blender(tiny_scene_dir)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
