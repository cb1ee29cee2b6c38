"""Loading of posed-image scenes in the synthetic (Blender-style) layout:
``transforms_train.json`` / ``transforms_test.json`` with ``camera_angle_x``
and per-frame ``transform_matrix`` entries, plus PNG frames whose alpha
channel (if any) is composited over white. Images are held in memory as
float64 in [0, 1] and can be shrunk by average pooling.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

__all__ = [
    "SceneLoadError",
    "SceneFormatError",
    "Frame",
    "SceneDataset",
    "load_blender",
    "downscale_avg",
]


class SceneLoadError(Exception):
    """Missing or unreadable scene file."""


class SceneFormatError(Exception):
    """Structurally invalid scene contents (bad pose, inconsistent sizes)."""


@dataclass(frozen=True)
class Frame:
    pose: np.ndarray       # 4x4 camera-to-world
    image: np.ndarray      # (H, W, 3) float64 in [0, 1]


@dataclass(frozen=True)
class SceneDataset:
    camera_angle_x: float
    train: tuple[Frame, ...]
    test: tuple[Frame, ...]

    @property
    def height(self) -> int:
        return self.train[0].image.shape[0]

    @property
    def width(self) -> int:
        return self.train[0].image.shape[1]


def _read_image(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im, dtype=np.float64) / 255.0
    except FileNotFoundError as e:
        raise SceneLoadError(f"missing image file: {path}") from e
    except OSError as e:
        raise SceneLoadError(f"unreadable image file: {path}") from e
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    if arr.shape[2] == 4:
        alpha = arr[:, :, 3:4]
        arr = arr[:, :, :3] * alpha + (1.0 - alpha)
    return arr[:, :, :3]


def _check_pose(pose, path: Path) -> np.ndarray:
    pose = np.asarray(pose, dtype=np.float64)
    if pose.shape != (4, 4):
        raise SceneFormatError(f"{path}: transform_matrix is not 4x4")
    rot = pose[:3, :3]
    if np.max(np.abs(rot @ rot.T - np.eye(3))) > 1e-4:
        raise SceneFormatError(f"{path}: pose rotation block is not orthonormal")
    return pose


def _load_split(scene_dir: Path, split: str, downscale: int) -> tuple[float, tuple[Frame, ...]]:
    meta_path = scene_dir / f"transforms_{split}.json"
    try:
        meta = json.loads(meta_path.read_text())
    except FileNotFoundError as e:
        raise SceneLoadError(f"missing metadata file: {meta_path}") from e
    except json.JSONDecodeError as e:
        raise SceneLoadError(f"malformed JSON in {meta_path}: {e}") from e
    try:
        angle = float(meta["camera_angle_x"])
        entries = meta["frames"]
    except KeyError as e:
        raise SceneFormatError(f"{meta_path}: missing key {e}") from e
    frames = []
    for entry in entries:
        img_path = scene_dir / (entry["file_path"].lstrip("./") + ".png")
        image = _read_image(img_path)
        if downscale > 1:
            image = downscale_avg(image, downscale)
        pose = _check_pose(entry["transform_matrix"], meta_path)
        frames.append(Frame(pose, image))
    if not frames:
        raise SceneFormatError(f"{meta_path}: no frames")
    shapes = {f.image.shape for f in frames}
    if len(shapes) != 1:
        raise SceneFormatError(f"{meta_path}: inconsistent image sizes {shapes}")
    return angle, tuple(frames)


def load_blender(scene_dir, downscale: int = 1) -> SceneDataset:
    """Load both splits of a synthetic scene directory.

    ``downscale`` average-pools each (already white-composited) image by that
    factor, e.g. 8 turns 800x800 frames into 100x100.
    """
    scene_dir = Path(scene_dir)
    if not scene_dir.is_dir():
        raise SceneLoadError(f"scene directory not found: {scene_dir}")
    angle_tr, train = _load_split(scene_dir, "train", downscale)
    angle_te, test = _load_split(scene_dir, "test", downscale)
    if abs(angle_tr - angle_te) > 1e-9:
        raise SceneFormatError(f"{scene_dir}: train/test camera_angle_x differ")
    return SceneDataset(angle_tr, train, test)


def downscale_avg(image: np.ndarray, k: int) -> np.ndarray:
    """Average pooling by factor k; every output pixel is the mean of its
    k x k block. Requires k to divide both image dimensions."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[:2]
    if k < 1 or h % k or w % k:
        raise ValueError(f"pool factor {k} does not divide image size {h}x{w}")
    if k == 1:
        return image.copy()
    shape = (h // k, k, w // k, k) + image.shape[2:]
    return image.reshape(shape).mean(axis=(1, 3))
