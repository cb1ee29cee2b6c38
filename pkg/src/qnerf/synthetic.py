"""Procedural test scene in the synthetic-dataset layout.

Writes a directory that ``dataio.load_blender`` accepts: posed RGBA frames of
an analytic volume (three soft-edged colored spheres near the origin) rendered
with the same quadrature the models are trained through, at a high sample
count. Cameras sit on a sphere of radius 4 looking at the origin, matching the
usual synthetic-scene geometry and the default [2, 6] ray bounds.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from . import renderer
from .autodiff import no_grad

__all__ = ["analytic_field", "make_synthetic_scene"]

CAMERA_ANGLE_X = 0.6911112070083618
CAMERA_RADIUS = 4.0

_SPHERES = (
    # center, radius, base color
    ((0.0, 0.0, 0.0), 0.85, (0.85, 0.30, 0.25)),
    ((0.85, 0.55, 0.35), 0.45, (0.20, 0.55, 0.90)),
    ((-0.75, -0.45, 0.40), 0.35, (0.95, 0.75, 0.20)),
)
_DENSITY = 60.0
_EDGE = 0.04


def analytic_field(points: np.ndarray):
    """Ground-truth (sigma, rgb) at (M, 3) points: soft sphere interiors with
    density-weighted colors, lightly shaded by height for visible structure."""
    points = np.asarray(points, dtype=np.float64)
    sig_total = np.zeros(points.shape[0])
    col_accum = np.zeros((points.shape[0], 3))
    for center, radius, color in _SPHERES:
        dist = np.linalg.norm(points - np.asarray(center), axis=1)
        occ = 1.0 / (1.0 + np.exp((dist - radius) / _EDGE))
        sig = _DENSITY * occ
        shade = 0.75 + 0.25 * np.clip(points[:, 2] - center[2], -1.0, 1.0)
        col_accum += sig[:, None] * (np.asarray(color) * shade[:, None])
        sig_total += sig
    safe = np.maximum(sig_total, 1e-12)
    rgb = np.clip(col_accum / safe[:, None], 0.0, 1.0)
    return sig_total, rgb


def _look_at_pose(azimuth: float, elevation: float, radius: float = CAMERA_RADIUS):
    origin = radius * np.array([
        np.cos(elevation) * np.sin(azimuth),
        -np.cos(elevation) * np.cos(azimuth),
        np.sin(elevation),
    ])
    z_axis = origin / np.linalg.norm(origin)          # camera backward
    up = np.array([0.0, 0.0, 1.0])
    x_axis = np.cross(up, z_axis)
    x_axis /= np.linalg.norm(x_axis)
    y_axis = np.cross(z_axis, x_axis)
    pose = np.eye(4)
    pose[:3, 0], pose[:3, 1], pose[:3, 2], pose[:3, 3] = x_axis, y_axis, z_axis, origin
    return pose


def _render_frame(pose, size: int, n_samples: int):
    origins, dirs = renderer.generate_rays(pose, CAMERA_ANGLE_X, size, size)
    ts = renderer.sample_ts(origins.shape[0], n_samples, renderer.T_NEAR,
                            renderer.T_FAR, rng=None)
    points = origins[:, None, :] + ts[:, :, None] * dirs[:, None, :]
    sigma, rgb = analytic_field(points.reshape(-1, 3))
    with no_grad():
        color, opacity = renderer.composite(
            sigma.reshape(-1, n_samples), rgb.reshape(-1, n_samples, 3),
            renderer.deltas_from_ts(ts))
    return (color.value.reshape(size, size, 3),
            opacity.value.reshape(size, size))


def _write_frame(path: Path, color: np.ndarray, opacity: np.ndarray):
    rgba = np.concatenate([color, opacity[:, :, None]], axis=2)
    img = (np.clip(rgba, 0.0, 1.0) * 255.0).round().astype(np.uint8)
    Image.fromarray(img, mode="RGBA").save(path)


def _camera_ring(count: int, rng, arc: float, phase: float,
                 midpoints: bool) -> list[np.ndarray]:
    offsets = np.arange(count) + (0.5 if midpoints else 0.0)
    azimuths = phase + offsets * arc / count
    elevations = rng.uniform(np.deg2rad(15), np.deg2rad(55), count)
    return [_look_at_pose(a, e) for a, e in zip(azimuths, elevations)]


def make_synthetic_scene(out_dir, n_train: int = 10, n_test: int = 5,
                         size: int = 50, seed: int = 0, n_samples: int = 256,
                         azimuth_arc: float = 2.0 * np.pi):
    """Generate and write a scene; returns the scene directory path.

    Cameras sit on the upper viewing hemisphere along an azimuth arc
    (full circle by default); test azimuths interleave the training ones, so
    a narrower ``azimuth_arc`` yields an interpolation-style split the way
    handheld forward-facing captures do.
    """
    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)
    phase = rng.uniform(0, 2 * np.pi)
    for split, count in (("train", n_train), ("test", n_test)):
        (out_dir / split).mkdir(parents=True, exist_ok=True)
        poses = _camera_ring(count, rng, azimuth_arc, phase,
                             midpoints=split == "test")
        frames = []
        for i, pose in enumerate(poses):
            color, opacity = _render_frame(pose, size, n_samples)
            _write_frame(out_dir / split / f"r_{i}.png", color, opacity)
            frames.append({
                "file_path": f"./{split}/r_{i}",
                "transform_matrix": pose.tolist(),
            })
        meta = {"camera_angle_x": CAMERA_ANGLE_X, "frames": frames}
        (out_dir / f"transforms_{split}.json").write_text(json.dumps(meta, indent=1))
    return out_dir
