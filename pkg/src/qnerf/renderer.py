"""Camera rays, stratified sampling, the discrete volume-rendering quadrature,
and image-quality metrics.

Pinhole convention: the camera looks along -z in its own frame, pixel centers
sit at (col + 0.5, row + 0.5), and `focal = 0.5 * W / tan(0.5 * camera_angle_x)`.
Ray directions are unit vectors; near/far default to the usual synthetic-scene
bounds [2, 6]. The final sample interval is open-ended (delta = 1e10). For
scenes shot on a transparent background, renders are composited over white.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Var, exclusive_cumsum, exp, no_grad

__all__ = [
    "T_NEAR",
    "T_FAR",
    "LAST_DELTA",
    "Ray",
    "SampleSet",
    "focal_length",
    "generate_rays",
    "generate_ray",
    "stratified_samples",
    "sample_ts",
    "deltas_from_ts",
    "composite",
    "white_background",
    "render_ray",
    "render_batch",
    "render_image",
    "mse_loss",
    "psnr",
    "ssim",
]

T_NEAR = 2.0
T_FAR = 6.0
LAST_DELTA = 1e10


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_near: float = T_NEAR
    t_far: float = T_FAR

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=np.float64)
        d = np.asarray(self.direction, dtype=np.float64)
        if o.shape != (3,) or d.shape != (3,):
            raise ValueError("origin and direction must be 3-vectors")
        if abs(np.linalg.norm(d) - 1.0) > 1e-6:
            raise ValueError("ray direction must be unit length")
        if not self.t_near < self.t_far:
            raise ValueError("t_near must be < t_far")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)


@dataclass(frozen=True)
class SampleSet:
    """Samples along one ray with their field predictions."""

    ts: np.ndarray          # (N,) strictly increasing
    rgb: np.ndarray         # (N, 3)
    sigma: np.ndarray       # (N,)

    def __post_init__(self):
        ts = np.asarray(self.ts, dtype=np.float64)
        if ts.ndim != 1 or np.any(np.diff(ts) <= 0):
            raise ValueError("sample positions must be strictly increasing")
        object.__setattr__(self, "ts", ts)
        object.__setattr__(self, "rgb", np.asarray(self.rgb, dtype=np.float64))
        object.__setattr__(self, "sigma", np.asarray(self.sigma, dtype=np.float64))

    @property
    def deltas(self) -> np.ndarray:
        return deltas_from_ts(self.ts[None, :])[0]


def focal_length(width: int, camera_angle_x: float) -> float:
    return 0.5 * width / math.tan(0.5 * camera_angle_x)


def _check_pose(pose: np.ndarray) -> np.ndarray:
    pose = np.asarray(pose, dtype=np.float64)
    if pose.shape != (4, 4):
        raise ValueError(f"pose must be 4x4, got {pose.shape}")
    rot = pose[:3, :3]
    if abs(abs(np.linalg.det(rot)) - 1.0) > 1e-3:
        raise ValueError("pose rotation block is singular or non-rigid")
    return pose


def generate_rays(pose, camera_angle_x: float, height: int, width: int,
                  pixels: np.ndarray | None = None,
                  t_near: float = T_NEAR, t_far: float = T_FAR):
    """Rays through pixel centers. ``pixels`` is an (M, 2) array of (row, col)
    indices; None means every pixel in row-major order. Returns unit-norm
    directions and per-ray origins, both (M, 3)."""
    pose = _check_pose(pose)
    if pixels is None:
        rows, cols = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
        pixels = np.stack([rows.ravel(), cols.ravel()], axis=1)
    pixels = np.asarray(pixels)
    focal = focal_length(width, camera_angle_x)
    x = (pixels[:, 1] + 0.5 - 0.5 * width) / focal
    y = -(pixels[:, 0] + 0.5 - 0.5 * height) / focal
    dirs_cam = np.stack([x, y, -np.ones_like(x)], axis=1)
    dirs = dirs_cam @ pose[:3, :3].T
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    origins = np.broadcast_to(pose[:3, 3], dirs.shape).copy()
    return origins, dirs


def generate_ray(pose, camera_angle_x: float, height: int, width: int,
                 row: int, col: int) -> Ray:
    o, d = generate_rays(pose, camera_angle_x, height, width,
                         np.array([[row, col]]))
    return Ray(o[0], d[0])


def sample_ts(batch: int, n: int, t_near: float, t_far: float, rng=None) -> np.ndarray:
    """One t per equal-width bin of [t_near, t_far]: a uniform draw inside the
    bin when ``rng`` is given, the bin midpoint otherwise (eval mode)."""
    if n < 2:
        raise ValueError("need at least 2 samples per ray")
    edges = np.linspace(t_near, t_far, n + 1)
    lo, width = edges[:-1], edges[1] - edges[0]
    if rng is None:
        u = np.full((batch, n), 0.5)
    else:
        u = rng.uniform(0.0, 1.0, (batch, n))
    return lo[None, :] + u * width


def stratified_samples(ray: Ray, n: int, rng=None) -> np.ndarray:
    return sample_ts(1, n, ray.t_near, ray.t_far, rng)[0]


def deltas_from_ts(ts: np.ndarray) -> np.ndarray:
    """delta_i = t_{i+1} - t_i; the last interval is open-ended."""
    d = np.diff(ts, axis=-1)
    last = np.full(ts.shape[:-1] + (1,), LAST_DELTA)
    return np.concatenate([d, last], axis=-1)


def composite(sigma, rgb, deltas):
    """Discrete quadrature sum_i T_i (1 - exp(-sigma_i delta_i)) c_i.

    ``sigma`` (B, N) and ``rgb`` (B, N, 3) may be Vars (differentiable path);
    ``deltas`` (B, N) is constant. Returns (color (B, 3), opacity (B,))."""
    sigma = sigma if isinstance(sigma, Var) else Var(sigma)
    rgb = rgb if isinstance(rgb, Var) else Var(rgb)
    tau = sigma * deltas
    alpha = 1.0 - exp(-tau)
    trans = exp(-exclusive_cumsum(tau, axis=1))
    weights = trans * alpha
    batch, n = weights.value.shape
    color = (weights.reshape(batch, n, 1) * rgb).sum(axis=1)
    return color, weights.sum(axis=1)


def white_background(color, opacity):
    """Blend the accumulated color over a white backdrop."""
    batch = opacity.value.shape[0] if isinstance(opacity, Var) else opacity.shape[0]
    return color + (1.0 - opacity).reshape(batch, 1)


def render_ray(samples: SampleSet) -> np.ndarray:
    """Quadrature color of a single ray (no background term)."""
    with no_grad():
        color, _ = composite(samples.sigma[None, :], samples.rgb[None, :, :],
                             deltas_from_ts(samples.ts[None, :]))
    return color.value[0]


def render_batch(model, origins, dirs, n_samples: int, rng=None,
                 t_near: float = T_NEAR, t_far: float = T_FAR,
                 white_bg: bool = True, noise=None, noise_rng=None):
    """Render a batch of rays through ``model``; returns a (B, 3) color Var."""
    batch = origins.shape[0]
    ts = sample_ts(batch, n_samples, t_near, t_far, rng)
    points = origins[:, None, :] + ts[:, :, None] * dirs[:, None, :]
    flat_dirs = np.repeat(dirs, n_samples, axis=0)
    rgb, sigma = model.forward(points.reshape(-1, 3), flat_dirs,
                               noise=noise, noise_rng=noise_rng)
    color, opacity = composite(sigma.reshape(batch, n_samples),
                               rgb.reshape(batch, n_samples, 3),
                               deltas_from_ts(ts))
    return white_background(color, opacity) if white_bg else color


def render_image(model, pose, camera_angle_x: float, height: int, width: int,
                 n_samples: int = 64, chunk: int = 1024, noise=None,
                 noise_rng=None, t_near: float = T_NEAR, t_far: float = T_FAR):
    """Deterministic full-frame render (midpoint sampling, no gradients)."""
    origins, dirs = generate_rays(pose, camera_angle_x, height, width,
                                  t_near=t_near, t_far=t_far)
    out = np.empty((height * width, 3))
    with no_grad():
        for lo in range(0, origins.shape[0], chunk):
            hi = min(lo + chunk, origins.shape[0])
            color = render_batch(model, origins[lo:hi], dirs[lo:hi], n_samples,
                                 rng=None, t_near=t_near, t_far=t_far,
                                 noise=noise, noise_rng=noise_rng)
            out[lo:hi] = color.value
    return out.reshape(height, width, 3)


def mse_loss(pred, target):
    """Mean squared channel difference; Var in, Var out."""
    target = np.asarray(target, dtype=np.float64)
    if isinstance(pred, Var):
        if pred.value.shape != target.shape:
            raise ValueError("prediction and target shapes differ")
        diff = pred - target
        return (diff * diff).mean()
    pred = np.asarray(pred, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError("prediction and target shapes differ")
    return float(np.mean((pred - target) ** 2))


def psnr(x, x_hat, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE); identical inputs give +inf."""
    mse = mse_loss(np.asarray(x), np.asarray(x_hat))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def _windowed_mean(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    k = window.shape[0]
    view = np.lib.stride_tricks.sliding_window_view(img, (k, k))
    return np.tensordot(view, window, axes=([2, 3], [0, 1]))


def ssim(x, x_hat, peak: float = 1.0, window_size: int = 11,
         window_sigma: float = 1.5) -> float:
    """Mean local structural similarity with an 11x11 Gaussian window
    (sigma 1.5) and the usual stabilizers C1=(0.01 peak)^2, C2=(0.03 peak)^2.
    Color images are scored per channel and averaged."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ValueError("images must have the same shape")
    if x.ndim == 3:
        return float(np.mean([ssim(x[..., c], x_hat[..., c], peak, window_size,
                                   window_sigma) for c in range(x.shape[-1])]))
    if min(x.shape) < window_size:
        raise ValueError(f"image smaller than the {window_size}x{window_size} window")
    win = _gaussian_window(window_size, window_sigma)
    c1, c2 = (0.01 * peak) ** 2, (0.03 * peak) ** 2
    mu_x = _windowed_mean(x, win)
    mu_y = _windowed_mean(x_hat, win)
    var_x = _windowed_mean(x * x, win) - mu_x**2
    var_y = _windowed_mean(x_hat * x_hat, win) - mu_y**2
    cov = _windowed_mean(x * x_hat, win) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))
