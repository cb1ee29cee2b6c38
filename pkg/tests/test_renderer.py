import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qnerf.autodiff import Var, backward
from qnerf.renderer import (LAST_DELTA, Ray, SampleSet, composite,
                            deltas_from_ts, focal_length, generate_ray,
                            generate_rays, mse_loss, psnr, render_ray,
                            sample_ts, ssim, stratified_samples,
                            white_background)

from helpers import central_diff, rel_err


class TestRays:
    def test_center_pixel_identity_pose(self):
        ray = generate_ray(np.eye(4), 0.7, 101, 101, 50, 50)
        assert np.allclose(ray.direction, [0.0, 0.0, -1.0], atol=1e-12)
        assert np.allclose(ray.origin, 0.0)

    def test_focal_formula(self):
        angle = 0.6911112070083618
        assert focal_length(100, angle) == pytest.approx(
            0.5 * 100 / math.tan(0.5 * angle))

    def test_corner_symmetry(self):
        h = w = 64
        pixels = np.array([[0, 0], [0, w - 1], [h - 1, 0], [h - 1, w - 1]])
        _, dirs = generate_rays(np.eye(4), 0.8, h, w, pixels)
        # mirror pairs agree up to sign of the mirrored component
        assert np.allclose(dirs[0], dirs[1] * [-1, 1, 1], atol=1e-12)
        assert np.allclose(dirs[0], dirs[2] * [1, -1, 1], atol=1e-12)
        assert np.allclose(dirs[0], dirs[3] * [-1, -1, 1], atol=1e-12)

    def test_directions_unit_norm(self):
        pose = np.eye(4)
        pose[:3, 3] = [1.0, 2.0, 3.0]
        origins, dirs = generate_rays(pose, 0.9, 8, 8)
        assert np.allclose(np.linalg.norm(dirs, axis=1), 1.0, atol=1e-12)
        assert np.allclose(origins, [1.0, 2.0, 3.0])

    def test_singular_pose_rejected(self):
        bad = np.eye(4)
        bad[:3, :3] = 0.0
        with pytest.raises(ValueError):
            generate_rays(bad, 0.7, 4, 4)

    def test_ray_validation(self):
        with pytest.raises(ValueError):
            Ray(np.zeros(3), np.array([0.0, 0.0, 2.0]))
        with pytest.raises(ValueError):
            Ray(np.zeros(3), np.array([0.0, 0.0, 1.0]), t_near=6, t_far=2)


class TestStratifiedSamples:
    def test_eval_midpoints(self):
        ray = Ray(np.zeros(3), np.array([0.0, 0.0, -1.0]), 2.0, 6.0)
        assert np.allclose(stratified_samples(ray, 4), [2.5, 3.5, 4.5, 5.5])

    def test_train_draws_stay_in_bins(self, rng):
        ts = sample_ts(100, 8, 2.0, 6.0, rng)
        edges = np.linspace(2.0, 6.0, 9)
        assert np.all(ts >= edges[:-1]) and np.all(ts <= edges[1:])

    def test_sorted_ascending(self, rng):
        ts = sample_ts(50, 16, 2.0, 6.0, rng)
        assert np.all(np.diff(ts, axis=1) > 0)

    def test_needs_two(self):
        with pytest.raises(ValueError):
            sample_ts(1, 1, 2.0, 6.0)


class TestQuadrature:
    def test_zero_density_black(self):
        ts = np.array([2.0, 3.0, 4.0])
        out = render_ray(SampleSet(ts, np.ones((3, 3)), np.zeros(3)))
        assert np.allclose(out, 0.0)

    def test_opaque_front_surface(self):
        ts = np.array([2.0, 3.0, 4.0])
        rgb = np.array([[1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0]])
        sigma = np.array([1e6, 5.0, 5.0])
        out = render_ray(SampleSet(ts, rgb, sigma))
        assert np.allclose(out, [1.0, 0.0, 0.0], atol=1e-9)

    def test_three_sample_hand_expansion(self, rng):
        # oracle: direct expansion of the three-term quadrature
        ts = np.array([2.0, 2.8, 4.1])
        sigma = rng.uniform(0.1, 2.0, 3)
        rgb = rng.uniform(0, 1, (3, 3))
        deltas = np.array([0.8, 1.3, LAST_DELTA])
        t1 = 1.0
        a1 = 1 - math.exp(-sigma[0] * deltas[0])
        t2 = math.exp(-sigma[0] * deltas[0])
        a2 = 1 - math.exp(-sigma[1] * deltas[1])
        t3 = math.exp(-sigma[0] * deltas[0] - sigma[1] * deltas[1])
        a3 = 1 - math.exp(-sigma[2] * deltas[2])
        expected = (t1 * a1 * rgb[0] + t2 * a2 * rgb[1] + t3 * a3 * rgb[2])
        out = render_ray(SampleSet(ts, rgb, sigma))
        assert np.allclose(out, expected, atol=1e-12)

    def test_deltas_last_open_ended(self):
        ts = np.array([[2.0, 3.0, 5.0]])
        assert np.allclose(deltas_from_ts(ts), [[1.0, 2.0, LAST_DELTA]])

    def test_transmittance_monotone_and_opacity_bounded(self, rng):
        sigma = rng.uniform(0, 3, (10, 16))
        deltas = np.full((10, 16), 0.25)
        tau = sigma * deltas
        trans = np.exp(-np.cumsum(np.concatenate(
            [np.zeros((10, 1)), tau[:, :-1]], axis=1), axis=1))
        assert np.allclose(trans[:, 0], 1.0)
        assert np.all(np.diff(trans, axis=1) <= 1e-15)
        _, acc = composite(sigma, rng.uniform(0, 1, (10, 16, 3)), deltas)
        assert np.all(acc.value >= 0) and np.all(acc.value <= 1 + 1e-12)

    def test_unit_colors_give_accumulated_opacity(self, rng):
        sigma = rng.uniform(0, 2, (4, 8))
        deltas = rng.uniform(0.1, 0.5, (4, 8))
        color, acc = composite(sigma, np.ones((4, 8, 3)), deltas)
        assert np.allclose(color.value, acc.value[:, None], atol=1e-12)

    def test_gradients_match_finite_differences(self, rng):
        batch, n = 2, 5
        sigma0 = rng.uniform(0.2, 1.5, (batch, n))
        rgb0 = rng.uniform(0.1, 0.9, (batch, n, 3))
        deltas = rng.uniform(0.3, 0.8, (batch, n))
        w = rng.standard_normal((batch, 3))

        def loss_sigma(s):
            color, _ = composite(s.reshape(batch, n), rgb0, deltas)
            return float((color * w).sum().value)

        def loss_rgb(r):
            color, _ = composite(sigma0, r.reshape(batch, n, 3), deltas)
            return float((color * w).sum().value)

        sv = Var(sigma0)
        rv = Var(rgb0)
        color, _ = composite(sv, rv, deltas)
        backward((color * w).sum())
        fd_sigma = central_diff(loss_sigma, sigma0.reshape(-1), h=1e-6)
        fd_rgb = central_diff(loss_rgb, rgb0.reshape(-1), h=1e-6)
        assert rel_err(sv.grad.reshape(-1), fd_sigma) < 1e-4
        assert rel_err(rv.grad.reshape(-1), fd_rgb) < 1e-4

    def test_white_background_blend(self, rng):
        sigma = np.zeros((3, 4))
        color, acc = composite(sigma, rng.uniform(0, 1, (3, 4, 3)),
                               np.full((3, 4), 0.5))
        blended = white_background(color, acc)
        assert np.allclose(blended.value, 1.0)  # empty space renders white


class TestMetrics:
    def test_mse_identical_zero(self, rng):
        img = rng.uniform(0, 1, (4, 4, 3))
        assert mse_loss(img, img) == 0.0

    def test_mse_constant_offset(self):
        a = np.zeros((5, 5))
        assert mse_loss(a + 0.1, a) == pytest.approx(0.01)

    def test_mse_matches_naive(self, rng):
        a, b = rng.uniform(0, 1, (6, 6, 3)), rng.uniform(0, 1, (6, 6, 3))
        naive = float(sum((x - y) ** 2 for x, y in
                          zip(a.reshape(-1), b.reshape(-1))) / a.size)
        assert mse_loss(a, b) == pytest.approx(naive, rel=1e-12)

    def test_mse_shape_mismatch(self):
        with pytest.raises(ValueError):
            mse_loss(np.zeros((2, 2)), np.zeros((3, 3)))

    def test_psnr_values(self):
        a = np.zeros((10, 10))
        assert psnr(a, a + 0.1) == pytest.approx(20.0)
        assert psnr(a, a + math.sqrt(0.001)) == pytest.approx(30.0)
        assert psnr(a, a) == math.inf

    def test_ssim_identical(self, rng):
        img = rng.uniform(0, 1, (24, 24, 3))
        assert ssim(img, img) == pytest.approx(1.0)

    def test_ssim_negative_image(self, rng):
        img = rng.uniform(0, 1, (24, 24))
        assert ssim(img, 1.0 - img) < 1.0

    def test_ssim_constant_shift_single_window(self, rng):
        # oracle: closed-form SSIM of a constant-shift pair on one window.
        # with x_hat = x + c: cov = var_x, mu_y = mu_x + c
        img = rng.uniform(0.2, 0.8, (11, 11))
        shift = 0.1
        c1, c2 = 0.01**2, 0.03**2
        win = np.outer(*(2 * [_gauss_1d()]))
        mu = float((img * win).sum())
        var = float((img * img * win).sum()) - mu**2
        mu2 = mu + shift
        expected = ((2 * mu * mu2 + c1) * (2 * var + c2)
                    / ((mu**2 + mu2**2 + c1) * (2 * var + c2)))
        assert ssim(img, img + shift) == pytest.approx(expected, rel=1e-10)

    def test_ssim_too_small(self):
        with pytest.raises(ValueError):
            ssim(np.zeros((5, 5)), np.zeros((5, 5)))


def _gauss_1d(size=11, sigma=1.5):
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


@settings(deadline=None, max_examples=30)
@given(st.lists(st.floats(0, 50), min_size=3, max_size=10))
def test_opacity_conserved_for_any_density(sigmas):
    sigma = np.array(sigmas)[None, :]
    deltas = np.full_like(sigma, 0.3)
    _, acc = composite(sigma, np.ones(sigma.shape + (3,)), deltas)
    assert -1e-12 <= acc.value[0] <= 1.0 + 1e-12
