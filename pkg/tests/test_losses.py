"""Photometric, spectral, and ray-bundle losses, plus the self-contained FFT.

The FFT is validated against a textbook O(R^4) DFT written independently in
tests/helpers.py, so the two routes share no code.
"""

import inspect

import numpy as np
import pytest

import nelf.losses as losses_module
from helpers import naive_dft2
from nelf.errors import InvalidHyperparam, NonPowerOfTwo, ShapeMismatch
from nelf.geometry import Ray, angle_between
from nelf.losses import (BundleConfig, LossWeights, SpectrumRef,
                         area_downsample, fft2d, fourier_sparsity_loss,
                         magnitude_spectrum, photometric_loss,
                         ray_bundle_loss, ray_bundle_loss_batch,
                         sample_bundle, sample_bundle_angles,
                         sample_bundles_batch, total_loss)
from nelf.rng import DeterministicRng


class TestPhotometricLoss:
    def test_single_unit_residual(self):
        value, grad = photometric_loss(np.array([[1.0, 0.0, 0.0]]), np.zeros((1, 3)))
        assert value == 1.0
        np.testing.assert_array_equal(grad, [[1.0, 0.0, 0.0]])

    def test_zero_residual_has_zero_subgradient(self):
        x = np.random.default_rng(0).uniform(size=(8, 3))
        value, grad = photometric_loss(x, x)
        assert value == 0.0
        assert not np.any(grad)

    def test_equals_sum_of_residual_norms(self):
        rng = np.random.default_rng(1)
        pred = rng.uniform(size=(100, 3))
        target = rng.uniform(size=(100, 3))
        value, _ = photometric_loss(pred, target)
        expect = sum(float(np.linalg.norm(pred[i] - target[i])) for i in range(100))
        np.testing.assert_allclose(value, expect, rtol=1e-12)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        pred = rng.uniform(0.2, 0.8, size=(5, 3))
        target = rng.uniform(0.2, 0.8, size=(5, 3))
        _, grad = photometric_loss(pred, target)
        eps = 1e-7
        for i in range(5):
            for c in range(3):
                probe = pred.copy()
                probe[i, c] += eps
                up, _ = photometric_loss(probe, target)
                probe[i, c] -= 2 * eps
                dn, _ = photometric_loss(probe, target)
                np.testing.assert_allclose(grad[i, c], (up - dn) / (2 * eps), atol=1e-6)

    def test_rejects_mismatched_shapes(self):
        with pytest.raises(ShapeMismatch):
            photometric_loss(np.zeros((4, 3)), np.zeros((5, 3)))
        with pytest.raises(ShapeMismatch):
            photometric_loss(np.zeros((4, 2)), np.zeros((4, 2)))


class TestFft2d:
    def test_constant_image_concentrates_at_dc(self):
        for r in (2, 8):
            spec = fft2d(np.full((r, r), 0.3))
            np.testing.assert_allclose(spec[0, 0], 0.3 * r * r, atol=1e-12)
            rest = spec.copy()
            rest[0, 0] = 0.0
            np.testing.assert_allclose(rest, 0.0, atol=1e-12)

    def test_corner_impulse_is_flat_ones(self):
        img = np.zeros((8, 8))
        img[0, 0] = 1.0
        np.testing.assert_allclose(fft2d(img), np.ones((8, 8)), atol=1e-12)

    def test_shifted_impulse_keeps_unit_magnitude(self):
        img = np.zeros((8, 8))
        img[3, 5] = 1.0
        np.testing.assert_allclose(np.abs(fft2d(img)), np.ones((8, 8)), atol=1e-12)

    def test_matches_naive_dft_oracle(self):
        rng = np.random.default_rng(42)
        for r in (2, 4, 8, 16):
            x = rng.normal(size=(r, r))
            np.testing.assert_allclose(fft2d(x), naive_dft2(x), atol=1e-9)

    def test_linear_in_the_input(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=(8, 8))
        b = rng.normal(size=(8, 8))
        lhs = fft2d(2.0 * a - 0.5 * b)
        rhs = 2.0 * fft2d(a) - 0.5 * fft2d(b)
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)

    def test_parseval_energy_identity(self):
        # Unnormalized transform: sum|X|^2 = R^2 * sum|x|^2.
        rng = np.random.default_rng(4)
        x = rng.normal(size=(16, 16))
        lhs = np.sum(np.abs(fft2d(x)) ** 2)
        rhs = 16 * 16 * np.sum(x * x)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-6)

    def test_rejects_non_power_of_two(self):
        with pytest.raises(NonPowerOfTwo):
            fft2d(np.zeros((6, 6)))
        with pytest.raises(NonPowerOfTwo):
            fft2d(np.zeros((12, 12)))

    def test_rejects_non_square(self):
        with pytest.raises(ShapeMismatch):
            fft2d(np.zeros((4, 8)))

    def test_implementation_does_not_call_library_ffts(self):
        src = inspect.getsource(losses_module)
        assert "np.fft" not in src
        assert "numpy.fft" not in src
        assert "scipy.fft" not in src


class TestMagnitudeSpectrum:
    def test_invariant_under_circular_shifts(self):
        rng = np.random.default_rng(5)
        img = rng.uniform(size=(16, 16, 3))
        rolled = np.roll(img, shift=(3, -2), axis=(0, 1))
        np.testing.assert_allclose(magnitude_spectrum(rolled),
                                   magnitude_spectrum(img), atol=1e-9)

    def test_channels_are_independent(self):
        rng = np.random.default_rng(6)
        img = rng.uniform(size=(8, 8, 3))
        spec = magnitude_spectrum(img)
        for c in range(3):
            np.testing.assert_allclose(spec[..., c], np.abs(fft2d(img[..., c])), atol=1e-12)


class TestAreaDownsample:
    def test_two_to_one_is_block_mean(self):
        rng = np.random.default_rng(7)
        img = rng.uniform(size=(4, 4, 3))
        out = area_downsample(img, 2, 2)
        expect = img.reshape(2, 2, 2, 2, 3).mean(axis=(1, 3))
        np.testing.assert_allclose(out, expect, atol=1e-12)

    def test_constant_image_is_preserved(self):
        out = area_downsample(np.full((10, 6, 3), 0.7), 4, 4)
        np.testing.assert_allclose(out, 0.7, atol=1e-12)

    def test_fractional_overlap_weights(self):
        col = np.array([[1.0], [2.0], [4.0]])[:, :, None]  # 3x1 image
        out = area_downsample(col, 2, 1)[:, 0, 0]
        np.testing.assert_allclose(out, [(1.0 + 0.5 * 2.0) / 1.5, (0.5 * 2.0 + 4.0) / 1.5],
                                   atol=1e-12)

    def test_preserves_mean(self):
        rng = np.random.default_rng(8)
        img = rng.uniform(size=(12, 12, 3))
        out = area_downsample(img, 8, 8)
        np.testing.assert_allclose(out.mean(axis=(0, 1)), img.mean(axis=(0, 1)), atol=1e-12)


class TestSpectralLoss:
    def make_refs(self, images, r=8):
        return SpectrumRef.from_images(images, r)

    def test_zero_when_rendered_matches_reference(self):
        rng = np.random.default_rng(9)
        img = rng.uniform(size=(8, 8, 3))
        refs = self.make_refs([img], r=8)
        value, grad = fourier_sparsity_loss(img, refs)
        assert value == 0.0
        assert not np.any(grad)

    def test_constant_images_reduce_to_dc_difference(self):
        r = 4
        rendered = np.full((r, r, 3), 0.5)
        refs = self.make_refs([np.full((r, r, 3), 0.25)], r=r)
        value, _ = fourier_sparsity_loss(rendered, refs)
        np.testing.assert_allclose(value, 3 * r * r * 0.25, rtol=1e-12)

    def test_additive_over_references(self):
        rng = np.random.default_rng(10)
        rendered = rng.uniform(size=(8, 8, 3))
        i1 = rng.uniform(size=(8, 8, 3))
        i2 = rng.uniform(size=(8, 8, 3))
        v12, g12 = fourier_sparsity_loss(rendered, self.make_refs([i1, i2]))
        v1, g1 = fourier_sparsity_loss(rendered, self.make_refs([i1]))
        v2, g2 = fourier_sparsity_loss(rendered, self.make_refs([i2]))
        np.testing.assert_allclose(v12, v1 + v2, rtol=1e-12)
        np.testing.assert_allclose(g12, g1 + g2, atol=1e-12)

    def test_invariant_to_reference_shifts(self):
        rng = np.random.default_rng(11)
        rendered = rng.uniform(size=(8, 8, 3))
        ref = rng.uniform(size=(8, 8, 3))
        v_a, _ = fourier_sparsity_loss(rendered, self.make_refs([ref]))
        v_b, _ = fourier_sparsity_loss(rendered,
                                       self.make_refs([np.roll(ref, 2, axis=1)]))
        np.testing.assert_allclose(v_a, v_b, rtol=1e-9)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(12)
        rendered = rng.uniform(0.2, 0.8, size=(4, 4, 3))
        refs = self.make_refs([rng.uniform(size=(4, 4, 3))], r=4)
        value, grad = fourier_sparsity_loss(rendered, refs)
        assert value > 0
        eps = 1e-6
        worst = 0.0
        for i in range(4):
            for j in range(4):
                for c in range(3):
                    probe = rendered.copy()
                    probe[i, j, c] += eps
                    up, _ = fourier_sparsity_loss(probe, refs)
                    probe[i, j, c] -= 2 * eps
                    dn, _ = fourier_sparsity_loss(probe, refs)
                    fd = (up - dn) / (2 * eps)
                    worst = max(worst, abs(fd - grad[i, j, c]) / max(abs(fd), 1e-8))
        assert worst < 1e-4

    def test_rejects_wrong_resolution(self):
        refs = self.make_refs([np.zeros((8, 8, 3))], r=8)
        with pytest.raises(ShapeMismatch):
            fourier_sparsity_loss(np.zeros((4, 4, 3)), refs)

    def test_rejects_non_power_of_two_resolution(self):
        with pytest.raises(NonPowerOfTwo):
            SpectrumRef.from_images([np.zeros((6, 6, 3))], 6)


class TestBundleSampling:
    def test_positive_half_normal_statistics(self):
        rng = DeterministicRng(seed=0, stream=1)
        theta = 1.5
        angles = sample_bundle_angles(100_000, theta, rng)
        assert np.all(angles > 0)
        expect_mean = theta * np.sqrt(2.0 / np.pi)
        np.testing.assert_allclose(angles.mean(), expect_mean, rtol=0.02)

    def test_bundle_geometry_and_weights(self):
        rng = DeterministicRng(seed=1, stream=2)
        center = Ray(np.array([0.0, 0.0, 0.0]),
                     np.array([0.6, 0.0, 0.8]))
        cfg = BundleConfig(T=16, theta_deg=1.5)
        bundle = sample_bundle(center, cfg, rng)
        assert len(bundle) == 16
        for ray, weight in bundle:
            np.testing.assert_array_equal(ray.origin, center.origin)
            np.testing.assert_allclose(np.linalg.norm(ray.direction), 1.0, atol=1e-12)
            assert 0.0 < weight <= 1.0
            # The weight encodes the actual angular offset.
            angle = angle_between(center, ray)
            np.testing.assert_allclose(weight, np.exp(-angle / cfg.theta_deg), atol=1e-9)

    def test_small_theta_keeps_bundles_tight(self):
        rng = DeterministicRng(seed=2, stream=3)
        o = np.zeros((4, 3))
        d = np.tile(np.array([0.0, 0.0, 1.0]), (4, 1))
        _, dirs, _ = sample_bundles_batch(o, d, BundleConfig(T=8, theta_deg=0.01), rng)
        cos = np.clip(dirs @ np.array([0.0, 0.0, 1.0]), -1.0, 1.0)
        assert np.degrees(np.arccos(cos)).max() < 0.1

    def test_batch_shapes(self):
        rng = DeterministicRng(seed=3, stream=4)
        o = np.random.default_rng(0).normal(size=(5, 3))
        d = np.tile(np.array([0.0, 0.0, 1.0]), (5, 1))
        bo, bd, bw = sample_bundles_batch(o, d, BundleConfig(T=7, theta_deg=1.0), rng)
        assert bo.shape == (5, 7, 3)
        assert bd.shape == (5, 7, 3)
        assert bw.shape == (5, 7)
        np.testing.assert_array_equal(bo, np.broadcast_to(o[:, None], (5, 7, 3)))

    def test_rejects_bad_config(self):
        with pytest.raises(InvalidHyperparam):
            BundleConfig(T=0)
        with pytest.raises(InvalidHyperparam):
            BundleConfig(theta_deg=0.0)


class TestRayBundleLoss:
    def test_single_offset_hand_case(self):
        value, gc, gb = ray_bundle_loss(np.array([1.0, 0.0, 0.0]),
                                        np.array([[0.0, 0.0, 0.0]]),
                                        np.array([1.0]))
        assert value == 1.0
        np.testing.assert_allclose(gc, [1.0, 0.0, 0.0], atol=1e-15)
        np.testing.assert_allclose(gb, [[-1.0, 0.0, 0.0]], atol=1e-15)

    def test_weights_scale_contributions(self):
        c = np.array([0.5, 0.5, 0.5])
        b = np.array([[0.5, 0.5, 0.0], [0.5, 0.0, 0.5]])
        w = np.array([0.25, 0.75])
        value, _, _ = ray_bundle_loss(c, b, w)
        np.testing.assert_allclose(value, 0.25 * 0.5 + 0.75 * 0.5, rtol=1e-12)

    def test_identical_colors_give_zero_loss_and_gradient(self):
        c = np.array([0.3, 0.6, 0.9])
        b = np.tile(c, (4, 1))
        value, gc, gb = ray_bundle_loss(c, b, np.ones(4))
        assert value == 0.0
        assert not np.any(gc)
        assert not np.any(gb)

    def test_batch_equals_sum_of_singles(self):
        rng = np.random.default_rng(13)
        c = rng.uniform(size=(6, 3))
        b = rng.uniform(size=(6, 4, 3))
        w = rng.uniform(0.1, 1.0, size=(6, 4))
        batch_value, batch_gc, batch_gb = ray_bundle_loss_batch(c, b, w)
        total = 0.0
        for i in range(6):
            vi, gci, gbi = ray_bundle_loss(c[i], b[i], w[i])
            total += vi
            np.testing.assert_allclose(batch_gc[i], gci, atol=1e-12)
            np.testing.assert_allclose(batch_gb[i], gbi, atol=1e-12)
        np.testing.assert_allclose(batch_value, total, rtol=1e-12)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(14)
        c = rng.uniform(0.2, 0.8, size=3)
        b = rng.uniform(0.2, 0.8, size=(3, 3))
        w = rng.uniform(0.1, 1.0, size=3)
        _, gc, gb = ray_bundle_loss(c, b, w)
        eps = 1e-7
        for k in range(3):
            probe = c.copy()
            probe[k] += eps
            up, _, _ = ray_bundle_loss(probe, b, w)
            probe[k] -= 2 * eps
            dn, _, _ = ray_bundle_loss(probe, b, w)
            np.testing.assert_allclose(gc[k], (up - dn) / (2 * eps), atol=1e-6)
        for i in range(3):
            for k in range(3):
                probe = b.copy()
                probe[i, k] += eps
                up, _, _ = ray_bundle_loss(c, probe, w)
                probe[i, k] -= 2 * eps
                dn, _, _ = ray_bundle_loss(c, probe, w)
                np.testing.assert_allclose(gb[i, k], (up - dn) / (2 * eps), atol=1e-6)

    def test_rejects_inconsistent_shapes(self):
        with pytest.raises(ShapeMismatch):
            ray_bundle_loss_batch(np.zeros((2, 3)), np.zeros((2, 4, 3)), np.zeros((2, 5)))


class TestTotalLoss:
    def test_default_weighting(self):
        np.testing.assert_allclose(total_loss(1.0, 1.0, 1.0), 1.0 + 1.92 + 0.074, rtol=0.0)

    def test_custom_weights(self):
        w = LossWeights(lambda_s=0.5, lambda_r=2.0)
        np.testing.assert_allclose(total_loss(1.0, 2.0, 3.0, w), 1.0 + 1.0 + 6.0, rtol=0.0)

    def test_zero_weights_disable_terms(self):
        w = LossWeights(lambda_s=0.0, lambda_r=0.0)
        assert total_loss(0.25, 99.0, 99.0, w) == 0.25

    def test_rejects_negative_weights(self):
        with pytest.raises(InvalidHyperparam):
            LossWeights(lambda_s=-0.1)
