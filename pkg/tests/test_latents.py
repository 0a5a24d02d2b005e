import numpy as np
import pytest

from prograde.latents import LatentWalkConfig, latent_walk, normalize_rows, sample_latents


class TestSampleLatents:
    @pytest.mark.parametrize("size", [1, 64, 512])
    def test_unit_norm(self, size, rng):
        z = sample_latents(100, size, rng)
        assert z.shape == (100, size)
        np.testing.assert_allclose(np.linalg.norm(z.astype(np.float64), axis=1), 1.0, atol=1e-6)

    def test_seed_determinism(self):
        a = sample_latents(8, 512, np.random.default_rng(4))
        b = sample_latents(8, 512, np.random.default_rng(4))
        np.testing.assert_array_equal(a, b)

    def test_baseline_not_normalized(self):
        z = sample_latents(1000, 128, np.random.default_rng(0), normalize=False)
        norms = np.linalg.norm(z, axis=1)
        assert z.shape == (1000, 128)
        assert np.abs(norms - 1.0).min() > 0.5
        assert np.mean(norms**2) == pytest.approx(128, rel=0.05)

    def test_invalid_size(self, rng):
        with pytest.raises(ValueError):
            sample_latents(1, 0, rng)


class TestLatentWalk:
    def test_config_defaults(self):
        c = LatentWalkConfig()
        assert (c.sigma_frames, c.frame_rate, c.latent_size) == (45.0, 60.0, 512)

    @pytest.mark.parametrize("sigma", [0.0, -1.0])
    def test_sigma_positive(self, sigma):
        with pytest.raises(ValueError):
            LatentWalkConfig(sigma_frames=sigma)

    def test_unit_norm_frames(self, rng):
        z = latent_walk(200, LatentWalkConfig(latent_size=32), rng)
        assert z.shape == (200, 32)
        np.testing.assert_allclose(np.linalg.norm(z, axis=1), 1.0, atol=1e-12)

    def test_degenerate_kernel(self, rng):
        raw = rng.standard_normal((50, 16))
        z = latent_walk(50, LatentWalkConfig(sigma_frames=1e-3, latent_size=16), raw=raw)
        np.testing.assert_allclose(z, normalize_rows(raw), atol=1e-12)

    def test_constant_raw_gives_constant_sequence(self, rng):
        raw = np.tile(rng.standard_normal(16), (100, 1))
        z = latent_walk(100, LatentWalkConfig(latent_size=16), raw=raw)
        np.testing.assert_allclose(z, np.tile(z[0], (100, 1)), atol=1e-12)

    def test_smoothing_shrinks_increments(self):
        def mean_step(sigma):
            z = latent_walk(1200, LatentWalkConfig(sigma_frames=sigma, latent_size=64), np.random.default_rng(3))
            return np.linalg.norm(np.diff(z, axis=0), axis=1).mean()

        assert mean_step(45.0) < mean_step(1.0)

    def test_seed_determinism(self):
        cfg = LatentWalkConfig(latent_size=8)
        np.testing.assert_array_equal(
            latent_walk(30, cfg, np.random.default_rng(1)), latent_walk(30, cfg, np.random.default_rng(1))
        )

    def test_frame_count(self, rng):
        with pytest.raises(ValueError):
            latent_walk(0, LatentWalkConfig(), rng)
