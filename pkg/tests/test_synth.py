import numpy as np
import pytest

from conftest import random_diag_model, random_full_rank_model
from fastsep.errors import InvalidInputError
from fastsep.spatial import FullRankSpatial
from fastsep.synth import (
    convolutive_mix,
    make_rirs,
    make_scenario,
    make_test_sources,
    sample_from_model,
    source_images,
)

SR = 16000


class TestSampleFromModel:
    def test_identity_covariance_statistics(self):
        # lam = 1, G = I: the sample covariance converges at the 1/sqrt(T) rate
        T = 10_000
        spatial = FullRankSpatial(np.tile(np.eye(3, dtype=complex), (1, 1, 1, 1)))
        lam = np.ones((1, 1, T))
        X, _ = sample_from_model(spatial, lam, seed=0)
        cov = np.einsum("fti,ftj->fij", X, X.conj())[0] / T
        assert np.linalg.norm(cov - np.eye(3)) < 5.0 / np.sqrt(T) * 3

    def test_zero_psd_gives_zero_image(self, rng):
        spatial, lam = random_full_rank_model(rng, 2, 4, 10, 3)
        lam[1] = 0.0
        X, truth = sample_from_model(spatial, lam, seed=1)
        assert np.all(truth.images_NFTM[1] == 0)
        np.testing.assert_array_equal(truth.images_NFTM.sum(axis=0), X)

    def test_projected_channels_decorrelate(self, rng):
        # diagonalizable truth: Q x has empirically uncorrelated channels
        T = 10_000
        model, _ = random_diag_model(rng, 2, 2, 1, 4)
        lam = np.ones((2, 2, T))
        X, _ = sample_from_model(model, lam, seed=2)
        qx = np.einsum("fij,ftj->fti", model.Q_FMM, X)
        for f in range(2):
            corr = (qx[f, :, :, None] * qx[f, :, None, :].conj()).mean(axis=0)
            d = np.sqrt(np.abs(np.diag(corr)))
            off = corr / np.outer(d, d) - np.eye(4)
            assert np.abs(off).max() < 5.0 / np.sqrt(T) * 4

    def test_non_psd_rejected(self):
        G = np.diag([1.0, -1.0]).astype(complex)[None, None]
        with pytest.raises(InvalidInputError):
            sample_from_model(FullRankSpatial(G), np.ones((1, 1, 5)), seed=0)

    def test_negative_psd_rejected(self, rng):
        spatial, lam = random_full_rank_model(rng, 1, 2, 3, 2)
        lam[0, 0, 0] = -1.0
        with pytest.raises(InvalidInputError):
            sample_from_model(spatial, lam, seed=0)

    def test_deterministic(self, rng):
        spatial, lam = random_full_rank_model(rng, 2, 3, 8, 2)
        X1, _ = sample_from_model(spatial, lam, seed=9)
        X2, _ = sample_from_model(spatial, lam, seed=9)
        np.testing.assert_array_equal(X1, X2)


class TestConvolutiveMix:
    def test_unit_impulse_passthrough(self, rng):
        src = rng.standard_normal((1, 2000))
        rirs = np.zeros((1, 3, 64))
        rirs[:, :, 0] = 1.0
        mix = convolutive_mix(src, rirs)
        for m in range(3):
            np.testing.assert_allclose(mix[:, m], src[0], atol=1e-12)

    def test_matches_fft_convolution_oracle(self):
        # two sinusoids through distinct pure delays
        t = np.arange(4000) / SR
        srcs = np.stack([np.sin(2 * np.pi * 400 * t), np.sin(2 * np.pi * 1100 * t)])
        rirs = np.zeros((2, 2, 64))
        rirs[0, 0, 3] = 1.0
        rirs[0, 1, 7] = 0.8
        rirs[1, 0, 11] = 0.6
        rirs[1, 1, 2] = 1.0
        mix = convolutive_mix(srcs, rirs)
        # frequency-domain oracle: circular convolution on a padded grid
        n = 4000 + 64 - 1
        oracle = np.zeros((4000, 2))
        for m in range(2):
            acc = np.zeros(n)
            for s in range(2):
                acc += np.fft.irfft(
                    np.fft.rfft(srcs[s], n) * np.fft.rfft(rirs[s, m], n), n
                )
            oracle[:, m] = acc[:4000]
        assert np.abs(mix - oracle).max() < 1e-8

    def test_energy_additivity_for_independent_sources(self):
        # independent wideband sources: mixture energy ~ sum of image energies
        rng = np.random.default_rng(0)
        srcs = rng.standard_normal((2, 10 * SR))
        rirs = make_rirs(2, 4, 200, seed=1)
        images = source_images(srcs, rirs)
        mix = images.sum(axis=0)
        e_mix = (mix**2).sum()
        e_sum = (images**2).sum()
        assert abs(e_mix - e_sum) / e_sum < 0.01

    def test_linearity_in_each_source(self, rng):
        srcs = rng.standard_normal((2, 3000))
        rirs = make_rirs(2, 3, 128, seed=2)
        mix = convolutive_mix(srcs, rirs)
        scaled = srcs.copy()
        scaled[0] *= 2.5
        mix_scaled = convolutive_mix(scaled, rirs)
        images = source_images(srcs, rirs)
        np.testing.assert_allclose(
            mix_scaled, mix + 1.5 * images[0], atol=1e-10
        )

    def test_mismatched_shapes_rejected(self, rng):
        with pytest.raises(InvalidInputError):
            convolutive_mix(rng.standard_normal((2, 100)), np.zeros((3, 2, 64)))


class TestGenerators:
    def test_rirs_unit_norm(self):
        rirs = make_rirs(2, 4, 200, seed=5)
        np.testing.assert_allclose(np.linalg.norm(rirs, axis=-1), 1.0, rtol=1e-12)

    def test_rirs_too_short_rejected(self):
        with pytest.raises(InvalidInputError):
            make_rirs(1, 1, 8, seed=0)

    def test_sources_unit_variance(self):
        srcs = make_test_sources(3, 2 * SR, SR, seed=4)
        np.testing.assert_allclose(np.std(srcs, axis=1), 1.0, rtol=1e-9)

    def test_scenario_contract(self):
        mix, images = make_scenario(n_sources=2, n_channels=4, duration=1.0, seed=6)
        assert mix.shape == (SR, 4)
        assert images.shape == (2, SR, 4)
        np.testing.assert_allclose(images.sum(axis=0), mix, atol=1e-12)
        # equal image power -> roughly 0 dB input SI-SDR
        p = np.std(images, axis=(1, 2))
        np.testing.assert_allclose(p[0], p[1], rtol=1e-9)

    def test_scenario_deterministic(self):
        a, _ = make_scenario(duration=0.5, seed=7)
        b, _ = make_scenario(duration=0.5, seed=7)
        np.testing.assert_array_equal(a, b)

    def test_scenario_needs_enough_channels(self):
        with pytest.raises(InvalidInputError):
            make_scenario(n_sources=3, n_channels=2)
