import numpy as np
import pytest

from fastsep.spatial import DiagSpatial, FullRankSpatial
from fastsep.synth import sample_from_model


def random_hermitian(rng, m, batch=()):
    a = rng.standard_normal(batch + (m, m)) + 1j * rng.standard_normal(batch + (m, m))
    return 0.5 * (a + np.conj(a.swapaxes(-1, -2)))


def random_hpd(rng, m, batch=(), ridge=0.1):
    a = rng.standard_normal(batch + (m, m)) + 1j * rng.standard_normal(batch + (m, m))
    return a @ np.conj(a.swapaxes(-1, -2)) / m + ridge * np.eye(m)


def random_full_rank_model(rng, n_sources, n_freq, n_frames, n_channels):
    """Random well-conditioned full-rank truth with smooth low-rank PSDs."""
    G = random_hpd(rng, n_channels, (n_sources, n_freq))
    base_f = rng.uniform(0.2, 1.0, (n_sources, n_freq, 2))
    base_t = rng.uniform(0.2, 1.0, (n_sources, 2, n_frames))
    lam = base_f @ base_t
    return FullRankSpatial(G), lam


def random_diag_model(rng, n_sources, n_freq, n_frames, n_channels):
    q = rng.standard_normal((n_freq, n_channels, n_channels)) + 1j * rng.standard_normal(
        (n_freq, n_channels, n_channels)
    )
    Q = q + 2.0 * np.eye(n_channels)
    g = rng.uniform(0.5, 1.5, (n_sources, n_freq, n_channels))
    base_f = rng.uniform(0.2, 1.0, (n_sources, n_freq, 2))
    base_t = rng.uniform(0.2, 1.0, (n_sources, 2, n_frames))
    lam = base_f @ base_t
    return DiagSpatial(Q, g), lam


def sampled_mixture(seed, n_sources=2, n_freq=32, n_frames=60, n_channels=4):
    """Observation drawn exactly from a seeded full-rank generative model."""
    rng = np.random.default_rng(seed)
    spatial, lam = random_full_rank_model(rng, n_sources, n_freq, n_frames, n_channels)
    X, truth = sample_from_model(spatial, lam, seed + 1)
    return X, truth


def monotone_violations(trace, slack=1e-6):
    trace = np.asarray(trace)
    diffs = np.diff(trace)
    return int((diffs < -slack * np.abs(trace[:-1])).sum())


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
