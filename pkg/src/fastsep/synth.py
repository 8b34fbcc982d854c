"""Synthetic data: exact sampling from the generative model, deterministic
test signals, room impulse responses, and convolutive mixing.

Everything is seeded and pure: the same arguments always produce the same
arrays.
"""

from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve, lfilter

from .errors import InvalidInputError
from .linalg import hermitian_eig
from .spatial import DiagSpatial, FullRankSpatial, reconstruct_scm

# Eigenvalues of a sampling covariance may undershoot zero by roundoff;
# anything below -PSD_TOL * max is a genuinely indefinite input.
PSD_TOL = 1e-10


@dataclass
class GroundTruth:
    """True model and per-source image spectrograms behind a sampled mixture."""

    spatial: object
    lam_NFT: np.ndarray
    images_NFTM: np.ndarray
    seed: int


def _scm_factors(G_NFMM):
    """Cholesky-style factors L with L L^H = G, via eigendecomposition."""
    w, V = hermitian_eig(G_NFMM)
    top = np.maximum(w.max(axis=-1, keepdims=True), 0.0)
    if np.any(w < -PSD_TOL * np.maximum(top, np.finfo(float).tiny)):
        idx = np.argwhere((w < -PSD_TOL * top).any(axis=-1))[0]
        raise InvalidInputError(f"covariance is not PSD at index {tuple(idx)}")
    return V * np.sqrt(np.maximum(w, 0.0))[..., None, :]


def sample_from_model(spatial, lam_NFT, seed: int):
    """Draw X from the generative model; returns (X_FTM, GroundTruth).

    Per source, x_ftn ~ complex Gaussian with covariance lam_ftn G_nf,
    realized as sqrt(lam) L_nf xi with L a factor of G and xi standard
    circular complex noise. The mixture is the sum of the source images.
    """
    lam = np.asarray(lam_NFT, dtype=np.float64)
    if np.any(lam < 0):
        raise InvalidInputError("PSDs must be nonnegative")
    if isinstance(spatial, DiagSpatial):
        G = reconstruct_scm(spatial.Q_FMM, spatial.g_NFM)
    elif isinstance(spatial, FullRankSpatial):
        G = spatial.G_NFMM
    else:
        raise InvalidInputError(f"unsupported spatial model {type(spatial).__name__}")
    N, F, T = lam.shape
    M = G.shape[-1]
    L = _scm_factors(G)
    rng = np.random.default_rng(seed)
    xi = (
        rng.standard_normal((N, F, T, M)) + 1j * rng.standard_normal((N, F, T, M))
    ) / np.sqrt(2.0)
    images = np.sqrt(lam)[..., None] * np.einsum("nfij,nftj->nfti", L, xi)
    X = images.sum(axis=0)
    return X, GroundTruth(spatial=spatial, lam_NFT=lam, images_NFTM=images, seed=seed)


def make_rirs(n_sources: int, n_channels: int, n_taps: int = 200, seed: int = 0):
    """Room impulse responses (n_sources, n_channels, n_taps).

    Direct path with a channel-dependent delay, a few sparse early
    reflections, and an exponentially decaying diffuse tail; unit norm per
    source-channel pair. Taps should stay well below the STFT window so the
    narrowband approximation holds.
    """
    if n_taps < 32:
        raise InvalidInputError("n_taps must be >= 32")
    rng = np.random.default_rng(seed)
    rirs = np.zeros((n_sources, n_channels, n_taps))
    for n in range(n_sources):
        for m in range(n_channels):
            delay = int(rng.integers(2, 24))
            rirs[n, m, delay] = 1.0
            for _ in range(4):
                pos = int(rng.integers(delay + 2, min(delay + 40, n_taps)))
                rirs[n, m, pos] += rng.uniform(-0.4, 0.4)
            tail = rng.standard_normal(n_taps) * np.exp(-np.arange(n_taps) / (n_taps / 6.0))
            tail[: delay + 1] = 0.0
            rirs[n, m] += 0.08 * tail
            rirs[n, m] /= np.linalg.norm(rirs[n, m])
    return rirs


def source_images(sources_NL, rirs_NMT):
    """Convolve each source with its per-channel RIR; (N, L, M), causal-trimmed."""
    sources = np.atleast_2d(np.asarray(sources_NL, dtype=np.float64))
    rirs = np.asarray(rirs_NMT, dtype=np.float64)
    if rirs.ndim != 3 or rirs.shape[0] != sources.shape[0]:
        raise InvalidInputError(
            f"rir shape {rirs.shape} does not match {sources.shape[0]} sources"
        )
    n_src, length = sources.shape
    _, n_ch, _ = rirs.shape
    out = np.empty((n_src, length, n_ch))
    for n in range(n_src):
        for m in range(n_ch):
            out[n, :, m] = fftconvolve(sources[n], rirs[n, m])[:length]
    return out


def convolutive_mix(sources_NL, rirs_NMT):
    """Mixture waveform (L, M): channel m = sum_n source_n * rir_nm."""
    return source_images(sources_NL, rirs_NMT).sum(axis=0)


def make_test_sources(n_sources: int, n_samples: int, sample_rate: int, seed: int = 0):
    """Deterministic speech-like test signals, (N, L), unit variance each.

    Note-like harmonic segments with random activity and pitch variation,
    plus per-source colored noise gated by the same activity pattern. The
    resulting spectrograms are low-rank and nonstationary, which is the
    regime the NMF source model fits.
    """
    rng = np.random.default_rng(seed)
    out = np.zeros((n_sources, n_samples))
    seg = int(0.25 * sample_rate)
    n_seg = n_samples // seg + 1
    t = np.arange(n_samples) / sample_rate
    for n in range(n_sources):
        f0 = rng.uniform(100.0, 180.0) * (1.6**n)
        sig = np.zeros(n_samples)
        active = rng.random(n_seg) < 0.65
        for s in range(n_seg):
            if not active[s]:
                continue
            a, b = s * seg, min((s + 1) * seg, n_samples)
            if b <= a:
                continue
            mult = rng.choice([0.8, 1.0, 1.25, 1.5])
            env = np.hanning(b - a) ** 0.5
            x = np.zeros(b - a)
            for j in range(8):
                x += np.sin(
                    2 * np.pi * f0 * mult * (j + 1) * t[a:b] + rng.uniform(0, 2 * np.pi)
                ) / (j + 1) ** 0.5
            sig[a:b] += env * x
        noise = rng.standard_normal(n_samples)
        pole = 0.98 if n % 2 == 0 else -0.6
        noise = lfilter([1.0], [1.0, -pole], noise)
        gate = np.repeat(active, seg)[:n_samples]
        sig += 0.15 * noise / max(np.std(noise), 1e-12) * gate
        out[n] = sig / max(np.std(sig), 1e-12)
    return out


def make_scenario(
    n_sources: int = 2,
    n_channels: int = 4,
    duration: float = 6.0,
    sample_rate: int = 16000,
    seed: int = 0,
    n_taps: int = 200,
):
    """Convolutive mixture with equal-power images (about 0 dB input SI-SDR).

    Returns (mixture (L, M), images (N, L, M)).
    """
    if n_channels < n_sources:
        raise InvalidInputError("need at least as many channels as sources")
    length = int(round(duration * sample_rate))
    srcs = make_test_sources(n_sources, length, sample_rate, seed)
    rirs = make_rirs(n_sources, n_channels, n_taps, seed + 1)
    images = source_images(srcs, rirs)
    images /= np.maximum(np.std(images, axis=(1, 2), keepdims=True), 1e-12)
    return images.sum(axis=0), images
