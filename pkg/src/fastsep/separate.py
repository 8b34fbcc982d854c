"""Separation methods: iteration loops over spatial + source updates.

Six methods pair a spatial model with a source model:

==============  ====================  =========================
method          spatial model         source PSD model
==============  ====================  =========================
fca             full-rank SCMs        unconstrained grid
mnmf            full-rank SCMs        NMF factors
mnmf-dp         full-rank SCMs        deep prior + NMF noise
fast-fca        jointly diagonalized  unconstrained grid
fast-mnmf       jointly diagonalized  NMF factors
fast-mnmf-dp    jointly diagonalized  deep prior + NMF noise
==============  ====================  =========================

Each iteration runs latent sampling (deep-prior methods), the source
multiplicative updates (statistics refreshed between blocks so every step
is a valid majorization step), the spatial update (gains then diagonalizer
for the fast family, the closed-form SCM update otherwise), and a
likelihood-invariant rescaling. Per-iteration wall time is measured around
the update pass only; the likelihood value recorded after each pass is a
byproduct of the statistics passes.
"""

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from . import sources as src
from . import spatial as sp
from .errors import (
    InvalidInputError,
    NumericalBreakdownError,
    SingularMatrixError,
)

METHODS = ("fca", "mnmf", "mnmf-dp", "fast-fca", "fast-mnmf", "fast-mnmf-dp")
FAST_METHODS = ("fast-fca", "fast-mnmf", "fast-mnmf-dp")
DP_METHODS = ("mnmf-dp", "fast-mnmf-dp")


@dataclass
class SeparatorConfig:
    method: str = "fast-mnmf"
    n_sources: int = 2
    n_basis: int = 16
    n_iterations: int = 100
    seed: int = 0
    spatial_init: str = "auto"  # auto | circular | observed
    normalize: bool = True
    ip_sweeps: int = 1
    metropolis: src.MetropolisConfig = field(default_factory=src.MetropolisConfig)
    metropolis_enabled: bool = True
    decoder: object = None  # latent -> positive spectrum; ToyDecoder when None
    record_likelihood: bool = True

    def validate(self):
        if self.method not in METHODS:
            raise InvalidInputError(f"unknown method {self.method!r}")
        if self.n_sources < 1:
            raise InvalidInputError("n_sources must be >= 1")
        if self.method in DP_METHODS and self.n_sources < 2:
            raise InvalidInputError("deep-prior methods need n_sources >= 2")
        if self.n_iterations < 1:
            raise InvalidInputError("n_iterations must be >= 1")
        if self.n_basis < 1:
            raise InvalidInputError("n_basis must be >= 1")
        if self.spatial_init not in ("auto", "circular", "observed"):
            raise InvalidInputError(f"unknown spatial_init {self.spatial_init!r}")


@dataclass
class SeparationResult:
    images_NFTM: np.ndarray
    likelihood_trace: np.ndarray
    time_trace: np.ndarray
    method: str
    config: SeparatorConfig


def wiener_fullrank(lam_NFT, G_NFMM, X_FTM, ridge=0.0) -> np.ndarray:
    """Posterior-mean source images x^_ftn = lam G Y^-1 x, shape (N, F, T, M).

    The per-bin numerical defect x - sum_n x^_n (roundoff, plus the ridge
    keeping Y invertible at silent bins) is redistributed by source power
    share, so the partition sum_n x^_n = x holds to machine precision.
    """
    M = X_FTM.shape[-1]
    Y = np.einsum("nft,nfij->ftij", lam_NFT, G_NFMM) + ridge * np.eye(M)
    try:
        z = np.linalg.solve(Y, X_FTM[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        det = np.abs(np.linalg.det(Y))
        bad = np.argwhere(~np.isfinite(det) | (det == 0.0))
        where = tuple(bad[0]) if bad.size else "unknown"
        raise SingularMatrixError(
            f"singular mixture covariance at (f, t)={where}"
        ) from exc
    images = np.einsum("nft,nfij,ftj->nfti", lam_NFT, G_NFMM, z, optimize=True)
    total = lam_NFT.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        share = np.where(total > 0.0, lam_NFT / total, 1.0 / lam_NFT.shape[0])
    defect = X_FTM - images.sum(axis=0)
    images += share[..., None] * defect[None]
    return images


def wiener_fast(lam_NFT, Q_FMM, g_NFM, X_FTM) -> np.ndarray:
    """Diagonalized-domain Wiener filter Q^-1 Diag(lam g / y) Q x.

    Gains are normalized by their per-bin sum (uniform where every source
    is exactly zero), making the partition exact without flooring y.
    """
    num = lam_NFT[..., None] * g_NFM[:, :, None, :]
    den = num.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        gains = np.where(den > 0.0, num / den, 1.0 / lam_NFT.shape[0])
    qx = np.einsum("fij,ftj->fti", Q_FMM, X_FTM)
    try:
        Qi = np.linalg.inv(Q_FMM)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(f"singular diagonalizer: {exc}") from exc
    return np.einsum("fij,nftj->nfti", Qi, gains * qx[None], optimize=True)


class _FullRankLoop:
    """One update pass of the full-rank family."""

    def __init__(self, X, spatial, source, ridge):
        self.X = X
        self.spatial = spatial
        self.source = source
        self.ridge = ridge
        self.first_refresh_ll = None

    def _refresh(self, want_ab=False):
        phi1, phi2, A, B, ll = sp.fullrank_stats(
            self.X, self.spatial.G_NFMM, self.source.lam(), self.ridge,
            want_ab=want_ab, want_phi=not want_ab,
        )
        if self.first_refresh_ll is None:
            self.first_refresh_ll = ll
        return phi1, phi2, A, B

    def loglik(self):
        return sp.loglik_fullrank(self.X, self.spatial.G_NFMM, self.source.lam(), self.ridge)

    def iterate(self, cfg, rng):
        self.first_refresh_ll = None
        source = self.source
        if getattr(source, "has_latents", False) and cfg.metropolis_enabled:
            phi1, phi2, _, _ = self._refresh()
            src.update_latents_fullrank(
                source.dp, source.decoder, phi1[0], phi2[0], cfg.metropolis, rng
            )
        for step in source.mu_steps:
            phi1, phi2, _, _ = self._refresh()
            source.apply_mu(step, phi1, phi2)
        _, _, A, B = self._refresh(want_ab=True)
        self.spatial.G_NFMM = sp.update_scm(self.spatial.G_NFMM, A, B)
        if cfg.normalize:
            self.spatial.G_NFMM, c = sp.normalize_trace(self.spatial.G_NFMM)
            source.absorb_scale(c)
        return self.first_refresh_ll

    def logdet_term(self):
        return 0.0

    def images(self):
        return wiener_fullrank(self.source.lam(), self.spatial.G_NFMM, self.X, self.ridge)


class _DiagLoop:
    """One update pass of the jointly-diagonalizable family."""

    def __init__(self, X, spatial, source, floor):
        self.X = X
        self.spatial = spatial
        self.source = source
        self.floor = floor
        self.xt = sp.project(spatial.Q_FMM, X)
        self.first_refresh_ll = None

    def _refresh(self, want_gain=False):
        phi1, phi2, gnum, gden, ll = sp.fast_stats(
            self.xt, self.spatial.g_NFM, self.source.lam(), self.floor,
            want_gain=want_gain, want_phi=not want_gain,
        )
        if self.first_refresh_ll is None:
            self.first_refresh_ll = ll
        return phi1, phi2, gnum, gden

    def loglik(self):
        return sp.loglik_fast(
            self.X, self.spatial.Q_FMM, self.spatial.g_NFM, self.source.lam(),
            self.floor, xt_FTM=self.xt,
        )

    def iterate(self, cfg, rng):
        self.first_refresh_ll = None
        source = self.source
        spatial = self.spatial
        if getattr(source, "has_latents", False) and cfg.metropolis_enabled:
            lam = source.lam()
            y_rest = _kernels.mix_power(lam[1:], spatial.g_NFM[1:])
            # capture the likelihood before the chain moves the latents
            _ = self._refresh()
            src.update_latents_fast(
                source.dp, source.decoder, spatial.g_NFM[0], y_rest, self.xt,
                cfg.metropolis, rng,
            )
        for step in source.mu_steps:
            phi1, phi2, _, _ = self._refresh()
            source.apply_mu(step, phi1, phi2)
        _, _, gnum, gden = self._refresh(want_gain=True)
        spatial.g_NFM = spatial.g_NFM * np.sqrt(
            gnum / np.maximum(gden, np.finfo(float).tiny)
        )
        y = _kernels.mix_power(source.lam(), spatial.g_NFM, self.floor)
        spatial.Q_FMM = sp.update_diagonalizer(spatial.Q_FMM, self.X, y, cfg.ip_sweeps)
        if cfg.normalize:
            # unit-norm diagonalizer rows, compensated in the gains: the
            # implied SCMs (hence likelihood and the q^H V q = 1 invariant)
            # are unchanged, but the projected scale stays pinned to the data
            row = np.sqrt(np.einsum("fmj,fmj->fm", spatial.Q_FMM, spatial.Q_FMM.conj()).real)
            spatial.Q_FMM = spatial.Q_FMM / row[:, :, None]
            spatial.g_NFM = spatial.g_NFM / np.square(row)[None]
        self.xt = sp.project(spatial.Q_FMM, self.X)
        if cfg.normalize:
            spatial.g_NFM, c = sp.normalize_gains(spatial.g_NFM)
            source.absorb_scale(c)
        return self.first_refresh_ll

    def logdet_term(self):
        T = self.X.shape[1]
        return 2.0 * T * float(np.linalg.slogdet(self.spatial.Q_FMM)[1].sum())

    def images(self):
        return wiener_fast(
            self.source.lam(), self.spatial.Q_FMM, self.spatial.g_NFM, self.X
        )


def _build_spatial(cfg, X):
    fast = cfg.method in FAST_METHODS
    init = cfg.spatial_init
    if init == "auto":
        init = "observed" if cfg.method in DP_METHODS else "circular"
    if init == "circular":
        diag = sp.circular_init(X, cfg.n_sources)
        if fast:
            return diag
        return sp.FullRankSpatial(sp.reconstruct_scm(diag.Q_FMM, diag.g_NFM))
    return sp.init_spatial(X, cfg.n_sources, "diagonalizable" if fast else "full-rank")


def _build_source(cfg, X, rng):
    F, T, _ = X.shape
    if cfg.method in ("fca", "fast-fca"):
        return src.UnconstrainedSource.from_observation(X, cfg.n_sources)
    if cfg.method in ("mnmf", "fast-mnmf"):
        return src.NmfSource.random(cfg.n_sources, F, T, cfg.n_basis, rng)
    decoder = cfg.decoder if cfg.decoder is not None else src.ToyDecoder(F)
    dec_f = getattr(decoder, "n_freq", None)
    if dec_f is not None and dec_f != F:
        raise InvalidInputError(
            f"decoder output length {dec_f} does not match F={F}"
        )
    return src.DeepPriorPlusNmfSource.init(
        cfg.n_sources, F, T, cfg.n_basis, decoder, rng
    )


def run(cfg: SeparatorConfig, X_FTM, on_iteration=None) -> SeparationResult:
    """Run a separation method on a complex spectrogram (F, T, M).

    The observation is rescaled to unit mean power internally (the model is
    scale-covariant; outputs are scaled back). ``on_iteration``, when given,
    is called after each pass with (iteration, loop) for inspection.
    """
    cfg.validate()
    X = np.ascontiguousarray(X_FTM, dtype=np.complex128)
    if X.ndim != 3:
        raise InvalidInputError(f"observation must have shape (F, T, M), got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("observation contains non-finite values")
    power = float(np.mean(np.abs(X) ** 2))
    if power == 0.0:
        raise InvalidInputError("observation is identically zero")
    scale = np.sqrt(power)
    Xs = X / scale

    rng = np.random.default_rng(cfg.seed)
    spatial_model = _build_spatial(cfg, Xs)
    source_model = _build_source(cfg, Xs, rng)
    if cfg.method in FAST_METHODS:
        loop = _DiagLoop(Xs, spatial_model, source_model, sp.power_floor(np.abs(Xs) ** 2))
    else:
        loop = _FullRankLoop(Xs, spatial_model, source_model, sp.mixture_ridge(Xs))

    ll_trace = []
    time_trace = []
    pending_logdet = None
    for it in range(cfg.n_iterations):
        t0 = time.perf_counter()
        try:
            ll_before = loop.iterate(cfg, rng)
        except (NumericalBreakdownError, SingularMatrixError) as exc:
            raise type(exc)(f"iteration {it}: {exc}") from exc
        time_trace.append(time.perf_counter() - t0)
        if cfg.record_likelihood:
            if it > 0:
                # the first statistics pass of this iteration evaluated the
                # previous iteration's final state
                ll_trace.append(ll_before + pending_logdet)
            pending_logdet = loop.logdet_term()
        if on_iteration is not None:
            on_iteration(it, loop)
    if cfg.record_likelihood:
        ll_trace.append(loop.loglik())
    images = loop.images() * scale
    return SeparationResult(
        images_NFTM=images,
        likelihood_trace=np.asarray(ll_trace),
        time_trace=np.asarray(time_trace),
        method=cfg.method,
        config=replace(cfg),
    )
