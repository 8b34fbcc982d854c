"""Spatial models and their updates.

Two parameterizations of the per-source spatial covariance matrices (SCMs):

* ``FullRankSpatial`` -- unconstrained Hermitian PSD G_nf per source and
  frequency, updated in closed form from the weighted statistics A, B.
* ``DiagSpatial`` -- jointly diagonalizable SCMs G_nf = Q_f^-1 Diag(g_nf)
  Q_f^-H with a per-frequency diagonalizer Q_f (iterative-projection
  updates) and nonnegative diagonal gains (multiplicative updates).

All updates are pure array-in/array-out transformations; frequencies are
independent, so slices along f may be processed concurrently by callers.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import (
    DegenerateModelError,
    InvalidInputError,
    NumericalBreakdownError,
    SingularMatrixError,
)
from .linalg import clamp_psd, hermitian_eig, hermitian_sqrt_pair

# Relative diagonal ridge keeping the full-rank mixture covariance invertible.
Y_RIDGE_REL = 1e-12
# Relative floor on the diagonalized model power (guards divisions).
Y_FLOOR_REL = 1e-12
# Eigenvalues of C below -BREAKDOWN_TOL * max indicate a broken SCM update.
BREAKDOWN_TOL = 1e-8


@dataclass
class FullRankSpatial:
    """Unconstrained SCMs, shape (N, F, M, M), Hermitian PSD per (n, f)."""

    G_NFMM: np.ndarray

    @property
    def n_sources(self):
        return self.G_NFMM.shape[0]


@dataclass
class DiagSpatial:
    """Diagonalizer Q (F, M, M, nonsingular) and gains g (N, F, M, >= 0)."""

    Q_FMM: np.ndarray
    g_NFM: np.ndarray

    @property
    def n_sources(self):
        return self.g_NFM.shape[0]


def mixture_ridge(X_FTM) -> float:
    """Scale-aware diagonal ridge for the full-rank mixture covariance."""
    return Y_RIDGE_REL * float(np.mean(np.abs(X_FTM) ** 2))


def power_floor(xt_FTM) -> float:
    """Scale-aware elementwise floor for the diagonalized model power."""
    return Y_FLOOR_REL * float(np.max(xt_FTM))


def mix_model(spatial: FullRankSpatial, lam_NFT, f: int, t: int) -> np.ndarray:
    """Mixture covariance Y_ft = sum_n lam_ftn G_nf (+ scale-aware ridge)."""
    lam = np.asarray(lam_NFT)[:, f, t]
    if not lam.any():
        raise DegenerateModelError(f"all source PSDs are zero at (f={f}, t={t})")
    G = spatial.G_NFMM[:, f]
    Y = np.einsum("n,nij->ij", lam, G)
    scale = float(np.einsum("n,nii->", lam, G).real) / G.shape[-1]
    return Y + Y_RIDGE_REL * scale * np.eye(G.shape[-1])


def init_spatial(X_FTM, n_sources: int, mode: str):
    """Observation-driven initialization.

    Full-rank mode: G_1f is the time-averaged observed SCM (PSD-clamped),
    remaining sources start at identity. Diagonalizable mode: Q_f is the
    conjugate-transposed eigenvector matrix of G_1f (so Q G_1 Q^H is
    diagonal), the first source's gains are its eigenvalues and remaining
    gains are all-ones.
    """
    if n_sources < 1:
        raise InvalidInputError(f"n_sources must be >= 1, got {n_sources}")
    X = np.asarray(X_FTM)
    F, T, M = X.shape
    if T == 0:
        raise InvalidInputError("observation has zero frames")
    G1 = clamp_psd(np.einsum("fti,ftj->fij", X, X.conj()) / T)
    if mode == "full-rank":
        G = np.tile(np.eye(M, dtype=np.complex128), (n_sources, F, 1, 1))
        G[0] = G1
        return FullRankSpatial(G)
    if mode == "diagonalizable":
        w, U = hermitian_eig(G1)
        Q = np.conj(U.swapaxes(-1, -2))
        g = np.ones((n_sources, F, M))
        g[0] = np.maximum(w, w.max(axis=-1, keepdims=True) * Y_FLOOR_REL)
        return DiagSpatial(Q, g)
    raise InvalidInputError(f"unknown init mode {mode!r}")


def circular_init(X_FTM, n_sources: int, weak_gain: float = 1e-2) -> DiagSpatial:
    """Symmetry-breaking initialization for blind separation.

    Q_f diagonalizes the observed average SCM; each projected channel m is
    assigned to source m mod N (gain 1, others ``weak_gain``).
    """
    X = np.asarray(X_FTM)
    F, T, M = X.shape
    base = init_spatial(X, 1, "diagonalizable")
    g = np.full((n_sources, F, M), weak_gain)
    for m in range(M):
        g[m % n_sources, :, m] = 1.0
    return DiagSpatial(base.Q_FMM, g)


def project(Q_FMM, X_FTM) -> np.ndarray:
    """Projected power x~_ftm = |[Q_f x_ft]_m|^2."""
    Q = np.asarray(Q_FMM)
    X = np.asarray(X_FTM)
    if Q.shape[-1] != X.shape[-1] or Q.shape[0] != X.shape[0]:
        raise InvalidInputError(
            f"diagonalizer shape {Q.shape} does not match observation {X.shape}"
        )
    return _kernels.project_power(Q, X)


def fullrank_stats(X_FTM, G_NFMM, lam_NFT, ridge, want_ab=False, want_phi=True):
    """Kernel wrapper; see _kernels.fullrank_stats."""
    return _kernels.fullrank_stats(X_FTM, G_NFMM, lam_NFT, ridge, want_ab, want_phi)


def fast_stats(xt_FTM, g_NFM, lam_NFT, floor, want_gain=False, want_phi=True):
    """Kernel wrapper; see _kernels.fast_stats."""
    return _kernels.fast_stats(xt_FTM, g_NFM, lam_NFT, floor, want_gain, want_phi)


def update_scm(G_NFMM, A_NFMM, B_NFMM) -> np.ndarray:
    """Closed-form SCM update G <- B^-1 (B G A G)^{1/2}.

    Evaluated through the Hermitian congruence C = B^{1/2} G A G B^{1/2},
    giving the algebraically identical G <- B^{-1/2} C^{1/2} B^{-1/2} whose
    result is Hermitian PSD by construction; the result is additionally
    symmetrized and eigenvalue-clamped.
    """
    Bs, Bis = hermitian_sqrt_pair(B_NFMM)
    C = Bs @ G_NFMM @ A_NFMM @ G_NFMM @ Bs
    C = 0.5 * (C + np.conj(C.swapaxes(-1, -2)))
    try:
        w, V = np.linalg.eigh(C)
    except np.linalg.LinAlgError as exc:
        raise NumericalBreakdownError(f"SCM update failed: {exc}") from exc
    top = np.maximum(w.max(axis=-1, keepdims=True), 0.0)
    bad = w < -BREAKDOWN_TOL * top
    if np.any(bad):
        n, f = np.argwhere(bad.any(axis=-1))[0]
        raise NumericalBreakdownError(
            f"negative spectrum in SCM update at (n={n}, f={f}): "
            f"min eigenvalue {w[n, f].min():.3e} vs scale {top[n, f, 0]:.3e}"
        )
    Cs = (V * np.sqrt(np.maximum(w, 0.0))[..., None, :]) @ np.conj(V.swapaxes(-1, -2))
    return clamp_psd(Bis @ Cs @ Bis)


def update_diagonalizer(Q_FMM, X_FTM, y_FTM, sweeps: int = 1) -> np.ndarray:
    """Iterative-projection update of the diagonalizer, in place per row.

    One sweep visits every row m: with V_fm = (1/T) sum_t X_ft / y_ftm,
    q_fm <- (Q_f V_fm)^-1 e_m followed by q_fm <- q_fm (q^H V q)^{-1/2},
    which leaves q^H V q = 1.
    """
    Q = np.array(Q_FMM, dtype=np.complex128)
    F, M, _ = Q.shape
    for _ in range(sweeps):
        V_FMMM = _kernels.ip_weights(X_FTM, y_FTM)
        for m in range(M):
            V = V_FMMM[:, m]
            rhs = np.zeros((M, 1), dtype=np.complex128)
            rhs[m] = 1.0
            try:
                q = np.linalg.solve(Q @ V, np.broadcast_to(rhs, (F, M, 1)).copy())[..., 0]
            except np.linalg.LinAlgError as exc:
                raise SingularMatrixError(
                    f"singular Q V in diagonalizer update at row m={m}: {exc}"
                ) from exc
            norm = np.einsum("fi,fij,fj->f", q.conj(), V, q).real
            if np.any(norm <= 0) or not np.all(np.isfinite(norm)):
                f = int(np.argwhere((norm <= 0) | ~np.isfinite(norm))[0])
                raise SingularMatrixError(
                    f"non-positive normalization in diagonalizer update at (f={f}, m={m})"
                )
            Q[:, m, :] = (q / np.sqrt(norm)[:, None]).conj()
    return Q


def update_gains(g_NFM, lam_NFT, xt_FTM, floor) -> np.ndarray:
    """Multiplicative gain update g <- g sqrt(sum_t lam x~/y^2 / sum_t lam/y)."""
    _, _, gnum, gden, _ = _kernels.fast_stats(
        xt_FTM, g_NFM, lam_NFT, floor, want_gain=True, want_phi=False
    )
    return g_NFM * np.sqrt(gnum / np.maximum(gden, np.finfo(float).tiny))


def reconstruct_scm(Q_FMM, g_NFM) -> np.ndarray:
    """SCMs implied by the diagonalized form: G_nf = Q_f^-1 Diag(g_nf) Q_f^-H."""
    Q = np.asarray(Q_FMM)
    single = Q.ndim == 2
    if single:
        Q = Q[None]
        g_NFM = np.asarray(g_NFM)[:, None, :]
    try:
        Qi = np.linalg.inv(Q)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError(f"diagonalizer is singular: {exc}") from exc
    G = np.einsum("fij,nfj,fkj->nfik", Qi, np.asarray(g_NFM), Qi.conj())
    return G[:, 0] if single else G


def loglik_fullrank(X_FTM, G_NFMM, lam_NFT, ridge=0.0) -> float:
    """Log-likelihood (up to the Gaussian constant) of the full-rank model."""
    return _kernels.fullrank_stats(
        X_FTM, G_NFMM, lam_NFT, ridge, want_ab=False, want_phi=False
    )[4]


def loglik_fast(X_FTM, Q_FMM, g_NFM, lam_NFT, floor=0.0, xt_FTM=None) -> float:
    """Log-likelihood of the diagonalized model (same constant as full-rank)."""
    if xt_FTM is None:
        xt_FTM = project(Q_FMM, X_FTM)
    T = xt_FTM.shape[1]
    data = _kernels.fast_stats(
        xt_FTM, g_NFM, lam_NFT, floor, want_gain=False, want_phi=False
    )[4]
    return data + 2.0 * T * float(np.linalg.slogdet(Q_FMM)[1].sum())


def normalize_gains(g_NFM):
    """Rescale gains so sum_m g_nfm = M; returns (gains, absorbed factor)."""
    M = g_NFM.shape[-1]
    s = g_NFM.sum(axis=-1)
    s = np.maximum(s, np.finfo(float).tiny)
    return g_NFM * (M / s)[..., None], s / M


def normalize_trace(G_NFMM):
    """Rescale SCMs so trace(G_nf) = M; returns (SCMs, absorbed factor)."""
    M = G_NFMM.shape[-1]
    tr = np.einsum("nfii->nf", G_NFMM).real
    tr = np.maximum(tr, np.finfo(float).tiny)
    return G_NFMM * (M / tr)[..., None, None], tr / M
