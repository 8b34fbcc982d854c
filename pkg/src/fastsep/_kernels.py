"""Fused per-bin statistics kernels for the model updates.

Each kernel has a vectorized numpy implementation and, when numba is
importable, a compiled single-pass counterpart that avoids materializing
the (F, T, M, M) intermediates. Both compute identical quantities; the
test suite asserts parity. Set FASTSEP_NO_NUMBA=1 to force the numpy path.

Kernels are single-threaded on purpose: per-iteration timing must be
stable and runs bit-reproducible.
"""

import os

import numpy as np

try:  # pragma: no cover - exercised indirectly via parity tests
    if os.environ.get("FASTSEP_NO_NUMBA"):
        raise ImportError
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


# ---------------------------------------------------------------------------
# full-rank model: one pass over (f, t) bins
# ---------------------------------------------------------------------------

def _fullrank_stats_numpy(X_FTM, G_NFMM, lam_NFT, ridge, want_ab, want_phi):
    M = X_FTM.shape[-1]
    N, F = lam_NFT.shape[:2]
    Y = np.einsum("nft,nfij->ftij", lam_NFT, G_NFMM)
    Y += ridge * np.eye(M)
    Yi = np.linalg.inv(Y)
    z = np.einsum("ftij,ftj->fti", Yi, X_FTM)
    if want_phi:
        phi1 = np.einsum("fti,nfij,ftj->nft", z.conj(), G_NFMM, z, optimize=True).real
        phi2 = np.einsum("nfij,ftji->nft", G_NFMM, Yi, optimize=True).real
    else:
        phi1 = np.zeros((1, 1, 1))
        phi2 = np.zeros((1, 1, 1))
    trace = np.einsum("fti,fti->ft", X_FTM.conj(), z).real
    loglik = float((-trace - np.linalg.slogdet(Y)[1]).sum())
    if want_ab:
        A = np.einsum("nft,fti,ftj->nfij", lam_NFT, z, z.conj(), optimize=True)
        B = np.einsum("nft,ftij->nfij", lam_NFT, Yi, optimize=True)
    else:
        A = np.zeros((1, 1, 1, 1), dtype=np.complex128)
        B = np.zeros((1, 1, 1, 1), dtype=np.complex128)
    return phi1, phi2, A, B, loglik


@njit(cache=True)
def _fullrank_stats_numba(X_FTM, G_NFMM, lam_NFT, ridge, want_ab, want_phi):  # pragma: no cover
    F, T, M = X_FTM.shape
    N = G_NFMM.shape[0]
    if want_phi:
        phi1 = np.zeros((N, F, T))
        phi2 = np.zeros((N, F, T))
    else:
        phi1 = np.zeros((1, 1, 1))
        phi2 = np.zeros((1, 1, 1))
    if want_ab:
        A = np.zeros((N, F, M, M), dtype=np.complex128)
        B = np.zeros((N, F, M, M), dtype=np.complex128)
    else:
        A = np.zeros((1, 1, 1, 1), dtype=np.complex128)
        B = np.zeros((1, 1, 1, 1), dtype=np.complex128)
    loglik = 0.0
    Y = np.empty((M, M), dtype=np.complex128)
    L = np.empty((M, M), dtype=np.complex128)
    Li = np.empty((M, M), dtype=np.complex128)
    Yi = np.empty((M, M), dtype=np.complex128)
    z = np.empty(M, dtype=np.complex128)
    for f in range(F):
        for t in range(T):
            # Y = sum_n lam * G + ridge * I (lower triangle suffices)
            for i in range(M):
                for j in range(i + 1):
                    acc = 0.0 + 0.0j
                    for n in range(N):
                        acc += lam_NFT[n, f, t] * G_NFMM[n, f, i, j]
                    Y[i, j] = acc
                Y[i, i] += ridge
            # Cholesky Y = L L^H with log|Y| on the fly
            logdet = 0.0
            for i in range(M):
                for j in range(i + 1):
                    s = Y[i, j]
                    for k in range(j):
                        s -= L[i, k] * np.conj(L[j, k])
                    if i == j:
                        d = np.sqrt(s.real)
                        L[i, i] = d
                        logdet += 2.0 * np.log(d)
                    else:
                        L[i, j] = s / L[j, j].real
            # z = Y^-1 x via forward/backward substitution
            for i in range(M):
                s = X_FTM[f, t, i]
                for k in range(i):
                    s -= L[i, k] * z[k]
                z[i] = s / L[i, i].real
            for i in range(M - 1, -1, -1):
                s = z[i]
                for k in range(i + 1, M):
                    s -= np.conj(L[k, i]) * z[k]
                z[i] = s / L[i, i].real
            # Li = L^-1, then Yi = Li^H Li
            for i in range(M):
                Li[i, i] = 1.0 / L[i, i].real
                for j in range(i):
                    s = 0.0 + 0.0j
                    for k in range(j, i):
                        s += L[i, k] * Li[k, j]
                    Li[i, j] = -s / L[i, i].real
            for i in range(M):
                for j in range(i + 1):
                    s = 0.0 + 0.0j
                    for k in range(i, M):
                        s += np.conj(Li[k, i]) * Li[k, j]
                    Yi[i, j] = s
                    Yi[j, i] = np.conj(s)
            tr = 0.0
            for i in range(M):
                tr += (np.conj(X_FTM[f, t, i]) * z[i]).real
            loglik += -tr - logdet
            for n in range(N):
                if want_phi:
                    p1 = 0.0
                    p2 = 0.0
                    for i in range(M):
                        gz = 0.0 + 0.0j
                        for j in range(M):
                            gz += G_NFMM[n, f, i, j] * z[j]
                            p2 += (G_NFMM[n, f, i, j] * Yi[j, i]).real
                        p1 += (np.conj(z[i]) * gz).real
                    phi1[n, f, t] = p1
                    phi2[n, f, t] = p2
                if want_ab:
                    # A and B are Hermitian: accumulate the upper triangle
                    la = lam_NFT[n, f, t]
                    for i in range(M):
                        for j in range(i, M):
                            A[n, f, i, j] += la * z[i] * np.conj(z[j])
                            B[n, f, i, j] += la * Yi[i, j]
    if want_ab:
        for n in range(N):
            for f in range(F):
                for i in range(M):
                    for j in range(i + 1, M):
                        A[n, f, j, i] = np.conj(A[n, f, i, j])
                        B[n, f, j, i] = np.conj(B[n, f, i, j])
    return phi1, phi2, A, B, loglik


def fullrank_stats(X_FTM, G_NFMM, lam_NFT, ridge=0.0, want_ab=False, want_phi=True):
    """Statistics of the full-rank model at the current parameters.

    Returns (phi1, phi2, A, B, loglik) where, per source n and bin (f, t),
    phi1 = tr(G Y^-1 X Y^-1), phi2 = tr(G Y^-1) with Y = sum_n lam * G
    (diagonal-ridged), A = sum_t lam (Y^-1 x)(Y^-1 x)^H, B = sum_t lam Y^-1,
    and loglik = sum_ft (-x^H Y^-1 x - log|Y|). The want_* flags skip the
    statistics a caller does not need; skipped outputs come back as (1,...)
    placeholder arrays.
    """
    X_FTM = np.ascontiguousarray(X_FTM, dtype=np.complex128)
    G_NFMM = np.ascontiguousarray(G_NFMM, dtype=np.complex128)
    lam_NFT = np.ascontiguousarray(lam_NFT, dtype=np.float64)
    impl = _fullrank_stats_numba if HAVE_NUMBA else _fullrank_stats_numpy
    return impl(X_FTM, G_NFMM, lam_NFT, float(ridge), bool(want_ab), bool(want_phi))


# ---------------------------------------------------------------------------
# jointly diagonalizable model: elementwise passes
# ---------------------------------------------------------------------------

def _fast_stats_numpy(xt_FTM, g_NFM, lam_NFT, floor, want_gain, want_phi):
    y = np.einsum("nft,nfm->ftm", lam_NFT, g_NFM)
    np.maximum(y, floor, out=y)
    iy = 1.0 / y
    r = xt_FTM * iy * iy
    if want_phi:
        phi1 = np.einsum("nfm,ftm->nft", g_NFM, r)
        phi2 = np.einsum("nfm,ftm->nft", g_NFM, iy)
    else:
        phi1 = np.zeros((1, 1, 1))
        phi2 = np.zeros((1, 1, 1))
    loglik = float((-xt_FTM * iy - np.log(y)).sum())
    if want_gain:
        gnum = np.einsum("nft,ftm->nfm", lam_NFT, r)
        gden = np.einsum("nft,ftm->nfm", lam_NFT, iy)
    else:
        gnum = np.zeros((1, 1, 1))
        gden = np.zeros((1, 1, 1))
    return phi1, phi2, gnum, gden, loglik


@njit(cache=True)
def _fast_stats_numba(xt_FTM, g_NFM, lam_NFT, floor, want_gain, want_phi):  # pragma: no cover
    F, T, M = xt_FTM.shape
    N = g_NFM.shape[0]
    if want_phi:
        phi1 = np.zeros((N, F, T))
        phi2 = np.zeros((N, F, T))
    else:
        phi1 = np.zeros((1, 1, 1))
        phi2 = np.zeros((1, 1, 1))
    if want_gain:
        gnum = np.zeros((N, F, M))
        gden = np.zeros((N, F, M))
    else:
        gnum = np.zeros((1, 1, 1))
        gden = np.zeros((1, 1, 1))
    loglik = 0.0
    y = np.empty(M)
    for f in range(F):
        for t in range(T):
            for m in range(M):
                acc = 0.0
                for n in range(N):
                    acc += lam_NFT[n, f, t] * g_NFM[n, f, m]
                y[m] = acc if acc > floor else floor
                loglik += -xt_FTM[f, t, m] / y[m] - np.log(y[m])
            if want_phi:
                for n in range(N):
                    p1 = 0.0
                    p2 = 0.0
                    for m in range(M):
                        iy = 1.0 / y[m]
                        p1 += g_NFM[n, f, m] * xt_FTM[f, t, m] * iy * iy
                        p2 += g_NFM[n, f, m] * iy
                    phi1[n, f, t] = p1
                    phi2[n, f, t] = p2
            if want_gain:
                for n in range(N):
                    la = lam_NFT[n, f, t]
                    for m in range(M):
                        iy = 1.0 / y[m]
                        gnum[n, f, m] += la * xt_FTM[f, t, m] * iy * iy
                        gden[n, f, m] += la * iy
    return phi1, phi2, gnum, gden, loglik


def fast_stats(xt_FTM, g_NFM, lam_NFT, floor=0.0, want_gain=False, want_phi=True):
    """Statistics of the diagonalized model at the current parameters.

    With y = sum_n lam * g floored elementwise, returns (phi1, phi2,
    gnum, gden, loglik) where phi1 = sum_m g x~ / y^2, phi2 = sum_m g / y,
    gnum/gden are the t-summed gain-update statistics, and loglik is the
    data term sum_ftm (-x~/y - log y). The want_* flags skip statistics a
    caller does not need; skipped outputs come back as (1,...) placeholders.
    """
    xt_FTM = np.ascontiguousarray(xt_FTM, dtype=np.float64)
    g_NFM = np.ascontiguousarray(g_NFM, dtype=np.float64)
    lam_NFT = np.ascontiguousarray(lam_NFT, dtype=np.float64)
    impl = _fast_stats_numba if HAVE_NUMBA else _fast_stats_numpy
    return impl(xt_FTM, g_NFM, lam_NFT, float(floor), bool(want_gain), bool(want_phi))


def _ip_weights_numpy(X_FTM, y_FTM):
    T = X_FTM.shape[1]
    XX = X_FTM[..., :, None] * X_FTM[..., None, :].conj()
    return np.einsum("ftm,ftij->fmij", 1.0 / y_FTM, XX) / T


@njit(cache=True)
def _ip_weights_numba(X_FTM, y_FTM):  # pragma: no cover
    F, T, M = X_FTM.shape
    V = np.zeros((F, M, M, M), dtype=np.complex128)
    for f in range(F):
        for t in range(T):
            # V[m] is Hermitian: accumulate the upper triangle only
            for m in range(M):
                w = 1.0 / y_FTM[f, t, m]
                for i in range(M):
                    xi = X_FTM[f, t, i] * w
                    for j in range(i, M):
                        V[f, m, i, j] += xi * np.conj(X_FTM[f, t, j])
        for m in range(M):
            for i in range(M):
                for j in range(i + 1, M):
                    V[f, m, j, i] = np.conj(V[f, m, i, j])
    return V / T


def ip_weights(X_FTM, y_FTM):
    """Weighted covariances V[f, m] = (1/T) sum_t x x^H / y_ftm, shape (F, M, M, M)."""
    X_FTM = np.ascontiguousarray(X_FTM, dtype=np.complex128)
    y_FTM = np.ascontiguousarray(y_FTM, dtype=np.float64)
    if HAVE_NUMBA:
        return _ip_weights_numba(X_FTM, y_FTM)
    return _ip_weights_numpy(X_FTM, y_FTM)


def _mix_power_numpy(lam_NFT, g_NFM, floor):
    y = np.einsum("nft,nfm->ftm", lam_NFT, g_NFM)
    return np.maximum(y, floor, out=y)


@njit(cache=True)
def _mix_power_numba(lam_NFT, g_NFM, floor):  # pragma: no cover
    N, F, T = lam_NFT.shape
    M = g_NFM.shape[2]
    y = np.empty((F, T, M))
    for f in range(F):
        for t in range(T):
            for m in range(M):
                acc = 0.0
                for n in range(N):
                    acc += lam_NFT[n, f, t] * g_NFM[n, f, m]
                y[f, t, m] = acc if acc > floor else floor
    return y


def mix_power(lam_NFT, g_NFM, floor=0.0):
    """Floored diagonalized model power y_ftm = max(sum_n lam g, floor)."""
    lam_NFT = np.ascontiguousarray(lam_NFT, dtype=np.float64)
    g_NFM = np.ascontiguousarray(g_NFM, dtype=np.float64)
    if HAVE_NUMBA:
        return _mix_power_numba(lam_NFT, g_NFM, float(floor))
    return _mix_power_numpy(lam_NFT, g_NFM, float(floor))


def _project_power_numpy(Q_FMM, X_FTM):
    qx = np.einsum("fij,ftj->fti", Q_FMM, X_FTM)
    return qx.real**2 + qx.imag**2


@njit(cache=True)
def _project_power_numba(Q_FMM, X_FTM):  # pragma: no cover
    F, T, M = X_FTM.shape
    out = np.empty((F, T, M))
    for f in range(F):
        for t in range(T):
            for i in range(M):
                s = 0.0 + 0.0j
                for j in range(M):
                    s += Q_FMM[f, i, j] * X_FTM[f, t, j]
                out[f, t, i] = s.real**2 + s.imag**2
    return out


def project_power(Q_FMM, X_FTM):
    """Elementwise squared magnitude of the projected spectrum Q x."""
    Q_FMM = np.ascontiguousarray(Q_FMM, dtype=np.complex128)
    X_FTM = np.ascontiguousarray(X_FTM, dtype=np.complex128)
    if HAVE_NUMBA:
        return _project_power_numba(Q_FMM, X_FTM)
    return _project_power_numpy(Q_FMM, X_FTM)
