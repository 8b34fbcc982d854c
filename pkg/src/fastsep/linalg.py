"""Small dense complex-matrix kernels (M typically 2-8).

All functions accept stacked operands: an array of shape (..., M, M) is
treated as a batch of M x M matrices and the operation is applied to every
matrix in the batch.
"""

import numpy as np

from .errors import InvalidInputError, NumericalBreakdownError, SingularMatrixError

# Relative floor applied to eigenvalues when projecting onto the PSD cone.
EIG_FLOOR = 1e-12
# Condition-number estimate above which solve() refuses to proceed.
COND_LIMIT = 1e12


def _check_finite(a, name):
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} contains non-finite entries")


def hermitian_eig(m: np.ndarray):
    """Eigendecomposition of a Hermitian batch, eigenvalues descending.

    Returns (w, V) with ``m == V @ diag(w) @ V^H`` and unitary V.
    """
    m = np.asarray(m)
    _check_finite(m, "matrix")
    if m.shape[-1] != m.shape[-2]:
        raise InvalidInputError(f"matrix is not square: shape {m.shape}")
    w, v = np.linalg.eigh(m)
    return w[..., ::-1], v[..., ::-1]


def solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``a @ x = b`` for square nonsingular a (batched).

    Raises SingularMatrixError when the 2-norm condition estimate of any
    matrix in the batch exceeds COND_LIMIT.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    _check_finite(a, "matrix")
    _check_finite(b, "right-hand side")
    s = np.linalg.svd(a, compute_uv=False)
    small = np.maximum(s[..., -1], 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = np.where(small > 0.0, s[..., 0] / small, np.inf)
    if np.any(cond > COND_LIMIT):
        worst = float(np.max(cond[np.isfinite(cond)], initial=np.inf))
        raise SingularMatrixError(
            f"condition estimate {worst:.3e} exceeds {COND_LIMIT:.0e}"
        )
    return np.linalg.solve(a, b)


def principal_sqrt_similar(p: np.ndarray, floor: float = EIG_FLOOR) -> np.ndarray:
    """Principal square root of a matrix similar to a Hermitian PSD matrix.

    The input is diagonalized as ``p = S diag(w) S^{-1}``; eigenvalues must
    be real and nonnegative up to tolerance, and are clamped at
    ``floor * max(w)`` before taking the square root.
    """
    p = np.asarray(p)
    _check_finite(p, "matrix")
    w, s = np.linalg.eig(p)
    scale = np.maximum(np.abs(w).max(axis=-1, keepdims=True), np.finfo(float).tiny)
    bad_imag = np.abs(w.imag) > 1e-8 * scale
    bad_neg = w.real < -1e-8 * scale
    if np.any(bad_imag | bad_neg):
        idx = np.argwhere(bad_imag | bad_neg)[0]
        raise NumericalBreakdownError(
            "spectrum is not nonnegative real: eigenvalue "
            f"{w[tuple(idx)]:.6e} at batch index {tuple(idx[:-1])} "
            f"(scale {float(scale[tuple(idx[:-1])][0]) if scale.ndim else float(scale):.3e})"
        )
    w = np.maximum(w.real, floor * scale[..., 0][..., None])
    root = (s * np.sqrt(w)[..., None, :]) @ np.linalg.inv(s)
    if np.iscomplexobj(p):
        return root
    return root.real


def clamp_psd(m: np.ndarray, floor: float = EIG_FLOOR) -> np.ndarray:
    """Project a batch of nearly-Hermitian matrices onto the PSD cone.

    Symmetrizes, then clamps eigenvalues at ``floor * max(eigenvalue)``
    per matrix.
    """
    m = 0.5 * (m + np.conj(np.swapaxes(m, -1, -2)))
    w, v = np.linalg.eigh(m)
    w = np.maximum(w, floor * np.maximum(w.max(axis=-1, keepdims=True), 0.0))
    return (v * w[..., None, :]) @ np.conj(np.swapaxes(v, -1, -2))


def hermitian_sqrt_pair(m: np.ndarray, floor: float = EIG_FLOOR):
    """Return (m^{1/2}, m^{-1/2}) for a batch of Hermitian PSD matrices.

    Eigenvalues are clamped at ``floor * max(eigenvalue)`` so the inverse
    root is always defined.
    """
    m = 0.5 * (m + np.conj(np.swapaxes(m, -1, -2)))
    w, v = np.linalg.eigh(m)
    top = np.maximum(w.max(axis=-1, keepdims=True), np.finfo(float).tiny)
    w = np.maximum(w, floor * top)
    vh = np.conj(np.swapaxes(v, -1, -2))
    sq = np.sqrt(w)
    return (v * sq[..., None, :]) @ vh, (v * (1.0 / sq)[..., None, :]) @ vh
