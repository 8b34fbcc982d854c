"""Source PSD models: unconstrained grid, NMF factors, and a deep prior.

Every model exposes the same surface consumed by the separator loop:

* ``lam()`` -- the PSD grid (N, F, T) implied by the current factors.
* ``mu_steps`` -- ordered names of its multiplicative-update blocks; the
  separator refreshes the spatial statistics between blocks so each MU
  step majorizes the likelihood at the current parameters.
* ``apply_mu(step, phi1, phi2)`` -- apply one block given the per-source
  statistics phi1/phi2 of the active spatial model (identical update
  formulas serve both coordinate systems).
* ``absorb_scale(c)`` -- fold a per-(source, frequency) rescaling into the
  factors (used by the gain/trace normalization).

Updates are multiplicative throughout: zero factors stay exactly zero.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError

TINY = np.finfo(float).tiny

# Defaults for the latent-variable sampler: proposal variance and number of
# proposals per outer iteration.
METROPOLIS_VAR = 1e-4
METROPOLIS_STEPS = 30


def softplus(x):
    """Numerically stable log(1 + exp(x))."""
    x = np.asarray(x, dtype=np.float64)
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


@dataclass
class MetropolisConfig:
    """Random-walk proposal settings for the latent chain."""

    proposal_var: float = METROPOLIS_VAR
    inner_steps: int = METROPOLIS_STEPS

    def __post_init__(self):
        if self.proposal_var <= 0:
            raise InvalidInputError("proposal_var must be positive")
        if self.inner_steps < 1:
            raise InvalidInputError("inner_steps must be >= 1")


class ToyDecoder:
    """Fixed seeded affine-tanh-affine-softplus latent-to-spectrum map.

    Deterministic stand-in for a trained decoder: z (..., D) -> strictly
    positive spectrum (..., F). Weights can be serialized to the binary
    tensor format (see write_tensors).
    """

    OUTPUT_FLOOR = 1e-8

    def __init__(self, n_freq, latent_dim=16, hidden=64, seed=0):
        rng = np.random.default_rng(seed)
        self.w1 = rng.normal(0.0, 1.0 / np.sqrt(latent_dim), (hidden, latent_dim))
        self.b1 = rng.normal(0.0, 0.5, hidden)
        self.w2 = rng.normal(0.0, 1.0 / np.sqrt(hidden), (n_freq, hidden))
        self.b2 = rng.normal(0.0, 0.5, n_freq)

    @property
    def latent_dim(self):
        return self.w1.shape[1]

    @property
    def n_freq(self):
        return self.w2.shape[0]

    def __call__(self, z):
        z = np.asarray(z, dtype=np.float64)
        h = np.tanh(z @ self.w1.T + self.b1)
        return np.maximum(softplus(h @ self.w2.T + self.b2), self.OUTPUT_FLOOR)

    def lipschitz_bound(self):
        """Upper bound on the output change per unit latent change."""
        s1 = np.linalg.svd(self.w1, compute_uv=False)[0]
        s2 = np.linalg.svd(self.w2, compute_uv=False)[0]
        return s1 * s2

    @classmethod
    def from_weights(cls, w1, b1, w2, b2):
        dec = cls.__new__(cls)
        dec.w1 = np.asarray(w1, dtype=np.float64)
        dec.b1 = np.asarray(b1, dtype=np.float64)
        dec.w2 = np.asarray(w2, dtype=np.float64)
        dec.b2 = np.asarray(b2, dtype=np.float64)
        return dec

    def to_file(self, path):
        write_tensors(path, [self.w1, self.b1, self.w2, self.b2])

    @classmethod
    def from_file(cls, path):
        tensors = read_tensors(path)
        if len(tensors) != 4:
            raise InvalidInputError(
                f"decoder file must hold 4 tensors, found {len(tensors)}"
            )
        return cls.from_weights(*tensors)


def write_tensors(path, arrays):
    """Write arrays as records of (ndim, dims) little-endian uint64 + float32 data."""
    with open(path, "wb") as fh:
        for a in arrays:
            a = np.asarray(a, dtype=np.float32)
            np.asarray([a.ndim], dtype="<u8").tofile(fh)
            np.asarray(a.shape, dtype="<u8").tofile(fh)
            a.astype("<f4").tofile(fh)


def read_tensors(path):
    """Read back every record written by write_tensors."""
    out = []
    with open(path, "rb") as fh:
        while True:
            head = np.fromfile(fh, dtype="<u8", count=1)
            if head.size == 0:
                break
            ndim = int(head[0])
            dims = np.fromfile(fh, dtype="<u8", count=ndim).astype(int)
            count = int(np.prod(dims)) if ndim else 1
            data = np.fromfile(fh, dtype="<f4", count=count)
            if data.size != count:
                raise InvalidInputError("truncated tensor file")
            out.append(data.reshape(dims).astype(np.float64))
    return out


# ---------------------------------------------------------------------------
# PSD models
# ---------------------------------------------------------------------------

class UnconstrainedSource:
    """Free PSD grid, one multiplicative update for the whole grid."""

    mu_steps = ("lam",)

    def __init__(self, lam_NFT):
        self.lam_NFT = np.asarray(lam_NFT, dtype=np.float64)

    @classmethod
    def from_observation(cls, X_FTM, n_sources):
        power = np.mean(np.abs(X_FTM) ** 2, axis=-1)
        return cls(np.tile(power, (n_sources, 1, 1)))

    def lam(self):
        return self.lam_NFT

    def apply_mu(self, step, phi1_NFT, phi2_NFT):
        self.lam_NFT = self.lam_NFT * np.sqrt(
            phi1_NFT / np.maximum(phi2_NFT, TINY)
        )

    def absorb_scale(self, c_NF):
        self.lam_NFT = self.lam_NFT * c_NF[:, :, None]


class NmfSource:
    """Low-rank PSDs lam_nft = sum_k w_nkf h_nkt, alternating W/H updates."""

    mu_steps = ("W", "H")

    def __init__(self, W_NFK, H_NKT):
        self.W_NFK = np.asarray(W_NFK, dtype=np.float64)
        self.H_NKT = np.asarray(H_NKT, dtype=np.float64)
        self._lam = None

    @classmethod
    def random(cls, n_sources, n_freq, n_frames, n_basis, rng, scale=1.0):
        # uniform in [0.1, 1.1) avoids zero-locking at start
        w = rng.uniform(0.1, 1.1, (n_sources, n_freq, n_basis)) * np.sqrt(scale)
        h = rng.uniform(0.1, 1.1, (n_sources, n_basis, n_frames)) * np.sqrt(scale)
        return cls(w, h)

    def lam(self):
        if self._lam is None:
            self._lam = self.W_NFK @ self.H_NKT
        return self._lam

    def apply_mu(self, step, phi1_NFT, phi2_NFT):
        self._lam = None
        if step == "W":
            num = np.matmul(phi1_NFT, self.H_NKT.transpose(0, 2, 1))
            den = np.matmul(phi2_NFT, self.H_NKT.transpose(0, 2, 1))
            self.W_NFK = self.W_NFK * np.sqrt(num / np.maximum(den, TINY))
        elif step == "H":
            num = np.matmul(self.W_NFK.transpose(0, 2, 1), phi1_NFT)
            den = np.matmul(self.W_NFK.transpose(0, 2, 1), phi2_NFT)
            self.H_NKT = self.H_NKT * np.sqrt(num / np.maximum(den, TINY))
        else:
            raise InvalidInputError(f"unknown NMF update step {step!r}")

    def absorb_scale(self, c_NF):
        self._lam = None
        self.W_NFK = self.W_NFK * c_NF[:, :, None]


@dataclass
class DeepPriorFactors:
    """Latent-variable PSD for one source: lam_ft = u_f v_t decoder(z_t)_f."""

    u_F: np.ndarray
    v_T: np.ndarray
    z_TD: np.ndarray
    r_TF: np.ndarray = field(repr=False, default=None)

    def refresh(self, decoder):
        self.r_TF = decoder(self.z_TD)

    def lam_FT(self):
        return self.u_F[:, None] * (self.v_T[:, None] * self.r_TF).T


class DeepPriorPlusNmfSource:
    """Source 1 modeled by a decoder prior, remaining sources by NMF."""

    mu_steps = ("U", "V", "W", "H")
    has_latents = True

    def __init__(self, dp: DeepPriorFactors, noise: NmfSource, decoder):
        self.dp = dp
        self.noise = noise
        self.decoder = decoder
        if dp.r_TF is None:
            dp.refresh(decoder)

    @classmethod
    def init(cls, n_sources, n_freq, n_frames, n_basis, decoder, rng, scale=1.0):
        if n_sources < 2:
            raise InvalidInputError("deep-prior methods need at least 2 sources")
        dp = DeepPriorFactors(
            u_F=np.full(n_freq, np.sqrt(scale)),
            v_T=np.full(n_frames, np.sqrt(scale)),
            z_TD=np.zeros((n_frames, decoder.latent_dim)),
        )
        noise = NmfSource.random(n_sources - 1, n_freq, n_frames, n_basis, rng, scale)
        return cls(dp, noise, decoder)

    def lam(self):
        return np.concatenate([self.dp.lam_FT()[None], self.noise.lam()], axis=0)

    def apply_mu(self, step, phi1_NFT, phi2_NFT):
        if step in ("W", "H"):
            self.noise.apply_mu(step, phi1_NFT[1:], phi2_NFT[1:])
            return
        dp = self.dp
        vr_TF = dp.v_T[:, None] * dp.r_TF
        ur_TF = dp.u_F[None, :] * dp.r_TF
        if step == "U":
            num = np.einsum("tf,ft->f", vr_TF, phi1_NFT[0])
            den = np.einsum("tf,ft->f", vr_TF, phi2_NFT[0])
            dp.u_F = dp.u_F * np.sqrt(num / np.maximum(den, TINY))
        elif step == "V":
            num = np.einsum("tf,ft->t", ur_TF, phi1_NFT[0])
            den = np.einsum("tf,ft->t", ur_TF, phi2_NFT[0])
            dp.v_T = dp.v_T * np.sqrt(num / np.maximum(den, TINY))
        else:
            raise InvalidInputError(f"unknown deep-prior update step {step!r}")

    def absorb_scale(self, c_NF):
        self.dp.u_F = self.dp.u_F * c_NF[0]
        self.noise.absorb_scale(c_NF[1:])


# ---------------------------------------------------------------------------
# Metropolis updates of the latent variables
# ---------------------------------------------------------------------------

def metropolis_log_gamma_fullrank(lam_new_FT, lam_old_FT, phi1_FT, phi2_FT):
    """Per-frame log acceptance ratio in full-rank coordinates.

    log gamma_t = - sum_f (1/lam_new - 1/lam_old) phi1
                  - sum_f (lam_new - lam_old) phi2
    with phi1 = tr(G Y^-1 X Y^-1) and phi2 = tr(G Y^-1) held fixed.
    """
    inv_new = 1.0 / np.maximum(lam_new_FT, TINY)
    inv_old = 1.0 / np.maximum(lam_old_FT, TINY)
    return -np.einsum("ft,ft->t", inv_new - inv_old, phi1_FT) - np.einsum(
        "ft,ft->t", lam_new_FT - lam_old_FT, phi2_FT
    )


def metropolis_log_gamma_fast(lam_new_FT, lam_old_FT, g_FM, y_rest_FTM, xt_FTM):
    """Per-frame log acceptance ratio in diagonalized coordinates.

    With y(lam) = lam g + y_rest (the reconstruction without this source
    held fixed), log gamma_t = - sum_fm x~ (1/y_new - 1/y_old)
    - sum_fm log(y_new / y_old); this is the exact likelihood ratio.
    """
    y_new = np.maximum(lam_new_FT[..., None] * g_FM[:, None, :] + y_rest_FTM, TINY)
    y_old = np.maximum(lam_old_FT[..., None] * g_FM[:, None, :] + y_rest_FTM, TINY)
    return (
        -(xt_FTM * (1.0 / y_new - 1.0 / y_old)).sum(axis=(0, 2))
        - np.log(y_new / y_old).sum(axis=(0, 2))
    )


def _run_chain(dp, decoder, cfg, rng, log_gamma_fn):
    """Shared chain driver: per-frame proposals, vectorized over frames."""
    accepted = 0
    T = dp.z_TD.shape[0]
    std = np.sqrt(cfg.proposal_var)
    lam_old_FT = dp.lam_FT()
    for _ in range(cfg.inner_steps):
        z_new = dp.z_TD + std * rng.standard_normal(dp.z_TD.shape)
        r_new = decoder(z_new)
        lam_new_FT = dp.u_F[:, None] * (dp.v_T[:, None] * r_new).T
        log_gamma = log_gamma_fn(lam_new_FT, lam_old_FT)
        accept = np.log(rng.uniform(size=T)) <= log_gamma
        dp.z_TD[accept] = z_new[accept]
        dp.r_TF[accept] = r_new[accept]
        lam_old_FT[:, accept] = lam_new_FT[:, accept]
        accepted += int(accept.sum())
    return accepted


def update_latents_fullrank(dp, decoder, phi1_FT, phi2_FT, cfg, rng):
    """Metropolis chain against frozen full-rank statistics; returns #accepted."""
    return _run_chain(
        dp, decoder, cfg, rng,
        lambda new, old: metropolis_log_gamma_fullrank(new, old, phi1_FT, phi2_FT),
    )


def update_latents_fast(dp, decoder, g_FM, y_rest_FTM, xt_FTM, cfg, rng):
    """Metropolis chain against a frozen rest-of-model power; returns #accepted."""
    return _run_chain(
        dp, decoder, cfg, rng,
        lambda new, old: metropolis_log_gamma_fast(new, old, g_FM, y_rest_FTM, xt_FTM),
    )
