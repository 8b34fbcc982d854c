"""Parity between the compiled kernels and their vectorized numpy twins."""

import numpy as np
import pytest

from conftest import random_hpd
from fastsep import _kernels as K


@pytest.fixture
def fullrank_inputs(rng):
    F, T, M, N = 6, 25, 4, 3
    X = rng.standard_normal((F, T, M)) + 1j * rng.standard_normal((F, T, M))
    G = random_hpd(rng, M, (N, F))
    lam = rng.uniform(0.1, 2.0, (N, F, T))
    return X, G, lam


@pytest.fixture
def fast_inputs(rng):
    F, T, M, N = 7, 30, 5, 2
    xt = rng.uniform(0.0, 3.0, (F, T, M))
    g = rng.uniform(0.1, 2.0, (N, F, M))
    lam = rng.uniform(0.1, 2.0, (N, F, T))
    return xt, g, lam


@pytest.mark.skipif(not K.HAVE_NUMBA, reason="numba unavailable")
class TestParity:
    @pytest.mark.parametrize("ridge", [0.0, 1e-6])
    @pytest.mark.parametrize("want_ab", [False, True])
    @pytest.mark.parametrize("want_phi", [False, True])
    def test_fullrank(self, fullrank_inputs, ridge, want_ab, want_phi):
        X, G, lam = fullrank_inputs
        got = K._fullrank_stats_numba(X, G, lam, ridge, want_ab, want_phi)
        ref = K._fullrank_stats_numpy(X, G, lam, ridge, want_ab, want_phi)
        for g_, r_ in zip(got[:4], ref[:4]):
            np.testing.assert_allclose(g_, r_, rtol=1e-10, atol=1e-12)
        assert abs(got[4] - ref[4]) <= 1e-8 * abs(ref[4])

    @pytest.mark.parametrize("floor", [0.0, 0.5])
    @pytest.mark.parametrize("want_gain", [False, True])
    @pytest.mark.parametrize("want_phi", [False, True])
    def test_fast(self, fast_inputs, floor, want_gain, want_phi):
        xt, g, lam = fast_inputs
        got = K._fast_stats_numba(xt, g, lam, floor, want_gain, want_phi)
        ref = K._fast_stats_numpy(xt, g, lam, floor, want_gain, want_phi)
        for g_, r_ in zip(got[:4], ref[:4]):
            np.testing.assert_allclose(g_, r_, rtol=1e-10, atol=1e-14)
        assert abs(got[4] - ref[4]) <= 1e-8 * abs(ref[4])

    def test_ip_weights(self, rng):
        F, T, M = 5, 40, 4
        X = rng.standard_normal((F, T, M)) + 1j * rng.standard_normal((F, T, M))
        y = rng.uniform(0.2, 2.0, (F, T, M))
        np.testing.assert_allclose(
            K._ip_weights_numba(X, y), K._ip_weights_numpy(X, y), rtol=1e-10, atol=1e-13
        )

    def test_project_power(self, rng):
        F, T, M = 5, 17, 3
        Q = rng.standard_normal((F, M, M)) + 1j * rng.standard_normal((F, M, M))
        X = rng.standard_normal((F, T, M)) + 1j * rng.standard_normal((F, T, M))
        np.testing.assert_allclose(
            K._project_power_numba(Q, X), K._project_power_numpy(Q, X),
            rtol=1e-10, atol=1e-13,
        )


class TestNumpyPath:
    def test_fullrank_against_direct_inverse(self, fullrank_inputs):
        # independent check of the numpy twin against plain formulas
        X, G, lam = fullrank_inputs
        phi1, phi2, A, B, ll = K._fullrank_stats_numpy(X, G, lam, 0.0, True, True)
        Y = np.einsum("nft,nfij->ftij", lam, G)
        Yi = np.linalg.inv(Y)
        z = np.einsum("ftij,ftj->fti", Yi, X)
        XX = X[..., :, None] * X[..., None, :].conj()
        phi1_o = np.einsum(
            "nfij,ftjk,ftkl,ftli->nft", G, Yi, XX, Yi, optimize=True
        ).real
        np.testing.assert_allclose(phi1, phi1_o, rtol=1e-9)
        A_o = np.einsum("nft,ftij,ftjk,ftkl->nfil", lam, Yi, XX, Yi, optimize=True)
        np.testing.assert_allclose(A, A_o, rtol=1e-9)
        ll_o = float(
            (-np.einsum("ftij,ftji->ft", XX, Yi).real - np.linalg.slogdet(Y)[1]).sum()
        )
        assert abs(ll - ll_o) <= 1e-8 * abs(ll_o)

    def test_fast_floor_binds(self):
        xt = np.full((1, 1, 2), 4.0)
        g = np.zeros((1, 1, 2))
        lam = np.ones((1, 1, 1))
        phi1, phi2, _, _, ll = K._fast_stats_numpy(xt, g, lam, 0.5, False, True)
        # y floored at 0.5 everywhere
        assert np.allclose(phi2, 0.0)
        assert np.isclose(ll, 2 * (-4.0 / 0.5 - np.log(0.5)))
