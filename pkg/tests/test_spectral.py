"""Spectral factorization: forward-construction round trips, an mpmath
singular-value oracle, failure modes, and canonical ordering."""

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from triproxy.errors import (AmbiguousMatch, EigenGapExhausted, NegativeMass,
                             RankDeficient, ZeroConditioningCell)
from triproxy.spectral import (COMPLETENESS_LABEL, DISTINCTNESS_LABEL,
                               HsOptions, canonical_order,
                               completeness_diagnostics, hs_decompose,
                               match_permutation)


def random_factors(rng, nz, nc, nv, k):
    """Well-separated column-stochastic factors for forward construction."""
    z = rng.dirichlet(np.ones(nz), size=k).T
    # spread the signal columns so the eigenvalue gap is comfortable
    c = rng.dirichlet(np.ones(nc), size=k).T
    c = 0.2 * c + 0.8 * np.eye(nc)[:, :k]
    w_given_v = rng.dirichlet(np.ones(k), size=nv).T
    v = rng.dirichlet(np.ones(nv) * 5)
    return z, c, w_given_v, v


def forward(z, c, w_given_v, v):
    return np.einsum("zw,cw,wv,v->zcv", z, c, w_given_v, v)


class TestRoundTrip:
    @pytest.mark.parametrize("seed", range(10))
    @pytest.mark.parametrize("k", [2, 3, 4])
    def test_recovers_factors(self, seed, k):
        rng = np.random.default_rng(seed)
        z, c, w_given_v, v = random_factors(rng, k + 2, k + 1, k + 2, k)
        fac = hs_decompose(forward(z, c, w_given_v, v), HsOptions(latent_dim=k))
        perm = canonical_order(np.round(z, 12))
        np.testing.assert_allclose(fac.z_given_w, z[:, perm], atol=1e-8)
        np.testing.assert_allclose(fac.c_given_w, c[:, perm], atol=1e-8)
        np.testing.assert_allclose(fac.w_given_v, w_given_v[perm], atol=1e-8)
        np.testing.assert_allclose(fac.v_marginal, v, atol=1e-12)
        np.testing.assert_allclose(fac.wv_joint, w_given_v[perm] * v, atol=1e-8)

    def test_canonical_order_under_input_latent_permutation(self):
        # permuting the latent axis of the construction reorders floating-
        # point sums, so the joints agree only to the last ulp; the recovered
        # factors must agree to the same precision and in the same order
        rng = np.random.default_rng(3)
        z, c, w_given_v, v = random_factors(rng, 4, 4, 4, 3)
        opts = HsOptions(latent_dim=3)
        a = hs_decompose(forward(z, c, w_given_v, v), opts)
        p = np.array([2, 0, 1])
        b = hs_decompose(forward(z[:, p], c[:, p], w_given_v[p], v), opts)
        np.testing.assert_allclose(a.z_given_w, b.z_given_w, atol=1e-12)
        np.testing.assert_allclose(a.c_given_w, b.c_given_w, atol=1e-12)
        np.testing.assert_allclose(a.w_given_v, b.w_given_v, atol=1e-12)

    def test_bitwise_identical_on_identical_input(self):
        rng = np.random.default_rng(3)
        f = forward(*random_factors(rng, 4, 4, 4, 3))
        opts = HsOptions(latent_dim=3)
        a, b = hs_decompose(f, opts), hs_decompose(f.copy(), opts)
        assert np.array_equal(a.z_given_w, b.z_given_w)
        assert np.array_equal(a.c_given_w, b.c_given_w)
        assert np.array_equal(a.w_given_v, b.w_given_v)

    def test_probtensor_input_accepted(self):
        from triproxy.prob import ProbTensor, VarSpace
        rng = np.random.default_rng(4)
        z, c, w_given_v, v = random_factors(rng, 3, 3, 3, 2)
        f = forward(z, c, w_given_v, v)
        t = ProbTensor.build((VarSpace("Z", 3), VarSpace("C", 3), VarSpace("V", 3)), f)
        fac = hs_decompose(t, HsOptions(latent_dim=2))
        np.testing.assert_allclose(
            forward(fac.z_given_w, fac.c_given_w, fac.w_given_v, fac.v_marginal),
            f, atol=1e-8)


class TestFailureModes:
    def test_rank_deficient_product_proxy(self):
        # z independent of w: the (z, v) margin is rank one
        rng = np.random.default_rng(0)
        z = np.tile(rng.dirichlet(np.ones(4))[:, None], (1, 2))
        _, c, w_given_v, v = random_factors(rng, 4, 3, 4, 2)
        with pytest.raises(RankDeficient) as ei:
            hs_decompose(forward(z, c, w_given_v, v), HsOptions(latent_dim=2))
        assert COMPLETENESS_LABEL in str(ei.value)

    def test_latent_dim_exceeds_proxy(self):
        with pytest.raises(RankDeficient):
            hs_decompose(np.full((2, 3, 2), 1 / 12), HsOptions(latent_dim=3))

    def test_eigen_gap_exhausted_on_identical_signal_columns(self):
        # c_given_w has equal columns: every transfer matrix is a multiple of
        # the identity, so no reweighting can separate the latent states
        rng = np.random.default_rng(1)
        z, _, w_given_v, v = random_factors(rng, 4, 3, 4, 2)
        c = np.tile(rng.dirichlet(np.ones(3))[:, None], (1, 2))
        with pytest.raises(EigenGapExhausted) as ei:
            hs_decompose(forward(z, c, w_given_v, v), HsOptions(latent_dim=2))
        assert DISTINCTNESS_LABEL in str(ei.value)

    def test_zero_conditioning_cell(self):
        rng = np.random.default_rng(2)
        z, c, w_given_v, v = random_factors(rng, 4, 3, 4, 2)
        v = v.copy()
        v[0] = 0.0
        v /= v.sum()
        with pytest.raises(ZeroConditioningCell):
            hs_decompose(forward(z, c, w_given_v, v), HsOptions(latent_dim=2))

    def test_negative_mass_on_corrupted_input(self):
        rng = np.random.default_rng(5)
        z, c, w_given_v, v = random_factors(rng, 4, 3, 4, 2)
        f = forward(z, c, w_given_v, v)
        f = f + rng.normal(scale=2e-2, size=f.shape)  # heavy corruption
        with pytest.raises((NegativeMass, EigenGapExhausted, RankDeficient)):
            hs_decompose(np.abs(f), HsOptions(latent_dim=2, neg_tol=1e-12))


class TestMatchPermutation:
    def test_finds_permutation(self):
        rng = np.random.default_rng(6)
        ref = rng.dirichlet(np.ones(5), size=3).T
        p = np.array([1, 2, 0])
        perm = match_permutation(ref, ref[:, p])
        np.testing.assert_array_equal(ref[:, p][:, perm], ref)

    def test_tolerates_noise(self):
        rng = np.random.default_rng(7)
        ref = rng.dirichlet(np.ones(5), size=3).T
        p = np.array([2, 0, 1])
        cand = ref[:, p] + rng.normal(scale=1e-9, size=ref.shape)
        perm = match_permutation(ref, cand)
        np.testing.assert_allclose(cand[:, perm], ref, atol=1e-7)

    def test_ambiguous_when_columns_tie(self):
        ref = np.array([[0.5, 0.5], [0.5, 0.5]])
        with pytest.raises(AmbiguousMatch):
            match_permutation(ref, ref)

    def test_shape_mismatch(self):
        with pytest.raises(AmbiguousMatch):
            match_permutation(np.ones((2, 2)) / 2, np.ones((2, 3)) / 2)


def mpmath_singular_values(a: np.ndarray) -> list[float]:
    m = mpmath.matrix(a.tolist())
    return [float(s) for s in mpmath.svd_r(m, compute_uv=False)]


class TestCompleteness:
    @pytest.mark.parametrize("seed", range(5))
    def test_matches_mpmath_svd(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.dirichlet(np.ones(4), size=5).T
        rep = completeness_diagnostics(a, k=4)
        oracle = sorted(mpmath_singular_values(a), reverse=True)
        np.testing.assert_allclose(sorted(rep.singular_values, reverse=True)[:len(oracle)],
                                   oracle, atol=1e-12)
        assert rep.rank_ok == (oracle[3] / oracle[0] >= 1e-7)

    def test_rank_deficient_flagged(self):
        a = np.outer(np.array([0.2, 0.3, 0.5]), np.array([0.5, 0.5]))
        rep = completeness_diagnostics(a, k=2)
        assert not rep.rank_ok


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(2, 4))
def test_property_roundtrip_residual(seed, k):
    """The recomposed joint always reproduces the input to tight tolerance."""
    rng = np.random.default_rng(seed)
    z, c, w_given_v, v = random_factors(rng, k + 2, k + 1, k + 2, k)
    f = forward(z, c, w_given_v, v)
    try:
        fac = hs_decompose(f, HsOptions(latent_dim=k))
    except EigenGapExhausted:
        return  # a legitimately hard draw; the error path is tested above
    np.testing.assert_allclose(
        forward(fac.z_given_w, fac.c_given_w, fac.w_given_v, fac.v_marginal),
        f, atol=1e-7)
