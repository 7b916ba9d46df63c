"""Latent relabeling: alpha recovery, unbiased and monotone rules,
confounder effects against the double-intervention oracle."""

import numpy as np
import pytest

from conftest import oracle_cate_by_w, oracle_clamp_xw_mean, oracle_w_marginal
from triproxy.errors import AlphaCollision, MissingLevels, TauOutOfRange
from triproxy.generators import unbiased_proxy_model
from triproxy.pipelines import (identify_auxiliary_proxy,
                                identify_outcome_proxy)
from triproxy.prob import MarkovKernel, VarSpace
from triproxy.relabel import (RelabelRule, compute_alpha, confounder_effects,
                              relabel_monotone, relabel_unbiased)
from triproxy.scm import observed_joint


def identified(m, K, design="outcome"):
    fn = identify_auxiliary_proxy if design == "auxiliary" else identify_outcome_proxy
    return fn(observed_joint(m), K)


class TestAlpha:
    def test_mean_alpha_matches_hand_computation(self):
        z = VarSpace("Z", 3, (0.0, 1.0, 2.0))
        w = VarSpace("W", 2, (0.0, 1.0))
        cols = np.array([[0.5, 0.1], [0.3, 0.2], [0.2, 0.7]])
        kern = MarkovKernel.build(z, (w,), cols)
        alpha = compute_alpha(kern, RelabelRule("mean", "unbiased"))
        np.testing.assert_allclose(alpha, [0.7, 1.6])

    def test_median_alpha(self):
        z = VarSpace("Z", 3, (0.0, 1.0, 2.0))
        w = VarSpace("W", 2, (0.0, 1.0))
        cols = np.array([[0.6, 0.1], [0.3, 0.2], [0.1, 0.7]])
        kern = MarkovKernel.build(z, (w,), cols)
        alpha = compute_alpha(kern, RelabelRule("median", "unbiased"))
        np.testing.assert_allclose(alpha, [0.0, 2.0])

    def test_collision_detected(self):
        z = VarSpace("Z", 2, (0.0, 1.0))
        w = VarSpace("W", 2, (0.0, 1.0))
        cols = np.array([[0.5, 0.5], [0.5, 0.5]])
        kern = MarkovKernel.build(z, (w,), cols)
        with pytest.raises(AlphaCollision):
            compute_alpha(kern, RelabelRule("mean", "unbiased"))

    def test_missing_levels(self):
        z = VarSpace("Z", 2, None)
        w = VarSpace("W", 2, (0.0, 1.0))
        kern = MarkovKernel.build(z, (w,), np.array([[0.9, 0.2], [0.1, 0.8]]))
        with pytest.raises(MissingLevels):
            compute_alpha(kern, RelabelRule("mean", "unbiased"))

    def test_product_coding_blockwise(self):
        # two binary coordinates; Z carries one block of two levels each
        z = VarSpace("Z", 4, (0.0, 1.0, 0.0, 1.0))
        w = VarSpace("W", 4, None)
        cols = np.empty((4, 4))
        block = {0: (0.8, 0.2), 1: (0.2, 0.8)}   # per-coordinate pmf, mean 0.2 / 0.8
        for a in (0, 1):
            for b in (0, 1):
                state = a * 2 + b      # C-order grid
                cols[0:2, state] = np.multiply(0.5, block[a])
                cols[2:4, state] = np.multiply(0.5, block[b])
        kern = MarkovKernel.build(z, (w,), cols)
        alpha = compute_alpha(kern, RelabelRule("mean", "unbiased",
                                                coordinates=(2, 2)))
        np.testing.assert_allclose(alpha, [[0.2, 0.2], [0.2, 0.8],
                                           [0.8, 0.2], [0.8, 0.8]])

    def test_product_coding_shape_mismatch(self):
        z = VarSpace("Z", 4, (0.0, 1.0, 2.0, 3.0))
        w = VarSpace("W", 3, None)
        kern = MarkovKernel.build(z, (w,), np.full((4, 3), 0.25))
        with pytest.raises(AlphaCollision):
            compute_alpha(kern, RelabelRule("mean", "unbiased", coordinates=(2, 2)))


class TestUnbiased:
    @pytest.mark.parametrize("K", [2, 3])
    def test_labels_are_true_states(self, K):
        m = unbiased_proxy_model(K, seed=2)
        labeled = relabel_unbiased(identified(m, K), RelabelRule("mean", "unbiased"))
        np.testing.assert_allclose(labeled.alpha, np.arange(K), atol=1e-7)
        # the latent space now carries the alpha values as levels
        np.testing.assert_allclose(labeled.base.wx_joint.axes[0].level_values(),
                                   np.arange(K), atol=1e-7)

    @pytest.mark.parametrize("K", [2, 3])
    def test_per_state_effects_match_oracle(self, K):
        m = unbiased_proxy_model(K, seed=4)
        labeled = relabel_unbiased(identified(m, K), RelabelRule("mean", "unbiased"))
        truth = oracle_cate_by_w(m)
        for w in range(K):
            assert abs(labeled.beta_at_value(float(w)) - truth[w]) < 1e-7
        np.testing.assert_allclose(labeled.w_marginal, oracle_w_marginal(m),
                                   atol=1e-7)

    def test_idempotent(self):
        m = unbiased_proxy_model(2, seed=5)
        rule = RelabelRule("mean", "unbiased")
        once = relabel_unbiased(identified(m, 2), rule)
        twice = relabel_unbiased(once.base, rule)
        np.testing.assert_array_equal(once.alpha, twice.alpha)
        np.testing.assert_array_equal(once.base.wx_joint.values,
                                      twice.base.wx_joint.values)

    def test_unknown_value_rejected(self):
        m = unbiased_proxy_model(2, seed=5)
        labeled = relabel_unbiased(identified(m, 2), RelabelRule("mean", "unbiased"))
        with pytest.raises(AlphaCollision):
            labeled.beta_at_value(7.5)


class TestMonotone:
    def test_quantile_addressing_matches_truth(self):
        """A strictly increasing garbling preserves quantile ranks: the state
        at rank tau of the recovered law is the true state at rank tau."""
        K = 3
        m = unbiased_proxy_model(K, seed=6, monotone_map=(0.0, 0.4, 2.1))
        labeled = relabel_monotone(identified(m, K), RelabelRule("mean", "monotone"))
        truth_w = oracle_w_marginal(m)
        truth_cate = oracle_cate_by_w(m)
        cdf = np.cumsum(truth_w)
        for tau in (0.1, 0.4, 0.6, 0.9):
            true_state = int(np.searchsorted(cdf, tau - 1e-12, side="left"))
            assert abs(labeled.beta_at_quantile(tau) - truth_cate[true_state]) < 1e-7

    def test_decreasing_garbling_reverses_order(self):
        """A decreasing map is indistinguishable from an increasing one, so
        quantile addressing comes out order-reversed."""
        K = 2
        m = unbiased_proxy_model(K, seed=7, monotone_map=(1.5, -0.5))
        labeled = relabel_monotone(identified(m, K), RelabelRule("mean", "monotone"))
        truth_cate = oracle_cate_by_w(m)
        truth_w = oracle_w_marginal(m)
        cdf = np.cumsum(truth_w[::-1])
        for tau in (0.2, 0.8):
            rev_state = int(np.searchsorted(cdf, tau - 1e-12, side="left"))
            assert abs(labeled.beta_at_quantile(tau)
                       - truth_cate[::-1][rev_state]) < 1e-7

    def test_tau_out_of_range(self):
        m = unbiased_proxy_model(2, seed=8)
        labeled = relabel_monotone(identified(m, 2), RelabelRule("mean", "monotone"))
        with pytest.raises(TauOutOfRange):
            labeled.state_at(0.0)
        with pytest.raises(TauOutOfRange):
            labeled.state_at(1.2)

    def test_eager_tau_resolution(self):
        m = unbiased_proxy_model(2, seed=8)
        labeled = relabel_monotone(identified(m, 2), RelabelRule("mean", "monotone"))
        assert set(labeled.diagnostics["tau_states"]) == {0.25, 0.5, 0.75}

    def test_mode_mismatch_rejected(self):
        m = unbiased_proxy_model(2, seed=8)
        with pytest.raises(ValueError):
            relabel_monotone(identified(m, 2), RelabelRule("mean", "unbiased"))
        with pytest.raises(ValueError):
            relabel_unbiased(identified(m, 2), RelabelRule("mean", "monotone"))


class TestConfounderEffects:
    @pytest.mark.parametrize("K", [2, 3])
    def test_outcome_design_matches_clamp_oracle(self, K):
        """E[Y(x, w)] from the identified model equals the oracle that clamps
        both the treatment and the latent state."""
        m = unbiased_proxy_model(K, seed=9)
        labeled = relabel_unbiased(identified(m, K), RelabelRule("mean", "unbiased"))
        y = labeled.base.y_given_wx.target.level_values()
        for w in range(K):
            for x1 in (0, 1):
                t = confounder_effects(labeled, x1, w)
                got = float(y @ t.values.sum(axis=1))
                assert abs(got - oracle_clamp_xw_mean(m, x1, w)) < 1e-7

    def test_auxiliary_design_matches_clamp_oracle(self):
        K = 2
        m = unbiased_proxy_model(K, seed=10, figure="fig5a")
        model = identified(m, K, design="auxiliary")
        labeled = relabel_unbiased(model, RelabelRule("mean", "unbiased"))
        y = labeled.base.y_given_wx.target.level_values()
        for w in range(K):
            for x1 in (0, 1):
                t = confounder_effects(labeled, x1, w)
                got = float(y @ t.values.sum(axis=1))
                assert abs(got - oracle_clamp_xw_mean(m, x1, w)) < 1e-7

    def test_treatment_margin_is_factual_law(self):
        m = unbiased_proxy_model(2, seed=11)
        model = identified(m, 2)
        t = confounder_effects(model, 1, 0)
        joint = observed_joint(m)
        from triproxy.prob import marginalize
        fx = marginalize(joint, set(joint.names) - {"X"}).values
        np.testing.assert_allclose(t.values.sum(axis=0), fx, atol=1e-7)
