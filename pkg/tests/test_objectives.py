import numpy as np
import pytest

from selcls.errors import ConfigurationError, ProtocolError
from selcls.nn import (
    finite_difference_gradient,
    max_relative_error,
    network_backward,
    network_forward,
    stable_softmax,
)
from selcls.objectives import (
    ObjectiveConfig,
    SatTargetStore,
    cross_entropy,
    deep_gamblers,
    em_regularized,
    objective_dispatch,
    predictive_entropy,
    sat_loss,
    sat_update_targets,
    selectivenet_loss,
)

from conftest import random_batch, random_net

LN2 = 0.69314718055994531


def logits_for(p):
    """Logits whose softmax is p (up to a shift)."""
    return np.log(np.asarray(p, dtype=np.float64))


class TestCrossEntropy:
    def test_symmetric_binary(self):
        loss, d = cross_entropy([0.0, 0.0], 0)
        assert abs(loss - LN2) < 1e-12
        assert np.allclose(d, [-0.5, 0.5])

    def test_confident_correct(self):
        loss, d = cross_entropy([200.0, 0.0, 0.0], 0)
        assert loss < 1e-12
        assert np.max(np.abs(d)) < 1e-12

    def test_frozen_value(self):
        # -ln softmax([1,2,3])[2], evaluated at 30 digits
        loss, _ = cross_entropy([1.0, 2.0, 3.0], 2)
        assert abs(loss - 0.4076059644443803) < 1e-14

    def test_extreme_logits_never_infinite(self):
        loss, d = cross_entropy([-5000.0, 5000.0], 0)
        assert np.isfinite(loss) and loss == pytest.approx(10000.0)
        assert np.all(np.isfinite(d))

    def test_label_out_of_range(self):
        with pytest.raises(ConfigurationError):
            cross_entropy([0.0, 0.0], 2)


class TestPredictiveEntropy:
    def test_uniform_is_ln_k(self):
        for k in (2, 3, 8):
            H, _ = predictive_entropy(np.zeros(k))
            assert abs(H - np.log(k)) < 1e-12

    def test_one_hot_is_zero(self):
        H, _ = predictive_entropy([300.0, 0.0, 0.0])
        assert abs(H) < 1e-12

    def test_frozen_value(self):
        H, _ = predictive_entropy(logits_for([0.7, 0.2, 0.1]))
        assert abs(H - 0.80181855254333731) < 1e-14

    def test_bounds_and_max_at_uniform(self, rng):
        for _ in range(50):
            k = int(rng.integers(2, 9))
            z = rng.normal(scale=3, size=k)
            H, _ = predictive_entropy(z)
            assert -1e-12 <= H <= np.log(k) + 1e-12
            # perturbing away from uniform can only lower the entropy
            Hu, _ = predictive_entropy(np.zeros(k))
            assert H <= Hu + 1e-12

    def test_gradient_zero_at_uniform(self):
        _, d = predictive_entropy(np.zeros(5))
        assert np.max(np.abs(d)) < 1e-12


class TestEmRegularized:
    def test_beta_zero_identity(self, rng):
        z = rng.normal(size=4)
        base_loss, base_d = cross_entropy(z, 1)
        loss, d = em_regularized(base_loss, base_d, z, 0.0)
        assert loss == base_loss
        assert np.array_equal(d, base_d)

    def test_frozen_binary_uniform(self):
        # ln 2 + 0.01 * ln 2
        z = np.zeros(2)
        base_loss, base_d = cross_entropy(z, 0)
        loss, _ = em_regularized(base_loss, base_d, z, 0.01)
        assert abs(loss - 0.70007865236554476) < 1e-14

    def test_linearity_in_beta(self, rng):
        for _ in range(10):
            z = rng.normal(scale=2, size=5)
            b1, b2 = rng.uniform(0.001, 0.5, size=2)
            base = cross_entropy(z, 2)
            once_loss, once_d = em_regularized(*base, z, b1 + b2)
            step1 = em_regularized(*base, z, b1)
            step2_loss, step2_d = em_regularized(*step1, z, b2)
            assert abs(once_loss - step2_loss) < 1e-12
            assert np.max(np.abs(once_d - step2_d)) < 1e-12


class TestDeepGamblers:
    def test_frozen_value(self):
        # -ln(0.6 + 0.1/2)
        loss, _ = deep_gamblers(logits_for([0.6, 0.3, 0.1]), 0, o=2.0)
        assert abs(loss - 0.43078291609245426) < 1e-12

    def test_zero_abstain_mass_equals_ce(self, rng):
        z = np.array([1.0, -0.5, -2000.0])
        dg, _ = deep_gamblers(z, 0, o=2.0)
        ce, _ = cross_entropy(z, 0)
        assert abs(dg - ce) < 1e-12

    def test_large_o_limit_matches_ce(self, rng):
        # gap is log1p(p_abstain / (o * p_true)) <= 1/(o * p_true), so keep
        # the logits at unit scale to bound p_true away from zero
        for _ in range(20):
            z = rng.normal(scale=1, size=(6, 4))
            y = rng.integers(0, 3, size=6)
            dg, _ = deep_gamblers(z, y, o=1e9, limit_test=True)
            ce, _ = cross_entropy(z, y)
            assert np.max(np.abs(dg - ce)) < 1e-6

    def test_monotone_in_o(self, rng):
        # smaller o adds more abstain mass inside the log, shrinking the loss
        for _ in range(10):
            z = rng.normal(scale=2, size=5)
            y = int(rng.integers(0, 4))
            grid = [1.1, 1.5, 2.0, 3.0, 4.0]
            losses = [deep_gamblers(z, y, o=o)[0] for o in grid]
            assert all(a < b for a, b in zip(losses, losses[1:]))

    def test_o_constraints(self):
        z = np.zeros(4)
        with pytest.raises(ConfigurationError, match="always-abstain"):
            deep_gamblers(z, 0, o=1.0)
        with pytest.raises(ConfigurationError, match="limit-test"):
            deep_gamblers(z, 0, o=5.0)
        deep_gamblers(z, 0, o=5.0, limit_test=True)


class TestSatLoss:
    def test_one_hot_target_reduces_to_ce(self, rng):
        z = rng.normal(size=5)
        t = np.zeros(5)
        t[2] = 1.0
        loss, d = sat_loss(z, t, 2)
        ce, dce = cross_entropy(z, 2)
        assert abs(loss - ce) < 1e-12
        assert np.max(np.abs(d - dce)) < 1e-12

    def test_frozen_value(self):
        # -(0.9 ln 0.6 + 0.1 ln 0.1)
        p = [0.6, 0.3, 0.1]
        t = np.array([0.9, 0.05, 0.05])
        loss, _ = sat_loss(logits_for(p), t, 0)
        assert abs(loss - 0.69000157068879618) < 1e-12

    def test_zero_target_pure_abstention(self):
        p = [0.6, 0.3, 0.1]
        t = np.array([0.0, 0.5, 0.5])
        loss, _ = sat_loss(logits_for(p), t, 0)
        assert abs(loss - (-np.log(0.1))) < 1e-12


class TestSatTargetStore:
    def test_initial_one_hot(self):
        store = SatTargetStore.initialize([0, 2, 1], n_classes=3)
        expected = np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0]],
                            dtype=float)
        assert np.array_equal(store.targets, expected)

    def test_stated_update_rule(self):
        store = SatTargetStore.initialize([0], n_classes=2, momentum=0.9,
                                          pretrain_epochs=0)
        sat_update_targets(store, [0], [[0.8, 0.1, 0.1]], epoch=0)
        assert np.allclose(store.targets[0], [0.98, 0.01, 0.01])

    def test_update_during_pretrain_rejected(self):
        store = SatTargetStore.initialize([0], n_classes=2, pretrain_epochs=5)
        with pytest.raises(ProtocolError):
            sat_update_targets(store, [0], [[0.8, 0.1, 0.1]], epoch=3)

    def test_momentum_one_freezes_targets(self):
        store = SatTargetStore.initialize([0], n_classes=2, momentum=1.0,
                                          pretrain_epochs=0)
        before = store.targets.copy()
        sat_update_targets(store, [0], [[0.2, 0.3, 0.5]], epoch=0)
        assert np.array_equal(store.targets, before)

    def test_momentum_out_of_range(self):
        with pytest.raises(ConfigurationError):
            SatTargetStore.initialize([0], n_classes=2, momentum=0.0)
        with pytest.raises(ConfigurationError):
            SatTargetStore.initialize([0], n_classes=2, momentum=1.1)

    def test_geometric_convergence(self):
        store = SatTargetStore.initialize([0], n_classes=2, momentum=0.9,
                                          pretrain_epochs=0)
        p = np.array([[0.5, 0.3, 0.2]])
        gap0 = np.max(np.abs(store.targets[0] - p[0]))
        for step in range(1, 25):
            sat_update_targets(store, [0], p, epoch=0)
            gap = np.max(np.abs(store.targets[0] - p[0]))
            assert abs(gap - 0.9 ** step * gap0) < 1e-12

    def test_simplex_preserved(self, rng):
        store = SatTargetStore.initialize(rng.integers(0, 4, size=20),
                                          n_classes=4, momentum=0.7,
                                          pretrain_epochs=0)
        for _ in range(60):
            ids = rng.integers(0, 20, size=8)
            raw = rng.random((8, 5))
            p = raw / raw.sum(axis=1, keepdims=True)
            sat_update_targets(store, ids, p, epoch=0)
        assert np.all(store.targets >= 0)
        assert np.max(np.abs(store.targets.sum(axis=1) - 1.0)) < 1e-9

    def test_untouched_rows_unchanged(self):
        store = SatTargetStore.initialize([0, 1], n_classes=2,
                                          pretrain_epochs=0)
        before = store.targets[1].copy()
        sat_update_targets(store, [0], [[0.5, 0.25, 0.25]], epoch=0)
        assert np.array_equal(store.targets[1], before)


def sn_cfg(**kw):
    defaults = dict(kind="SelectiveNet", lam=32.0, alpha_mix=0.5, c_target=0.8)
    defaults.update(kw)
    return ObjectiveConfig(**defaults)


class TestSelectiveNetLoss:
    def test_equal_weights_give_plain_mean_ce(self, rng):
        m, C = 6, 3
        f = rng.normal(size=(m, C))
        h = rng.normal(size=(m, C))
        y = rng.integers(0, C, size=m)
        g = np.full(m, 0.37)
        res = selectivenet_loss(f, g, h, y, sn_cfg())
        ce, _ = cross_entropy(f, y)
        assert abs(res.selective_term - ce.mean()) < 1e-9

    def test_coverage_penalty_undershoot(self):
        f = np.zeros((10, 2))
        h = np.zeros((10, 2))
        y = np.zeros(10, dtype=int)
        res = selectivenet_loss(f, np.full(10, 0.7), h, y,
                                sn_cfg(c_target=0.8))
        assert abs(res.coverage_term - 0.01) < 1e-12

    def test_coverage_penalty_overshoot_hinged(self):
        f = np.zeros((10, 2))
        h = np.zeros((10, 2))
        y = np.zeros(10, dtype=int)
        res = selectivenet_loss(f, np.full(10, 0.9), h, y,
                                sn_cfg(c_target=0.8))
        assert res.coverage_term == 0.0
        sym = selectivenet_loss(f, np.full(10, 0.9), h, y,
                                sn_cfg(c_target=0.8,
                                       coverage_penalty="symmetric"))
        assert abs(sym.coverage_term - 0.01) < 1e-12

    def test_gradient_through_g_matches_fd(self, rng):
        # the denominator coupling is the part that is easy to get wrong
        m, C = 5, 3
        f = rng.normal(size=(m, C))
        h = rng.normal(size=(m, C))
        y = rng.integers(0, C, size=m)
        g = rng.uniform(0.2, 0.9, size=m)
        cfg = sn_cfg(c_target=0.9)  # undershoot, so the hinge is active
        res = selectivenet_loss(f, g, h, y, cfg)
        eps = 1e-7
        for i in range(m):
            gp, gm = g.copy(), g.copy()
            gp[i] += eps
            gm[i] -= eps
            fd = (selectivenet_loss(f, gp, h, y, cfg).loss
                  - selectivenet_loss(f, gm, h, y, cfg).loss) / (2 * eps)
            assert abs(fd - res.d_g[i]) < 1e-6

    def test_invalid_g_rejected(self, rng):
        f = rng.normal(size=(3, 2))
        with pytest.raises(ConfigurationError):
            selectivenet_loss(f, np.array([0.5, 1.0, 0.2]), f,
                              np.zeros(3, dtype=int), sn_cfg())


class TestDispatch:
    def test_ce_equals_mean_cross_entropy(self, rng):
        z = rng.normal(size=(7, 3))
        y = rng.integers(0, 3, size=7)
        res = objective_dispatch(ObjectiveConfig(kind="CE"), {"logits": z}, y,
                                 n_classes=3)
        ce, d = cross_entropy(z, y)
        assert abs(res.loss - ce.mean()) < 1e-12
        assert np.allclose(res.dlogits["logits"], d / 7)

    def test_sat_pretrain_equals_ce(self, rng):
        z = rng.normal(size=(4, 4))  # C=3 plus abstain
        y = rng.integers(0, 3, size=4)
        store = SatTargetStore.initialize(y, 3, pretrain_epochs=5)
        cfg = ObjectiveConfig(kind="SAT", sat_pretrain_epochs=5)
        res = objective_dispatch(cfg, {"logits": z}, y, n_classes=3,
                                 store=store, sample_ids=np.arange(4), epoch=2)
        ce, _ = cross_entropy(z, y)
        assert abs(res.loss - ce.mean()) < 1e-12

    def test_dg_em_beta_zero_equals_dg(self, rng):
        z = rng.normal(size=(5, 4))
        y = rng.integers(0, 3, size=5)
        plain = objective_dispatch(ObjectiveConfig(kind="DG", o=2.0),
                                   {"logits": z}, y, n_classes=3)
        em = objective_dispatch(ObjectiveConfig(kind="DG+EM", o=2.0, beta=0.0),
                                {"logits": z}, y, n_classes=3)
        assert em.loss == plain.loss
        assert np.array_equal(em.dlogits["logits"], plain.dlogits["logits"])

    def test_em_kind_with_zero_beta_fails_validation(self):
        with pytest.raises(ConfigurationError):
            ObjectiveConfig(kind="DG+EM", o=2.0, beta=0.0).validate()

    def test_head_mismatch_rejected(self, rng):
        z = rng.normal(size=(3, 3))
        y = np.zeros(3, dtype=int)
        with pytest.raises(ConfigurationError):
            objective_dispatch(ObjectiveConfig(kind="DG", o=2.0),
                               {"logits": z}, y, n_classes=3)

    def test_default_o_for_two_classes_is_admissible(self):
        cfg = ObjectiveConfig(kind="DG")
        assert 1.0 < cfg.resolved_o(2) <= 2.0
        assert cfg.resolved_o(8) == 7.0


# ---------------------------------------------------------------------------
# end-to-end gradient checks: every objective through the network against
# the central-difference oracle (the full 20-case sweep runs in the
# acceptance suite; three cases per family here keep the unit run fast)
# ---------------------------------------------------------------------------

from selcls.gradcheck import TOLERANCE, check_objective, suite_objectives


@pytest.mark.parametrize("name,cfg", suite_objectives(),
                         ids=[n for n, _ in suite_objectives()])
def test_end_to_end_gradients(name, cfg):
    err = check_objective(cfg, n_cases=3, seed=7)
    assert err < TOLERANCE, f"{name}: rel err {err}"
