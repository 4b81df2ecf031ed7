import numpy as np
import pytest

from selcls.datasets import MixtureSpec, generate_mixture
from selcls.errors import ConfigurationError, NumericFault
from selcls.nn import build_network
from selcls.objectives import ObjectiveConfig
from selcls.training import (
    TrainConfig,
    grid_cell_name,
    lr_at_epoch,
    sgd_momentum_step,
    train,
    train_method_grid,
)


def small_spec(seed=0, separation=6.0, noise=0.0):
    return MixtureSpec(
        n_classes=2, dim=2,
        means=np.array([[-separation / 2, 0.0], [separation / 2, 0.0]]),
        variances=np.array([1.0, 1.0]), priors=np.array([0.5, 0.5]),
        label_noise=noise, n_train=300, n_val=80, n_test=80, seed=seed)


def quick_cfg(kind="CE", epochs=5, seed=0, **obj_kw):
    return TrainConfig(epochs=epochs, batch_size=32, lr0=0.1, momentum=0.9,
                       decay_factor=0.5, decay_every=25, seed=seed,
                       objective=ObjectiveConfig(kind=kind, **obj_kw))


class TestLrSchedule:
    def test_initial(self):
        assert lr_at_epoch(quick_cfg(), 0) == 0.1

    def test_one_decay_step(self):
        assert lr_at_epoch(quick_cfg(), 25) == 0.05

    def test_two_decay_steps(self):
        assert lr_at_epoch(quick_cfg(), 50) == 0.025

    def test_within_period_constant(self):
        cfg = quick_cfg()
        assert lr_at_epoch(cfg, 24) == 0.1
        assert lr_at_epoch(cfg, 26) == 0.05


class TestSgdMomentumStep:
    def test_single_application(self):
        theta = [np.array([1.0])]
        v = [np.array([0.0])]
        g = [np.array([1.0])]
        sgd_momentum_step(theta, g, v, lr=0.1, momentum=0.9)
        assert v[0][0] == 1.0
        assert theta[0][0] == pytest.approx(0.9)

    def test_zero_momentum_is_vanilla_sgd(self):
        theta = [np.array([2.0])]
        v = [np.array([5.0])]
        g = [np.array([0.5])]
        sgd_momentum_step(theta, g, v, lr=0.2, momentum=0.0)
        assert theta[0][0] == pytest.approx(2.0 - 0.2 * 0.5)

    def test_zero_gradient_velocity_decays_geometrically(self):
        theta = [np.array([0.0])]
        v = [np.array([1.0])]
        g = [np.array([0.0])]
        drift = 0.0
        for step in range(1, 6):
            sgd_momentum_step(theta, g, v, lr=0.1, momentum=0.5)
            assert v[0][0] == pytest.approx(0.5 ** step)
            drift -= 0.1 * 0.5 ** step
            assert theta[0][0] == pytest.approx(drift)

    def test_nonfinite_gradient_faults(self):
        with pytest.raises(NumericFault):
            sgd_momentum_step([np.array([0.0])], [np.array([np.nan])],
                              [np.array([0.0])], 0.1, 0.9)


class TestTrain:
    def test_zero_epochs_noop(self):
        train_ds, val_ds, _ = generate_mixture(small_spec())
        net = build_network(2, (8,), 2, "plain", seed=0)
        before = [a.copy() for a in net.param_arrays()]
        report, _ = train(net, train_ds, val_ds, quick_cfg(epochs=0))
        assert report.epochs == []
        for a, b in zip(net.param_arrays(), before):
            assert np.array_equal(a, b)

    def test_separable_blobs_reach_high_accuracy(self):
        train_ds, val_ds, _ = generate_mixture(small_spec(separation=6.0))
        net = build_network(2, (16,), 2, "plain", seed=1)
        report, _ = train(net, train_ds, val_ds, quick_cfg(epochs=50, seed=1))
        assert report.epochs[-1].train_accuracy >= 0.99

    def test_lr_sequence_matches_schedule(self):
        train_ds, val_ds, _ = generate_mixture(small_spec())
        cfg = quick_cfg(epochs=4)
        cfg.decay_every = 2
        net = build_network(2, (4,), 2, "plain", seed=0)
        report, _ = train(net, train_ds, val_ds, cfg)
        assert [e.lr for e in report.epochs] == \
            [lr_at_epoch(cfg, e) for e in range(4)]

    def test_bit_identical_reruns(self):
        train_ds, val_ds, _ = generate_mixture(small_spec())

        def run():
            net = build_network(2, (8, 8), 2, "abstain", seed=5)
            cfg = quick_cfg(kind="SAT", epochs=6, seed=5,
                            sat_pretrain_epochs=2)
            report, _ = train(net, train_ds, val_ds, cfg)
            return net, report

        n1, r1 = run()
        n2, r2 = run()
        for a, b in zip(n1.param_arrays(), n2.param_arrays()):
            assert np.array_equal(a, b)
        assert [e.train_loss for e in r1.epochs] == \
            [e.train_loss for e in r2.epochs]

    def test_objective_head_mismatch(self):
        train_ds, val_ds, _ = generate_mixture(small_spec())
        net = build_network(2, (4,), 2, "plain", seed=0)
        with pytest.raises(ConfigurationError):
            train(net, train_ds, val_ds, quick_cfg(kind="SAT"))

    def test_divergence_aborts_with_context(self):
        train_ds, val_ds, _ = generate_mixture(small_spec())
        net = build_network(2, (8,), 2, "plain", seed=0)
        cfg = quick_cfg(epochs=3)
        cfg.lr0 = 1e9  # guaranteed blow-up
        with pytest.raises(NumericFault, match="epoch"):
            train(net, train_ds, val_ds, cfg)

    def test_sat_targets_untouched_during_pretrain(self):
        train_ds, val_ds, _ = generate_mixture(small_spec(noise=0.2))
        net = build_network(2, (8,), 2, "abstain", seed=2)
        cfg = quick_cfg(kind="SAT", epochs=3, seed=2, sat_pretrain_epochs=3)
        _, store = train(net, train_ds, val_ds, cfg)
        onehot = np.zeros((len(train_ds), 3))
        onehot[np.arange(len(train_ds)), train_ds.labels] = 1.0
        assert np.array_equal(store.targets, onehot)

    def test_sat_targets_move_after_pretrain(self):
        train_ds, val_ds, _ = generate_mixture(small_spec(noise=0.2))
        net = build_network(2, (8,), 2, "abstain", seed=2)
        cfg = quick_cfg(kind="SAT", epochs=4, seed=2, sat_pretrain_epochs=2)
        _, store = train(net, train_ds, val_ds, cfg)
        assert np.any(store.targets[:, -1] > 0)
        assert np.max(np.abs(store.targets.sum(axis=1) - 1.0)) < 1e-9

    def test_sat_momentum_one_identical_to_ce_trajectory(self):
        # target freezing makes the moving-target loss literally the
        # (C+1)-way cross entropy, so the trajectories must agree bitwise
        train_ds, val_ds, _ = generate_mixture(small_spec(noise=0.1, seed=3))

        def run(kind, **kw):
            net = build_network(2, (8, 8), 2, "abstain", seed=3)
            cfg = quick_cfg(kind=kind, epochs=20, seed=3, **kw)
            train(net, train_ds, val_ds, cfg)
            return net

        sat_net = run("SAT", sat_momentum=1.0, sat_pretrain_epochs=0)
        # plain (C+1)-way CE: run the SAT objective while it is still in
        # its pre-training phase, which is cross entropy by construction
        ce_net = run("SAT", sat_pretrain_epochs=10_000)
        worst = max(np.max(np.abs(a - b))
                    for a, b in zip(sat_net.param_arrays(),
                                    ce_net.param_arrays()))
        assert worst < 1e-10

    def test_selectivenet_trains(self):
        train_ds, val_ds, _ = generate_mixture(small_spec(noise=0.1))
        net = build_network(2, (8, 8), 2, "selectivenet", seed=4)
        cfg = quick_cfg(kind="SelectiveNet", epochs=8, seed=4, c_target=0.8)
        report, _ = train(net, train_ds, val_ds, cfg)
        assert report.epochs[-1].val_accuracy > 0.6


class TestMethodGrid:
    def run_grid(self, methods, coverages, seeds, tmp_path):
        def make_data(seed):
            return generate_mixture(small_spec(seed=seed, noise=0.1))

        def make_net(objective, seed):
            return build_network(2, (8,), 2, objective.required_head(),
                                 seed=seed)

        def make_cfg(method, coverage, seed):
            kw = {"c_target": coverage} if coverage is not None else {}
            return quick_cfg(kind=method, epochs=2, seed=seed,
                             sat_pretrain_epochs=1, **kw)

        return train_method_grid(methods, coverages, seeds, make_data,
                                 make_net, make_cfg, tmp_path)

    def test_single_cell(self, tmp_path):
        cells = self.run_grid(["CE"], [0.9], [0], tmp_path)
        assert len(cells) == 1
        assert cells[0]["status"] == "ok"
        assert (tmp_path / f"{cells[0]['name']}.checkpoint.json").exists()

    def test_sat_trains_once_for_all_coverages(self, tmp_path):
        cells = self.run_grid(["SAT"], [0.9, 0.7, 0.5], [0], tmp_path)
        assert len(cells) == 1
        assert cells[0]["coverage"] is None

    def test_selectivenet_trains_per_coverage(self, tmp_path):
        cells = self.run_grid(["SelectiveNet"], [0.9, 0.7, 0.5], [0], tmp_path)
        assert len(cells) == 3
        assert sorted(c["coverage"] for c in cells) == [0.5, 0.7, 0.9]

    def test_partial_failure_recorded_grid_continues(self, tmp_path):
        def make_data(seed):
            return generate_mixture(small_spec(seed=seed))

        def make_net(objective, seed):
            return build_network(2, (8,), 2, objective.required_head(),
                                 seed=seed)

        def make_cfg(method, coverage, seed):
            cfg = quick_cfg(kind=method, epochs=1, seed=seed)
            if method == "DG":
                cfg.objective.o = 50.0  # inadmissible payoff
            return cfg

        cells = train_method_grid(["DG", "CE"], [0.9], [0], make_data,
                                  make_net, make_cfg, tmp_path)
        assert [c["status"] for c in cells] == ["failed", "ok"]
        assert "o=50" in cells[0]["error"]


def test_grid_cell_names_are_filesystem_safe():
    assert grid_cell_name("SAT+EM", 0.7, 3) == "SAT_EM_c0.7_s3"
    assert grid_cell_name("CE", None, 0) == "CE_all_s0"
