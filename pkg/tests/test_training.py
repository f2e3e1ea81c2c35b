"""Optimizer, scheduler, early stopping, batching, and the fit loop."""

import math

import numpy as np
import pytest

from dvme.errors import NumericError, ParameterError
from dvme.model import ProbeModel
from dvme.training import (
    AdamState,
    EarlyStopper,
    PlateauScheduler,
    TrainConfig,
    TrainHistory,
    adam_step,
    fit,
    make_batches,
    monitor_score,
)


class TestAdam:
    def test_zero_gradient_from_fresh_state_leaves_params_unchanged(self):
        params = {"w": np.array([1.0, -2.0])}
        grads = {"w": np.zeros(2)}
        state = AdamState.initialize(params)
        for _ in range(3):
            params, state = adam_step(params, grads, state, lr=1e-3)
        assert np.array_equal(params["w"], np.array([1.0, -2.0]))

    def test_moments_decay_geometrically_under_zero_gradients(self):
        params = {"w": np.array([0.0])}
        state = AdamState.initialize(params)
        params, state = adam_step(params, {"w": np.array([1.0])}, state, lr=1e-3)
        m1 = state.m["w"].copy()
        params, state = adam_step(params, {"w": np.array([0.0])}, state, lr=1e-3)
        assert np.allclose(state.m["w"], 0.9 * m1)

    def test_single_step_matches_hand_evaluated_update(self):
        # theta=0, g=1, lr=1e-3, t=1: m_hat=1, v_hat=1 -> theta = -lr/(1+eps)
        params, _ = adam_step(
            {"w": np.array([0.0])},
            {"w": np.array([1.0])},
            AdamState.initialize({"w": np.array([0.0])}),
            lr=1e-3,
        )
        expected = -1e-3 / (1.0 + 1e-8)
        assert abs(params["w"][0] - expected) < 1e-12
        assert abs(params["w"][0] + 1e-3) < 1e-8

    def test_converges_on_quadratic(self):
        # Frozen oracle: standard Adam at lr=1e-3 first reaches |t-3| < 0.01
        # at step 5791 (verified independently against torch.optim.Adam).
        params = {"t": np.array([0.0])}
        state = AdamState.initialize(params)
        first_hit = None
        for step in range(1, 6001):
            grads = {"t": 2 * (params["t"] - 3.0)}
            params, state = adam_step(params, grads, state, lr=1e-3)
            if first_hit is None and abs(params["t"][0] - 3.0) < 0.01:
                first_hit = step
                break
        assert first_hit == 5791

    def test_non_finite_gradient_aborts_with_tensor_name(self):
        params = {"bad": np.array([0.0])}
        with pytest.raises(NumericError, match="bad"):
            adam_step(params, {"bad": np.array([np.nan])}, AdamState.initialize(params), 1e-3)


class TestScheduler:
    def test_improving_scores_keep_lr(self):
        sched = PlateauScheduler(1e-3)
        for score in (0.5, 0.6, 0.7):
            lr = sched.step(score)
        assert lr == 1e-3

    def test_reduction_fires_at_fifth_consecutive_non_improvement(self):
        sched = PlateauScheduler(1e-3)
        sched.step(0.7)
        lrs = [sched.step(0.69) for _ in range(6)]
        assert lrs[:4] == [1e-3] * 4
        assert lrs[4] == pytest.approx(1e-4)  # fires at the 5th
        assert lrs[5] == pytest.approx(1e-4)  # counter was reset by the cut

    def test_two_plateaus_reach_one_percent_of_initial(self):
        sched = PlateauScheduler(1e-3)
        sched.step(0.7)
        for _ in range(10):
            sched.step(0.69)
        assert sched.lr == pytest.approx(1e-5)

    def test_equal_score_is_not_an_improvement(self):
        sched = PlateauScheduler(1e-3, patience=2)
        sched.step(0.5)
        sched.step(0.5)
        lr = sched.step(0.5)
        assert lr == pytest.approx(1e-4)


class TestEarlyStop:
    def test_monotone_improvement_runs_to_max_epochs(self):
        stopper = EarlyStopper(patience=10, min_epochs=30, max_epochs=50)
        stops = [stopper.step(epoch / 100) for epoch in range(1, 51)]
        assert stops == [False] * 49 + [True]

    def test_flat_scores_stop_at_min_epochs_clamp(self):
        stopper = EarlyStopper(patience=10, min_epochs=30, max_epochs=50)
        epochs_run = 0
        for _ in range(50):
            epochs_run += 1
            if stopper.step(0.5):
                break
        assert epochs_run == 30

    def test_patience_window_resets_on_improvement(self):
        stopper = EarlyStopper(patience=3, min_epochs=1, max_epochs=100)
        for score in (0.5, 0.4, 0.4, 0.6):  # reset at the 0.6
            assert not stopper.step(score)
        assert not stopper.step(0.5)
        assert not stopper.step(0.5)
        assert stopper.step(0.5)  # third bad epoch after the reset


class TestBatches:
    def test_small_dataset_is_one_short_batch(self):
        batches = make_batches(10, 64, rng=np.random.default_rng(0))
        assert len(batches) == 1 and len(batches[0]) == 10

    def test_plain_batches_partition_the_dataset(self):
        batches = make_batches(100, 16, rng=np.random.default_rng(1))
        flat = np.sort(np.concatenate(batches))
        assert np.array_equal(flat, np.arange(100))
        assert [len(b) for b in batches] == [16, 16, 16, 16, 16, 16, 4]

    def test_oversampling_balanced_labels_is_near_uniform(self):
        rng = np.random.default_rng(2)
        labels = np.array([0] * 500 + [1] * 500)
        counts = np.zeros(2)
        draws = 0
        while draws < 100_000:
            for batch in make_batches(1000, 256, labels, oversample=True, rng=rng):
                counts += np.bincount(labels[batch], minlength=2)
                draws += len(batch)
        share = counts / counts.sum()
        assert np.abs(share - 0.5).max() < 0.05 * 0.5 + 1e-9  # within 5% of uniform

    def test_oversampling_lifts_minority_to_half(self):
        rng = np.random.default_rng(3)
        labels = np.array([0] * 900 + [1] * 100)
        minority = 0
        total = 0
        while total < 100_000:
            for batch in make_batches(1000, 500, labels, oversample=True, rng=rng):
                minority += int((labels[batch] == 1).sum())
                total += len(batch)
        assert abs(minority / total - 0.5) < 0.02

    def test_empty_dataset_is_rejected(self):
        with pytest.raises(ParameterError):
            make_batches(0, 8, rng=np.random.default_rng(0))


class TestConfig:
    def test_defaults_match_published_settings(self):
        config = TrainConfig()
        assert config.initial_lr == 1e-3
        assert config.batch_size == 64
        assert (config.min_epochs, config.max_epochs) == (30, 50)
        assert config.early_stop_patience == 10
        assert config.scheduler_patience == 5
        assert config.scheduler_factor == 0.1

    def test_rejects_bad_factor(self):
        with pytest.raises(ParameterError):
            TrainConfig(scheduler_factor=1.5)

    def test_rejects_inverted_epoch_bounds(self):
        with pytest.raises(ParameterError):
            TrainConfig(min_epochs=10, max_epochs=5)


def separable_data(rng, n=120, dim=6):
    half = n // 2
    x = np.concatenate(
        [rng.standard_normal((half, dim)) + 2.5, rng.standard_normal((half, dim)) - 2.5]
    ).astype(np.float32)
    labels = np.array([1] * half + [0] * half)
    shuffle = rng.permutation(n)
    return x[shuffle], labels[shuffle]


FAST = dict(min_epochs=2, max_epochs=8, batch_size=32, seed=5, initial_lr=0.05)


class TestFit:
    def test_separable_probe_reaches_high_auc(self, rng):
        x, labels = separable_data(rng)
        config = TrainConfig(**FAST)
        result = fit(ProbeModel(6, 2), x[:80], labels[:80], x[80:], labels[80:], config)
        assert max(r.val_score for r in result.history.records) >= 0.99

    def test_same_seed_gives_identical_history_and_params(self, rng):
        x, labels = separable_data(rng)
        config = TrainConfig(**FAST)
        first = fit(ProbeModel(6, 2), x[:80], labels[:80], x[80:], labels[80:], config)
        second = fit(ProbeModel(6, 2), x[:80], labels[:80], x[80:], labels[80:], config)
        assert first.history == second.history
        assert all(np.array_equal(first.params[k], second.params[k]) for k in first.params)

    def test_lr_sequence_is_non_increasing(self, rng):
        x, labels = separable_data(rng)
        config = TrainConfig(**FAST)
        result = fit(ProbeModel(6, 2), x[:80], labels[:80], x[80:], labels[80:], config)
        lrs = [r.lr for r in result.history.records]
        assert all(b <= a for a, b in zip(lrs, lrs[1:]))

    def test_returned_params_are_the_argmax_epoch(self, rng):
        x, labels = separable_data(rng)
        config = TrainConfig(**FAST)
        result = fit(ProbeModel(6, 2), x[:80], labels[:80], x[80:], labels[80:], config)
        best = max(r.val_score for r in result.history.records)
        first_best = next(r.epoch for r in result.history.records if r.val_score == best)
        assert result.history.best_epoch == first_best

    def test_loss_strictly_decreases_over_first_ten_steps(self, rng):
        x, labels = separable_data(rng, n=64)
        model = ProbeModel(6, 2)
        params = model.init_params(seed=0)
        state = AdamState.initialize(params)
        losses = []
        for _ in range(10):
            loss, grads = model.loss_and_grads(params, x, labels)
            losses.append(loss)
            params, state = adam_step(params, grads, state, lr=1e-3)
        assert all(b < a for a, b in zip(losses, losses[1:]))

    def test_non_finite_loss_aborts_with_history(self, rng):
        x, labels = separable_data(rng, n=40)
        x[0, 0] = np.nan  # poisons the first batch's loss
        config = TrainConfig(**FAST)
        with pytest.raises(NumericError) as excinfo:
            fit(ProbeModel(6, 2), x[:30], labels[:30], x[30:], labels[30:], config)
        assert isinstance(excinfo.value.history, TrainHistory)
        assert excinfo.value.history.stop_reason == "aborted"

    def test_history_table_has_fixed_columns(self, rng):
        x, labels = separable_data(rng)
        config = TrainConfig(**FAST)
        result = fit(ProbeModel(6, 2), x[:80], labels[:80], x[80:], labels[80:], config)
        table = result.history.to_table().splitlines()
        assert table[0] == "epoch loss val_score lr"
        first = table[1].split()
        assert first[0] == "1"
        assert float(first[3]) == config.initial_lr


class TestMonitor:
    def test_binary_auc_uses_positive_column(self):
        probs = np.array([[0.9, 0.1], [0.2, 0.8], [0.7, 0.3], [0.4, 0.6]])
        labels = np.array([0, 1, 0, 1])
        assert monitor_score(labels, probs, "auc") == 1.0

    def test_kappa_monitor_uses_argmax(self):
        probs = np.array([[0.9, 0.1], [0.1, 0.9]])
        assert monitor_score(np.array([0, 1]), probs, "kappa") == 1.0

    def test_unknown_metric(self):
        with pytest.raises(ParameterError):
            monitor_score(np.array([0, 1]), np.eye(2), "accuracy")
