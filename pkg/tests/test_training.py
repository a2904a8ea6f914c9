"""Tests for gradient clipping, Adam, the plateau schedule, and the loop."""

import numpy as np
import pytest

from sepformer import tensor as T
from sepformer.config import ModelConfig, TrainConfig
from sepformer.data import synth_toy_bank
from sepformer.errors import TrainingDivergedError
from sepformer.model import SepFormerModel
from sepformer.tensor import Tensor
from sepformer.training import (
    DynamicMixtures,
    TrainState,
    adam_step,
    clip_gradients,
    evaluate_si_snri,
    fixed_training_set,
    lr_schedule_step,
    train,
    validation_set,
)

TOY_CFG = dict(
    n_filters=8, kernel_size=4, stride=2, chunk_size=4, n_repeats=1,
    n_intra_layers=1, n_inter_layers=1, n_heads=2, ffn_dim=16,
)


def param(values):
    p = Tensor(np.asarray(values, dtype=np.float64), requires_grad=True)
    return p


class TestClipGradients:
    def test_small_gradients_untouched(self):
        p = param([1.0, 1.0])
        p.grad = np.array([3.0, 4.0])  # norm 5 exactly
        assert clip_gradients([p], 5.0) == 1.0
        np.testing.assert_array_equal(p.grad, [3, 4])

    def test_norm_ten_scaled_to_five(self):
        p = param(np.zeros(4))
        p.grad = np.full(4, 5.0)  # norm 10
        scale = clip_gradients([p], 5.0)
        assert abs(scale - 0.5) < 1e-12
        assert abs(np.linalg.norm(p.grad) - 5.0) < 1e-12

    def test_post_clip_norm_bounded(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            params = [param(np.zeros(n)) for n in (3, 5, 7)]
            for p in params:
                p.grad = rng.standard_normal(p.shape) * rng.uniform(0, 10)
            clip_gradients(params, 5.0)
            total = np.sqrt(sum(np.sum(p.grad**2) for p in params))
            assert total <= 5.0 + 1e-9

    def test_none_grads_skipped(self):
        p, q = param([1.0]), param([1.0])
        p.grad = np.array([10.0])
        assert clip_gradients([p, q], 5.0) == 0.5


class TestAdamStep:
    def test_zero_grads_leave_parameters(self):
        p = param([1.0, 2.0])
        p.grad = np.zeros(2)
        state = TrainState()
        adam_step([("p", p)], state, lr=0.1)
        np.testing.assert_array_equal(p.data, [1, 2])

    def test_first_step_closed_form(self):
        # bias correction makes the first update exactly -lr * g/(|g|+eps)
        p = param([0.0])
        p.grad = np.array([1.0])
        state = TrainState()
        adam_step([("p", p)], state, lr=0.01)
        assert abs(p.data[0] + 0.01) < 1e-9

    def test_quadratic_bowl_converges(self):
        p = param([1.0])
        state = TrainState()
        for _ in range(200):
            p.grad = 2.0 * p.data  # d/dw of w^2
            adam_step([("p", p)], state, lr=0.1)
        assert abs(p.data[0]) < 0.1


class TestLrSchedule:
    def cfg(self, anneal=1, patience=3):
        return TrainConfig(anneal_start_epoch=anneal, plateau_patience=patience)

    def run_epochs(self, scores, anneal=1, patience=3, lr=1.0):
        config = self.cfg(anneal, patience)
        state = TrainState(lr=lr)
        history = []
        for epoch, score in enumerate(scores, start=1):
            state.epoch = epoch
            history.append(lr_schedule_step(state, score, config))
        return state, history

    def test_improving_every_epoch_keeps_lr(self):
        state, history = self.run_epochs([1.0, 2.0, 3.0, 4.0])
        assert history == [1.0] * 4

    def test_three_flat_epochs_halve_once(self):
        # epoch 1 improves over -inf; epochs 2-4 are the flat window
        state, history = self.run_epochs([5.0, 5.0, 5.0, 5.0])
        assert history == [1.0, 1.0, 1.0, 0.5]

    def test_two_flat_windows_quarter(self):
        state, history = self.run_epochs([5.0] * 7)
        assert history == [1.0, 1.0, 1.0, 0.5, 0.5, 0.5, 0.25]

    def test_no_annealing_before_start_epoch(self):
        state, history = self.run_epochs([5.0] * 6, anneal=100)
        assert history == [1.0] * 6

    def test_strict_improvement_required(self):
        # equal scores do not reset the plateau counter
        state, _ = self.run_epochs([5.0, 5.0, 5.0])
        assert state.epochs_since_improvement == 2
        state, _ = self.run_epochs([5.0, 5.0, 5.0, 5.0])
        assert state.epochs_since_improvement == 0  # reset by the halving


def build_toy(seed=0, seconds=0.25, n_bank=2):
    cfg = ModelConfig(**TOY_CFG)
    model = SepFormerModel(cfg, seed=seed)
    bank = synth_toy_bank(n_bank, int(seconds * 8000), rng=np.random.default_rng(seed))
    return model, bank


class TestTrainLoop:
    def test_zero_epochs_returns_initial_state(self, tmp_path):
        model, bank = build_toy()
        config = TrainConfig(max_epochs=0, steps_per_epoch=1, val_size=1)
        val = validation_set(bank, 2, 1, seed=0)
        state = train(model, fixed_training_set(bank, 2, 1, 0), val, config, tmp_path)
        assert state.step == 0
        assert (tmp_path / "metrics.csv").read_text().strip() == (
            "epoch,step,train_loss,val_si_snri_db,lr,wall_clock_s"
        )

    def test_metrics_and_checkpoint_written(self, tmp_path):
        model, bank = build_toy()
        config = TrainConfig(max_epochs=2, steps_per_epoch=2, val_size=2, lr=1e-3)
        train_set = fixed_training_set(bank, 2, 2, seed=1)
        val = validation_set(bank, 2, 2, seed=1)
        state = train(model, train_set, val, config, tmp_path)
        assert state.epoch == 2
        assert state.step == 4
        lines = (tmp_path / "metrics.csv").read_text().strip().splitlines()
        assert len(lines) == 3
        assert (tmp_path / "best.ckpt").exists()

    def test_deterministic_metrics_with_injected_clock(self, tmp_path):
        def run(where):
            model, bank = build_toy(seed=7)
            config = TrainConfig(max_epochs=2, steps_per_epoch=2, val_size=2, lr=1e-3, seed=7)
            counter = iter(range(10_000))
            train(
                model,
                fixed_training_set(bank, 2, 2, seed=7),
                validation_set(bank, 2, 2, seed=7),
                config,
                where,
                clock=lambda: float(next(counter)),
            )
            return (where / "metrics.csv").read_bytes(), (where / "best.ckpt").read_bytes()

        a = run(tmp_path / "a")
        b = run(tmp_path / "b")
        assert a[0] == b[0]
        assert a[1] == b[1]

    def test_learning_rate_column_tracks_schedule(self, tmp_path):
        model, bank = build_toy()
        config = TrainConfig(
            max_epochs=4, steps_per_epoch=1, val_size=1, lr=1e-3,
            anneal_start_epoch=1, plateau_patience=1,
        )
        train(model, fixed_training_set(bank, 2, 1, 0), validation_set(bank, 2, 1, 0),
              config, tmp_path)
        rows = (tmp_path / "metrics.csv").read_text().strip().splitlines()[1:]
        lrs = [float(r.split(",")[4]) for r in rows]
        assert all(b <= a for a, b in zip(lrs, lrs[1:]))
        for lr in lrs:
            k = np.log2(1e-3 / lr)
            assert abs(k - round(k)) < 1e-9

    def test_dynamic_mixtures_fresh_each_epoch(self):
        _, bank = build_toy(n_bank=3)
        feed = DynamicMixtures(bank, 2, per_epoch=2, base_seed=0)
        e1 = feed.epoch_samples(1)
        e2 = feed.epoch_samples(2)
        assert not np.array_equal(e1[0].mixture.samples, e2[0].mixture.samples)
        e1b = feed.epoch_samples(1)
        np.testing.assert_array_equal(e1[0].mixture.samples, e1b[0].mixture.samples)

    def test_nan_loss_aborts_with_diagnostic(self, tmp_path):
        model, bank = build_toy()
        model.decoder_weight.data[:] = np.nan
        config = TrainConfig(max_epochs=1, steps_per_epoch=1, val_size=1)
        T.set_debug_checks(False)  # let the NaN reach the loss check
        with pytest.raises(TrainingDivergedError, match="step 1"):
            train(model, fixed_training_set(bank, 2, 1, 0),
                  validation_set(bank, 2, 1, 0), config)

    def test_max_signal_len_truncates(self, tmp_path):
        model, bank = build_toy(seconds=0.5)
        config = TrainConfig(max_epochs=1, steps_per_epoch=1, val_size=1,
                             max_signal_len=600, lr=1e-3)
        state = train(model, fixed_training_set(bank, 2, 1, 0),
                      validation_set(bank, 2, 1, 0), config)
        assert state.step == 1

    def test_evaluate_si_snri_finite(self):
        model, bank = build_toy()
        val = validation_set(bank, 2, 3, seed=2)
        assert np.isfinite(evaluate_si_snri(model, val))
