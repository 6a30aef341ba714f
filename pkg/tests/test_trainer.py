import math

import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError

from core.base_module import Module
from core.config import TrainConfig
from core.diffusion import DiffusionClassifier
from core.errors import NonFiniteError, UsageError
from core.schedule import make_cosine
from core.tensor import Tensor
from core.trainer import AdamState, ReduceOnPlateau, adam_step, batch_indices, clip_gradients, fit
from core.training_state import TRAIN_LOG_COLUMNS, TrainingState
from data import Dataset, generate_synthetic
from networks import EpsilonNetwork, GuidanceClassifier
from networks.guidance import evaluate_guidance, guidance_loss, pretrain_guidance
from utils.metrics import compute

TARGET = np.array([1.0, -2.0, 0.5])


class Quadratic(Module):
    def __init__(self):
        super().__init__("quadratic")
        self.theta = Tensor(np.zeros(3), requires_grad=True, name='theta')


def quadratic_loss(model, batch, rng):
    diff = model.theta - Tensor(TARGET)
    return (diff * diff).sum()


def nan_loss(model, batch, rng):
    return model.theta.sum() * math.nan


def one_sample_set():
    return Dataset(np.zeros((1, 1, 2, 2)), [0], ['a', 'b'], require_all_classes=False)


def _param(value):
    return Tensor(np.array([value]), requires_grad=True)


class TestAdam:

    def test_zero_gradient_is_a_fixed_point(self):
        p = _param(0.7)
        state = AdamState([p], lr=0.1)
        adam_step(state, [p], [np.zeros(1)])
        assert p.data[0] == 0.7

    def test_constant_gradient_moves_by_lr(self):
        p = _param(0.0)
        state = AdamState([p], lr=0.01)
        for _ in range(200):
            before = p.data[0]
            adam_step(state, [p], [np.array([0.3])])
        assert before - p.data[0] == pytest.approx(0.01, rel=1e-6)

    def test_three_step_trace(self):
        lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
        p = _param(0.5)
        state = AdamState([p], lr=lr, beta1=b1, beta2=b2, eps=eps)
        theta, m, v = 0.5, 0.0, 0.0
        for step, g in enumerate([1.0, -1.0, 2.0], start=1):
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            theta -= lr * (m / (1 - b1 ** step)) / (math.sqrt(v / (1 - b2 ** step)) + eps)
            adam_step(state, [p], [np.array([g])])
            assert p.data[0] == pytest.approx(theta, abs=1e-12)

    def test_missing_gradient(self):
        p = _param(0.0)
        with pytest.raises(UsageError):
            adam_step(AdamState([p]), [p], [None])


class TestClipping:

    def test_scales_to_threshold(self):
        p = Tensor(np.zeros(2), requires_grad=True)
        p.grad = np.array([3.0, 4.0])
        assert clip_gradients([p], 1.0) == pytest.approx(5.0)
        np.testing.assert_allclose(p.grad, [0.6, 0.8])

    def test_under_threshold_unchanged(self):
        p = Tensor(np.zeros(2), requires_grad=True)
        p.grad = np.array([0.3, 0.4])
        clip_gradients([p], 1.0)
        np.testing.assert_array_equal(p.grad, [0.3, 0.4])

    @pytest.mark.parametrize('seed', range(5))
    def test_global_norm_bounded(self, seed):
        rng = np.random.default_rng(seed)
        params = [Tensor(np.zeros(s), requires_grad=True) for s in (3, (2, 2), 5)]
        for p in params:
            p.grad = rng.normal(scale=3.0, size=p.shape)
        clip_gradients(params, 1.0)
        assert math.sqrt(sum(np.sum(p.grad ** 2) for p in params)) <= 1.0 + 1e-12


class TestSchedule:

    def test_plateau_halves_after_patience(self):
        p = _param(0.0)
        state = AdamState([p], lr=0.1)
        plateau = ReduceOnPlateau(factor=0.5, patience=2)
        assert not plateau.step(state, 1.0)
        assert not plateau.step(state, 1.0)
        assert plateau.step(state, 1.2)
        assert state.lr == pytest.approx(0.05)
        assert not plateau.step(state, 0.5)

    def test_batch_indices(self):
        assert [len(b) for b in batch_indices(np.arange(34), 16)] == [16, 16, 2]
        assert [len(b) for b in batch_indices(np.arange(33), 16)] == [16, 17]
        assert [len(b) for b in batch_indices(np.arange(1), 16)] == [1]


class TestFit:

    def test_epochs_must_be_positive(self):
        with pytest.raises(ValidationError):
            TrainConfig(epochs=0)

    def test_one_step_per_epoch_on_one_sample(self):
        cfg = TrainConfig(epochs=1, lr=0.05, lr_schedule='none', progress=False)
        state = fit(Quadratic(), quadratic_loss, one_sample_set(), one_sample_set(), cfg)
        assert state.optimizer_steps == 1
        assert state.epochs == 1

    def test_quadratic_converges(self):
        model = Quadratic()
        cfg = TrainConfig(epochs=500, lr=0.05, progress=False)
        state = fit(model, quadratic_loss, one_sample_set(), one_sample_set(), cfg)
        assert state.optimizer_steps == 500
        assert quadratic_loss(model, None, None).item() < 1e-6

    def test_log_is_ordered_and_written(self, tmp_path):
        path = tmp_path / "log.csv"
        cfg = TrainConfig(epochs=3, lr=0.05, progress=False, log_path=str(path))
        state = fit(Quadratic(), quadratic_loss, one_sample_set(), one_sample_set(), cfg)
        frame = pd.read_csv(path)
        assert list(frame.columns) == TRAIN_LOG_COLUMNS
        assert frame['epoch'].tolist() == [1, 2, 3]
        assert frame['val_loss'].is_monotonic_decreasing
        assert state.get_indicators()['epochs'] == 3

    def test_nan_loss_strict(self):
        cfg = TrainConfig(epochs=1, progress=False)
        with pytest.raises(NonFiniteError):
            fit(Quadratic(), nan_loss, one_sample_set(), one_sample_set(), cfg, strict=True)

    def test_nan_loss_skipped(self):
        model = Quadratic()
        cfg = TrainConfig(epochs=2, progress=False)
        state = fit(model, nan_loss, one_sample_set(), one_sample_set(), cfg)
        assert state.skipped_steps == 2
        assert state.optimizer_steps == 0
        np.testing.assert_array_equal(model.theta.data, 0.0)

    def test_diverged_evaluation(self):
        def diverged(model, dataset):
            report = compute([0], np.array([[math.nan, math.nan]]), [0])
            return {'loss': report.cross_entropy, 'accuracy': report.accuracy, 'ce': 0.0, 'mse': 0.0}

        cfg = TrainConfig(epochs=2, progress=False)
        state = fit(Quadratic(), quadratic_loss, one_sample_set(), one_sample_set(), cfg, evaluate_fn=diverged)
        assert state.epochs == 2
        assert all(math.isnan(row['val_accuracy']) for row in state.rows())
        with pytest.raises(NonFiniteError):
            fit(Quadratic(), quadratic_loss, one_sample_set(), one_sample_set(), cfg, evaluate_fn=diverged,
                strict=True)

    def test_log_carries_config_hash(self, tmp_path):
        path = tmp_path / "log.csv"
        cfg = TrainConfig(epochs=2, lr=0.05, progress=False, log_path=str(path))
        fit(Quadratic(), quadratic_loss, one_sample_set(), one_sample_set(), cfg, config_hash="run-hash")
        frame = pd.read_csv(path)
        assert list(frame.columns) == TRAIN_LOG_COLUMNS + ['config_hash']
        assert frame['config_hash'].tolist() == ["run-hash"] * 2

    def test_guidance_overfits_one_sample(self):
        rng = np.random.default_rng(2)
        data = Dataset(rng.uniform(size=(1, 1, 8, 8)), [1], ['a', 'b'], require_all_classes=False)
        model = GuidanceClassifier('linear', (1, 8, 8), 2, rng, hidden=8)
        cfg = TrainConfig(epochs=200, lr=0.01, lr_schedule='none', progress=False)
        trained = pretrain_guidance(model, data, data, cfg)
        losses = [row['train_loss'] for row in trained.state.rows()]
        assert losses[-1] < 1e-2 < losses[0]
        assert trained.model.predict_array(data.images)[0, 1] > 0.99

    def test_empty_sets_rejected(self):
        empty = one_sample_set().subset([])
        with pytest.raises(UsageError):
            fit(Quadratic(), quadratic_loss, empty, one_sample_set(), TrainConfig(progress=False))

    def test_guidance_run_is_reproducible(self):
        data = generate_synthetic(12, image_size=8, seed=0)
        cfg = TrainConfig(epochs=2, batch_size=8, lr=0.01, seed=4, progress=False, augment=True)
        frames = []
        for _ in range(2):
            model = GuidanceClassifier('linear', (1, 8, 8), 2, np.random.default_rng(0), hidden=8)
            frames.append(fit(model, guidance_loss, data, data, cfg, evaluate_fn=evaluate_guidance).to_frame())
        pd.testing.assert_frame_equal(frames[0], frames[1])

    def test_frozen_guidance_untouched(self):
        data = generate_synthetic(10, image_size=8, seed=1)
        rng = np.random.default_rng(0)
        guidance = GuidanceClassifier('linear', (1, 8, 8), 2, rng, hidden=8).frozen_copy()
        before = guidance.state_dict()
        net = EpsilonNetwork('linear', (1, 8, 8), 2, 5, rng, hidden=8, embedding_dim=8)
        classifier = DiffusionClassifier(net, guidance, make_cosine(5))
        cfg = TrainConfig(epochs=2, batch_size=8, progress=False)
        state = fit(net, classifier.loss, data, data, cfg)
        assert state.optimizer_steps > 0
        for name, value in guidance.state_dict().items():
            np.testing.assert_array_equal(value, before[name], err_msg=name)
        assert all(p.grad is None for p in guidance.parameters())


class TestTrainingState:

    def test_rows_must_be_sequential(self):
        state = TrainingState()
        row = {column: 0.0 for column in TRAIN_LOG_COLUMNS}
        state.record({**row, 'epoch': 1})
        with pytest.raises(ValueError):
            state.record({**row, 'epoch': 3})

    def test_csv_carries_config_hash(self, tmp_path):
        state = TrainingState()
        state.record({**{column: 0.5 for column in TRAIN_LOG_COLUMNS}, 'epoch': 1})
        state.to_csv(str(tmp_path / "log.csv"), config_hash="abc")
        assert pd.read_csv(tmp_path / "log.csv")['config_hash'].tolist() == ['abc']

    def test_missing_metrics_display_as_none(self):
        state = TrainingState()
        state.record({**{column: 0.5 for column in TRAIN_LOG_COLUMNS}, 'epoch': 1, 'val_accuracy': math.nan})
        assert state.get_indicators()['val_accuracy'] is None
        assert state.get_indicators()['val_loss'] == 0.5
        assert state.display_rows()[-1]['val_accuracy'] is None
        assert math.isnan(state.rows()[-1]['val_accuracy'])
