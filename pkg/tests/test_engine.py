import json

import numpy as np
import pandas as pd
import pytest

from core.errors import UsageError
from core.experiment_engine import ExperimentEngine
from core.training_state import TRAIN_LOG_COLUMNS
from data import write_dataset


class TestData:

    def test_splits_are_stratified_and_seeded(self, tiny):
        a = ExperimentEngine(tiny).load_data()
        b = ExperimentEngine(tiny).load_data()
        assert (len(a.train), len(a.val), len(a.test)) == (32, 4, 4)
        np.testing.assert_array_equal(a.test.images, b.test.images)
        assert a.test.class_counts() == {0: 2, 1: 2}

    def test_file_source(self, tiny, tmp_path):
        dataset = ExperimentEngine(tiny).load_dataset()
        path = write_dataset(tmp_path / "data.dset", dataset)
        config = tiny.with_overrides(['data.source=file', f'data.path={path}'])
        loaded = ExperimentEngine(config).load_dataset()
        assert loaded.class_names == dataset.class_names
        np.testing.assert_allclose(loaded.images, dataset.images, atol=1e-7)

    def test_unknown_split(self, tiny):
        with pytest.raises(UsageError):
            ExperimentEngine(tiny).dataset_for('holdout')


class TestStages:

    def test_stage_order_enforced(self, tiny):
        engine = ExperimentEngine(tiny)
        with pytest.raises(UsageError):
            engine.train_diffusion()
        with pytest.raises(UsageError):
            engine.evaluate()
        with pytest.raises(UsageError):
            engine.predict(np.zeros((8, 8)))

    def test_training_outputs(self, trained_run):
        engine, _, reports = trained_run
        out = engine.output_dir
        log = pd.read_csv(out / "train_log.csv")
        assert list(log.columns) == TRAIN_LOG_COLUMNS + ['config_hash']
        assert len(log) == engine.config.training.epochs
        assert (log['config_hash'] == engine.config_hash).all()
        guidance_log = pd.read_csv(out / "guidance_log.csv")
        assert len(guidance_log) == engine.config.guidance.training.epochs
        assert (guidance_log['config_hash'] == engine.config_hash).all()
        payload = json.loads((out / "metrics_test.json").read_text())
        assert payload['config_hash'] == engine.config_hash
        assert payload['accuracy'] == reports['diffusion'].accuracy
        frame = pd.read_csv(out / "metrics_test.csv")
        assert frame['model'].tolist() == ['diffusion', 'guidance']

    def test_guidance_stays_frozen(self, trained_run):
        engine, _, _ = trained_run
        assert engine.guidance.trainable_parameters() == []
        assert engine.classifier.guidance is engine.guidance

    def test_predict(self, trained_run):
        engine, _, _ = trained_run
        image = engine.dataset_for('test').images[0]
        result = engine.predict(image[0].tolist(), n_samples=2, seed=5)
        assert result['label'] in (0, 1)
        assert result['class_name'] == engine.class_names[result['label']]
        assert sum(result['probs']) == pytest.approx(1.0)
        assert engine.predict(image, n_samples=2, seed=5) == result
        with pytest.raises(UsageError):
            engine.predict(np.full_like(image[0], np.nan))

    def test_predict_agrees_with_batch_evaluation(self, trained_run):
        engine, _, _ = trained_run
        images = engine.dataset_for('test').images
        batch = engine.require_classifier().predict_batch(images, engine.config.inference.n_samples,
                                                          engine.config.train_seed('inference'))
        for k in (0, len(images) - 1):
            assert engine.predict(images[k])['probs'] == pytest.approx(batch.probs[k].tolist(), abs=1e-9)

    def test_trajectory_frame(self, trained_run):
        engine, _, _ = trained_run
        frame = engine.trajectory_frame(engine.dataset_for('test').images[1], n_chains=3, seed=0)
        T = engine.config.schedule.T
        assert list(frame.columns) == ['chain', 't', 'z_0', 'z_1', 'config_hash']
        assert len(frame) == 3 * (T + 1)
        assert frame.groupby('chain')['t'].apply(list).tolist() == [list(range(T, -1, -1))] * 3

    def test_state(self, trained_run):
        engine, _, _ = trained_run
        state = engine.get_state()
        assert state['config_hash'] == engine.config_hash
        assert state['networks']['epsilon']['architecture'] == 'linear'
        assert state['training']['diffusion']['epochs'] == engine.config.training.epochs
        assert 'test' in state['metrics']
        assert state['data']['train']['size'] == 32
