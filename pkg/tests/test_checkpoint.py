import json

import numpy as np
import pytest

from core.errors import CheckpointError
from core.experiment_engine import ExperimentEngine
from utils.checkpoint import (decode_tensors, encode_tensors, join_prefixed, load_checkpoint, manifest_path,
                              quantize, split_prefixed)


class TestBlob:

    def test_round_trip(self, rng):
        state = {'a.weight': rng.normal(size=(3, 4)), 'b': rng.normal(size=5), 'scalar': np.array(2.5)}
        decoded = decode_tensors(encode_tensors(state))
        assert sorted(decoded) == sorted(state)
        for name, value in quantize(state).items():
            np.testing.assert_array_equal(decoded[name], value)
            assert decoded[name].shape == np.shape(state[name])

    def test_quantize_is_idempotent(self, rng):
        once = quantize({'w': rng.normal(size=10)})
        np.testing.assert_array_equal(quantize(once)['w'], once['w'])

    def test_corrupt(self, rng):
        raw = encode_tensors({'w': rng.normal(size=(2, 2))})
        with pytest.raises(CheckpointError):
            decode_tensors(b"XXXX" + raw[4:])
        with pytest.raises(CheckpointError):
            decode_tensors(raw[:-3])
        with pytest.raises(CheckpointError):
            decode_tensors(raw + b"\x00")

    def test_prefixes(self):
        joined = join_prefixed(epsilon={'w': np.ones(1)}, guidance={'w': np.zeros(1)})
        assert sorted(joined) == ['epsilon.w', 'guidance.w']
        np.testing.assert_array_equal(split_prefixed(joined, 'guidance')['w'], np.zeros(1))


class TestEngineCheckpoints:

    def test_manifest_contents(self, trained_run):
        engine, path, _ = trained_run
        manifest = json.loads(manifest_path(path).read_text())
        assert manifest['kind'] == 'diffusion'
        assert manifest['config_hash'] == engine.config_hash
        assert manifest['schedule'] == {'type': 'cosine', 'T': 3, 's': 0.008}
        assert manifest['embedding']['kind'] == 'learnable'
        assert manifest['class_names'] == ['stripes', 'checkerboard']
        assert set(manifest['metrics']) == {'diffusion', 'guidance'}

    def test_reload_evaluates_identically(self, trained_run):
        engine, path, reports = trained_run
        loaded = ExperimentEngine.from_checkpoint(path)
        assert loaded.config_hash == engine.config_hash
        again = loaded.evaluate('test', write=False)
        assert again['diffusion'].model_dump() == reports['diffusion'].model_dump()
        assert again['guidance'].model_dump() == reports['guidance'].model_dump()
        images = engine.dataset_for('test').images
        a = engine.classifier.predict_batch(images, 3, seed=1)
        b = loaded.classifier.predict_batch(images, 3, seed=1)
        np.testing.assert_array_equal(a.probs, b.probs)

    def test_config_mismatch_rejected(self, trained_run, tmp_path, make_config):
        _, path, _ = trained_run
        other = make_config(tmp_path, schedule={'T': 4})
        with pytest.raises(CheckpointError):
            ExperimentEngine.from_checkpoint(path, other)
        with pytest.raises(CheckpointError):
            load_checkpoint(path, 'guidance')

    def test_guidance_checkpoint(self, trained_run, tmp_path, make_config):
        engine, _, _ = trained_run
        path = engine.save_guidance(tmp_path / "guidance.ckpt")
        fresh = ExperimentEngine(make_config(tmp_path, architecture={'kind': 'attention'}))
        guidance = fresh.load_guidance(path)
        images = engine.dataset_for('val').images
        np.testing.assert_array_equal(guidance.predict_array(images), engine.guidance.predict_array(images))

        other = ExperimentEngine(make_config(tmp_path, guidance={'hidden': 16}))
        with pytest.raises(CheckpointError):
            other.load_guidance(path)

    def test_missing_files(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "nothing.ckpt")
