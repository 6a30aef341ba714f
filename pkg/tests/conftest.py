import numpy as np
import pytest

from core.config import RunConfig
from core.experiment_engine import ExperimentEngine


def tiny_config(output_dir, **sections) -> RunConfig:
    """A run small enough to train in a second or two."""
    payload = {
        'data': {'n_per_class': 20, 'image_size': 8, 'noise_sigma': 0.1},
        'schedule': {'type': 'cosine', 'T': 3},
        'embedding': {'kind': 'learnable', 'dim': 8},
        'architecture': {'kind': 'linear', 'hidden': 8, 'patch': 4, 'heads': 2, 'blocks': 2},
        'guidance': {'backbone': 'linear', 'hidden': 8,
                     'training': {'epochs': 2, 'batch_size': 16, 'lr': 0.01, 'lr_schedule': 'none',
                                  'progress': False}},
        'training': {'epochs': 1, 'batch_size': 16, 'progress': False, 'augment': True},
        'inference': {'n_samples': 2},
        'seed': 3,
        'output_dir': str(output_dir),
    }
    for name, values in sections.items():
        payload[name] = {**payload.get(name, {}), **values} if isinstance(values, dict) else values
    return RunConfig.from_dict(payload)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def make_config():
    return tiny_config


@pytest.fixture
def tiny(tmp_path):
    return tiny_config(tmp_path)


@pytest.fixture(scope='session')
def trained_run(tmp_path_factory):
    """One pretrained + diffusion-trained tiny engine and its saved checkpoint."""
    out = tmp_path_factory.mktemp('trained')
    engine = ExperimentEngine(tiny_config(out))
    engine.pretrain_guidance()
    engine.train_diffusion()
    reports = engine.evaluate('test')
    path = engine.save_diffusion(out / 'diffusion.ckpt')
    return engine, path, reports
