import numpy as np
import pytest

from core.embedding import TimeEmbedding, sinusoidal
from core.errors import ConfigurationError, UsageError
from core.tensor import backward
from core.trainer import AdamState, adam_step


def test_sinusoidal_at_zero():
    np.testing.assert_array_equal(sinusoidal(0, 6), [0.0, 1.0, 0.0, 1.0, 0.0, 1.0])


def test_sinusoidal_first_pair():
    out = sinusoidal([3], 4)
    assert out.shape == (1, 4)
    assert out[0, 0] == pytest.approx(np.sin(3.0))
    assert out[0, 1] == pytest.approx(np.cos(3.0))
    assert out[0, 2] == pytest.approx(np.sin(3.0 / 100.0))


@pytest.mark.parametrize('dim', [2, 8, 32])
@pytest.mark.parametrize('T', [10, 20, 30])
def test_sinusoidal_rows_distinct_and_bounded(T, dim):
    table = sinusoidal(np.arange(1, T + 1), dim)
    assert np.all(np.abs(table) <= 1.0)
    gaps = np.linalg.norm(table[:, None, :] - table[None, :, :], axis=-1)
    assert gaps[~np.eye(T, dtype=bool)].min() > 1e-3


def test_sinusoidal_needs_even_dim():
    with pytest.raises(ConfigurationError):
        sinusoidal(1, 5)
    with pytest.raises(ConfigurationError):
        TimeEmbedding('sinusoidal', 5, 10)


def test_learnable_reads_row_t_minus_one(rng):
    emb = TimeEmbedding('learnable', 4, 10, rng)
    np.testing.assert_array_equal(emb.embed(3).data, emb.table.data[2])
    np.testing.assert_array_equal(emb.embed_batch([1, 10]).data, emb.table.data[[0, 9]])


def test_learnable_step_moves_only_its_row(rng):
    emb = TimeEmbedding('learnable', 4, 10, rng)
    before = emb.table.data.copy()
    backward(emb.embed(6).sum())
    adam_step(AdamState([emb.table], lr=0.1), [emb.table], [emb.table.grad])
    changed = np.any(emb.table.data != before, axis=1)
    np.testing.assert_array_equal(np.flatnonzero(changed), [5])


def test_learnable_table_is_trainable(rng):
    emb = TimeEmbedding('learnable', 4, 10, rng)
    assert emb.trainable_parameters() == [emb.table]
    assert TimeEmbedding('sinusoidal', 4, 10).trainable_parameters() == []


def test_timestep_range():
    emb = TimeEmbedding('sinusoidal', 4, 10)
    with pytest.raises(UsageError):
        emb.embed(0)
    with pytest.raises(UsageError):
        emb.embed_batch([5, 11])


def test_unknown_kind():
    with pytest.raises(ConfigurationError):
        TimeEmbedding('random', 4, 10)
