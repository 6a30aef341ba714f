"""
Timestep embeddings fed to every conditional module.
"""
from typing import Dict, Optional, Sequence, Union

import numpy as np

from .base_module import Module
from .errors import ConfigurationError, UsageError
from .tensor import Tensor, take_rows

SINUSOID_BASE = 10000.0
TABLE_INIT_STD = 0.02


def sinusoidal(t: Union[int, Sequence[int], np.ndarray], dim: int) -> np.ndarray:
    """
    Interleaved sin/cos encoding: out[2i] = sin(t / base^(2i/dim)),
    out[2i+1] = cos(t / base^(2i/dim)). No range check, so t = 0 works.
    """
    if dim % 2:
        raise ConfigurationError(f"sinusoidal embedding needs an even dim, got {dim}")
    t = np.asarray(t, dtype=np.float64)
    freqs = SINUSOID_BASE ** (-np.arange(0, dim, 2, dtype=np.float64) / dim)
    angles = t[..., None] * freqs
    out = np.empty(t.shape + (dim,))
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles)
    return out


class TimeEmbedding(Module):
    """
    Maps a timestep t in 1..T to a vector of width ``dim``.

    ``sinusoidal`` is a fixed function; ``learnable`` is a trainable
    T x dim table read by row t - 1.
    """

    KINDS = ('sinusoidal', 'learnable')

    def __init__(self, kind: str, dim: int, T: int, rng: Optional[np.random.Generator] = None):
        super().__init__(f"{kind}-embedding")
        if kind not in self.KINDS:
            raise ConfigurationError(f"unknown embedding kind {kind!r}; expected one of {self.KINDS}")
        if dim < 1 or T < 1:
            raise ConfigurationError("embedding dim and T must be positive")
        if kind == 'sinusoidal' and dim % 2:
            raise ConfigurationError(f"sinusoidal embedding needs an even dim, got {dim}")
        self.kind = kind
        self.dim = dim
        self.T = T
        self.table: Optional[Tensor] = None
        if kind == 'learnable':
            self.table = Tensor(np.zeros((T, dim)), requires_grad=True, name='table')
            self.reset_parameters(rng or np.random.default_rng(0))

    def reset_parameters(self, rng: np.random.Generator):
        if self.table is not None:
            self.table.data[...] = rng.normal(0.0, TABLE_INIT_STD, size=self.table.shape)

    def _check(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=np.int64)
        if t.size and (t.min() < 1 or t.max() > self.T):
            raise UsageError(f"timestep outside 1..{self.T}")
        return t

    def embed(self, t: int) -> Tensor:
        """Embedding of a single timestep, shape [dim]."""
        return self.embed_batch(np.asarray(t))

    def embed_batch(self, t: Union[Sequence[int], np.ndarray]) -> Tensor:
        """Embeddings of many timesteps, shape [len(t), dim] (or [dim] for a scalar t)."""
        t = self._check(t)
        if self.kind == 'sinusoidal':
            return Tensor(sinusoidal(t, self.dim))
        return take_rows(self.table, t - 1)

    def get_status(self) -> Dict:
        status = super().get_status()
        status.update({'kind': self.kind, 'dim': self.dim, 'T': self.T})
        return status
