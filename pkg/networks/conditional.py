from typing import Dict

import numpy as np

from core.base_module import Module
from core.errors import ConfigurationError, ShapeError
from core.tensor import Tensor, softmax, softplus

from .layers import BatchNorm1d, Linear

ACTIVATIONS = ('softplus', 'softmax')


class ConditionalModule(Module):
    """
    Linear projection modulated by a timestep embedding:
    out = act(batch_norm(linear(x)) * time_proj(t_emb)).
    """

    def __init__(self, d_in: int, d_out: int, emb_dim: int, rng: np.random.Generator,
                 activation: str = 'softplus', name: str = "conditional"):
        super().__init__(name)
        if activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown hidden activation {activation!r}; expected one of {ACTIVATIONS}")
        self.d_in = d_in
        self.d_out = d_out
        self.emb_dim = emb_dim
        self.activation = activation
        self.linear = Linear(d_in, d_out, rng, name='linear')
        self.norm = BatchNorm1d(d_out, name='norm')
        self.time_proj = Linear(emb_dim, d_out, rng, name='time_proj')

    def __call__(self, x: Tensor, t_emb: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.d_in:
            raise ShapeError(f"{self.name}: expected [B, {self.d_in}] input, got {x.shape}")
        if t_emb.shape[-1] != self.emb_dim or t_emb.ndim not in (1, 2):
            raise ShapeError(f"{self.name}: expected embedding of width {self.emb_dim}, got {t_emb.shape}")
        if t_emb.ndim == 2 and t_emb.shape[0] not in (1, x.shape[0]):
            raise ShapeError(f"{self.name}: {t_emb.shape[0]} embeddings for a batch of {x.shape[0]}")
        # a single [dim] embedding broadcasts over the batch
        gated = self.norm(self.linear(x)) * self.time_proj(t_emb)
        if self.activation == 'softmax':
            return softmax(gated, axis=-1)
        return softplus(gated)

    def get_status(self) -> Dict:
        status = super().get_status()
        status.update({'d_in': self.d_in, 'd_out': self.d_out, 'activation': self.activation})
        return status


def conditional_forward(cm: ConditionalModule, x: Tensor, t_emb: Tensor, training: bool) -> Tensor:
    cm.train(training)
    return cm(x, t_emb)
