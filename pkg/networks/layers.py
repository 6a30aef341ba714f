from typing import Dict

import numpy as np

from core.base_module import Module
from core.errors import ShapeError
from core.tensor import BatchNormStats, Tensor, batch_norm, layer_norm


class Linear(Module):
    """
    Affine map x @ W + b. Weights start at U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
    biases at zero.
    """

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, name: str = "linear"):
        super().__init__(name)
        self.d_in = d_in
        self.d_out = d_out
        self.weight = Tensor(np.zeros((d_in, d_out)), requires_grad=True, name='weight')
        self.bias = Tensor(np.zeros(d_out), requires_grad=True, name='bias')
        self.reset_parameters(rng)

    def reset_parameters(self, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(self.d_in)
        self.weight.data[...] = rng.uniform(-bound, bound, size=self.weight.shape)
        self.bias.data[...] = 0.0

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise ShapeError(f"{self.name}: expected last dimension {self.d_in}, got {x.shape}")
        if x.ndim == 1:
            return (x.reshape(1, -1) @ self.weight + self.bias).reshape(-1)
        return x @ self.weight + self.bias

    def get_status(self) -> Dict:
        status = super().get_status()
        status['shape'] = [self.d_in, self.d_out]
        return status


class BatchNorm1d(Module):
    """Per-feature batch normalization over a [B, d] batch."""

    def __init__(self, features: int, name: str = "norm"):
        super().__init__(name)
        self.features = features
        self.scale = Tensor(np.ones(features), requires_grad=True, name='scale')
        self.shift = Tensor(np.zeros(features), requires_grad=True, name='shift')
        self.stats = BatchNormStats(features)

    def reset_parameters(self, rng: np.random.Generator):
        self.scale.data[...] = 1.0
        self.shift.data[...] = 0.0
        self.stats.reset()

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.features:
            raise ShapeError(f"{self.name}: expected [B, {self.features}] input, got {x.shape}")
        return batch_norm(x, self.scale, self.shift, self.stats, training=self.training)


class LayerNorm(Module):
    """Normalization over the last axis."""

    def __init__(self, features: int, name: str = "layer_norm"):
        super().__init__(name)
        self.features = features
        self.scale = Tensor(np.ones(features), requires_grad=True, name='scale')
        self.shift = Tensor(np.zeros(features), requires_grad=True, name='shift')

    def reset_parameters(self, rng: np.random.Generator):
        self.scale.data[...] = 1.0
        self.shift.data[...] = 0.0

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.features:
            raise ShapeError(f"{self.name}: expected last dimension {self.features}, got {x.shape}")
        return layer_norm(x, self.scale, self.shift)
