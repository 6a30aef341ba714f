"""
Epsilon network eps_theta(w, z_t, g, t): predicts the Gaussian noise that was
injected into the label-space point z_t.
"""
from typing import Dict, Optional, Sequence, Union

import numpy as np

from core.base_module import Module
from core.embedding import TimeEmbedding
from core.errors import ShapeError
from core.tensor import Tensor, as_tensor, concat

from .conditional import ConditionalModule
from .encoders import build_encoder
from .layers import Linear

NUM_BLOCKS = 4


class EpsilonNetwork(Module):
    """
    Image encoder features f(w) are multiplied with processed labels
    label_proj(z_t ++ g); the product runs through the conditional blocks
    (each fed the timestep embedding) and an output map to C values.
    """

    def __init__(self, architecture: str, image_shape: Sequence[int], num_classes: int, T: int,
                 rng: np.random.Generator, hidden: int = 128, embedding: str = 'learnable',
                 embedding_dim: int = 128, patch: int = 4, heads: int = 4,
                 activation: str = 'softplus', blocks: int = NUM_BLOCKS):
        super().__init__("epsilon")
        self.architecture = architecture
        self.image_shape = tuple(image_shape)
        self.num_classes = num_classes
        self.hidden = hidden
        self.encoder = build_encoder(architecture, image_shape, hidden, rng, patch=patch, heads=heads)
        self.embedding = TimeEmbedding(embedding, embedding_dim, T, rng)
        self.label_proj = Linear(2 * num_classes, hidden, rng, name='label_proj')
        self.blocks = [ConditionalModule(hidden, hidden, embedding_dim, rng, activation=activation,
                                         name=f"block{i}") for i in range(blocks)]
        self.out = Linear(hidden, num_classes, rng, name='out')
        self.last_checkpoint: Optional[np.ndarray] = None

    def __call__(self, w, z_t, g, t: Union[int, Sequence[int], np.ndarray]) -> Tensor:
        """Batched forward: w [B, ch, H, W], z_t and g [B, C], t scalar or [B]."""
        z_t, g = as_tensor(z_t), as_tensor(g)
        if z_t.ndim != 2 or z_t.shape[1] != self.num_classes or g.shape != z_t.shape:
            raise ShapeError(f"z_t and g must both be [B, {self.num_classes}], got {z_t.shape} and {g.shape}")
        features = self.encoder(w)
        if features.shape[0] != z_t.shape[0]:
            raise ShapeError(f"{features.shape[0]} images for {z_t.shape[0]} label points")
        labels = self.label_proj(concat([z_t, g], axis=1))
        x = features * labels
        self.last_checkpoint = x.data
        t_emb = self.embedding.embed_batch(t)
        for block in self.blocks:
            x = block(x, t_emb)
        return self.out(x)

    def zero_output(self):
        self.out.weight.data[...] = 0.0
        self.out.bias.data[...] = 0.0

    def get_status(self) -> Dict:
        status = super().get_status()
        status.update({
            'architecture': self.architecture,
            'hidden': self.hidden,
            'blocks': len(self.blocks),
            'embedding': self.embedding.kind,
            'embedding_dim': self.embedding.dim,
        })
        return status


def epsilon_forward(net: EpsilonNetwork, w, z_t, g, t: int) -> Tensor:
    """Single-sample forward: w [ch, H, W], z_t and g [C] -> eps_hat [C]."""
    w, z_t, g = as_tensor(w), as_tensor(z_t), as_tensor(g)
    if z_t.shape != (net.num_classes,) or g.shape != (net.num_classes,):
        raise ShapeError(f"z_t and g must have length {net.num_classes}")
    out = net(w.reshape(1, *w.shape), z_t.reshape(1, -1), g.reshape(1, -1), np.array([t]))
    return out.reshape(-1)
