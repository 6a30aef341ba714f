"""
Image encoders: a stack of linear layers over flattened pixels, and a
patch-attention encoder. Both map [B, ch, H, W] images to [B, h] features.
"""
import math
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from core.base_module import Module
from core.errors import ConfigurationError, ShapeError
from core.tensor import Tensor, as_tensor, conv2d, relu, softmax

from .layers import LayerNorm, Linear


def _check_image(w: Tensor, image_shape: Tuple[int, int, int], owner: str) -> Tensor:
    w = as_tensor(w)
    if w.ndim == 3:
        w = w.reshape(1, *w.shape)
    if w.ndim != 4 or tuple(w.shape[1:]) != tuple(image_shape):
        raise ShapeError(f"{owner}: expected images of shape [B, {', '.join(map(str, image_shape))}], got {w.shape}")
    return w


def scaled_dot_product_attention(q: Tensor, k: Tensor, v: Tensor) -> Tuple[Tensor, Tensor]:
    """softmax(q k^T / sqrt(d)) v over the last two axes; returns (output, weights)."""
    d = q.shape[-1]
    axes = tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2)
    scores = (q @ k.transpose(axes)) * (1.0 / math.sqrt(d))
    weights = softmax(scores, axis=-1)
    return weights @ v, weights


class MLPEncoder(Module):
    """
    Sequential linear layers with ReLU between them ("linear" architecture).
    """

    def __init__(self, image_shape: Sequence[int], hidden: int, rng: np.random.Generator, depth: int = 2):
        super().__init__("linear-encoder")
        if depth < 1:
            raise ConfigurationError("encoder depth must be at least 1")
        self.image_shape = tuple(image_shape)
        self.hidden = hidden
        d_in = int(np.prod(self.image_shape))
        self.layers = [Linear(d_in if i == 0 else hidden, hidden, rng, name=f"fc{i}") for i in range(depth)]

    def __call__(self, w: Tensor) -> Tensor:
        w = _check_image(w, self.image_shape, self.name)
        x = w.reshape(w.shape[0], -1)
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = relu(x)
        return x


class MultiHeadSelfAttention(Module):
    """Query/key/value projections, per-head attention, output projection."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        super().__init__("attention")
        if dim % heads:
            raise ConfigurationError(f"width {dim} is not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.query = Linear(dim, dim, rng, name='query')
        self.key = Linear(dim, dim, rng, name='key')
        self.value = Linear(dim, dim, rng, name='value')
        self.proj = Linear(dim, dim, rng, name='proj')
        self.last_weights: Optional[np.ndarray] = None

    def _split(self, x: Tensor) -> Tensor:
        batch, tokens, _ = x.shape
        return x.reshape(batch, tokens, self.heads, self.head_dim).transpose(0, 2, 1, 3)

    def __call__(self, tokens: Tensor) -> Tensor:
        batch, count, _ = tokens.shape
        q = self._split(self.query(tokens))
        k = self._split(self.key(tokens))
        v = self._split(self.value(tokens))
        out, weights = scaled_dot_product_attention(q, k, v)
        # [B, heads, N, N]
        self.last_weights = weights.data
        merged = out.transpose(0, 2, 1, 3).reshape(batch, count, self.dim)
        return self.proj(merged)


class PatchAttentionEncoder(Module):
    """
    Patchify with a kernel = stride convolution, run multi-head self-attention
    over the patch tokens, mean-pool, then combine with layer norm + linear.
    """

    def __init__(self, image_shape: Sequence[int], hidden: int, rng: np.random.Generator,
                 patch: int = 4, heads: int = 4):
        super().__init__("attention-encoder")
        channels, height, width = image_shape
        if height % patch or width % patch:
            raise ConfigurationError(f"image {height}x{width} is not divisible by patch size {patch}")
        self.image_shape = tuple(image_shape)
        self.hidden = hidden
        self.patch = patch
        self.tokens = (height // patch) * (width // patch)
        fan_in = channels * patch * patch
        self.patch_weight = Tensor(np.zeros((hidden, channels, patch, patch)), requires_grad=True, name='patch_weight')
        self.patch_bias = Tensor(np.zeros(hidden), requires_grad=True, name='patch_bias')
        self._fan_in = fan_in
        self.attention = MultiHeadSelfAttention(hidden, heads, rng)
        self.combine_norm = LayerNorm(hidden, name='combine_norm')
        self.combine = Linear(hidden, hidden, rng, name='combine')
        self._init_patch(rng)

    def _init_patch(self, rng: np.random.Generator):
        bound = 1.0 / math.sqrt(self._fan_in)
        self.patch_weight.data[...] = rng.uniform(-bound, bound, size=self.patch_weight.shape)
        self.patch_bias.data[...] = 0.0

    def reset_parameters(self, rng: np.random.Generator):
        self._init_patch(rng)
        super().reset_parameters(rng)

    def patch_tokens(self, w: Tensor) -> Tensor:
        w = _check_image(w, self.image_shape, self.name)
        grid = conv2d(w, self.patch_weight, self.patch_bias, stride=self.patch)
        batch = grid.shape[0]
        return grid.reshape(batch, self.hidden, self.tokens).transpose(0, 2, 1)

    def __call__(self, w: Tensor) -> Tensor:
        attended = self.attention(self.patch_tokens(w))
        pooled = attended.mean(axis=1)
        return self.combine(self.combine_norm(pooled))

    @property
    def last_attention(self) -> Optional[np.ndarray]:
        return self.attention.last_weights

    def get_status(self) -> Dict:
        status = super().get_status()
        status.update({'patch': self.patch, 'tokens': self.tokens, 'heads': self.attention.heads})
        return status


def attention_encode(enc: PatchAttentionEncoder, w) -> Tensor:
    """Feature vector [h] for one image [ch, H, W], or [B, h] for a batch."""
    w = as_tensor(w)
    if w.ndim == 3:
        return enc(w.reshape(1, *w.shape)).reshape(-1)
    return enc(w)


ENCODERS = {
    'linear': MLPEncoder,
    'attention': PatchAttentionEncoder,
}


def build_encoder(kind: str, image_shape: Sequence[int], hidden: int, rng: np.random.Generator,
                  patch: int = 4, heads: int = 4, depth: int = 2) -> Module:
    """Construct an encoder by its selector string."""
    if kind == 'linear':
        return MLPEncoder(image_shape, hidden, rng, depth=depth)
    if kind == 'attention':
        return PatchAttentionEncoder(image_shape, hidden, rng, patch=patch, heads=heads)
    raise ConfigurationError(f"unknown architecture {kind!r}; expected one of {sorted(ENCODERS)}")
