"""
Dense float64 tensors with tape-based reverse-mode differentiation.

Every differentiable operation returns a new ``Tensor`` that remembers the
operation's inputs and a closure mapping the output gradient to input
gradients. ``backward`` linearizes that graph into a ``ComputationTape``
(inputs before outputs) and walks it once in reverse.
"""
import logging
from contextlib import contextmanager
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigurationError, NonFiniteError, ShapeError, UsageError

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int, Sequence]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
LN_EPS = 1e-5

_strict = False
_grad_enabled = True


def set_strict_mode(enabled: bool):
    """Toggle NaN/Inf screening on every tensor that gets created."""
    global _strict
    _strict = bool(enabled)


def is_strict_mode() -> bool:
    return _strict


@contextmanager
def strict_mode(enabled: bool = True) -> Iterator[None]:
    previous = _strict
    set_strict_mode(enabled)
    try:
        yield
    finally:
        set_strict_mode(previous)


@contextmanager
def no_grad() -> Iterator[None]:
    """Run operations without recording them (inference)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def _check_finite(data: np.ndarray, where: str):
    if not np.all(np.isfinite(data)):
        bad = int(np.size(data) - np.count_nonzero(np.isfinite(data)))
        raise NonFiniteError(f"{bad} non-finite value(s) produced by {where}")


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class _Node:
    """Recorded operation: its inputs and the local gradient rule."""

    __slots__ = ('op', 'inputs', 'backward')

    def __init__(self, op: str, inputs: Tuple['Tensor', ...], backward: BackwardFn):
        self.op = op
        self.inputs = inputs
        self.backward = backward


class Tensor:
    """
    Dense n-dimensional float64 array taking part in reverse-mode autodiff.
    """

    __array_priority__ = 100.0

    def __init__(self, data: ArrayLike, requires_grad: bool = False,
                 name: Optional[str] = None, _node: Optional[_Node] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._node = _node
        if _strict and _node is None:
            _check_finite(self.data, name or 'tensor')

    # ------------------------------------------------------------------
    # basic properties
    # ------------------------------------------------------------------
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def op(self) -> Optional[str]:
        return self._node.op if self._node else None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() needs a single element, tensor has shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> 'Tensor':
        return Tensor(self.data, requires_grad=False, name=self.name)

    def zero_grad(self):
        self.grad = None

    def __len__(self) -> int:
        return self.shape[0]

    def __repr__(self) -> str:
        grad_flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{grad_flag})"

    def backward(self):
        backward(self)

    # ------------------------------------------------------------------
    # operators
    # ------------------------------------------------------------------
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __pow__(self, exponent: float): return power(self, exponent)
    def __matmul__(self, other): return matmul(self, other)
    def __getitem__(self, key): return index(self, key)

    def sum(self, axis=None, keepdims: bool = False) -> 'Tensor':
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> 'Tensor':
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> 'Tensor':
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> 'Tensor':
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self) -> 'Tensor':
        return transpose(self)

    def exp(self) -> 'Tensor': return exp(self)
    def log(self) -> 'Tensor': return log(self)
    def relu(self) -> 'Tensor': return relu(self)


def as_tensor(value: Union['Tensor', ArrayLike]) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value, requires_grad=False)


def _make(data: np.ndarray, op: str, inputs: Sequence[Tensor], rule: BackwardFn) -> Tensor:
    needs_grad = _grad_enabled and any(t.requires_grad for t in inputs)
    if _strict:
        _check_finite(data, op)
    node = _Node(op, tuple(inputs), rule) if needs_grad else None
    return Tensor(data, requires_grad=needs_grad, _node=node)


# ----------------------------------------------------------------------
# tape and backward
# ----------------------------------------------------------------------
class ComputationTape:
    """
    Ordered record of the operations that produced a tensor.

    ``nodes`` is topologically sorted: every tensor appears after all of its
    inputs. Leaves are included so gradients can be delivered to them.
    """

    def __init__(self, nodes: List[Tensor]):
        self.nodes = nodes

    @classmethod
    def record(cls, output: Tensor) -> 'ComputationTape':
        order: List[Tensor] = []
        seen = set()
        stack = [(output, False)]
        while stack:
            tensor, expanded = stack.pop()
            if expanded:
                order.append(tensor)
                continue
            if id(tensor) in seen:
                continue
            seen.add(id(tensor))
            stack.append((tensor, True))
            if tensor._node is not None:
                for parent in tensor._node.inputs:
                    if parent.requires_grad and id(parent) not in seen:
                        stack.append((parent, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)

    def run_backward(self, seed: np.ndarray) -> int:
        """Propagate ``seed`` from the last node; returns how many nodes ran."""
        grads = {id(self.nodes[-1]): seed}
        visited = 0
        for tensor in reversed(self.nodes):
            grad = grads.pop(id(tensor), None)
            if grad is None:
                continue
            visited += 1
            tensor.grad = grad.copy() if tensor.grad is None else tensor.grad + grad
            if tensor._node is None:
                continue
            input_grads = tensor._node.backward(grad)
            for parent, parent_grad in zip(tensor._node.inputs, input_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                if parent_grad.shape != parent.shape:
                    parent_grad = unbroadcast(parent_grad, parent.shape)
                key = id(parent)
                grads[key] = parent_grad if key not in grads else grads[key] + parent_grad
        return visited


def backward(loss: Tensor) -> ComputationTape:
    """Populate ``grad`` on every tensor that ``loss`` depends on."""
    if loss.size != 1:
        raise UsageError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise UsageError("loss does not depend on any tensor that requires grad")
    tape = ComputationTape.record(loss)
    tape.run_backward(np.ones_like(loss.data))
    return tape


# ----------------------------------------------------------------------
# elementwise arithmetic
# ----------------------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, 'add', (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, 'sub', (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, 'mul', (a, b), lambda g: (g * b.data, g * a.data))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _make(out, 'div', (a, b), lambda g: (g / b.data, -g * out / b.data))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, 'neg', (a,), lambda g: (-g,))


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    out = a.data ** exponent
    return _make(out, 'pow', (a,), lambda g: (g * exponent * a.data ** (exponent - 1),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, 'exp', (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), 'log', (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, 'sqrt', (a,), lambda g: (g * 0.5 / out,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(a.data * mask, 'relu', (a,), lambda g: (g * mask,))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    out = np.logaddexp(0.0, a.data)
    # d/dx log(1 + e^x) = sigmoid(x), written to stay finite for large |x|
    slope = np.exp(a.data - out)
    return _make(out, 'softplus', (a,), lambda g: (g * slope,))


# ----------------------------------------------------------------------
# linear algebra and shape
# ----------------------------------------------------------------------
def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")

    def rule(g):
        return (g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g)

    return _make(a.data @ b.data, 'matmul', (a, b), rule)


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {a.shape} into {tuple(shape)}") from exc
    return _make(out, 'reshape', (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes: Optional[Sequence[int]] = None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes) if axes is not None else tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), 'transpose', (a,), lambda g: (g.transpose(inverse),))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"cannot concatenate shapes {[t.shape for t in tensors]}") from exc
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def rule(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, 'concat', tensors, rule)


def index(a, key) -> Tensor:
    a = as_tensor(a)
    if isinstance(key, Tensor):
        key = key.data.astype(np.int64)

    def rule(g):
        full = np.zeros_like(a.data)
        np.add.at(full, key, g)
        return (full,)

    return _make(a.data[key], 'index', (a,), rule)


def take_rows(table, rows) -> Tensor:
    """Embedding-table lookup; the gradient lands only on the rows used."""
    table = as_tensor(table)
    rows = np.asarray(rows, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"lookup table must be 2-D, got {table.shape}")
    if rows.size and (rows.min() < 0 or rows.max() >= table.shape[0]):
        raise UsageError(f"row index out of range for table with {table.shape[0]} rows")

    def rule(g):
        full = np.zeros_like(table.data)
        np.add.at(full, rows, g)
        return (full,)

    return _make(table.data[rows], 'take_rows', (table,), rule)


# ----------------------------------------------------------------------
# reductions
# ----------------------------------------------------------------------
def _expand_reduced(g: np.ndarray, shape, axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(ax % len(shape) for ax in axes)
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    return _make(out, 'sum', (a,),
                 lambda g: (_expand_reduced(g, a.shape, axis, keepdims).copy(),))


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size / max(out.size, 1)
    return _make(out, 'mean', (a,),
                 lambda g: (_expand_reduced(g, a.shape, axis, keepdims) / count,))


# ----------------------------------------------------------------------
# normalized exponentials
# ----------------------------------------------------------------------
def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def rule(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, 'softmax', (x,), rule)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    probs = np.exp(out)

    def rule(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return _make(out, 'log_softmax', (x,), rule)


def cross_entropy(logits, labels) -> Tensor:
    """Mean of -log softmax(logits)[label] over the batch."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy needs [B, C] logits and [B] labels, got {logits.shape} and {labels.shape}")
    picked = index(log_softmax(logits, axis=1), (np.arange(len(labels)), labels))
    return -picked.mean()


# ----------------------------------------------------------------------
# normalization
# ----------------------------------------------------------------------
class BatchNormStats:
    """Running mean/variance buffers owned by a batch-norm layer."""

    def __init__(self, features: int):
        self.running_mean = np.zeros(features)
        self.running_var = np.ones(features)

    def reset(self):
        self.running_mean[:] = 0.0
        self.running_var[:] = 1.0


def batch_norm(x, gamma, beta, stats: BatchNormStats, training: bool,
               eps: float = BN_EPS, momentum: float = BN_MOMENTUM) -> Tensor:
    """Normalize each feature of a [B, d] batch, then scale and shift."""
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"batch_norm expects [B, d] input, got {x.shape}")
    if training:
        batch = x.shape[0]
        if batch < 2:
            raise ConfigurationError("batch_norm in training mode needs at least 2 samples per batch")
        mean = x.mean(axis=0, keepdims=True)
        centered = x - mean
        var = (centered * centered).mean(axis=0, keepdims=True)
        # running variance tracks the unbiased estimate
        unbiased = var.data[0] * batch / (batch - 1)
        stats.running_mean[:] = (1 - momentum) * stats.running_mean + momentum * mean.data[0]
        stats.running_var[:] = (1 - momentum) * stats.running_var + momentum * unbiased
        normed = centered / sqrt(var + eps)
    else:
        normed = (x - stats.running_mean) / np.sqrt(stats.running_var + eps)
    return normed * gamma + beta


def layer_norm(x, gamma, beta, eps: float = LN_EPS) -> Tensor:
    """Normalize over the last axis."""
    x = as_tensor(x)
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered / sqrt(var + eps) * gamma + beta


# ----------------------------------------------------------------------
# patch convolution
# ----------------------------------------------------------------------
def conv2d(x, weight, bias, stride: int) -> Tensor:
    """
    2-D convolution for the patch case: kernel size equals stride.

    x: [B, ch, H, W], weight: [out, ch, p, p], bias: [out] -> [B, out, H/p, W/p]
    """
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    batch, channels, height, width = x.shape
    out_channels, in_channels, kh, kw = weight.shape
    if in_channels != channels:
        raise ShapeError(f"conv2d weight expects {in_channels} channels, input has {channels}")
    if kh != stride or kw != stride:
        raise ConfigurationError(f"only kernel == stride is supported (kernel {kh}x{kw}, stride {stride})")
    if height % stride or width % stride:
        raise ConfigurationError(f"image {height}x{width} is not divisible by patch size {stride}")
    rows, cols = height // stride, width // stride
    patches = x.reshape(batch, channels, rows, stride, cols, stride)
    patches = patches.transpose(0, 2, 4, 1, 3, 5).reshape(batch, rows * cols, channels * stride * stride)
    kernel = weight.reshape(out_channels, channels * stride * stride).T
    out = patches @ kernel + bias
    return out.transpose(0, 2, 1).reshape(batch, out_channels, rows, cols)


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise UsageError(f"labels must lie in [0, {num_classes})")
    out = np.zeros(labels.shape + (num_classes,))
    np.put_along_axis(out, labels[..., None], 1.0, axis=-1)
    return out
