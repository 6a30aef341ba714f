"""
Central finite differences for checking the gradient rules in ``core.tensor``.
"""
from typing import Callable, Dict, Sequence

import numpy as np

from .tensor import Tensor, backward

FD_STEP = 1e-5


def numerical_gradient(fn: Callable[[], Tensor], tensor: Tensor, step: float = FD_STEP) -> np.ndarray:
    """Estimate d fn() / d tensor by perturbing each entry of ``tensor.data`` in place."""
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    flat_grad = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + step
        plus = fn().item()
        flat[i] = original - step
        minus = fn().item()
        flat[i] = original
        flat_grad[i] = (plus - minus) / (2.0 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """||a - n|| / max(||a||, ||n||, floor)."""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(np.linalg.norm(analytic - numeric) / scale)


def check_gradients(fn: Callable[[], Tensor], tensors: Sequence[Tensor],
                    step: float = FD_STEP) -> Dict[int, float]:
    """
    Compare the tape gradient of a scalar ``fn()`` against finite differences.

    Returns the relative error per position in ``tensors``.
    """
    for tensor in tensors:
        tensor.zero_grad()
    backward(fn())
    errors = {}
    for position, tensor in enumerate(tensors):
        analytic = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        errors[position] = relative_error(analytic, numerical_gradient(fn, tensor, step))
    return errors
