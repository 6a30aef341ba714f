"""
Training-time augmentation: center crop resized back by pixel replication,
random horizontal flip and random right-angle rotation.
"""
import math
from typing import Optional

import numpy as np

from core.errors import ConfigurationError, ShapeError

DEFAULT_CROP_FRACTION = 0.9
FLIP_PROBABILITY = 0.5


def default_crop_size(height: int, fraction: float = DEFAULT_CROP_FRACTION) -> int:
    return int(math.ceil(fraction * height))


def _check(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3:
        raise ShapeError(f"expected one [ch, H, W] image, got {img.shape}")
    return img


def center_crop_resize(img: np.ndarray, crop_size: int) -> np.ndarray:
    """Crop the central crop_size x crop_size window and stretch it back to H x W by replication."""
    img = _check(img)
    _, height, width = img.shape
    if crop_size < 1 or crop_size > min(height, width):
        raise ConfigurationError(f"crop size {crop_size} does not fit a {height}x{width} image")
    top, left = (height - crop_size) // 2, (width - crop_size) // 2
    window = img[:, top:top + crop_size, left:left + crop_size]
    rows = np.arange(height) * crop_size // height
    cols = np.arange(width) * crop_size // width
    return window[:, rows][:, :, cols]


def hflip(img: np.ndarray) -> np.ndarray:
    return _check(img)[:, :, ::-1].copy()


def rotate90(img: np.ndarray, k: int) -> np.ndarray:
    """Rotate by k quarter turns counter-clockwise in the H-W plane."""
    img = _check(img)
    if k % 2 and img.shape[1] != img.shape[2]:
        raise ShapeError("quarter-turn rotation needs a square image")
    return np.rot90(img, k % 4, axes=(1, 2)).copy()


def augment(img: np.ndarray, rng: np.random.Generator, crop_size: Optional[int] = None,
            flip_p: float = FLIP_PROBABILITY) -> np.ndarray:
    """
    Crop-resize, then flip with probability ``flip_p``, then rotate by a
    uniform multiple of 90 degrees (only 0 or 180 for non-square images).
    """
    img = _check(img)
    crop_size = default_crop_size(img.shape[1]) if crop_size is None else crop_size
    out = center_crop_resize(img, crop_size)
    if rng.random() < flip_p:
        out = hflip(out)
    if out.shape[1] == out.shape[2]:
        k = int(rng.integers(0, 4))
    else:
        k = 2 * int(rng.integers(0, 2))
    return rotate90(out, k)
