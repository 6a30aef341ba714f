"""
Procedural two-class image sets.

stripes-vs-checker: class 0 is horizontal stripes, class 1 a 2x2-cell
checkerboard; both have period 4 and a random phase (the placement rule).
blobs: a Gaussian bump near the top-left (class 0) or bottom-right
(class 1) corner, jittered by up to one pixel.

Pixelwise Gaussian noise is added and values are clamped to [0, 1].
"""
import logging
from typing import Dict, List

import numpy as np

from core.errors import ConfigurationError

from .dataset import Dataset

logger = logging.getLogger(__name__)

PERIOD = 4
BLOB_JITTER = (-1, 0, 1)

CLASS_NAMES: Dict[str, List[str]] = {
    'stripes-vs-checker': ['stripes', 'checkerboard'],
    'blobs': ['blob-top-left', 'blob-bottom-right'],
}


def _stripes(size: int, phase: int) -> np.ndarray:
    rows = (np.arange(size) + phase) % PERIOD < PERIOD // 2
    return np.repeat(rows[:, None], size, axis=1).astype(np.float64)


def _checker(size: int, row_phase: int, col_phase: int) -> np.ndarray:
    cell = PERIOD // 2
    r = (np.arange(size) + row_phase) // cell
    c = (np.arange(size) + col_phase) // cell
    return ((r[:, None] + c[None, :]) % 2).astype(np.float64)


def _blob(size: int, center_row: float, center_col: float) -> np.ndarray:
    sigma = size / 8.0
    r = np.arange(size)[:, None] - center_row
    c = np.arange(size)[None, :] - center_col
    return np.exp(-(r ** 2 + c ** 2) / (2 * sigma ** 2))


def class_templates(kind: str, image_size: int, channels: int = 1) -> List[np.ndarray]:
    """
    Noise-free images for every placement, one [P, ch, H, W] array per class.
    """
    if kind == 'stripes-vs-checker':
        classes = [
            [_stripes(image_size, phase) for phase in range(PERIOD)],
            [_checker(image_size, rp, cp) for rp in range(PERIOD) for cp in range(PERIOD)],
        ]
    elif kind == 'blobs':
        near, far = image_size / 4.0, 3 * image_size / 4.0
        classes = [
            [_blob(image_size, near + dr, near + dc) for dr in BLOB_JITTER for dc in BLOB_JITTER],
            [_blob(image_size, far + dr, far + dc) for dr in BLOB_JITTER for dc in BLOB_JITTER],
        ]
    else:
        raise ConfigurationError(f"unknown synthetic kind {kind!r}; choose from {sorted(CLASS_NAMES)}")
    return [np.repeat(np.stack(placements)[:, None], channels, axis=1) for placements in classes]


def generate_synthetic(n_per_class: int, kind: str = 'stripes-vs-checker', image_size: int = 16,
                       noise_sigma: float = 0.1, seed: int = 0, channels: int = 1) -> Dataset:
    if n_per_class < 1:
        raise ConfigurationError(f"n_per_class must be at least 1, got {n_per_class}")
    if image_size < PERIOD or image_size % PERIOD:
        raise ConfigurationError(f"image_size must be a positive multiple of {PERIOD}, got {image_size}")
    if noise_sigma < 0:
        raise ConfigurationError(f"noise_sigma must be nonnegative, got {noise_sigma}")
    templates = class_templates(kind, image_size, channels)
    rng = np.random.default_rng(seed)
    images, labels = [], []
    for cls, placements in enumerate(templates):
        chosen = placements[rng.integers(0, len(placements), size=n_per_class)]
        noise = rng.standard_normal(chosen.shape) * noise_sigma
        images.append(np.clip(chosen + noise, 0.0, 1.0))
        labels.append(np.full(n_per_class, cls))
    logger.info("generated %d %s images of size %d (noise %.3g, seed %d)",
                n_per_class * len(templates), kind, image_size, noise_sigma, seed)
    return Dataset(np.concatenate(images), np.concatenate(labels), CLASS_NAMES[kind])


def nearest_template_classify(dataset: Dataset, templates: List[np.ndarray]) -> np.ndarray:
    """Label each image with the class of its closest noise-free template (squared distance)."""
    flat = dataset.images.reshape(len(dataset), -1)
    best = []
    for placements in templates:
        t = placements.reshape(len(placements), -1)
        dist = (flat ** 2).sum(axis=1)[:, None] - 2 * flat @ t.T + (t ** 2).sum(axis=1)[None, :]
        best.append(dist.min(axis=1))
    return np.argmin(np.stack(best, axis=1), axis=1)
