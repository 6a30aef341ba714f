from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.errors import ConfigurationError, ShapeError, UsageError

from .augment import augment, default_crop_size


class Dataset:
    """
    Immutable image/label collection.

    images: [N, ch, H, W] float64 in [0, 1]; labels: [N] ints in [0, C).
    A dataset built directly must cover every class; subsets need not.
    """

    def __init__(self, images, labels, class_names: Sequence[str],
                 crop_fraction: float = 0.9, require_all_classes: bool = True):
        images = np.array(images, dtype=np.float64)
        labels = np.array(labels, dtype=np.int64).ravel()
        if images.ndim != 4:
            raise ShapeError(f"images must be [N, ch, H, W], got {images.shape}")
        if len(images) != len(labels):
            raise ShapeError(f"{len(images)} images but {len(labels)} labels")
        if not np.isfinite(images).all():
            raise ConfigurationError(f"{int(np.sum(~np.isfinite(images)))} non-finite pixel values")
        if images.size and (images.min() < 0.0 or images.max() > 1.0):
            raise ConfigurationError("pixel values must lie in [0, 1]")
        self.class_names: List[str] = [str(name) for name in class_names]
        num_classes = len(self.class_names)
        if num_classes < 2:
            raise ConfigurationError("a dataset needs at least two classes")
        if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
            raise ConfigurationError(f"labels must lie in [0, {num_classes})")
        if require_all_classes:
            missing = sorted(set(range(num_classes)) - set(labels.tolist()))
            if missing:
                raise ConfigurationError(f"classes without samples: {missing}")
        images.setflags(write=False)
        labels.setflags(write=False)
        self.images = images
        self.labels = labels
        self.crop_fraction = crop_fraction

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def class_counts(self) -> Dict[int, int]:
        counts = np.bincount(self.labels, minlength=self.num_classes)
        return {cls: int(count) for cls, count in enumerate(counts)}

    def subset(self, indices) -> 'Dataset':
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.images[indices], self.labels[indices], self.class_names,
                       crop_fraction=self.crop_fraction, require_all_classes=False)

    def batch(self, indices, augment_seed: Optional[Tuple[int, int]] = None) -> Tuple[np.ndarray, np.ndarray]:
        """
        (images, labels) for ``indices``. With ``augment_seed = (seed, epoch)``
        each image is augmented from its own stream keyed by its index.
        """
        indices = np.asarray(indices, dtype=np.int64)
        if indices.size and (indices.min() < 0 or indices.max() >= len(self)):
            raise UsageError(f"batch indices outside [0, {len(self)})")
        images = self.images[indices]
        if augment_seed is not None:
            crop = default_crop_size(images.shape[2], self.crop_fraction)
            seed, epoch = augment_seed
            images = np.stack([augment(img, np.random.default_rng([seed, epoch, int(i)]), crop)
                               for img, i in zip(images, indices)]) if len(indices) else images
        return images, self.labels[indices].copy()

    def describe(self) -> Dict:
        return {
            'size': len(self),
            'image_shape': list(self.image_shape),
            'class_names': self.class_names,
            'class_counts': self.class_counts(),
        }
