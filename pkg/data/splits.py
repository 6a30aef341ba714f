"""
Stratified, seeded train/val/test splitting.
"""
import math
from typing import List, NamedTuple

import numpy as np
from pydantic import BaseModel, Field, model_validator

from core.errors import ConfigurationError

from .dataset import Dataset

MIN_SPLIT_SIZE = 10


class SplitSpec(BaseModel):
    train_frac: float = Field(0.8, gt=0, lt=1)
    val_frac: float = Field(0.1, gt=0, lt=1)
    test_frac: float = Field(0.1, gt=0, lt=1)
    seed: int = 0

    @model_validator(mode='after')
    def _check(self) -> 'SplitSpec':
        if abs(self.train_frac + self.val_frac + self.test_frac - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")
        return self

    @property
    def fractions(self) -> List[float]:
        return [self.train_frac, self.val_frac, self.test_frac]


class Splits(NamedTuple):
    train: Dataset
    val: Dataset
    test: Dataset


def _allocate(n: int, fractions: List[float]) -> List[int]:
    """Largest-remainder rounding of n * fractions; ties favor the earlier split."""
    exact = [n * f for f in fractions]
    counts = [int(math.floor(e + 1e-9)) for e in exact]
    order = sorted(range(len(fractions)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[:n - sum(counts)]:
        counts[i] += 1
    return counts


def split_indices(labels: np.ndarray, spec: SplitSpec) -> List[np.ndarray]:
    """Index arrays for (train, val, test): disjoint, exhaustive and stratified by class."""
    labels = np.asarray(labels)
    if len(labels) < MIN_SPLIT_SIZE:
        raise ConfigurationError(f"need at least {MIN_SPLIT_SIZE} samples to split, got {len(labels)}")
    rng = np.random.default_rng(spec.seed)
    parts: List[List[np.ndarray]] = [[], [], []]
    for cls in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == cls))
        bounds = np.cumsum([0] + _allocate(len(members), spec.fractions))
        for k in range(3):
            parts[k].append(members[bounds[k]:bounds[k + 1]])
    for k in (1, 2):
        if sum(len(p) for p in parts[k]) == 0:
            # borrow one sample from the class with the largest training share
            donor = int(np.argmax([len(p) for p in parts[0]]))
            parts[k][donor] = parts[0][donor][-1:]
            parts[0][donor] = parts[0][donor][:-1]
    return [rng.permutation(np.concatenate(p)) for p in parts]


def split(d: Dataset, spec: SplitSpec) -> Splits:
    train, val, test = split_indices(d.labels, spec)
    return Splits(d.subset(train), d.subset(val), d.subset(test))
