# data/__init__.py

from .augment import augment, center_crop_resize, hflip, rotate90
from .dataset import Dataset
from .io import decode_dataset, read_dataset, write_dataset
from .splits import SplitSpec, Splits, split, split_indices
from .synthetic import class_templates, generate_synthetic, nearest_template_classify

__all__ = [
    'augment',
    'center_crop_resize',
    'hflip',
    'rotate90',
    'Dataset',
    'decode_dataset',
    'read_dataset',
    'write_dataset',
    'SplitSpec',
    'Splits',
    'split',
    'split_indices',
    'class_templates',
    'generate_synthetic',
    'nearest_template_classify',
]
