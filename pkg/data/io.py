"""
Raw tensor dataset files.

Layout (little-endian): b"DSET", version u16, (N, ch, H, W, C) as u32,
N labels as u16, N*ch*H*W pixels as f32. A JSON manifest next to the file
(``<path>.json``) carries class names and provenance.
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from core.errors import ConfigurationError

from .dataset import Dataset

logger = logging.getLogger(__name__)

MAGIC = b"DSET"
VERSION = 1
_HEADER = len(MAGIC) + 2 + 5 * 4


class DatasetManifest(BaseModel):
    format: str = "DSET"
    version: int = VERSION
    size: int
    image_shape: List[int]
    class_names: List[str]
    provenance: Dict[str, Any] = Field(default_factory=dict)


def manifest_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_dataset(path, d: Dataset, provenance: Optional[Dict[str, Any]] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n, ch, h, w = d.images.shape
    with open(path, 'wb') as handle:
        handle.write(MAGIC)
        handle.write(np.array([VERSION], dtype='<u2').tobytes())
        handle.write(np.array([n, ch, h, w, d.num_classes], dtype='<u4').tobytes())
        handle.write(d.labels.astype('<u2').tobytes())
        handle.write(d.images.astype('<f4').tobytes())
    manifest = DatasetManifest(size=n, image_shape=[ch, h, w], class_names=d.class_names,
                               provenance=provenance or {})
    manifest_path(path).write_text(manifest.model_dump_json(indent=2) + "\n")
    logger.info("wrote %d images to %s", n, path)
    return path


def decode_dataset(raw: bytes, class_names: Optional[List[str]] = None, source: str = "<bytes>",
                   require_all_classes: bool = True) -> Dataset:
    """Parse DSET bytes; without ``class_names`` classes are named class0, class1, ..."""
    if len(raw) < _HEADER or raw[:4] != MAGIC:
        raise ConfigurationError(f"{source} is not a DSET file")
    version = int(np.frombuffer(raw, dtype='<u2', count=1, offset=4)[0])
    if version != VERSION:
        raise ConfigurationError(f"{source}: unsupported DSET version {version}")
    n, ch, h, w, num_classes = (int(v) for v in np.frombuffer(raw, dtype='<u4', count=5, offset=6))
    expected = _HEADER + 2 * n + 4 * n * ch * h * w
    if len(raw) != expected:
        raise ConfigurationError(f"{source}: expected {expected} bytes, found {len(raw)}")
    labels = np.frombuffer(raw, dtype='<u2', count=n, offset=_HEADER).astype(np.int64)
    pixels = np.frombuffer(raw, dtype='<f4', count=n * ch * h * w, offset=_HEADER + 2 * n)
    images = pixels.astype(np.float64).reshape(n, ch, h, w)

    if class_names is None:
        class_names = [f"class{c}" for c in range(num_classes)]
    elif len(class_names) != num_classes:
        raise ConfigurationError(f"{source}: {len(class_names)} class names for {num_classes} classes")
    return Dataset(images, labels, class_names, require_all_classes=require_all_classes)


def read_dataset(path) -> Dataset:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigurationError(f"cannot read dataset file {path}: {exc}") from exc
    class_names = None
    sidecar = manifest_path(path)
    if sidecar.exists():
        try:
            class_names = DatasetManifest.model_validate(json.loads(sidecar.read_text())).class_names
        except (ValueError, ValidationError) as exc:
            raise ConfigurationError(f"invalid manifest {sidecar}: {exc}") from exc
    return decode_dataset(raw, class_names, source=str(path))
