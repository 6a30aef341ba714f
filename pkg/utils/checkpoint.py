"""
Checkpoint files: a binary blob of named tensors plus a JSON manifest.

Blob layout (little-endian): b"CKPT", version u16, tensor count u32, then
per tensor: name length u16, UTF-8 name, ndim u8, shape as u32, f32 payload.
The manifest sits next to the blob as ``<path>.json``.
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from core.errors import CheckpointError

logger = logging.getLogger(__name__)

MAGIC = b"CKPT"
VERSION = 1


class CheckpointManifest(BaseModel):
    version: int = VERSION
    kind: Literal['guidance', 'diffusion']
    config_hash: str
    guidance_hash: str
    schedule: Optional[Dict[str, Any]] = None
    architecture: Dict[str, Any] = Field(default_factory=dict)
    embedding: Optional[Dict[str, Any]] = None
    class_names: List[str]
    image_shape: List[int]
    config: Dict[str, Any]
    metrics: Dict[str, Any] = Field(default_factory=dict)


def manifest_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def quantize(state: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    """Round every tensor through f32, the precision stored on disk."""
    return {name: np.asarray(value, dtype='<f4').astype(np.float64) for name, value in state.items()}


def encode_tensors(state: Dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, np.array([VERSION], dtype='<u2').tobytes(), np.array([len(state)], dtype='<u4').tobytes()]
    for name in sorted(state):
        value = np.asarray(state[name])
        encoded = name.encode('utf-8')
        parts.append(np.array([len(encoded)], dtype='<u2').tobytes())
        parts.append(encoded)
        parts.append(np.array([value.ndim], dtype='u1').tobytes())
        parts.append(np.array(value.shape, dtype='<u4').tobytes())
        parts.append(value.astype('<f4').tobytes())
    return b"".join(parts)


def decode_tensors(raw: bytes) -> Dict[str, np.ndarray]:
    if raw[:4] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    try:
        version = int(np.frombuffer(raw, dtype='<u2', count=1, offset=4)[0])
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        count = int(np.frombuffer(raw, dtype='<u4', count=1, offset=6)[0])
        offset = 10
        state = {}
        for _ in range(count):
            length = int(np.frombuffer(raw, dtype='<u2', count=1, offset=offset)[0])
            offset += 2
            name = raw[offset:offset + length].decode('utf-8')
            offset += length
            ndim = int(np.frombuffer(raw, dtype='u1', count=1, offset=offset)[0])
            offset += 1
            shape = tuple(int(v) for v in np.frombuffer(raw, dtype='<u4', count=ndim, offset=offset)) if ndim else ()
            offset += 4 * ndim
            size = int(np.prod(shape)) if shape else 1
            state[name] = np.frombuffer(raw, dtype='<f4', count=size, offset=offset).astype(np.float64).reshape(shape)
            offset += 4 * size
    except (ValueError, IndexError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"truncated or corrupt checkpoint: {exc}") from exc
    if offset != len(raw):
        raise CheckpointError(f"{len(raw) - offset} trailing bytes after the last tensor")
    return state


def save_checkpoint(path, state: Dict[str, np.ndarray], manifest: CheckpointManifest) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_tensors(state))
    manifest_path(path).write_text(manifest.model_dump_json(indent=2) + "\n")
    logger.info("saved %s checkpoint (%d tensors) to %s", manifest.kind, len(state), path)
    return path


def load_checkpoint(path, expected_kind: Optional[str] = None, config_hash: Optional[str] = None,
                    guidance_hash: Optional[str] = None) -> Tuple[CheckpointManifest, Dict[str, np.ndarray]]:
    path = Path(path)
    sidecar = manifest_path(path)
    try:
        raw = path.read_bytes()
        manifest = CheckpointManifest.model_validate(json.loads(sidecar.read_text()))
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    except (ValueError, ValidationError) as exc:
        raise CheckpointError(f"invalid checkpoint manifest {sidecar}: {exc}") from exc
    if manifest.version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {manifest.version}")
    if expected_kind is not None and manifest.kind != expected_kind:
        raise CheckpointError(f"{path} holds a {manifest.kind} checkpoint, expected {expected_kind}")
    if config_hash is not None and manifest.config_hash != config_hash:
        raise CheckpointError(f"{path} was written for configuration {manifest.config_hash}, not {config_hash}")
    if guidance_hash is not None and manifest.guidance_hash != guidance_hash:
        raise CheckpointError(f"{path} carries guidance {manifest.guidance_hash}, configuration expects {guidance_hash}")
    return manifest, decode_tensors(raw)


def split_prefixed(state: Dict[str, np.ndarray], prefix: str) -> Dict[str, np.ndarray]:
    """Entries under ``prefix.`` with the prefix removed."""
    head = prefix + "."
    return {name[len(head):]: value for name, value in state.items() if name.startswith(head)}


def join_prefixed(**states: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    return {f"{prefix}.{name}": value for prefix, state in states.items() for name, value in state.items()}
