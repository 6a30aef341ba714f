"""
Run configuration. Every section is a pydantic model; the on-disk form is a
YAML file with one mapping per section.
"""
import hashlib
import json
import math
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigurationError
from .schedule import ScheduleSpec


class _Section(BaseModel):
    model_config = ConfigDict(extra='forbid')


class TrainConfig(_Section):
    """Optimizer and epoch-loop settings shared by both training stages."""

    epochs: int = Field(50, ge=1)
    batch_size: int = Field(32, ge=1)
    lr: float = Field(1e-3, gt=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    weight_decay: float = Field(0.0, ge=0)
    grad_clip: float = Field(1.0, gt=0)
    lr_schedule: Literal['none', 'plateau'] = 'plateau'
    plateau_factor: float = Field(0.5, gt=0, lt=1)
    plateau_patience: int = Field(5, ge=1)
    seed: Optional[int] = None
    log_path: Optional[str] = None
    augment: bool = False
    eval_train_subset: int = Field(256, ge=1)
    progress: bool = True


class DataConfig(_Section):
    source: Literal['synthetic', 'file'] = 'synthetic'
    path: Optional[str] = None
    kind: Literal['stripes-vs-checker', 'blobs'] = 'stripes-vs-checker'
    n_per_class: int = Field(500, ge=1)
    image_size: int = Field(16, ge=4)
    channels: int = Field(1, ge=1)
    noise_sigma: float = Field(0.1, ge=0)
    train_frac: float = Field(0.8, gt=0, lt=1)
    val_frac: float = Field(0.1, gt=0, lt=1)
    test_frac: float = Field(0.1, gt=0, lt=1)
    crop_fraction: float = Field(0.9, gt=0, le=1)

    @model_validator(mode='after')
    def _check(self) -> 'DataConfig':
        if abs(self.train_frac + self.val_frac + self.test_frac - 1.0) > 1e-9:
            raise ValueError("train/val/test fractions must sum to 1")
        if self.source == 'file' and not self.path:
            raise ValueError("data.path is required when data.source is 'file'")
        if self.source == 'synthetic' and self.image_size % 4:
            raise ValueError("synthetic image_size must be divisible by 4")
        return self

    def crop_size(self, height: int) -> int:
        return int(math.ceil(self.crop_fraction * height))


class ScheduleConfig(_Section):
    type: Literal['linear', 'cosine'] = 'cosine'
    T: int = Field(10, ge=2)
    beta1: float = Field(1e-4, gt=0, lt=1)
    betaT: float = Field(0.02, gt=0, lt=1)
    s: float = Field(0.008, gt=0)

    @model_validator(mode='after')
    def _check(self) -> 'ScheduleConfig':
        if self.beta1 > self.betaT:
            raise ValueError("schedule.beta1 must not exceed schedule.betaT")
        return self

    def to_spec(self) -> ScheduleSpec:
        if self.type == 'linear':
            return ScheduleSpec(type='linear', T=self.T, beta1=self.beta1, betaT=self.betaT)
        return ScheduleSpec(type='cosine', T=self.T, s=self.s)


class EmbeddingConfig(_Section):
    kind: Literal['learnable', 'sinusoidal'] = 'learnable'
    dim: int = Field(128, ge=1)

    @model_validator(mode='after')
    def _check(self) -> 'EmbeddingConfig':
        if self.kind == 'sinusoidal' and self.dim % 2:
            raise ValueError("sinusoidal embeddings need an even dim")
        return self


class ArchitectureConfig(_Section):
    kind: Literal['linear', 'attention'] = 'linear'
    hidden: int = Field(128, ge=1)
    patch: int = Field(4, ge=1)
    heads: int = Field(4, ge=1)
    blocks: int = Field(4, ge=1)
    activation: Literal['softplus', 'softmax'] = 'softplus'

    @model_validator(mode='after')
    def _check(self) -> 'ArchitectureConfig':
        if self.kind == 'attention' and self.hidden % self.heads:
            raise ValueError("architecture.hidden must be divisible by architecture.heads")
        return self


class GuidanceConfig(_Section):
    backbone: Literal['linear', 'attention'] = 'linear'
    hidden: int = Field(128, ge=1)
    patch: int = Field(4, ge=1)
    heads: int = Field(4, ge=1)
    training: TrainConfig = Field(default_factory=lambda: TrainConfig(epochs=20, lr_schedule='none'))


class InferenceConfig(_Section):
    n_samples: int = Field(10, ge=1)


class RunConfig(_Section):
    """Everything one experiment needs; serializes losslessly to YAML."""

    data: DataConfig = Field(default_factory=DataConfig)
    schedule: ScheduleConfig = Field(default_factory=ScheduleConfig)
    embedding: EmbeddingConfig = Field(default_factory=EmbeddingConfig)
    architecture: ArchitectureConfig = Field(default_factory=ArchitectureConfig)
    guidance: GuidanceConfig = Field(default_factory=GuidanceConfig)
    training: TrainConfig = Field(default_factory=lambda: TrainConfig(augment=True))
    inference: InferenceConfig = Field(default_factory=InferenceConfig)
    positive_class: int = Field(1, ge=0)
    average: Literal['binary', 'macro'] = 'binary'
    seed: int = 0
    strict: bool = False
    output_dir: str = 'runs/default'

    # ------------------------------------------------------------------
    # hashing
    # ------------------------------------------------------------------
    @staticmethod
    def _digest(payload: Dict[str, Any]) -> str:
        canonical = json.dumps(payload, sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()[:16]

    @staticmethod
    def _without_runtime(train: Dict[str, Any]) -> Dict[str, Any]:
        # progress bars and log locations do not change results
        return {k: v for k, v in train.items() if k not in ('progress', 'log_path')}

    def config_hash(self) -> str:
        payload = self.model_dump(exclude={'output_dir'})
        payload['training'] = self._without_runtime(payload['training'])
        payload['guidance']['training'] = self._without_runtime(payload['guidance']['training'])
        return self._digest(payload)

    def guidance_hash(self) -> str:
        guidance = self.guidance.model_dump()
        guidance['training'] = self._without_runtime(guidance['training'])
        return self._digest({'data': self.data.model_dump(), 'guidance': guidance, 'seed': self.seed})

    # ------------------------------------------------------------------
    # file round trip
    # ------------------------------------------------------------------
    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> 'RunConfig':
        try:
            return cls.model_validate(payload or {})
        except ValidationError as exc:
            raise ConfigurationError(f"invalid configuration: {exc}") from exc

    @classmethod
    def from_yaml(cls, path: str) -> 'RunConfig':
        try:
            payload = yaml.safe_load(Path(path).read_text())
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigurationError(f"cannot read config file {path}: {exc}") from exc
        return cls.from_dict(payload)

    def to_yaml(self, path: Optional[str] = None) -> str:
        text = yaml.safe_dump(self.model_dump(), sort_keys=False)
        if path:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            Path(path).write_text(text)
        return text

    def with_overrides(self, assignments: Sequence[str]) -> 'RunConfig':
        """Apply ``section.key=value`` overrides; values are parsed as YAML scalars."""
        payload = self.model_dump()
        for assignment in assignments:
            if '=' not in assignment:
                raise ConfigurationError(f"override {assignment!r} is not of the form key=value")
            dotted, raw = assignment.split('=', 1)
            keys = dotted.strip().split('.')
            target = payload
            for key in keys[:-1]:
                if not isinstance(target.get(key), dict):
                    raise ConfigurationError(f"unknown config section in override {dotted!r}")
                target = target[key]
            target[keys[-1]] = yaml.safe_load(raw)
        return self.from_dict(payload)

    def train_seed(self, stage: str) -> int:
        """Seed of a training stage, derived from the run seed unless set explicitly."""
        explicit = {'guidance': self.guidance.training.seed, 'diffusion': self.training.seed}.get(stage)
        if explicit is not None:
            return explicit
        offsets = {'guidance': 1, 'diffusion': 2, 'inference': 3}
        return self.seed * 1000 + offsets[stage]


def grid_overrides(config: RunConfig, architecture: str, schedule: str, embedding: str,
                   T: Optional[int] = None) -> RunConfig:
    """Copy of ``config`` with the ablation axes replaced."""
    update: List[str] = [
        f"architecture.kind={architecture}",
        f"schedule.type={schedule}",
        f"embedding.kind={embedding}",
    ]
    if T is not None:
        update.append(f"schedule.T={T}")
    return config.with_overrides(update)
