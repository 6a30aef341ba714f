"""
Experiment engine: owns one run's data splits, guidance classifier and
diffusion classifier, and wires configuration, training, evaluation and
checkpoints together for the CLI and the API.
"""
import logging
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from data import Dataset, SplitSpec, Splits, generate_synthetic, read_dataset, split
from networks import EpsilonNetwork, GuidanceClassifier
from networks.guidance import pretrain_guidance
from utils import checkpoint as ckpt
from utils.metrics import MetricsReport, compute, to_csv, to_json

from .config import RunConfig
from .diffusion import DiffusionClassifier
from .errors import ConfigurationError, UsageError
from .schedule import Schedule, schedule_from_spec
from .tensor import strict_mode
from .trainer import fit
from .training_state import TrainingState

logger = logging.getLogger(__name__)

MAX_EVENTS = 20


class ExperimentEngine:
    """
    One experiment, driven stage by stage:
    data -> guidance pretraining -> diffusion training -> evaluation.
    """

    def __init__(self, config: Optional[RunConfig] = None):
        self.config = config or RunConfig()
        self.splits: Optional[Splits] = None
        self.guidance: Optional[GuidanceClassifier] = None
        self.classifier: Optional[DiffusionClassifier] = None
        self.guidance_state = TrainingState("guidance")
        self.diffusion_state = TrainingState("diffusion")
        self.last_metrics: Dict[str, Dict[str, MetricsReport]] = {}
        self.recent_events: List[str] = []
        self._class_names: Optional[List[str]] = None
        self._image_shape: Optional[List[int]] = None

    # ------------------------------------------------------------------
    # bookkeeping
    # ------------------------------------------------------------------
    @property
    def output_dir(self) -> Path:
        return Path(self.config.output_dir)

    @property
    def config_hash(self) -> str:
        return self.config.config_hash()

    def _event(self, message: str):
        logger.info(message)
        self.recent_events.append(message)
        del self.recent_events[:-MAX_EVENTS]

    @property
    def schedule(self) -> Schedule:
        return schedule_from_spec(self.config.schedule.to_spec())

    # ------------------------------------------------------------------
    # data
    # ------------------------------------------------------------------
    def load_dataset(self) -> Dataset:
        data = self.config.data
        if data.source == 'file':
            dataset = read_dataset(data.path)
        else:
            dataset = generate_synthetic(data.n_per_class, data.kind, data.image_size,
                                         data.noise_sigma, seed=self.config.seed, channels=data.channels)
        dataset.crop_fraction = data.crop_fraction
        return dataset

    def load_data(self) -> Splits:
        data = self.config.data
        dataset = self.load_dataset()
        spec = SplitSpec(train_frac=data.train_frac, val_frac=data.val_frac, test_frac=data.test_frac,
                         seed=self.config.seed)
        self.splits = split(dataset, spec)
        self._event(f"data ready: {len(self.splits.train)} train / {len(self.splits.val)} val / "
                    f"{len(self.splits.test)} test")
        return self.splits

    def require_splits(self) -> Splits:
        return self.splits if self.splits is not None else self.load_data()

    def dataset_for(self, name: str) -> Dataset:
        splits = self.require_splits()
        if name not in Splits._fields:
            raise UsageError(f"unknown split {name!r}; choose from {list(Splits._fields)}")
        return getattr(splits, name)

    # ------------------------------------------------------------------
    # guidance classifier
    # ------------------------------------------------------------------
    def build_guidance(self, rng: np.random.Generator) -> GuidanceClassifier:
        splits = self.require_splits()
        g = self.config.guidance
        return GuidanceClassifier(g.backbone, splits.train.image_shape, splits.train.num_classes, rng,
                                  hidden=g.hidden, patch=g.patch, heads=g.heads)

    def pretrain_guidance(self) -> GuidanceClassifier:
        splits = self.require_splits()
        seed = self.config.train_seed('guidance')
        cfg = self.config.guidance.training.model_copy(update={
            'seed': seed,
            'log_path': self.config.guidance.training.log_path or str(self.output_dir / 'guidance_log.csv'),
        })
        model = self.build_guidance(np.random.default_rng(seed))
        with strict_mode(self.config.strict):
            trained = pretrain_guidance(model, splits.train, splits.val, cfg, strict=self.config.strict,
                                        config_hash=self.config_hash)
        trained.model.load_state_dict(ckpt.quantize(trained.model.state_dict()))
        self.guidance = trained.model
        self.guidance_state = trained.state
        self._event(f"guidance pretrained for {trained.state.epochs} epochs")
        return self.guidance

    def require_guidance(self) -> GuidanceClassifier:
        if self.guidance is None:
            raise UsageError("no guidance classifier: pretrain or load one first")
        return self.guidance

    # ------------------------------------------------------------------
    # diffusion classifier
    # ------------------------------------------------------------------
    def build_epsilon(self, rng: np.random.Generator) -> EpsilonNetwork:
        splits = self.require_splits()
        arch, emb = self.config.architecture, self.config.embedding
        return EpsilonNetwork(arch.kind, splits.train.image_shape, splits.train.num_classes,
                              self.config.schedule.T, rng, hidden=arch.hidden, embedding=emb.kind,
                              embedding_dim=emb.dim, patch=arch.patch, heads=arch.heads,
                              activation=arch.activation, blocks=arch.blocks)

    def diffusion_evaluator(self, classifier: DiffusionClassifier):
        n_samples = self.config.inference.n_samples
        seed = self.config.train_seed('inference')

        def evaluate(model, dataset: Dataset) -> Dict[str, float]:
            result = classifier.predict_batch(dataset.images, n_samples, seed)
            report = compute(result.labels, result.probs, dataset.labels,
                             self.config.positive_class, self.config.average)
            return {
                'loss': classifier.loss_on(dataset, seed),
                'accuracy': report.accuracy,
                'ce': report.cross_entropy,
                'mse': report.mse,
            }

        return evaluate

    def train_diffusion(self) -> DiffusionClassifier:
        splits = self.require_splits()
        guidance = self.require_guidance()
        seed = self.config.train_seed('diffusion')
        cfg = self.config.training.model_copy(update={
            'seed': seed,
            'log_path': self.config.training.log_path or str(self.output_dir / 'train_log.csv'),
        })
        net = self.build_epsilon(np.random.default_rng(seed))
        classifier = DiffusionClassifier(net, guidance, self.schedule)
        logger.info("training %s epsilon network (%d parameters) on %s schedule, T=%d",
                    net.architecture, net.num_parameters(), self.schedule.kind, self.schedule.T)
        with strict_mode(self.config.strict):
            self.diffusion_state = fit(net, classifier.loss, splits.train, splits.val, cfg,
                                       evaluate_fn=self.diffusion_evaluator(classifier),
                                       strict=self.config.strict, config_hash=self.config_hash)
        net.load_state_dict(ckpt.quantize(net.state_dict()))
        net.eval()
        self.classifier = classifier
        self._event(f"diffusion trained for {self.diffusion_state.epochs} epochs")
        return classifier

    def require_classifier(self) -> DiffusionClassifier:
        if self.classifier is None:
            raise UsageError("no diffusion classifier: train or load one first")
        return self.classifier

    # ------------------------------------------------------------------
    # evaluation and inference
    # ------------------------------------------------------------------
    def evaluate(self, split_name: str = 'test', write: bool = True) -> Dict[str, MetricsReport]:
        """Metrics of the diffusion classifier and of its guidance classifier on one split."""
        classifier = self.require_classifier()
        dataset = self.dataset_for(split_name)
        result = classifier.predict_batch(dataset.images, self.config.inference.n_samples,
                                          self.config.train_seed('inference'))
        guidance_probs = classifier.guidance_fn(dataset.images)
        reports = {
            'diffusion': compute(result.labels, result.probs, dataset.labels,
                                 self.config.positive_class, self.config.average),
            'guidance': compute(guidance_probs.argmax(axis=1), guidance_probs, dataset.labels,
                                self.config.positive_class, self.config.average),
        }
        self.last_metrics[split_name] = reports
        if write:
            to_json(reports['diffusion'], str(self.output_dir / f'metrics_{split_name}.json'),
                    config_hash=self.config_hash,
                    extra={'split': split_name, 'guidance': reports['guidance'].model_dump()})
            to_csv(list(reports.items()), str(self.output_dir / f'metrics_{split_name}.csv'),
                   config_hash=self.config_hash)
        self._event(f"evaluated on {split_name}: accuracy {reports['diffusion'].accuracy:.4f} "
                    f"(guidance {reports['guidance'].accuracy:.4f})")
        return reports

    def predict(self, pixels, n_samples: Optional[int] = None, seed: Optional[int] = None) -> Dict:
        classifier = self.require_classifier()
        image = np.asarray(pixels, dtype=np.float64)
        if image.ndim == 2:
            image = image[None]
        if not np.isfinite(image).all():
            raise UsageError("pixel values must be finite")
        n_samples = n_samples or self.config.inference.n_samples
        seed = self.config.train_seed('inference') if seed is None else seed
        result = classifier.predict_batch(image[None], n_samples, seed)
        label = int(result.labels[0])
        return {
            'label': label,
            'class_name': self.class_names[label],
            'probs': result.probs[0].tolist(),
            'guidance_probs': classifier.guidance_fn(image[None])[0].tolist(),
        }

    @property
    def class_names(self) -> List[str]:
        if self._class_names is not None:
            return self._class_names
        return self.require_splits().train.class_names

    def trajectory_frame(self, image: np.ndarray, n_chains: int, seed: Optional[int] = None) -> pd.DataFrame:
        """Reverse chains as rows (chain, t, z_0 .. z_{C-1}) running from t = T down to 0."""
        classifier = self.require_classifier()
        seed = self.config.train_seed('inference') if seed is None else seed
        paths = classifier.sample_trajectory(image, n_chains, seed)
        T = classifier.schedule.T
        rows = []
        for chain, path in enumerate(paths):
            for step, z in enumerate(path):
                rows.append({'chain': chain, 't': T - step, **{f'z_{c}': float(v) for c, v in enumerate(z)}})
        frame = pd.DataFrame(rows)
        frame['config_hash'] = self.config_hash
        return frame

    # ------------------------------------------------------------------
    # checkpoints
    # ------------------------------------------------------------------
    def _manifest(self, kind: str, metrics: Optional[Dict] = None) -> ckpt.CheckpointManifest:
        guidance = self.require_guidance()
        manifest = {
            'kind': kind,
            'config_hash': self.config_hash,
            'guidance_hash': self.config.guidance_hash(),
            'class_names': self.class_names,
            'image_shape': list(guidance.image_shape),
            'config': self.config.model_dump(),
            'architecture': {'guidance': self.config.guidance.model_dump(exclude={'training'})},
            'metrics': metrics or {},
        }
        if kind == 'diffusion':
            manifest['schedule'] = self.schedule.to_dict()
            manifest['embedding'] = self.config.embedding.model_dump()
            manifest['architecture']['epsilon'] = self.config.architecture.model_dump()
        return ckpt.CheckpointManifest(**manifest)

    def save_guidance(self, path) -> Path:
        return ckpt.save_checkpoint(path, self.require_guidance().state_dict(), self._manifest('guidance'))

    def save_diffusion(self, path) -> Path:
        classifier = self.require_classifier()
        state = ckpt.join_prefixed(epsilon=classifier.net.state_dict(), guidance=self.require_guidance().state_dict())
        metrics = {name: report.headline() for name, report in self.last_metrics.get('test', {}).items()}
        return ckpt.save_checkpoint(path, state, self._manifest('diffusion', metrics))

    def _restore_shapes(self, manifest: ckpt.CheckpointManifest):
        self._class_names = list(manifest.class_names)
        self._image_shape = list(manifest.image_shape)

    def _guidance_from_state(self, state: Dict[str, np.ndarray]) -> GuidanceClassifier:
        g = self.config.guidance
        model = GuidanceClassifier(g.backbone, self._image_shape, len(self._class_names),
                                   np.random.default_rng(0), hidden=g.hidden, patch=g.patch, heads=g.heads)
        model.load_state_dict(state)
        return model.frozen_copy()

    def load_guidance(self, path) -> GuidanceClassifier:
        """Load a pretrained guidance classifier; it must match this config's guidance hash."""
        manifest, state = ckpt.load_checkpoint(path, 'guidance', guidance_hash=self.config.guidance_hash())
        self._restore_shapes(manifest)
        self.guidance = self._guidance_from_state(state)
        self._event(f"guidance loaded from {path}")
        return self.guidance

    def load_diffusion(self, path) -> DiffusionClassifier:
        manifest, state = ckpt.load_checkpoint(path, 'diffusion', config_hash=self.config_hash)
        self._restore_shapes(manifest)
        self.guidance = self._guidance_from_state(ckpt.split_prefixed(state, 'guidance'))
        arch, emb = self.config.architecture, self.config.embedding
        net = EpsilonNetwork(arch.kind, self._image_shape, len(self._class_names), self.config.schedule.T,
                             np.random.default_rng(0), hidden=arch.hidden, embedding=emb.kind,
                             embedding_dim=emb.dim, patch=arch.patch, heads=arch.heads,
                             activation=arch.activation, blocks=arch.blocks)
        net.load_state_dict(ckpt.split_prefixed(state, 'epsilon'))
        net.eval()
        self.classifier = DiffusionClassifier(net, self.guidance, self.schedule)
        self._event(f"diffusion classifier loaded from {path}")
        return self.classifier

    @classmethod
    def from_checkpoint(cls, path, config: Optional[RunConfig] = None) -> 'ExperimentEngine':
        """
        Engine around a saved diffusion classifier. Without ``config`` the
        run configuration stored in the manifest is used; with one, its hash
        must match the checkpoint.
        """
        if config is None:
            manifest, _ = ckpt.load_checkpoint(path, 'diffusion')
            try:
                config = RunConfig.model_validate(manifest.config)
            except ValueError as exc:
                raise ConfigurationError(f"checkpoint {path} carries an invalid config: {exc}") from exc
        engine = cls(config)
        engine.load_diffusion(path)
        return engine

    # ------------------------------------------------------------------
    # status
    # ------------------------------------------------------------------
    def get_state(self) -> Dict:
        state = {
            'config_hash': self.config_hash,
            'guidance_hash': self.config.guidance_hash(),
            'schedule': self.schedule.get_status(),
            'data': {name: getattr(self.splits, name).describe() for name in Splits._fields} if self.splits else None,
            'networks': {
                'guidance': self.guidance.get_status() if self.guidance is not None else None,
                'epsilon': self.classifier.net.get_status() if self.classifier is not None else None,
            },
            'training': {
                'guidance': self.guidance_state.get_indicators(),
                'diffusion': self.diffusion_state.get_indicators(),
                'last_rows': self.diffusion_state.display_rows(5),
            },
            'metrics': {split_name: {name: report.headline() for name, report in reports.items()}
                        for split_name, reports in self.last_metrics.items()},
            'recent_events': list(self.recent_events),
        }
        return state
