"""
Guidance classifier g_psi(w): the pretrained classifier whose simplex output
is the mean of the diffusion endpoint prior.
"""
import logging
from typing import Dict, NamedTuple, Optional, Sequence

import numpy as np

from core.base_module import Module
from core.errors import UsageError
from core.tensor import Tensor, as_tensor, cross_entropy, no_grad, softmax
from core.trainer import TrainConfig, TrainingState, fit
from utils.metrics import compute

from .encoders import build_encoder
from .layers import Linear

logger = logging.getLogger(__name__)

EVAL_BATCH = 256


class GuidanceClassifier(Module):
    """
    Backbone feature extractor followed by a linear head to C logits.
    """

    def __init__(self, backbone: str, image_shape: Sequence[int], num_classes: int,
                 rng: np.random.Generator, hidden: int = 128, patch: int = 4, heads: int = 4):
        super().__init__("guidance")
        self.backbone_kind = backbone
        self.num_classes = num_classes
        self.image_shape = tuple(image_shape)
        self.backbone = build_encoder(backbone, image_shape, hidden, rng, patch=patch, heads=heads)
        self.head = Linear(hidden, num_classes, rng, name='head')

    def logits(self, w) -> Tensor:
        return self.head(self.backbone(w))

    def __call__(self, w) -> Tensor:
        return softmax(self.logits(w), axis=-1)

    def zero_head(self):
        self.head.weight.data[...] = 0.0
        self.head.bias.data[...] = 0.0

    def predict_array(self, images: np.ndarray) -> np.ndarray:
        """Simplex predictions for a stack of images, evaluated in chunks without a tape."""
        images = np.asarray(images, dtype=np.float64)
        single = images.ndim == 3
        if single:
            images = images[None]
        with no_grad():
            chunks = [self(Tensor(images[i:i + EVAL_BATCH])).data for i in range(0, len(images), EVAL_BATCH)]
        probs = np.concatenate(chunks, axis=0)
        return probs[0] if single else probs

    def get_status(self) -> Dict:
        status = super().get_status()
        status.update({'backbone': self.backbone_kind, 'num_classes': self.num_classes})
        return status


def guidance_predict(gc: GuidanceClassifier, w) -> Tensor:
    """g_psi(w) for one image [ch, H, W] (-> [C]) or a batch (-> [B, C])."""
    w = as_tensor(w)
    if w.ndim == 3:
        return gc(w.reshape(1, *w.shape)).reshape(-1)
    return gc(w)


def guidance_loss(model: GuidanceClassifier, batch, rng: np.random.Generator) -> Tensor:
    images, labels = batch
    return cross_entropy(model.logits(Tensor(images)), labels)


def evaluate_guidance(model: GuidanceClassifier, dataset) -> Dict[str, float]:
    was_training = model.training
    model.eval()
    probs = model.predict_array(dataset.images)
    model.train(was_training)
    report = compute(probs.argmax(axis=1), probs, dataset.labels)
    return {
        'loss': report.cross_entropy,
        'accuracy': report.accuracy,
        'ce': report.cross_entropy,
        'mse': report.mse,
    }


class TrainedGuidance(NamedTuple):
    model: GuidanceClassifier
    state: TrainingState


def pretrain_guidance(gc: GuidanceClassifier, train_set, val_set, cfg: TrainConfig, strict: bool = False,
                      config_hash: Optional[str] = None) -> TrainedGuidance:
    """
    Minimize mean cross-entropy of g_psi on the training set, then return a
    frozen eval-mode copy for diffusion training.
    """
    if len(train_set) == 0:
        raise UsageError("cannot pretrain the guidance classifier on an empty dataset")
    logger.info("pretraining guidance classifier (%s backbone, %d parameters)",
                gc.backbone_kind, gc.num_parameters())
    state = fit(gc, guidance_loss, train_set, val_set, cfg, evaluate_fn=evaluate_guidance, strict=strict,
                config_hash=config_hash)
    return TrainedGuidance(gc.frozen_copy(), state)
