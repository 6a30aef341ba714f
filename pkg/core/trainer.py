"""
Adam optimization with global-norm gradient clipping and reduce-on-plateau
learning-rate scheduling, plus the epoch loop that drives both guidance
pretraining and diffusion training.
"""
import logging
import math
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from tqdm import tqdm

from .config import TrainConfig
from .errors import NonFiniteError, UsageError
from .tensor import Tensor, backward, no_grad
from .training_state import TrainingState

logger = logging.getLogger(__name__)

LossFn = Callable[[object, tuple, np.random.Generator], Tensor]
EvaluateFn = Callable[[object, object], Dict[str, float]]


class AdamState:
    """
    Bias-corrected Adam moments for a fixed list of parameters.
    """

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.0):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.first = [np.zeros_like(p.data) for p in params]
        self.second = [np.zeros_like(p.data) for p in params]
        self.step = 0

    @classmethod
    def from_config(cls, params: Sequence[Tensor], cfg: TrainConfig) -> 'AdamState':
        return cls(params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps,
                   weight_decay=cfg.weight_decay)


def adam_step(state: AdamState, params: Sequence[Tensor], grads: Sequence[Optional[np.ndarray]]):
    """One Adam update of ``params`` in place."""
    if len(params) != len(state.first) or len(grads) != len(params):
        raise UsageError("parameter/gradient lists do not match the optimizer state")
    missing = [i for i, g in enumerate(grads) if g is None]
    if missing:
        raise UsageError(f"no gradient for parameter(s) {missing}; run backward() first")
    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.first, state.second):
        if state.weight_decay:
            g = g + state.weight_decay * p.data
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)


def clip_gradients(params: Sequence[Tensor], threshold: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``threshold``; returns the norm before clipping."""
    if threshold <= 0:
        raise UsageError(f"clipping threshold must be positive, got {threshold}")
    grads = [p.grad for p in params if p.grad is not None]
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if norm > threshold:
        scale = threshold / norm
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


class ReduceOnPlateau:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs without a better validation loss."""

    def __init__(self, factor: float = 0.5, patience: int = 5):
        self.factor = factor
        self.patience = patience
        self.best = math.inf
        self.bad_epochs = 0

    def step(self, state: AdamState, val_loss: float) -> bool:
        if val_loss < self.best:
            self.best = val_loss
            self.bad_epochs = 0
            return False
        self.bad_epochs += 1
        if self.bad_epochs >= self.patience:
            state.lr *= self.factor
            self.bad_epochs = 0
            logger.info("validation loss plateaued; learning rate -> %.3g", state.lr)
            return True
        return False


def batch_indices(order: np.ndarray, batch_size: int) -> List[np.ndarray]:
    """Split ``order`` into batches; a trailing single sample joins the previous batch."""
    batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    if len(batches) > 1 and len(batches[-1]) == 1:
        batches[-2] = np.concatenate([batches[-2], batches.pop()])
    return batches


class Trainer:
    """
    Runs the epoch loop as a fixed sequence of phases:
    train -> evaluate -> schedule -> record.
    """

    def __init__(self, model, loss_fn: LossFn, train_set, val_set, cfg: TrainConfig,
                 evaluate_fn: Optional[EvaluateFn] = None, strict: bool = False,
                 state: Optional[TrainingState] = None, config_hash: Optional[str] = None):
        if len(train_set) == 0 or len(val_set) == 0:
            raise UsageError("training and validation sets must be nonempty")
        self.model = model
        self.loss_fn = loss_fn
        self.train_set = train_set
        self.val_set = val_set
        self.cfg = cfg
        self.evaluate_fn = evaluate_fn
        self.strict = strict
        self.config_hash = config_hash
        self.seed = cfg.seed if cfg.seed is not None else 0
        self.rng = np.random.default_rng(self.seed)
        self.params = model.trainable_parameters()
        self.optimizer = AdamState.from_config(self.params, cfg)
        self.plateau = ReduceOnPlateau(cfg.plateau_factor, cfg.plateau_patience) if cfg.lr_schedule == 'plateau' else None
        self.state = state or TrainingState()
        self.phases = [
            self.train_phase,
            self.evaluate_phase,
            self.schedule_phase,
            self.record_phase,
        ]
        self.epoch = 0
        self.row: Dict[str, float] = {}

    def run(self) -> TrainingState:
        epochs = range(1, self.cfg.epochs + 1)
        for epoch in tqdm(epochs, desc=getattr(self.model, 'name', 'train'), disable=not self.cfg.progress):
            self.epoch = epoch
            self.row = {'epoch': epoch}
            for phase in self.phases:
                phase()
        return self.state

    # ------------------------------------------------------------------
    # phases
    # ------------------------------------------------------------------
    def train_phase(self):
        self.model.train()
        order = self.rng.permutation(len(self.train_set))
        augment_seed = (self.seed, self.epoch) if self.cfg.augment else None
        losses = []
        for indices in batch_indices(order, self.cfg.batch_size):
            batch = self.train_set.batch(indices, augment_seed=augment_seed)
            self.model.zero_grad()
            loss = self.loss_fn(self.model, batch, self.rng)
            value = loss.item()
            if not math.isfinite(value):
                if self.strict:
                    raise NonFiniteError(f"loss became {value} at epoch {self.epoch}, "
                                         f"optimizer step {self.optimizer.step + 1}")
                logger.warning("skipping update: loss is %s at epoch %d", value, self.epoch)
                self.state.skipped_steps += 1
                continue
            backward(loss)
            clip_gradients(self.params, self.cfg.grad_clip)
            adam_step(self.optimizer, self.params, [p.grad for p in self.params])
            self.state.optimizer_steps += 1
            losses.append(value)
        self.row['train_loss'] = float(np.mean(losses)) if losses else math.nan

    def evaluate_phase(self):
        was_training = self.model.training
        self.model.eval()
        if self.evaluate_fn is not None:
            subset = self.train_set.subset(np.arange(min(len(self.train_set), self.cfg.eval_train_subset)))
            try:
                train_metrics = self.evaluate_fn(self.model, subset)
                val_metrics = self.evaluate_fn(self.model, self.val_set)
            except NonFiniteError:
                if self.strict:
                    raise
                logger.warning("epoch %d evaluation produced non-finite outputs; metrics recorded as NaN",
                               self.epoch)
                train_metrics = val_metrics = {'loss': math.nan, 'accuracy': math.nan, 'ce': math.nan,
                                               'mse': math.nan}
            self.row['train_accuracy'] = train_metrics['accuracy']
            self.row['val_loss'] = val_metrics['loss']
            self.row['val_accuracy'] = val_metrics['accuracy']
            self.row['val_ce'] = val_metrics['ce']
            self.row['val_mse'] = val_metrics['mse']
        else:
            self.row['train_accuracy'] = math.nan
            self.row['val_loss'] = self._mean_loss(self.val_set)
            self.row['val_accuracy'] = math.nan
            self.row['val_ce'] = math.nan
            self.row['val_mse'] = math.nan
        self.model.train(was_training)

    def schedule_phase(self):
        self.row['lr'] = self.optimizer.lr
        if self.plateau is not None and math.isfinite(self.row['val_loss']):
            self.plateau.step(self.optimizer, self.row['val_loss'])

    def record_phase(self):
        self.state.record(self.row)
        logger.info("%s epoch %d: train_loss=%.4f val_loss=%.4f val_accuracy=%.4f lr=%.3g",
                    getattr(self.model, 'name', 'model'), self.epoch, self.row['train_loss'],
                    self.row['val_loss'], self.row['val_accuracy'], self.row['lr'])
        if self.cfg.log_path:
            self.state.to_csv(self.cfg.log_path, config_hash=self.config_hash)

    def _mean_loss(self, dataset) -> float:
        rng = np.random.default_rng(self.seed)
        order = np.arange(len(dataset))
        with no_grad():
            losses = [self.loss_fn(self.model, dataset.batch(idx), rng).item() * len(idx)
                      for idx in batch_indices(order, self.cfg.batch_size)]
        return float(np.sum(losses) / len(dataset))


def fit(model, loss_fn: LossFn, train_set, val_set, cfg: TrainConfig,
        evaluate_fn: Optional[EvaluateFn] = None, strict: bool = False,
        config_hash: Optional[str] = None) -> TrainingState:
    """Train ``model`` in place and return its TrainLog; the CSV log carries ``config_hash`` when given."""
    return Trainer(model, loss_fn, train_set, val_set, cfg, evaluate_fn=evaluate_fn, strict=strict,
                   config_hash=config_hash).run()
