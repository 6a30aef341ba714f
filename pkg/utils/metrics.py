"""
Classification metrics: accuracy, precision, recall, F1, cross-entropy and
MSE of the probability vectors against one-hot targets.
"""
import json
import logging
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from core.errors import NonFiniteError, ShapeError, UsageError

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
METRIC_COLUMNS = ['accuracy', 'precision', 'recall', 'f1', 'cross_entropy', 'mse']
TABLE_HEADERS = ['Accuracy', 'Precision', 'Recall', 'F1 Score', 'CrossEntropy', 'MSE']


class ClassMetrics(BaseModel):
    label: int
    precision: float
    recall: float
    f1: float
    support: int


class MetricsReport(BaseModel):
    """Headline metrics plus the per-class and macro breakdowns they come from."""

    accuracy: float = Field(0.0, ge=0, le=1)
    precision: float = Field(0.0, ge=0, le=1)
    recall: float = Field(0.0, ge=0, le=1)
    f1: float = Field(0.0, ge=0, le=1)
    cross_entropy: float = Field(0.0, ge=0)
    mse: float = Field(0.0, ge=0)
    n: int = 0
    average: Literal['binary', 'macro'] = 'binary'
    positive_class: Optional[int] = None
    per_class: List[ClassMetrics] = Field(default_factory=list)
    macro: Dict[str, float] = Field(default_factory=dict)
    warnings: List[str] = Field(default_factory=list)

    def headline(self) -> Dict[str, float]:
        return {column: getattr(self, column) for column in METRIC_COLUMNS}


def _ratio(numerator: int, denominator: int, what: str, warnings: List[str]) -> float:
    if denominator == 0:
        warnings.append(f"{what} has a zero denominator; reported as 0")
        return 0.0
    return numerator / denominator


def _harmonic(precision: float, recall: float) -> float:
    return 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0


def confusion_counts(preds: np.ndarray, labels: np.ndarray, cls: int) -> Tuple[int, int, int, int]:
    """(TP, FP, FN, TN) with ``cls`` as the positive class."""
    predicted, actual = preds == cls, labels == cls
    return (int(np.sum(predicted & actual)), int(np.sum(predicted & ~actual)),
            int(np.sum(~predicted & actual)), int(np.sum(~predicted & ~actual)))


def compute(preds, probs, labels, positive_class: int = 1,
            average: Literal['binary', 'macro'] = 'binary') -> MetricsReport:
    preds = np.asarray(preds).astype(np.int64).ravel()
    labels = np.asarray(labels).astype(np.int64).ravel()
    probs = np.asarray(probs, dtype=np.float64)
    if labels.size == 0:
        raise UsageError("cannot compute metrics on an empty set")
    if probs.ndim != 2 or probs.shape[0] != labels.size or preds.size != labels.size:
        raise ShapeError(f"preds {preds.shape}, probs {probs.shape} and labels {labels.shape} disagree")
    if not np.isfinite(probs).all():
        raise NonFiniteError(f"{int(np.sum(~np.isfinite(probs)))} non-finite probabilities; the model has diverged")
    n, num_classes = probs.shape
    if labels.min() < 0 or labels.max() >= num_classes:
        raise UsageError(f"labels must lie in [0, {num_classes})")
    if average == 'binary' and not 0 <= positive_class < num_classes:
        raise UsageError(f"positive_class {positive_class} outside [0, {num_classes})")

    warnings: List[str] = []
    per_class = []
    for cls in range(num_classes):
        tp, fp, fn, _ = confusion_counts(preds, labels, cls)
        precision = _ratio(tp, tp + fp, f"precision of class {cls}", warnings)
        recall = _ratio(tp, tp + fn, f"recall of class {cls}", warnings)
        per_class.append(ClassMetrics(label=cls, precision=precision, recall=recall,
                                      f1=_harmonic(precision, recall), support=tp + fn))
    macro = {
        'precision': float(np.mean([c.precision for c in per_class])),
        'recall': float(np.mean([c.recall for c in per_class])),
        'f1': float(np.mean([c.f1 for c in per_class])),
    }
    if average == 'binary':
        chosen = per_class[positive_class]
        precision, recall, f1 = chosen.precision, chosen.recall, chosen.f1
    else:
        precision, recall, f1 = macro['precision'], macro['recall'], macro['f1']

    true_probs = np.maximum(probs[np.arange(n), labels], PROB_FLOOR)
    targets = np.zeros_like(probs)
    targets[np.arange(n), labels] = 1.0
    for message in warnings:
        logger.debug(message)
    return MetricsReport(
        accuracy=float(np.mean(preds == labels)),
        precision=precision,
        recall=recall,
        f1=f1,
        cross_entropy=float(np.mean(-np.log(true_probs))),
        mse=float(np.mean((probs - targets) ** 2)),
        n=n,
        average=average,
        positive_class=positive_class if average == 'binary' else None,
        per_class=per_class,
        macro=macro,
        warnings=warnings,
    )


def format_cells(r: MetricsReport) -> List[str]:
    rates = [f"{100 * value:.2f}" for value in (r.accuracy, r.precision, r.recall, r.f1)]
    return rates + [f"{r.cross_entropy:.4f}", f"{r.mse:.4f}"]


def format_report(r: MetricsReport) -> str:
    """Rates as percentages to 2 decimals, losses to 4 decimals: "97.32 | ... | 0.3525 | 0.0644"."""
    return " | ".join(format_cells(r))


def format_table(rows: Sequence[Tuple[str, MetricsReport]]) -> str:
    """Several reports under one header, one model per line."""
    width = max([len('Model')] + [len(name) for name, _ in rows])
    lines = [" | ".join(['Model'.ljust(width)] + TABLE_HEADERS)]
    for name, report in rows:
        lines.append(" | ".join([name.ljust(width)] + format_cells(report)))
    return "\n".join(lines)


def to_json(r: MetricsReport, path: Optional[str] = None, config_hash: Optional[str] = None,
            extra: Optional[Dict] = None) -> str:
    payload = r.model_dump()
    if config_hash is not None:
        payload['config_hash'] = config_hash
    payload.update(extra or {})
    text = json.dumps(payload, indent=2, sort_keys=True)
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text + "\n")
    return text


def reports_frame(rows: Sequence[Tuple[str, MetricsReport]], config_hash: Optional[str] = None) -> pd.DataFrame:
    frame = pd.DataFrame([{'model': name, **report.headline()} for name, report in rows],
                         columns=['model'] + METRIC_COLUMNS)
    if config_hash is not None:
        frame['config_hash'] = config_hash
    return frame


def to_csv(rows: Sequence[Tuple[str, MetricsReport]], path: str, config_hash: Optional[str] = None):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    reports_frame(rows, config_hash).to_csv(path, index=False, float_format='%.10g')
