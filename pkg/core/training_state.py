import math
from pathlib import Path
from typing import Dict, List, Optional

import pandas as pd

TRAIN_LOG_COLUMNS = [
    'epoch',
    'train_loss',
    'train_accuracy',
    'val_loss',
    'val_accuracy',
    'val_ce',
    'val_mse',
    'lr',
]


class TrainingState:
    """
    Per-epoch history of a training run (the TrainLog).

    One list per column, appended together so rows stay complete and
    epoch-ordered.
    """

    def __init__(self, name: str = "training"):
        self.name = name
        self.history: Dict[str, List[float]] = {column: [] for column in TRAIN_LOG_COLUMNS}
        self.optimizer_steps = 0
        self.skipped_steps = 0

    def reset(self):
        for values in self.history.values():
            values.clear()
        self.optimizer_steps = 0
        self.skipped_steps = 0

    def record(self, row: Dict[str, float]):
        epoch = int(row['epoch'])
        expected = len(self.history['epoch']) + 1
        if epoch != expected:
            raise ValueError(f"{self.name}: expected epoch {expected}, got {epoch}")
        for column in TRAIN_LOG_COLUMNS:
            self.history[column].append(row[column] if column != 'epoch' else epoch)

    @property
    def epochs(self) -> int:
        return len(self.history['epoch'])

    def rows(self) -> List[Dict[str, float]]:
        return [{column: self.history[column][i] for column in TRAIN_LOG_COLUMNS} for i in range(self.epochs)]

    def last_row(self) -> Optional[Dict[str, float]]:
        return self.rows()[-1] if self.epochs else None

    def display_rows(self, last: int = 5) -> List[Dict[str, Optional[float]]]:
        """The latest rows with non-finite values replaced by None."""
        return [{column: _finite_or_none(value) for column, value in row.items()} for row in self.rows()[-last:]]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.history, columns=TRAIN_LOG_COLUMNS)

    def to_csv(self, path: str, config_hash: Optional[str] = None):
        frame = self.to_frame()
        if config_hash is not None:
            frame['config_hash'] = config_hash
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, float_format='%.10g')

    def get_indicators(self) -> Dict:
        """Latest values, rounded for display."""
        last = self.last_row()
        if last is None:
            return {'epochs': 0}
        indicators = {column: _finite_or_none(round(float(value), 4)) for column, value in last.items()
                      if column != 'epoch'}
        indicators['epochs'] = self.epochs
        indicators['optimizer_steps'] = self.optimizer_steps
        return indicators


def _finite_or_none(value):
    # NaN marks a metric that was not computed or a diverged evaluation
    return value if math.isfinite(value) else None
