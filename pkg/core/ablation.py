"""
Ablation harness: the architecture x schedule x embedding grid plus the
timestep sweep, each cell trained and tested against one shared, frozen
guidance classifier.
"""
import logging
from concurrent.futures import ProcessPoolExecutor
from itertools import product
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence

import numpy as np
import pandas as pd
from tqdm import tqdm

from data import Splits
from utils.metrics import METRIC_COLUMNS, MetricsReport, format_table

from .config import RunConfig, grid_overrides
from .errors import DiffusionClassifierError
from .experiment_engine import ExperimentEngine

logger = logging.getLogger(__name__)

ARCHITECTURES = ('linear', 'attention')
SCHEDULES = ('linear', 'cosine')
EMBEDDINGS = ('learnable', 'sinusoidal')
TIMESTEP_SWEEP = (10, 20, 30)

SHORT_NAMES = {
    'architecture': {'linear': 'Lin', 'attention': 'Att'},
    'schedule': {'linear': 'Lin', 'cosine': 'Cos'},
    'embedding': {'learnable': 'Lin', 'sinusoidal': 'Sin'},
}

RESULT_COLUMNS = ['model'] + METRIC_COLUMNS + ['sweep', 'T', 'seed', 'config_hash', 'error']


class AblationCell(NamedTuple):
    index: int
    name: str
    sweep: str
    config: RunConfig


def cell_name(architecture: str, schedule: str, embedding: str) -> str:
    """Arch-Schedule-Embedding, e.g. "Lin-Cos-Lin"."""
    return "-".join([SHORT_NAMES['architecture'][architecture], SHORT_NAMES['schedule'][schedule],
                     SHORT_NAMES['embedding'][embedding]])


def cell_seed(base_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([base_seed, index]).generate_state(1)[0])


def _seeded(config: RunConfig, index: int) -> RunConfig:
    return config.with_overrides([f"training.seed={cell_seed(config.seed, index)}",
                                  f"output_dir={config.output_dir}/cells/{index:02d}"])


def build_cells(base: RunConfig, timesteps: Sequence[int] = TIMESTEP_SWEEP) -> List[AblationCell]:
    """Eight grid cells in (architecture, schedule, embedding) order, then one cell per T."""
    cells = []
    for architecture, schedule, embedding in product(ARCHITECTURES, SCHEDULES, EMBEDDINGS):
        config = grid_overrides(base, architecture, schedule, embedding)
        cells.append(AblationCell(len(cells), cell_name(architecture, schedule, embedding), 'grid',
                                  _seeded(config, len(cells))))
    base_name = cell_name(base.architecture.kind, base.schedule.type, base.embedding.kind)
    for T in timesteps:
        config = base.with_overrides([f"schedule.T={T}"])
        cells.append(AblationCell(len(cells), f"{base_name} T={T}", 'timesteps', _seeded(config, len(cells))))
    return cells


def run_cell(cell: AblationCell, splits: Splits, guidance) -> Dict:
    """Train and test one cell; failures are recorded in the row instead of raised."""
    row = {'model': cell.name, 'sweep': cell.sweep, 'T': cell.config.schedule.T,
           'seed': cell.config.training.seed, 'config_hash': cell.config.config_hash(), 'error': ''}
    try:
        engine = ExperimentEngine(cell.config)
        engine.splits = splits
        engine.guidance = guidance
        engine.train_diffusion()
        report = engine.evaluate('test')['diffusion']
        row.update(report.headline())
    except DiffusionClassifierError as exc:
        logger.error("cell %d (%s) failed: %s", cell.index, cell.name, exc)
        row.update({column: np.nan for column in METRIC_COLUMNS}, error=f"{exc.code}: {exc.message}")
    except Exception as exc:
        logger.exception("cell %d (%s) crashed", cell.index, cell.name)
        row.update({column: np.nan for column in METRIC_COLUMNS}, error=f"{type(exc).__name__}: {exc}")
    return row


def _run_indexed(args):
    cell, splits, guidance = args
    return cell.index, run_cell(cell, splits, guidance)


def run_ablation(base: RunConfig, workers: int = 1, output_path: Optional[str] = None,
                 timesteps: Sequence[int] = TIMESTEP_SWEEP) -> pd.DataFrame:
    """
    Run every cell and return one row per cell, ordered by cell index
    regardless of ``workers``.
    """
    engine = ExperimentEngine(base)
    splits = engine.load_data()
    guidance = engine.pretrain_guidance()
    cells = build_cells(base, timesteps)
    logger.info("running %d ablation cells with %d worker(s)", len(cells), workers)

    jobs = [(cell, splits, guidance) for cell in cells]
    progress = base.training.progress
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = dict(tqdm(pool.map(_run_indexed, jobs), total=len(jobs), desc='ablation', disable=not progress))
    else:
        results = dict(_run_indexed(job) for job in tqdm(jobs, desc='ablation', disable=not progress))

    frame = pd.DataFrame([results[cell.index] for cell in cells], columns=RESULT_COLUMNS)
    if output_path:
        Path(output_path).parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(output_path, index=False, float_format='%.10g')
        logger.info("ablation results written to %s", output_path)
    return frame


def results_table(frame: pd.DataFrame) -> str:
    """Percent/loss table of the successful rows."""
    rows = [(row['model'], MetricsReport(**{column: row[column] for column in METRIC_COLUMNS}))
            for _, row in frame.iterrows() if not row['error']]
    return format_table(rows)
