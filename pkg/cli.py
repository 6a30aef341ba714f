"""
Command-line entry point.

    python cli.py gen-data --out data/stripes.dset
    python cli.py pretrain-guidance --config configs/default.yaml --seed 0
    python cli.py train-diffusion --config configs/default.yaml --seed 0 --guidance runs/default/guidance.ckpt
    python cli.py evaluate --checkpoint runs/default/diffusion.ckpt --split test
    python cli.py sample-trajectory --checkpoint runs/default/diffusion.ckpt --index 0 --n-chains 5
    python cli.py ablate --config configs/default.yaml --seed 0 --workers 4
    python cli.py serve --checkpoint runs/default/diffusion.ckpt --port 8000
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from core.ablation import results_table, run_ablation
from core.config import RunConfig
from core.errors import ConfigurationError, DiffusionClassifierError, UsageError
from core.experiment_engine import ExperimentEngine
from data import read_dataset, write_dataset
from utils.metrics import format_table

logger = logging.getLogger("cli")

TRAIN_COMMANDS = ('pretrain-guidance', 'train-diffusion', 'ablate')


def load_config(args) -> RunConfig:
    config = RunConfig.from_yaml(args.config) if args.config else RunConfig()
    overrides = list(args.set or [])
    if getattr(args, 'seed', None) is not None:
        overrides.append(f"seed={args.seed}")
    if args.output_dir:
        overrides.append(f"output_dir={args.output_dir}")
    return config.with_overrides(overrides) if overrides else config


def _emit(payload):
    print(json.dumps(payload, indent=2, sort_keys=True))


def _default_path(config: RunConfig, given: Optional[str], name: str) -> str:
    return given or str(Path(config.output_dir) / name)


# ----------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------
def cmd_gen_data(args) -> int:
    config = load_config(args)
    engine = ExperimentEngine(config)
    dataset = engine.load_dataset()
    provenance = {'generator': 'synthetic', **config.data.model_dump(include={'kind', 'n_per_class', 'image_size',
                                                                             'channels', 'noise_sigma'}),
                  'seed': config.seed, 'config_hash': config.config_hash()}
    path = write_dataset(_default_path(config, args.out, 'dataset.dset'), dataset, provenance)
    _emit({'dataset': str(path), **dataset.describe()})
    return 0


def cmd_pretrain_guidance(args) -> int:
    config = load_config(args)
    config.to_yaml(str(Path(config.output_dir) / 'config.yaml'))
    engine = ExperimentEngine(config)
    engine.pretrain_guidance()
    path = engine.save_guidance(_default_path(config, args.out, 'guidance.ckpt'))
    _emit({'checkpoint': str(path), 'config_hash': engine.config_hash,
           'guidance_hash': config.guidance_hash(), 'training': engine.guidance_state.get_indicators()})
    return 0


def cmd_train_diffusion(args) -> int:
    config = load_config(args)
    config.to_yaml(str(Path(config.output_dir) / 'config.yaml'))
    engine = ExperimentEngine(config)
    if args.guidance:
        engine.load_guidance(args.guidance)
    else:
        engine.pretrain_guidance()
    engine.train_diffusion()
    reports = engine.evaluate('test')
    path = engine.save_diffusion(_default_path(config, args.out, 'diffusion.ckpt'))
    print(format_table(list(reports.items())))
    _emit({'checkpoint': str(path), 'config_hash': engine.config_hash,
           'training': engine.diffusion_state.get_indicators()})
    return 0


def _engine_for_checkpoint(args) -> ExperimentEngine:
    config = load_config(args) if (args.config or args.set) else None
    engine = ExperimentEngine.from_checkpoint(args.checkpoint, config)
    if args.output_dir:
        engine.config = engine.config.model_copy(update={'output_dir': args.output_dir})
    return engine


def cmd_evaluate(args) -> int:
    engine = _engine_for_checkpoint(args)
    reports = engine.evaluate(args.split)
    print(format_table(list(reports.items())))
    _emit({'split': args.split, 'config_hash': engine.config_hash,
           **{name: report.model_dump() for name, report in reports.items()}})
    return 0


def cmd_sample_trajectory(args) -> int:
    engine = _engine_for_checkpoint(args)
    dataset = read_dataset(args.input) if args.input else engine.dataset_for(args.split)
    if not 0 <= args.index < len(dataset):
        raise UsageError(f"index {args.index} outside [0, {len(dataset)})")
    frame = engine.trajectory_frame(dataset.images[args.index], args.n_chains, args.chain_seed)
    out = Path(_default_path(engine.config, args.out, 'trajectory.csv'))
    out.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out, index=False, float_format='%.10g')
    _emit({'trajectory': str(out), 'chains': args.n_chains, 'label': int(dataset.labels[args.index]),
           'config_hash': engine.config_hash})
    return 0


def cmd_ablate(args) -> int:
    config = load_config(args)
    config.to_yaml(str(Path(config.output_dir) / 'config.yaml'))
    out = _default_path(config, args.out, 'ablation.csv')
    frame = run_ablation(config, workers=args.workers, output_path=out)
    print(results_table(frame))
    failed = int((frame['error'] != '').sum())
    _emit({'results': out, 'cells': len(frame), 'failed': failed, 'config_hash': config.config_hash()})
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    import main
    if args.checkpoint:
        main.app.state.engine = ExperimentEngine.from_checkpoint(args.checkpoint)
    uvicorn.run(main.app, host=args.host, port=args.port)
    return 0


COMMANDS = {
    'gen-data': cmd_gen_data,
    'pretrain-guidance': cmd_pretrain_guidance,
    'train-diffusion': cmd_train_diffusion,
    'evaluate': cmd_evaluate,
    'sample-trajectory': cmd_sample_trajectory,
    'ablate': cmd_ablate,
    'serve': cmd_serve,
}


# ----------------------------------------------------------------------
# parser
# ----------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='cli.py', description="Classification by label-space diffusion")
    parser.add_argument('--log-level', default='INFO', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
    sub = parser.add_subparsers(dest='command', required=True)

    def command(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument('--config', help="YAML run configuration")
        p.add_argument('--set', action='append', metavar='SECTION.KEY=VALUE', help="override a config value")
        p.add_argument('--output-dir', help="directory for checkpoints, logs and results")
        if name in TRAIN_COMMANDS:
            p.add_argument('--seed', type=int, required=True, help="run seed (required for training)")
        return p

    p = command('gen-data', "write the configured synthetic dataset as a DSET file")
    p.add_argument('--seed', type=int)
    p.add_argument('--out')

    p = command('pretrain-guidance', "pretrain the guidance classifier")
    p.add_argument('--out', help="checkpoint path")

    p = command('train-diffusion', "train the epsilon network against a frozen guidance classifier")
    p.add_argument('--guidance', help="guidance checkpoint; pretrained in-process when omitted")
    p.add_argument('--out', help="checkpoint path")

    p = command('evaluate', "metrics of a diffusion checkpoint on one split")
    p.add_argument('--checkpoint', required=True)
    p.add_argument('--split', default='test', choices=['train', 'val', 'test'])

    p = command('sample-trajectory', "export full reverse chains for one image as CSV")
    p.add_argument('--checkpoint', required=True)
    p.add_argument('--input', help="DSET file to take the image from (default: the configured data)")
    p.add_argument('--split', default='test', choices=['train', 'val', 'test'])
    p.add_argument('--index', type=int, default=0)
    p.add_argument('--n-chains', type=int, default=5)
    p.add_argument('--chain-seed', type=int, help="first chain's random stream (default: the inference seed)")
    p.add_argument('--out')

    p = command('ablate', "run the architecture/schedule/embedding grid and the timestep sweep")
    p.add_argument('--workers', type=int, default=1)
    p.add_argument('--out', help="results CSV path")

    p = command('serve', "serve a diffusion checkpoint over HTTP")
    p.add_argument('--checkpoint')
    p.add_argument('--host', default='127.0.0.1')
    p.add_argument('--port', type=int, default=8000)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except DiffusionClassifierError as exc:
        logger.debug("command %s failed", args.command, exc_info=True)
        print(json.dumps(exc.to_dict()), file=sys.stderr)
        return 2 if isinstance(exc, (ConfigurationError, UsageError)) else 1
    except Exception as exc:
        logger.debug("command %s crashed", args.command, exc_info=True)
        print(json.dumps({'error': 'internal_error', 'type': type(exc).__name__, 'message': str(exc)}),
              file=sys.stderr)
        return 1


if __name__ == '__main__':
    sys.exit(main())
