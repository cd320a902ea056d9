"""
dlcl-lab command line
Parses arguments, configures logging and dispatches to the command handlers
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import colorlog

from config import Config, ConfigError, KEYS, PRESETS, load_run_config
from database import RunRegistry
from handlers import (
    AblationHandler,
    CheckpointHandler,
    DecodeHandler,
    EXIT_USAGE,
    FactorizationHandler,
    ProbeHandler,
    TrainHandler,
    WeightsHandler,
)
from training import BEAM_PRESETS, CheckpointError

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(log_color)s%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def setup_logging(level: str = Config.LOG_LEVEL):
    """Colored log lines on stderr; stdout carries command results only"""
    handler = colorlog.StreamHandler()
    handler.setFormatter(colorlog.ColoredFormatter(
        LOG_FORMAT,
        log_colors={
            'DEBUG': 'cyan',
            'INFO': 'green',
            'WARNING': 'yellow',
            'ERROR': 'red',
            'CRITICAL': 'bold_red',
        }
    ))
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(getattr(logging, level))
    logging.getLogger('sqlalchemy').setLevel(logging.INFO if Config.DEBUG else logging.WARNING)


class LabArgumentParser(argparse.ArgumentParser):
    """Usage errors raise ConfigError so every bad invocation exits with 1"""

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _int_list(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(',') if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _add_config_flags(parser: argparse.ArgumentParser):
    parser.add_argument('--preset', choices=sorted(PRESETS), help='Hyper-parameter preset')
    parser.add_argument('--config', type=Path, help='JSON config file')
    group = parser.add_argument_group('config keys', 'override preset and file values')
    for key in KEYS:
        group.add_argument(f'--{key}', dest=key, default=None, metavar=key.upper())


def get_parser() -> LabArgumentParser:
    parser = LabArgumentParser(prog='lab', description='Deep pre-norm / post-norm Transformer lab')
    commands = parser.add_subparsers(dest='command', required=True)

    train = commands.add_parser('train', help='Train on a synthetic task')
    _add_config_flags(train)
    train.add_argument('--name', help='Run name for the registry')

    probe = commands.add_parser('probe-grad', help='Per-layer gradient norms')
    _add_config_flags(probe)
    probe.add_argument('--checkpoint', type=Path, help='Probe a trained model instead of a fresh one')
    probe.add_argument('--depths', type=_int_list, help='Sweep encoder depths, e.g. 4,8,16,20')
    probe.add_argument('--seeds', type=int, default=10, help='Seeds per sweep point')

    factor = commands.add_parser('check-factorization', help='Dense-Jacobian gradient factorization check')
    factor.add_argument('--placement', choices=['pre', 'post'], required=True)
    factor.add_argument('--depth', type=int, default=2, help='Residual units')
    factor.add_argument('--d_model', type=int, default=4)
    factor.add_argument('--rows', type=int, default=2, help='Sequence length t')
    factor.add_argument('--seed', type=int, default=0)

    weights = commands.add_parser('export-weights', help='Aggregation weight heatmaps from a checkpoint')
    weights.add_argument('--checkpoint', type=Path, required=True)
    weights.add_argument('--output_dir', type=Path, default=Path(Config.OUTPUT_DIR))
    weights.add_argument('--producer', type=int, help='Also export the weights every later layer gives this layer')

    decode = commands.add_parser('decode', help='Greedy or beam-search decoding')
    _add_config_flags(decode)
    decode.add_argument('--checkpoint', type=Path)
    decode.add_argument('--input', type=Path, required=True, help='One space-separated id sequence per line')
    decode.add_argument('--output', type=Path, required=True)
    decode.add_argument('--greedy', action='store_true')
    decode.add_argument('--beam_preset', choices=sorted(BEAM_PRESETS), help='Beam size and length penalty preset')

    average = commands.add_parser('avg-ckpt', help='Average checkpoints')
    average.add_argument('inputs', type=Path, nargs='+')
    average.add_argument('--output', type=Path, required=True)

    ablate = commands.add_parser('ablate', help='Train every aggregation variant on the same task')
    _add_config_flags(ablate)

    return parser


def _flags(args: argparse.Namespace) -> Dict[str, Any]:
    return {key: getattr(args, key, None) for key in KEYS}


def _run_config(args: argparse.Namespace):
    flags = _flags(args)
    if getattr(args, 'beam_preset', None):
        preset = BEAM_PRESETS[args.beam_preset]
        if flags['beam_size'] is None:
            flags['beam_size'] = preset.beam_size
        if flags['alpha'] is None:
            flags['alpha'] = preset.alpha
    return load_run_config(args.preset, args.config, flags)


def dispatch(args: argparse.Namespace, registry: Optional[RunRegistry] = None) -> int:
    if args.command == 'train':
        return TrainHandler(registry or RunRegistry()).run(_run_config(args), args.name)
    if args.command == 'probe-grad':
        run_config = _run_config(args)
        handler = ProbeHandler(registry or RunRegistry())
        if args.depths:
            return handler.sweep(run_config, args.depths, args.seeds)
        return handler.probe(run_config, args.checkpoint)
    if args.command == 'check-factorization':
        return FactorizationHandler().run(args.placement, args.depth, args.d_model, args.rows, args.seed)
    if args.command == 'export-weights':
        return WeightsHandler().run(args.checkpoint, args.output_dir, args.producer)
    if args.command == 'decode':
        return DecodeHandler().run(_run_config(args), args.checkpoint, args.input, args.output, greedy=args.greedy)
    if args.command == 'avg-ckpt':
        return CheckpointHandler().average(args.inputs, args.output)
    if args.command == 'ablate':
        return AblationHandler(registry or RunRegistry()).run(_run_config(args))
    raise ConfigError(f"unknown command {args.command}")


def main(argv: Optional[List[str]] = None, registry: Optional[RunRegistry] = None) -> int:
    """Run one command; returns the process exit code"""
    try:
        args = get_parser().parse_args(argv)
        return dispatch(args, registry)
    except (ConfigError, CheckpointError) as e:
        logger.error(str(e))
        return EXIT_USAGE
    except OSError as e:
        logger.error(f"I/O error: {e}")
        return EXIT_USAGE
    except Exception:
        logger.exception("Unexpected error")
        return EXIT_USAGE


if __name__ == '__main__':
    setup_logging()
    sys.exit(main())
