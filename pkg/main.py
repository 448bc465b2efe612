#!/usr/bin/env python3
"""
Robust regression training - command line entry point

    python main.py data-prep --synthetic 2000 --seed 7 --output runs/dataset
    python main.py train --dataset runs/dataset --stage mse:0.01:20 --stage mse:0.001:10
    python main.py train --dataset runs/dataset --init-model runs/train/model.rbm \
        --stage symbolic:0.001:10 --delta 10 --kappa 0.01 --layer fc40 --output runs/robust
    python main.py certify --model runs/robust/model.rbm --dataset runs/dataset
    python main.py compare --model-a runs/train/model.rbm --model-b runs/robust/model.rbm --dataset runs/eval
"""

import argparse
import logging
import sys

from config import Config, load_run_config
from core.errors import RobustTrainingError

logger = logging.getLogger('robust-regression')


def setup_logging(level: str, log_file: str = ''):
    handlers = [logging.StreamHandler()]
    if log_file:
        handlers.append(logging.FileHandler(log_file))
    logging.basicConfig(
        level=getattr(logging, str(level).upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers,
        force=True,
    )


def _delta(values):
    if values is None:
        return None
    return values[0] if len(values) == 1 else values


def _add_spec_flags(parser):
    parser.add_argument('--delta', type=float, nargs='+', help='output tolerance(s) in original pixels')
    parser.add_argument('--kappa', type=float, help='feature perturbation radius')
    parser.add_argument('--layer', help='layer whose activation output is perturbed (e.g. fc40)')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='Tolerance-aware robust training and certification of regression networks')
    parser.add_argument('--config', help='YAML configuration file (see config/default.yaml)')
    parser.add_argument('--log-level', help='DEBUG, INFO, WARNING or ERROR')
    commands = parser.add_subparsers(dest='command', required=True)

    prep = commands.add_parser('data-prep', help='build a dataset directory')
    prep.add_argument('--output')
    prep.add_argument('--synthetic', type=int, help='generate this many synthetic samples')
    prep.add_argument('--tusimple', help='TuSimple label file')
    prep.add_argument('--images', help='directory the label raw_file paths are relative to')
    prep.add_argument('--seed', type=int)
    prep.add_argument('--duplicate-rare', action=argparse.BooleanOptionalAction, default=None)
    prep.add_argument('--height', type=float)
    prep.add_argument('--workers', type=int)

    train = commands.add_parser('train', help='train or fine-tune a model')
    train.add_argument('--dataset')
    train.add_argument('--output')
    train.add_argument('--stage', dest='stages', action='append', help='kind:learning_rate:epochs, repeatable')
    _add_spec_flags(train)
    train.add_argument('--seed', type=int)
    train.add_argument('--seeds', help="multi-seed protocol, e.g. '0-19'")
    train.add_argument('--top-k', type=int)
    train.add_argument('--batch-size', type=int)
    train.add_argument('--warmup', action=argparse.BooleanOptionalAction, default=None)
    train.add_argument('--reset-optimizer', action=argparse.BooleanOptionalAction, default=None)
    train.add_argument('--validation-fraction', type=float)
    train.add_argument('--init-model', help='model file to fine-tune')

    cert = commands.add_parser('certify', help='certify a model on a dataset')
    cert.add_argument('--model')
    cert.add_argument('--dataset')
    cert.add_argument('--output')
    _add_spec_flags(cert)
    cert.add_argument('--empirical-samples', type=int)
    cert.add_argument('--seed', type=int)

    compare = commands.add_parser('compare', aliases=['attack'], help='FGSM minimal-epsilon comparison of two models')
    compare.add_argument('--model-a')
    compare.add_argument('--model-b')
    compare.add_argument('--dataset')
    compare.add_argument('--output')
    compare.add_argument('--names', nargs=2)
    compare.add_argument('--deviation-threshold', type=float)
    compare.add_argument('--epsilon-start', type=float)
    compare.add_argument('--epsilon-stop', type=float)
    compare.add_argument('--epsilon-step', type=float)
    compare.add_argument('--equality-band', type=float)
    compare.add_argument('--tolerance', type=float)
    compare.add_argument('--workers', type=int)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    command = 'compare' if args.command == 'attack' else args.command
    overrides = {k: v for k, v in vars(args).items() if k not in ('config', 'command')}
    if 'delta' in overrides:
        overrides['delta'] = _delta(overrides['delta'])

    setup_logging(args.log_level or Config.LOG_LEVEL, Config.LOG_FILE)
    try:
        run = load_run_config(args.config).with_overrides(command, overrides)
        setup_logging(run.log_level, Config.LOG_FILE)
        logger.info(f"Running {command}")

        from commands import COMMANDS
        return COMMANDS[command](run)
    except RobustTrainingError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except KeyboardInterrupt:
        logger.info("Interrupted")
        return 130
    except Exception as e:
        logger.exception(f"Unexpected error: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
