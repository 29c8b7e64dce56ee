#!/usr/bin/env python3
"""
murtree-desk - Command Line Interface

Commands: gen, train, eval, score, ablate. Diagnostics go to stderr; results
are written to files (plus a short summary on stdout).
"""
import argparse
import sys
from pathlib import Path
from typing import List, Optional

from app_config import ERROR_CONFIG, PATHS_CONFIG
from src.config import RunConfig, flag_overrides
from src.core.config import load_runtime_settings
from src.core.exceptions import MurTreeError
from src.data.models import Split
from src.data.storage import DatasetStore
from src.data.synth import dataset, scene_spec
from src.training.trainer import (
    Evaluator,
    Trainer,
    load_training_state,
    run_ablation,
    score_sample,
)
from src.utils.logging import ContextualLogger, get_logger, setup_logging

logger = get_logger(__name__)


def _checkpoint_path(config: RunConfig) -> Path:
    if config.paths.checkpoint:
        return Path(config.paths.checkpoint)
    return Path(config.paths.out) / PATHS_CONFIG["checkpoint_file"]


def cmd_gen(config: RunConfig) -> int:
    """Generate the synthetic dataset into paths.data"""
    summary = dataset(scene_spec(config), config.data.count,
                      (config.data.train_ratio, config.data.val_ratio, config.data.test_ratio), config.paths.data)
    splits = ", ".join(f"{name} {size}" for name, size in summary.split_sizes.items())
    print(f"✅ {summary.count} scenes in {summary.root} ({splits}); {summary.change_cells} changed cells")
    return ERROR_CONFIG["exit_ok"]


def cmd_train(config: RunConfig) -> int:
    """Train from scratch, or resume when --checkpoint points at an existing file"""
    store = DatasetStore(config.paths.data)
    resume = Path(config.paths.checkpoint) if config.paths.checkpoint else None
    if resume is not None and resume.exists():
        net, optimizer, epoch = load_training_state(resume, config)
        trainer = Trainer(net.config, store, net, optimizer, start_epoch=epoch)
        logger.info(f"Resuming from {resume} at epoch {epoch}")
    else:
        trainer = Trainer(config, store)
    logger.info(f"Training {trainer.net.parameter_count()} parameters {trainer.net.parameter_summary()}")
    records = trainer.fit(config.paths.out)
    final = records[-1].losses["total"] if records else float("nan")
    print(f"✅ trained to epoch {trainer.epoch}, final loss {final:.4f}; checkpoint in {config.paths.out}")
    return ERROR_CONFIG["exit_ok"]


def cmd_eval(config: RunConfig, split: str) -> int:
    net, _, _ = load_training_state(_checkpoint_path(config), config)
    store = DatasetStore(config.paths.data)
    path, report = Evaluator(net, store).write_report(split, config.paths.out)
    print(f"✅ {split}: mIoU {report['miou']:.4f}, IoU {report['iou']:.4f}, F1 {report['f1']:.4f} -> {path}")
    return ERROR_CONFIG["exit_ok"]


def cmd_score(config: RunConfig, sample: int) -> int:
    net, _, _ = load_training_state(_checkpoint_path(config), config)
    store = DatasetStore(config.paths.data)
    result = score_sample(net, store, sample, config.paths.out)
    print(" ".join(str(i) for i in result.selected))
    return ERROR_CONFIG["exit_ok"]


def cmd_ablate(config: RunConfig) -> int:
    store = DatasetStore(config.paths.data)
    report = run_ablation(config, store, config.paths.out)
    for name, entry in report.items():
        print(f"{name:>10}  mIoU {entry['mean']['miou']:.4f}  IoU {entry['mean']['iou']:.4f}")
    return ERROR_CONFIG["exit_ok"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="murtree-desk",
        description="Multimodal tree-cover segmentation with uncertainty-guided patch replacement",
        epilog="Config precedence: defaults < --config file < --set key=value < dedicated flags",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='JSON config file with dotted keys')
    common.add_argument('--set', action='append', default=[], metavar='KEY=VALUE', dest='assignments',
                        help='Override one config key (repeatable)')
    common.add_argument('--seed', type=int, help='Run seed')
    common.add_argument('--out', help='Output directory')
    common.add_argument('--data', help='Dataset directory')

    subparsers = parser.add_subparsers(dest='command', help='Available commands')

    gen_parser = subparsers.add_parser('gen', parents=[common], help='Generate the synthetic dataset')
    gen_parser.add_argument('--change-patches', type=int, help='Changed cells injected per scene')

    train_parser = subparsers.add_parser('train', parents=[common], help='Train a model')
    train_parser.add_argument('--checkpoint', help='Resume from this checkpoint')
    train_parser.add_argument('--epochs', type=int, help='Total number of epochs')

    eval_parser = subparsers.add_parser('eval', parents=[common], help='Evaluate a checkpoint')
    eval_parser.add_argument('--checkpoint', help='Checkpoint to evaluate')
    eval_parser.add_argument('--split', choices=[s.value for s in Split], default=Split.TEST.value)

    score_parser = subparsers.add_parser('score', parents=[common], help='Export uncertainty maps for one sample')
    score_parser.add_argument('--checkpoint', help='Checkpoint to use')
    score_parser.add_argument('--sample', type=int, required=True, help='Sample id')

    ablate_parser = subparsers.add_parser('ablate', parents=[common], help='Component ablation over several seeds')
    ablate_parser.add_argument('--runs', type=int, help='Seeds per variant')
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    flags = {
        name: getattr(args, name, None)
        for name in ("seed", "out", "data", "checkpoint", "runs", "change_patches", "epochs")
    }
    if args.command == "gen" and flags["out"] is not None:
        flags["data"], flags["out"] = flags["out"], None
    return RunConfig.load(args.config, args.assignments, flag_overrides(**flags))


def main(argv: Optional[List[str]] = None) -> int:
    """Run one command; returns the process exit code"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return ERROR_CONFIG["exit_ok"] if e.code == 0 else ERROR_CONFIG["exit_usage"]
    if not args.command:
        parser.print_help(sys.stderr)
        return ERROR_CONFIG["exit_usage"]

    settings = load_runtime_settings()
    setup_logging(settings.log_level, settings.log_file)
    log = ContextualLogger(logger, command=args.command)

    try:
        config = resolve_config(args)
        if args.command == 'gen':
            return cmd_gen(config)
        if args.command == 'train':
            return cmd_train(config)
        if args.command == 'eval':
            return cmd_eval(config, args.split)
        if args.command == 'score':
            return cmd_score(config, args.sample)
        if args.command == 'ablate':
            return cmd_ablate(config)
    except KeyboardInterrupt:
        print(f"\n{ERROR_CONFIG['error_prefix']} interrupted", file=sys.stderr)
        return ERROR_CONFIG["exit_failure"]
    except (MurTreeError, OSError) as e:
        log.error(f"{type(e).__name__}: {e}")
        print(f"{ERROR_CONFIG['error_prefix']} {e}", file=sys.stderr)
        return ERROR_CONFIG["exit_failure"]
    return ERROR_CONFIG["exit_usage"]


if __name__ == "__main__":
    sys.exit(main())
