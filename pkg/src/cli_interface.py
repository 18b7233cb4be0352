"""
CCPO Command-Line Interface
Train, compare, sweep and verify from the terminal

Usage:
    python -m src.cli_interface train --config configs/hint.cfg [--out DIR]
    python -m src.cli_interface verify --suite all [--seed S] [--out DIR]
    python -m src.cli_interface compare --config configs/freerider.cfg [--out DIR]
    python -m src.cli_interface sweep --config configs/hint.cfg --param trainer.alpha --values 0.5,1,2

Exit codes: 0 success, 1 failed verification or output error, 2 config or usage error.
"""

import argparse
import math
import sys
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from src.config import CONFIG_KEYS, Config, ConfigError, TrainerConfig, dump_config, load_config
from src.run_record import OutputError, RunRecord, make_run_id, write_compare, write_outputs, write_sweep
from src.trainer import StepReport, TrainingError, build_state, evaluate, solo_evaluate, train
from src.validator import ValidationError
from src.verification import SUITES, run_suites
from src.logger import get_logger

logger = get_logger('CLI_Interface')

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def print_header(title: str):
    print("\n" + "=" * 70)
    print(f"  {title}")
    print("=" * 70)


def print_footer(message: str):
    print("\n" + "=" * 70)
    print(message)
    print("=" * 70 + "\n")


def run_training(trainer_config: TrainerConfig, env_spec) -> Tuple[List[StepReport], Dict[str, float]]:
    """Build env and policies, train, then evaluate greedily"""
    env = env_spec.build_env()
    state = build_state(env, env_spec.build_policies(env), trainer_config)
    reports = train(state)
    metrics = {'joint_acc': evaluate(state), 'final_train_acc': reports[-1].train_accuracy}
    metrics['solo_acc'] = solo_evaluate(state) if env.topology == 'sequential' else math.nan
    return reports, metrics


def _default_out(seed: int, suffix: str = '') -> Path:
    return Path(Config.RUNS_DIR) / (make_run_id(seed) + suffix)


def cmd_train(args) -> int:
    trainer_config, env_spec = load_config(args.config)
    out = Path(args.out) if args.out else _default_out(trainer_config.seed)
    logger.log_run('train', config=args.config, seed=trainer_config.seed, out=str(out))

    print_header("CCPO TRAINING")
    print(f"Config:   {args.config}")
    print(f"Env:      {env_spec.resolved().preset} ({env_spec.resolved().topology})")
    print(f"Credit:   {trainer_config.credit_mode} / {trainer_config.schedule}")
    print(f"Steps:    {trainer_config.steps}")
    print(f"Seed:     {trainer_config.seed}")

    reports, metrics = run_training(trainer_config, env_spec)
    record = RunRecord(make_run_id(trainer_config.seed), dump_config(trainer_config, env_spec),
                       reports, metrics)
    write_outputs(record, out)

    print(f"\n✅ Training finished")
    print(f"  Joint accuracy:  {metrics['joint_acc']:.4f}")
    if not math.isnan(metrics['solo_acc']):
        print(f"  Solo accuracy:   {metrics['solo_acc']:.4f}")
    print(f"  Final train acc: {metrics['final_train_acc']:.4f}")
    print_footer(f"Outputs written to {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    seed = args.seed
    if seed is None:
        seed = Config.seed_override() or 0
    logger.log_run('verify', suite=args.suite, seed=seed)

    print_header(f"CCPO VERIFICATION - suite '{args.suite}' (seed {seed})")
    results = run_suites(args.suite, seed)
    for result in results:
        mark = '✅' if result.passed else '❌'
        line = f"{mark} {result.name}: measured={result.measured:.6g} bound={result.bound:.6g}"
        print(line + (f"  [{result.detail}]" if result.detail else ''))

    failed = [r for r in results if not r.passed]
    if args.out:
        write_outputs(RunRecord(make_run_id(seed), verification_results=results), args.out)

    if failed:
        print_footer(f"❌ {len(failed)} of {len(results)} checks failed")
        return EXIT_FAILURE
    print_footer(f"✅ All {len(results)} checks passed (0 violations)")
    return EXIT_OK


def cmd_compare(args) -> int:
    """Same env and seed under ccpo and shared credit; first batches match draw-for-draw"""
    trainer_config, env_spec = load_config(args.config)
    out = Path(args.out) if args.out else _default_out(trainer_config.seed, '-compare')
    logger.log_run('compare', config=args.config, seed=trainer_config.seed, out=str(out))
    print_header("CCPO vs SHARED CREDIT")

    curves = {}
    for mode in ('ccpo', 'shared'):
        config = trainer_config.replace(credit_mode=mode)
        reports, metrics = run_training(config, env_spec)
        record = RunRecord(make_run_id(config.seed), dump_config(config, env_spec), reports, metrics)
        write_outputs(record, out / mode)
        curves[mode] = reports
        peak = max(r.grad_norms[0] for r in reports)
        print(f"  {mode:<7} joint_acc={metrics['joint_acc']:.4f}  max agent-1 grad norm={peak:.6g}")

    path = write_compare(out / 'plotdata' / 'compare.csv', curves)
    print_footer(f"✅ Paired curves written to {path}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    key = args.param.strip().lower()
    if key not in CONFIG_KEYS:
        raise ConfigError(f"Unknown sweep parameter '{key}'", key)
    values = [v.strip() for v in args.values.split(',') if v.strip()]
    if not values:
        raise ConfigError("--values must list at least one value", key)

    base_config, _ = load_config(args.config)
    out = Path(args.out) if args.out else _default_out(base_config.seed, '-sweep')
    logger.log_run('sweep', config=args.config, param=key, values=values, out=str(out))
    print_header(f"CCPO SWEEP - {key}")

    rows = []
    for value in values:
        trainer_config, env_spec = load_config(args.config, overrides={key: value})
        reports, metrics = run_training(trainer_config, env_spec)
        record = RunRecord(make_run_id(trainer_config.seed), dump_config(trainer_config, env_spec),
                           reports, metrics)
        write_outputs(record, out / f'{key}={value}')
        rows.append((value, metrics['joint_acc'], metrics['solo_acc'], metrics['final_train_acc']))
        print(f"  {key}={value:<10} joint_acc={metrics['joint_acc']:.4f}  solo_acc={metrics['solo_acc']:.4f}")

    path = write_sweep(out / 'sweep.csv', rows)
    print_footer(f"✅ Sweep written to {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='ccpo',
        description='Counterfactual credit policy optimization: training runs and verification suites',
    )
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('train', help='Train a team from a config file')
    p.add_argument('--config', required=True, help='Config file path')
    p.add_argument('--out', help=f'Output directory (default {Config.RUNS_DIR}/<run_id>)')
    p.set_defaults(func=cmd_train)

    p = sub.add_parser('verify', help='Run oracle verification suites')
    p.add_argument('--suite', default='all', choices=list(SUITES) + ['all'])
    p.add_argument('--seed', type=int, help='Seed (default $CCPO_SEED or 0)')
    p.add_argument('--out', help='Write summary.json to this directory')
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser('compare', help='Train with ccpo and shared credit on the same seed')
    p.add_argument('--config', required=True)
    p.add_argument('--out')
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser('sweep', help='Train once per value of one config key')
    p.add_argument('--config', required=True)
    p.add_argument('--param', required=True, help='Config key, e.g. trainer.alpha')
    p.add_argument('--values', required=True, help='Comma-separated values')
    p.add_argument('--out')
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point; returns the process exit code"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 0 for --help and 2 for usage errors
        return e.code if isinstance(e.code, int) else EXIT_USAGE

    try:
        return args.func(args)
    except ConfigError as e:
        print(f"\n❌ Config error: {e}", file=sys.stderr)
        logger.error(f"Config error ({e.key}): {e}")
        return EXIT_USAGE
    except ValidationError as e:
        print(f"\n❌ Invalid setting: {e}", file=sys.stderr)
        logger.error(f"Invalid setting ({e.field}): {e}")
        return EXIT_USAGE
    except (OutputError, OSError) as e:
        print(f"\n❌ Output error: {e}", file=sys.stderr)
        logger.error(f"Output error: {e}")
        return EXIT_FAILURE
    except TrainingError as e:
        print(f"\n❌ Training aborted: {e}", file=sys.stderr)
        logger.error(f"Training aborted: {e}")
        return EXIT_FAILURE
    except KeyboardInterrupt:
        print("\n\n👋 Interrupted")
        return EXIT_FAILURE


if __name__ == '__main__':
    sys.exit(main())
