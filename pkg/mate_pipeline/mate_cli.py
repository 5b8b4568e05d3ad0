#!/usr/bin/env python3
"""
MATE Command Line
=================

Experiment entry point for the MATE pipeline.

Subcommands:
  train   collect -> update loop for one resolved config, persisted as a run directory
  eval    greedy (or scripted) evaluation of a checkpoint, summary beside its run
  bench   rollout/update scaling grid, bench.csv + scaling.csv + verdict summary
  check   property suites (invariance, oracle, recovery, injectivity, gradients, all)

Exit codes: 0 success, 1 configuration/usage error or checkpoint mismatch, 2 runtime error or NaN abort,
3 check-suite failure.

Examples:
  python mate_cli.py train --config 01_tmaze_passive --set train.episodes=500 --seed 7
  python mate_cli.py eval runs/<label>/checkpoints/final.mate --episodes 100
  python mate_cli.py bench --config 05_bench_grid --workers 4
  python mate_cli.py check all

Author: MATE Pipeline
Version: 1.0
"""

import argparse
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional

sys.path.insert(0, str(Path(__file__).parent / "04_utils"))

import numpy as np  # noqa: E402

from bench_harness import (run_grid, validate_lengths, write_bench_csv, write_bench_summary,  # noqa: E402
                           write_scaling_csv)
from check_suites import SUITES, report_lines, run_checks  # noqa: E402
from cmdp_envs import SCRIPTED_POLICIES, TMazeEnv, analytic_reference_returns  # noqa: E402
from config_manager import RunConfig, get_config, read_resolved, write_resolved  # noqa: E402
from env_manager import get_environment  # noqa: E402
from errors import CheckpointMismatchError, ConfigurationError, MateError, UsageError  # noqa: E402
from output_utils import banner, write_json, write_report  # noqa: E402
from path_manager import RunPaths, StagedRun  # noqa: E402
from rl_algos import load_agent  # noqa: E402
from trainer import build_networks, evaluate_policy, make_run_env, run_training, summarize_returns  # noqa: E402

logger = logging.getLogger("mate_cli")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_CHECK = 3

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"


class MateArgumentParser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; here usage errors share the config-error exit code"""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def setup_logging(verbose: bool = False) -> None:
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format=LOG_FORMAT,
                        handlers=[logging.StreamHandler(sys.stdout)], force=True)


def attach_run_log(path: Path) -> logging.Handler:
    handler = logging.FileHandler(path, mode="a", encoding="utf-8")
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    logging.getLogger().addHandler(handler)
    return handler


def detach_run_log(handler: logging.Handler) -> None:
    logging.getLogger().removeHandler(handler)
    handler.close()


def _stamp() -> str:
    return datetime.now(timezone.utc).strftime("%Y%m%d-%H%M%S")


def load_run_config(args: argparse.Namespace) -> RunConfig:
    """--config file, then --set overrides, then the --seed / --label shortcuts"""
    overrides: List[str] = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    if getattr(args, "label", None):
        overrides.append(f"label={json.dumps(args.label)}")
    return get_config().load_run_config(args.config, overrides)


def _raw_label(args: argparse.Namespace) -> Optional[str]:
    if getattr(args, "label", None):
        return args.label
    if args.config:
        return get_config().load_config(args.config).get("label")
    return None


# ----------------------------------------------------------------------
# operations
# ----------------------------------------------------------------------
def run_train(config: RunConfig, run_root: Path, workers: int = 1) -> Path:
    staged = StagedRun(run_root, config.label)
    with staged as run:
        handler = attach_run_log(run.log)
        try:
            write_resolved(config, run.config)
            summary = run_training(config, run, workers)
            logger.info(f"📊 Final eval {summary.final_eval}, best eval {summary.best_eval}")
        finally:
            detach_run_log(handler)
    return staged.final


def run_eval(checkpoint: Path, episodes: int, seed: Optional[int] = None, policy: str = "greedy",
             workers: int = 1) -> Dict[str, object]:
    if episodes < 1:
        raise UsageError(f"--episodes must be >= 1, got {episodes}")
    run = RunPaths.for_checkpoint(checkpoint)
    config = read_resolved(run.config)
    eval_seed = config.seeds["eval"] if seed is None else seed
    env = make_run_env(config, eval_seed)

    scripted = None
    if policy != "greedy":
        if not isinstance(env, TMazeEnv):
            raise UsageError(f"--policy {policy} needs a T-Maze environment, run uses {config.env.name}")
        scripted = SCRIPTED_POLICIES["oracle" if policy == "scripted" else policy]()

    nets = build_networks(config, env)
    load_agent(checkpoint, nets)
    nets.set_workers(workers)
    returns = evaluate_policy(env, nets, episodes, np.random.default_rng(eval_seed), scripted)

    summary: Dict[str, object] = summarize_returns(returns)
    summary.update({"checkpoint": str(Path(checkpoint).resolve()), "policy": policy, "seed": eval_seed,
                    "env": config.env.name})
    if isinstance(env, TMazeEnv):
        summary["reference_returns"] = analytic_reference_returns(env.spec)
    write_json(run.eval_summary, summary)
    logger.info(f"📊 Eval over {episodes} episodes: mean {summary['mean_return']:.6f} "
                f"(std {summary['std_return']:.6f}, min {summary['min_return']:.6f}, "
                f"max {summary['max_return']:.6f})")
    return summary


def run_bench(config: RunConfig, run_root: Path, label: str, workers: Optional[int] = None) -> Path:
    validate_lengths(config.bench.lengths)
    staged = StagedRun(run_root, label)
    with staged as run:
        handler = attach_run_log(run.log)
        try:
            write_resolved(config, run.config)
            result = run_grid(config.bench, seed=config.seeds["bench"], workers=workers)
            write_bench_csv(run.bench_csv, result.samples)
            write_scaling_csv(run.scaling_csv, result.reports)
            write_bench_summary(run.bench_summary, result)
            for text, ok in result.verdicts():
                logger.info(f"{'✅' if ok else '❌'} {text}")
        finally:
            detach_run_log(handler)
    return staged.final


def run_check(suite: str, run_root: Path, label: str, scale: float = 1.0) -> bool:
    staged = StagedRun(run_root, label)
    with staged as run:
        handler = attach_run_log(run.log)
        try:
            results = run_checks(suite, scale=scale)
            write_report(run.report, f"MATE PROPERTY CHECKS: {suite}", report_lines(results))
        finally:
            detach_run_log(handler)
    for result in results:
        print(result.line())
    return all(r.passed for r in results)


# ----------------------------------------------------------------------
# argument parsing
# ----------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = MateArgumentParser(
        prog="mate_cli.py",
        description="MATE experiments: train, eval, bench, check",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="Run directories are created under $MATE_RUN_ROOT (default ./runs).",
    )
    parser.add_argument("--verbose", action="store_true", help="Debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_args(p):
        p.add_argument("--config", help="Config name in 03_configs/ or a path to a JSON file")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="Override a config value (repeatable)")
        p.add_argument("--label", help="Run label (directory name under the run root)")
        p.add_argument("--seed", type=int, help="Master seed")
        p.add_argument("--workers", type=int, help="Position-parallel workers (default $MATE_WORKERS or 1)")

    train = sub.add_parser("train", help="Train an agent")
    add_config_args(train)

    evaluate = sub.add_parser("eval", help="Evaluate a checkpoint")
    evaluate.add_argument("checkpoint", type=Path, help="Checkpoint file inside a run directory")
    evaluate.add_argument("--episodes", type=int, default=100, help="Evaluation episodes (default 100)")
    evaluate.add_argument("--seed", type=int, help="Evaluation seed (default: the run's eval sub-seed)")
    evaluate.add_argument("--policy", default="greedy", choices=["greedy", "scripted", *sorted(SCRIPTED_POLICIES)],
                          help="greedy network policy or a scripted T-Maze surrogate (scripted = oracle)")
    evaluate.add_argument("--workers", type=int, help="Position-parallel workers")

    bench = sub.add_parser("bench", help="Run the scaling benchmark grid")
    add_config_args(bench)

    check = sub.add_parser("check", help="Run property suites")
    check.add_argument("suite", choices=[*SUITES, "all"])
    check.add_argument("--label", help="Run label")
    check.add_argument("--scale", type=float, default=1.0, help="Trial-count multiplier (default 1.0)")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"❌ Usage error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    setup_logging(args.verbose)

    try:
        environment = get_environment()
        run_root = environment.get_run_root()
        workers = getattr(args, "workers", None)
        if workers is None:
            workers = environment.get_default_workers()
        if workers < 1:
            raise UsageError(f"--workers must be >= 1, got {workers}")

        if args.command == "train":
            config = load_run_config(args)
            print(banner(f"🚀 TRAIN {config.label}"))
            final = run_train(config, run_root, workers)
            print(f"✅ Run directory: {final}")
        elif args.command == "eval":
            summary = run_eval(args.checkpoint, args.episodes, args.seed, args.policy, workers)
            print(json.dumps(summary, indent=2, sort_keys=True))
        elif args.command == "bench":
            config = load_run_config(args)
            label = _raw_label(args) or f"bench-{_stamp()}"
            print(banner(f"⏱️  BENCH {label}"))
            final = run_bench(config, run_root, label, getattr(args, "workers", None))
            print(f"✅ Run directory: {final}")
        else:
            label = args.label or f"check-{args.suite}-{_stamp()}"
            print(banner(f"🔍 CHECK {args.suite}"))
            if not run_check(args.suite, run_root, label, args.scale):
                print("❌ Property checks failed")
                return EXIT_CHECK
            print("✅ All properties passed")
        return EXIT_OK
    except (ConfigurationError, UsageError, CheckpointMismatchError) as e:
        logger.error(f"❌ {e}")
        return EXIT_CONFIG
    except MateError as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        print("\n🛑 Interrupted by user")
        return EXIT_RUNTIME
    except Exception as e:
        logger.error(f"💥 {args.command} crashed: {type(e).__name__}: {e}")
        logger.debug("traceback", exc_info=True)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
