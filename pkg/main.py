import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from taskweight.checks import run_check
from taskweight.config import load_config
from taskweight.exceptions import CheckFailedError, TaskWeightingError
from taskweight.ilqr import verify_acceptance
from taskweight.metalearn import MetaLearner
from taskweight.metrics import emit_metrics, emit_plot_data
from taskweight.models import CheckName, ExperimentConfig, StrategyName
from taskweight.tasks import build_environment, spawn_streams
from taskweight.trainer import SEED_STREAMS, evaluate, load_params, run_sweep, save_params, train

logger = logging.getLogger("taskweight.cli")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Task weighting for meta-learning by trajectory optimization.",
        epilog="Any config value can be overridden with --override key.subkey=value",
    )
    parser.add_argument("command", choices=["train", "eval", "check", "sweep"])
    parser.add_argument("--config", required=True, help="YAML experiment config")
    parser.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--strategy", choices=[s.value for s in StrategyName], default=None)
    parser.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    parser.add_argument("--check", choices=[c.value for c in CheckName], action="append",
                        help="diagnostic to run (default: all)")
    parser.add_argument("--checkpoint", default=None,
                        help="params.npz or checkpoint.npz whose parameters eval scores instead of training")
    return parser


def _overrides(args: argparse.Namespace) -> List[str]:
    overrides = list(args.override)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.strategy is not None:
        overrides.append(f"weighting.strategy={args.strategy}")
    return overrides


def _print(payload) -> None:
    print(json.dumps(payload, indent=2, default=str))


def cmd_train(config: ExperimentConfig, out: Optional[Path]) -> None:
    log = train(config, out)
    iterations = [it for record in log.records for it in record.ilqr]
    if not verify_acceptance(iterations):
        logger.warning("an accepted solver step violates the acceptance inequality")
    if out is not None:
        emit_metrics(log.records, out / "metrics.csv")
        emit_plot_data(log.records, out / "plot_data.csv", config.metrics.ema_factor)
        save_params(log.params, out / "params.npz")
    _print({
        "iterations": len(log.records),
        "max_delta_emp": log.max_delta,
        "family_counts": log.family_counts,
        "evaluation": log.evaluation.model_dump(),
    })


def cmd_eval(config: ExperimentConfig, checkpoint: Optional[str]) -> None:
    if checkpoint is not None:
        params = load_params(checkpoint)
    else:
        params = train(config).params
    env = build_environment(config.environment).with_probabilities(config.evaluation_probabilities())
    rng = spawn_streams(config.seed, SEED_STREAMS)["eval"]
    learner = MetaLearner(config.model, config.inner_loop)
    result = evaluate(params, env, config.evaluation.n_tasks, learner, rng)
    _print(result.model_dump())


def cmd_check(config: ExperimentConfig, names: Optional[List[str]], out: Optional[Path]) -> None:
    selected = [CheckName(n) for n in names] if names else list(CheckName)
    reports = [run_check(config, name) for name in selected]
    payload = [report.model_dump(mode="json") for report in reports]
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "checks.json").write_text(json.dumps(payload, indent=2))
    _print(payload)
    failed = [report.name.value for report in reports if not report.passed]
    if failed:
        raise CheckFailedError(f"diagnostic checks failed: {', '.join(failed)}")


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out) if args.out else None
    try:
        config = load_config(args.config, _overrides(args))
        if args.command == "train":
            cmd_train(config, out)
        elif args.command == "eval":
            cmd_eval(config, args.checkpoint)
        elif args.command == "check":
            cmd_check(config, args.check, out)
        else:
            _print(run_sweep(config, out))
    except TaskWeightingError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
