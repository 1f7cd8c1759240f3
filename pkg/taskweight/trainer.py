"""Outer meta-training loop, held-out evaluation and checkpointing."""
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from .config import with_overrides
from .dynamics import BaseDynamics, build_dynamics
from .exceptions import ArgumentError, NumericError, OutputError
from .metalearn import MetaLearner
from .metrics import emit_metrics, emit_sweep_summary, first_iteration_at
from .models import (
    EvaluationResult,
    ExperimentConfig,
    IterationRecord,
    StrategyName,
)
from .predictor import init_params
from .tasks import (
    Task,
    TaskEnvironment,
    build_environment,
    family_counts,
    sample_task_batch,
    spawn_streams,
)
from .utils import PhaseTimer, log_execution_time
from .weighting.base import BaseWeighting, HorizonPlan, WeightingContext
from .weighting.baseline import exploitation, exploration
from .weighting.trajectory import tow
from .weighting.uniform import uniform

logger = logging.getLogger(__name__)

SEED_STREAMS = ("init", "train", "eval", "nominal", "checks")

STRATEGIES: Dict[StrategyName, BaseWeighting] = {
    StrategyName.UNIFORM: uniform,
    StrategyName.EXPLORATION: exploration,
    StrategyName.EXPLOITATION: exploitation,
    StrategyName.TOW: tow,
}


@dataclass
class TrainLog:
    """Per-iteration records plus the final meta-parameters and optimizer."""
    records: List[IterationRecord]
    params: np.ndarray
    dynamics: BaseDynamics
    family_counts: List[int] = field(default_factory=list)
    evaluation: Optional[EvaluationResult] = None

    @property
    def val_losses(self) -> List[float]:
        return [r.val_loss for r in self.records]

    @property
    def train_losses(self) -> List[float]:
        return [r.train_loss for r in self.records]

    @property
    def max_delta(self) -> float:
        return max((r.delta_emp for r in self.records), default=0.0)


def _ci95(values: np.ndarray) -> float:
    return float(1.96 * np.std(values, ddof=1) / math.sqrt(len(values)))


def evaluate_tasks(x: np.ndarray, tasks: Sequence[Task], learner: MetaLearner) -> EvaluationResult:
    """
    Adapt on each task's support set and score its query set.

    Returns:
        EvaluationResult with means and 95% confidence half-widths

    Raises:
        ArgumentError: If fewer than two tasks are given
    """
    if len(tasks) < 2:
        raise ArgumentError(f"evaluation needs at least 2 tasks, got {len(tasks)}")
    scores = np.array([learner.score_task(x, task) for task in tasks])
    losses, accuracies = scores[:, 0], scores[:, 1]
    return EvaluationResult(
        mean_loss=float(np.mean(losses)),
        mean_accuracy=float(np.mean(accuracies)),
        loss_ci95=_ci95(losses),
        accuracy_ci95=_ci95(accuracies),
        n_tasks=len(tasks),
    )


@log_execution_time
def evaluate(x: np.ndarray, env: TaskEnvironment, n_tasks: int, learner: MetaLearner,
             rng: np.random.Generator) -> EvaluationResult:
    """Evaluate on n_tasks fresh tasks drawn from env with rng."""
    if n_tasks < 2:
        raise ArgumentError(f"evaluation needs at least 2 tasks, got {n_tasks}")
    return evaluate_tasks(x, [env.sample_task(rng) for _ in range(n_tasks)], learner)


def _write_checkpoint(out_dir: Path, iteration: int, x: np.ndarray, dynamics: BaseDynamics) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "checkpoint.npz"
    np.savez(path, params=x, iteration=np.array(iteration), **dynamics.state_arrays())
    return path


def save_params(params: np.ndarray, path: Union[str, Path]) -> Path:
    """Write meta-parameters as an .npz archive with a ``params`` entry."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savez(path, params=np.asarray(params, dtype=float))
    except OSError as e:
        raise OutputError(f"cannot write parameters ({e})", str(path))
    return path


def load_params(path: Union[str, Path]) -> np.ndarray:
    """
    Read meta-parameters from a checkpoint or parameter archive.

    Accepts an .npz with a ``params`` entry (checkpoints and ``save_params``
    output) or a bare .npy array.

    Raises:
        OutputError: If the file is missing, unreadable, or has no parameters
    """
    try:
        loaded = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as e:
        raise OutputError(f"cannot read parameters ({e})", str(path))
    if isinstance(loaded, np.ndarray):
        params = loaded
    else:
        with loaded:
            if "params" not in loaded.files:
                raise OutputError("archive has no 'params' entry", str(path))
            params = loaded["params"]
    if params.ndim != 1:
        raise OutputError(f"parameters must be a vector, got shape {params.shape}", str(path))
    return params.astype(float)


def _record(iteration: int, plan: HorizonPlan, timer: PhaseTimer, record_timing: bool,
            evaluation: Optional[EvaluationResult]) -> IterationRecord:
    iterations = list(plan.iterations)
    record = IterationRecord(
        iteration=iteration,
        weights=[u.tolist() for u in plan.actions],
        train_loss=plan.train_loss,
        delta_emp=plan.delta(),
        wall_ms=timer.total_ms if record_timing else 0.0,
        timings=dict(timer.totals) if record_timing else {},
        ilqr=iterations,
    )
    updates = {}
    if iterations:
        updates.update(
            theta1=iterations[0].theta1,
            epsilon=iterations[-1].epsilon,
            ls_trials=sum(it.trials for it in iterations),
        )
    if evaluation is not None:
        updates.update(val_loss=evaluation.mean_loss, val_accuracy=evaluation.mean_accuracy)
    return record.model_copy(update=updates)


@log_execution_time
def train(config: ExperimentConfig, out_dir: Optional[Union[str, Path]] = None) -> TrainLog:
    """
    Run the outer meta-training loop.

    Each iteration samples T mini-batches, lets the configured strategy choose
    and apply the weights over the horizon, and continues from the state the
    strategy hands back. The held-out task set is drawn once, so validation
    numbers are comparable across iterations.

    Args:
        config: Validated experiment configuration
        out_dir: Where a checkpoint is written if training fails numerically

    Returns:
        TrainLog

    Raises:
        NumericError: After writing checkpoint.npz (when out_dir is given)
    """
    streams = spawn_streams(config.seed, SEED_STREAMS)
    env = build_environment(config.environment)
    eval_env = env.with_probabilities(config.evaluation_probabilities())
    learner = MetaLearner(config.model, config.inner_loop)
    strategy = STRATEGIES[config.weighting.strategy]
    context = WeightingContext(learner, config.weighting, streams["nominal"])
    training = config.training

    x = init_params(config.model, streams["init"], training.init_scale)
    dynamics = build_dynamics(config.dynamics)
    held_out = [eval_env.sample_task(streams["eval"]) for _ in range(config.evaluation.n_tasks)]
    every = config.evaluation.every
    logger.info(
        f"training with {strategy.name}: {training.n_iterations} iterations, "
        f"T={training.horizon}, M={training.batch_size}, D={config.model.parameter_count}"
    )

    records: List[IterationRecord] = []
    all_batches = []
    for iteration in range(training.n_iterations):
        timer = PhaseTimer()
        try:
            with timer.phase("sample"):
                batches = [sample_task_batch(env, streams["train"], training.batch_size)
                           for _ in range(training.horizon)]
            with timer.phase("weights"):
                plan = strategy.run(x, batches, dynamics, context)
            x_next = plan.final_state
            evaluation = None
            last = iteration == training.n_iterations - 1
            if every > 0 and (iteration % every == 0 or last):
                with timer.phase("evaluate"):
                    evaluation = evaluate_tasks(x_next, held_out, learner)
        except NumericError:
            if out_dir is not None:
                path = _write_checkpoint(Path(out_dir), iteration, x, dynamics)
                logger.error(f"numeric failure in iteration {iteration}; checkpoint written to {path}")
            raise
        x, dynamics = x_next, plan.final_dynamics
        all_batches.extend(batches)

        record = _record(iteration, plan, timer, config.metrics.record_timing, evaluation)
        records.append(record)
        logger.info(
            f"iteration {iteration}: train loss {record.train_loss:.6g}, "
            f"val loss {record.val_loss:.6g}, val acc {record.val_accuracy:.4g}, "
            f"theta1 {record.theta1:.3e}, delta {record.delta_emp:.3e}"
        )

    counts = family_counts(all_batches, env.n_families)
    if all_batches:
        logger.info(f"sampled tasks per family: {counts}")
    final = evaluate_tasks(x, held_out, learner)
    return TrainLog(records=records, params=x, dynamics=dynamics,
                    family_counts=counts, evaluation=final)


def _slug(value: Any) -> str:
    return "".join(ch if ch.isalnum() or ch in ".-" else "_" for ch in str(value))


@log_execution_time
def run_sweep(config: ExperimentConfig, out_dir: Optional[Union[str, Path]] = None) -> List[Dict[str, Any]]:
    """
    Train once per (value, seed) of the configured sweep.

    Writes one metrics CSV per run and sweep_summary.csv when out_dir is given.
    A run that fails numerically leaves its checkpoint in its own run_<value>_seed<seed>
    subdirectory.

    Returns:
        Summary rows, one per run
    """
    sweep = config.sweep
    seeds = sweep.seeds or [config.seed]
    out = Path(out_dir) if out_dir is not None else None
    rows = []
    for value in sweep.values:
        for seed in seeds:
            run_config = with_overrides(config, [f"{sweep.parameter}={json.dumps(value)}", f"seed={seed}"])
            logger.info(f"sweep run {sweep.parameter}={value}, seed {seed}")
            run_dir = out / f"run_{_slug(value)}_seed{seed}" if out is not None else None
            log = train(run_config, run_dir)
            if out is not None:
                emit_metrics(log.records, out / f"metrics_{_slug(value)}_seed{seed}.csv")
            rows.append({
                "parameter": sweep.parameter,
                "value": value,
                "seed": seed,
                "final_val_loss": log.evaluation.mean_loss,
                "final_val_accuracy": log.evaluation.mean_accuracy,
                "max_delta_emp": log.max_delta,
                "first_iteration_at_target": first_iteration_at(log.records, config.metrics.target_loss),
            })
    if out is not None:
        emit_sweep_summary(rows, out / "sweep_summary.csv")
    return rows
