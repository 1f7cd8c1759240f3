"""CSV persistence of training logs and EMA-smoothed plot data."""
import csv
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

from .exceptions import OutputError
from .models import IterationRecord

logger = logging.getLogger(__name__)

METRIC_FIELDS = [
    "iteration", "step", "task_index", "weight", "val_loss", "val_accuracy",
    "theta1", "epsilon_accepted", "ls_trials", "delta_emp", "wall_ms",
]
INTEGER_FIELDS = {"iteration", "step", "task_index", "ls_trials"}
PLOT_FIELDS = ["iteration", "val_loss", "val_accuracy", "val_loss_ema", "val_accuracy_ema"]
SUMMARY_FIELDS = [
    "parameter", "value", "seed", "final_val_loss", "final_val_accuracy",
    "max_delta_emp", "first_iteration_at_target",
]

PathLike = Union[str, Path]


def format_value(value: Any) -> str:
    """17 significant digits for floats so a reload is bit-identical."""
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def metric_rows(records: Sequence[IterationRecord]) -> List[Dict[str, Any]]:
    """One row per (iteration, step, task)."""
    rows = []
    for record in records:
        for step, weights in enumerate(record.weights):
            for task_index, weight in enumerate(weights):
                rows.append({
                    "iteration": record.iteration,
                    "step": step,
                    "task_index": task_index,
                    "weight": float(weight),
                    "val_loss": record.val_loss,
                    "val_accuracy": record.val_accuracy,
                    "theta1": record.theta1,
                    "epsilon_accepted": record.epsilon,
                    "ls_trials": record.ls_trials,
                    "delta_emp": record.delta_emp,
                    "wall_ms": record.wall_ms,
                })
    return rows


def _write_rows(path: PathLike, fieldnames: List[str], rows: List[Dict[str, Any]]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=fieldnames, lineterminator="\n")
            writer.writeheader()
            for row in rows:
                writer.writerow({key: format_value(row[key]) for key in fieldnames})
    except OSError as e:
        raise OutputError(f"cannot write metrics ({e.strerror})", str(path))
    logger.debug(f"wrote {len(rows)} rows to {path}")
    return path


def emit_metrics(records: Sequence[IterationRecord], path: PathLike) -> Path:
    """
    Write the per-task weight trace of a training log as CSV.

    Args:
        records: Iteration records of a TrainLog
        path: Destination file

    Returns:
        The written path

    Raises:
        OutputError: If the file cannot be written
    """
    return _write_rows(path, METRIC_FIELDS, metric_rows(records))


def read_metrics(path: PathLike) -> List[Dict[str, Any]]:
    """Parse a metrics CSV back into typed rows."""
    path = Path(path)
    try:
        with path.open(newline="") as f:
            reader = csv.DictReader(f)
            if reader.fieldnames != METRIC_FIELDS:
                raise OutputError("unexpected metrics header", str(path))
            return [
                {key: int(value) if key in INTEGER_FIELDS else float(value) for key, value in row.items()}
                for row in reader
            ]
    except OSError as e:
        raise OutputError(f"cannot read metrics ({e.strerror})", str(path))


def ema(values: Sequence[float], factor: float = 0.1) -> List[float]:
    """Exponential moving average s <- factor * x + (1 - factor) * s, seeded with the first value."""
    smoothed: List[float] = []
    for value in values:
        smoothed.append(value if not smoothed else factor * value + (1.0 - factor) * smoothed[-1])
    return smoothed


def emit_plot_data(records: Sequence[IterationRecord], path: PathLike, factor: float = 0.1) -> Path:
    """Write raw and smoothed validation curves for the evaluated iterations."""
    evaluated = [r for r in records if not math.isnan(r.val_loss)]
    losses = ema([r.val_loss for r in evaluated], factor)
    accuracies = ema([r.val_accuracy for r in evaluated], factor)
    rows = [
        {
            "iteration": r.iteration,
            "val_loss": r.val_loss,
            "val_accuracy": r.val_accuracy,
            "val_loss_ema": loss,
            "val_accuracy_ema": accuracy,
        }
        for r, loss, accuracy in zip(evaluated, losses, accuracies)
    ]
    return _write_rows(path, PLOT_FIELDS, rows)


def first_iteration_at(records: Sequence[IterationRecord], target: Optional[float]) -> int:
    """First iteration whose validation loss is at or below target, -1 if none."""
    if target is None:
        return -1
    for record in records:
        if record.val_loss <= target:
            return record.iteration
    return -1


def emit_sweep_summary(rows: List[Dict[str, Any]], path: PathLike) -> Path:
    return _write_rows(path, SUMMARY_FIELDS, rows)
