"""
Synthetic few-shot task environments with a controllable family imbalance.

Each environment draws a task family from ``family_probabilities`` and then a
task from that family. Sampling is driven only by the ``numpy.random.Generator``
passed in, so identical generator states give bit-identical batches.
"""
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Dict, Iterable, Iterator, List, Sequence, Tuple, Union

import numpy as np

from .exceptions import ArgumentError, ConfigurationError
from .models import ClusterEnvironmentConfig, SineEnvironmentConfig

logger = logging.getLogger(__name__)

EnvironmentSettings = Union[SineEnvironmentConfig, ClusterEnvironmentConfig]


@dataclass(frozen=True)
class Samples:
    """Inputs of shape (n, d_in) with real targets (n, d_out) or class indices (n,)."""
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        if self.inputs.ndim != 2:
            raise ArgumentError(f"inputs must be 2-D, got shape {self.inputs.shape}")
        if len(self.targets) != len(self.inputs):
            raise ArgumentError(
                f"{len(self.inputs)} inputs but {len(self.targets)} targets"
            )

    def __len__(self) -> int:
        return len(self.inputs)


@dataclass(frozen=True)
class Task:
    support: Samples
    query: Samples
    family_id: int


@dataclass(frozen=True)
class TaskBatch:
    """An ordered mini-batch of M tasks."""
    tasks: Tuple[Task, ...]

    def __post_init__(self):
        if len(self.tasks) < 1:
            raise ArgumentError("a task batch needs at least one task")
        dims = {(t.support.inputs.shape[1], t.query.inputs.shape[1]) for t in self.tasks}
        if len(dims) != 1:
            raise ArgumentError("all tasks in a batch must share input dimensionality")

    def __len__(self) -> int:
        return len(self.tasks)

    def __iter__(self) -> Iterator[Task]:
        return iter(self.tasks)

    def __getitem__(self, index: int) -> Task:
        return self.tasks[index]

    @classmethod
    def of(cls, tasks: Iterable[Task]) -> "TaskBatch":
        return cls(tuple(tasks))


def split_support_query(points: Samples, m_s: int, m_q: int) -> Tuple[Samples, Samples]:
    """
    Split drawn points into support and query sets.

    Args:
        points: All points drawn for one task
        m_s: Support size
        m_q: Query size

    Returns:
        (support, query) where support holds the first m_s points

    Raises:
        ArgumentError: If m_s + m_q does not match the number of points
    """
    if m_s < 1 or m_q < 1:
        raise ArgumentError(f"support and query sizes must be positive, got {m_s}, {m_q}")
    if m_s + m_q != len(points):
        raise ArgumentError(f"cannot split {len(points)} points into {m_s} + {m_q}")
    support = Samples(points.inputs[:m_s].copy(), points.targets[:m_s].copy())
    query = Samples(points.inputs[m_s:].copy(), points.targets[m_s:].copy())
    return support, query


class TaskEnvironment(ABC):
    """Abstract base class for task environments."""

    def __init__(self, config: EnvironmentSettings):
        if config.n_families < 1:
            raise ConfigurationError("environment needs at least one task family")
        self.config = config
        self._probabilities = np.asarray(config.family_probabilities, dtype=float)

    @property
    def n_families(self) -> int:
        return self.config.n_families

    @property
    def input_dim(self) -> int:
        return self.config.input_dim

    def sample_family(self, rng: np.random.Generator) -> int:
        return int(rng.choice(self.n_families, p=self._probabilities))

    def sample_task(self, rng: np.random.Generator) -> Task:
        family_id = self.sample_family(rng)
        points = self.draw_points(family_id, rng)
        support, query = split_support_query(points, self.config.m_s, self.config.m_q)
        return Task(support=support, query=query, family_id=family_id)

    @abstractmethod
    def draw_points(self, family_id: int, rng: np.random.Generator) -> Samples:
        """
        Draw m_s + m_q points of one task from the given family.

        Returns:
            Points ordered support first, query second
        """
        pass

    def with_probabilities(self, probabilities: Sequence[float]) -> "TaskEnvironment":
        """Return the same environment under a different family distribution."""
        config = type(self.config).model_validate(
            {**self.config.model_dump(), "family_probabilities": list(probabilities)}
        )
        return type(self)(config)


class SineRegressionEnvironment(TaskEnvironment):
    """Tasks y = A sin(s - phase) + noise with s uniform over the input range."""

    def draw_points(self, family_id: int, rng: np.random.Generator) -> Samples:
        family = self.config.families[family_id]
        n = self.config.m_s + self.config.m_q
        amplitude = rng.uniform(*family.amplitude)
        phase = rng.uniform(*family.phase)
        inputs = rng.uniform(*self.config.input_range, size=(n, 1))
        targets = amplitude * np.sin(inputs - phase)
        if self.config.noise_std > 0:
            targets = targets + self.config.noise_std * rng.standard_normal(targets.shape)
        return Samples(inputs, targets)


class ClusterClassificationEnvironment(TaskEnvironment):
    """N-way classification of isotropic Gaussian clusters around family centres."""

    def __init__(self, config: ClusterEnvironmentConfig):
        super().__init__(config)
        self._centers = [np.asarray(f.centers, dtype=float) for f in config.families]

    def draw_points(self, family_id: int, rng: np.random.Generator) -> Samples:
        cfg = self.config
        centers = self._centers[family_id]
        if cfg.task_shift_std > 0:
            centers = centers + cfg.task_shift_std * rng.standard_normal(cfg.input_dim)
        order = rng.permutation(cfg.n_way) if cfg.permute_labels else np.arange(cfg.n_way)
        # classes are balanced within support and within query
        labels = np.concatenate([np.arange(cfg.m_s) % cfg.n_way, np.arange(cfg.m_q) % cfg.n_way])
        spread = np.hypot(cfg.cluster_std, cfg.noise_std)
        inputs = centers[order[labels]] + spread * rng.standard_normal((len(labels), cfg.input_dim))
        return Samples(inputs, labels.astype(np.int64))


_ENVIRONMENTS = {
    "sine": SineRegressionEnvironment,
    "cluster": ClusterClassificationEnvironment,
}


def build_environment(config: EnvironmentSettings) -> TaskEnvironment:
    """Construct the environment described by a validated config section."""
    try:
        return _ENVIRONMENTS[config.kind](config)
    except KeyError:
        raise ConfigurationError(f"Unknown environment kind: {config.kind}")


def sample_task_batch(env: TaskEnvironment, rng: np.random.Generator, n_tasks: int) -> TaskBatch:
    """
    Sample a mini-batch of independent tasks.

    Args:
        env: Task environment
        rng: Seed stream owned by the caller
        n_tasks: Batch size M

    Returns:
        TaskBatch of M tasks
    """
    if n_tasks < 1:
        raise ArgumentError(f"batch size must be at least 1, got {n_tasks}")
    return TaskBatch(tuple(env.sample_task(rng) for _ in range(n_tasks)))


def spawn_streams(seed: int, names: Sequence[str]) -> Dict[str, np.random.Generator]:
    """Derive one independent generator per name from a master seed."""
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {name: np.random.default_rng(child) for name, child in zip(names, children)}


def family_counts(batches: Iterable[TaskBatch], n_families: int) -> List[int]:
    """Count how many sampled tasks came from each family."""
    counts = [0] * n_families
    for batch in batches:
        for task in batch:
            counts[task.family_id] += 1
    return counts
