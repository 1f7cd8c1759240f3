from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from ..dynamics import BaseDynamics
from ..exceptions import ArgumentError
from ..metalearn import MetaLearner
from ..models import ILQRIteration, MetaOrder, WeightingConfig
from ..tasks import TaskBatch
from ..utils import log_execution_time


@dataclass(frozen=True)
class WeightingContext:
    """Everything a strategy needs besides the horizon itself."""
    learner: MetaLearner
    config: WeightingConfig
    rng: Optional[np.random.Generator] = None

    @property
    def order(self) -> MetaOrder:
        return self.config.ilqr.meta_order


@dataclass(frozen=True)
class HorizonPlan:
    """Weights applied over one horizon and the trajectory they produced."""
    actions: Tuple[np.ndarray, ...]
    states: Tuple[np.ndarray, ...]
    losses: Tuple[np.ndarray, ...]
    final_state: np.ndarray
    final_dynamics: BaseDynamics
    iterations: Tuple[ILQRIteration, ...] = ()

    @property
    def train_loss(self) -> float:
        """Mean validation loss over the visited states."""
        return float(np.mean([np.mean(losses) for losses in self.losses]))

    def delta(self) -> float:
        """Largest Euclidean deviation of an applied weight vector from uniform."""
        return max(
            float(np.linalg.norm(u - 1.0 / len(u))) for u in self.actions
        )


class BaseWeighting(ABC):
    """Abstract base class for all weighting strategies."""

    @property
    @abstractmethod
    def name(self) -> str:
        """Strategy name identifier."""
        pass

    @abstractmethod
    def execute(self, x1: np.ndarray, batches: Sequence[TaskBatch], dynamics: BaseDynamics,
                context: WeightingContext) -> HorizonPlan:
        """
        Choose weights for every mini-batch of the horizon and apply them.

        Returns:
            HorizonPlan of the applied weights and the visited states
        """
        pass

    def validate_args(self, x1: np.ndarray, batches: Sequence[TaskBatch],
                      dynamics: BaseDynamics, context: WeightingContext) -> None:
        """
        Validate strategy arguments.

        Raises:
            ArgumentError: If the horizon is empty or batch sizes differ
        """
        if not batches:
            raise ArgumentError("the horizon needs at least one mini-batch")
        sizes = {len(batch) for batch in batches}
        if len(sizes) != 1:
            raise ArgumentError(f"all mini-batches must have the same size, got {sorted(sizes)}")
        if np.ndim(x1) != 1 or len(x1) != context.learner.spec.parameter_count:
            raise ArgumentError("initial state does not match the model parameter count")

    @log_execution_time
    def run(self, x1: np.ndarray, batches: Sequence[TaskBatch], dynamics: BaseDynamics,
            context: WeightingContext) -> HorizonPlan:
        """
        Run the strategy with validation.

        Returns:
            HorizonPlan
        """
        self.validate_args(x1, batches, dynamics, context)
        return self.execute(np.asarray(x1, dtype=float), list(batches), dynamics, context)


class PerBatchWeighting(BaseWeighting):
    """Strategies that pick each batch's weights from the losses at the current state."""

    @abstractmethod
    def weights(self, losses: np.ndarray, context: WeightingContext) -> np.ndarray:
        pass

    def execute(self, x1: np.ndarray, batches: Sequence[TaskBatch], dynamics: BaseDynamics,
                context: WeightingContext) -> HorizonPlan:
        x = x1
        states, actions, losses = [x], [], []
        for t, batch in enumerate(batches):
            derivatives = context.learner.evaluate_batch(x, batch, context.order, timestep=t)
            u = self.weights(derivatives.losses, context)
            x, dynamics = dynamics.apply_weights(x, u, derivatives, timestep=t)
            states.append(x)
            actions.append(u)
            losses.append(derivatives.losses)
        return HorizonPlan(
            actions=tuple(actions),
            states=tuple(states),
            losses=tuple(losses),
            final_state=x,
            final_dynamics=dynamics,
        )
