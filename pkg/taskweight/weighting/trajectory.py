"""Trajectory optimization of task weights over a horizon of mini-batches."""
import logging
from typing import List, Sequence

import numpy as np

from .base import BaseWeighting, HorizonPlan, WeightingContext
from .uniform import uniform_weights
from ..cost import TrajectoryCost
from ..dynamics import BaseDynamics
from ..exceptions import ConfigurationError
from ..ilqr import IterativeLQR
from ..models import MetaUpdateRule, NominalKind
from ..problems import MetaWeightingProblem
from ..tasks import TaskBatch

logger = logging.getLogger(__name__)


def nominal_actions(n_tasks: int, horizon: int, kind: NominalKind,
                    rng: np.random.Generator = None) -> List[np.ndarray]:
    """
    Starting actions for the solver.

    ``random`` draws each weight uniformly from [0, 2/M], so every task
    keeps weight 1/M on average.
    """
    if kind == NominalKind.UNIFORM:
        return [uniform_weights(n_tasks) for _ in range(horizon)]
    if rng is None:
        raise ConfigurationError("random nominal actions need a random generator")
    return [rng.uniform(0.0, 2.0 / n_tasks, size=n_tasks) for _ in range(horizon)]


class TrajectoryWeighting(BaseWeighting):
    """Weights found by iterative LQR on the weighted meta-update trajectory."""

    @property
    def name(self) -> str:
        return "tow"

    def execute(self, x1: np.ndarray, batches: Sequence[TaskBatch], dynamics: BaseDynamics,
                context: WeightingContext) -> HorizonPlan:
        config = context.config
        cost = TrajectoryCost(context.learner, config.prior, config.ilqr.meta_order)
        problem = MetaWeightingProblem(
            context.learner, cost, batches, config.ilqr.meta_order, config.ilqr.curvature
        )
        start = nominal_actions(problem.n_tasks, problem.horizon, config.ilqr.nominal, context.rng)
        result = IterativeLQR(config.ilqr).solve(problem, x1, start, dynamics)
        trajectory = result.trajectory

        # last_visited resumes from x_T, the state the final weights were chosen at
        index = problem.horizon if config.meta_update == MetaUpdateRule.FINAL_STATE else problem.horizon - 1
        logger.debug(
            f"iLQR finished after {len(result.iterations)} iterations, cost {trajectory.total_cost:.6g}"
        )
        return HorizonPlan(
            actions=trajectory.actions,
            states=trajectory.states,
            losses=tuple(trajectory.losses),
            final_state=trajectory.states[index],
            final_dynamics=trajectory.optimizer_states[index],
            iterations=result.iterations,
        )


def tow_weights(x1: np.ndarray, batches: Sequence[TaskBatch], dynamics: BaseDynamics,
                context: WeightingContext) -> List[np.ndarray]:
    """Optimized weights for each mini-batch of the horizon."""
    return list(tow.run(x1, batches, dynamics, context).actions)


# Global instance
tow = TrajectoryWeighting()
