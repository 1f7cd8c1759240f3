import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .exceptions import ArgumentError, UnsupportedOperationError
from .metalearn import BatchDerivatives, MetaLearner
from .models import CurvatureMode, MetaOrder, PriorConfig
from .tasks import TaskBatch

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class QuadraticCost:
    """Second-order model of the step cost about a nominal point.

    C_xx is a diagonal vector (D,) or a dense matrix (D, D). The cross terms
    are zero because the cost separates into a state part and an action part.
    """
    C_xx: np.ndarray
    C_uu: np.ndarray
    c_x: np.ndarray
    c_u: np.ndarray

    @property
    def diagonal(self) -> bool:
        return self.C_xx.ndim == 1

    @property
    def C_xu(self) -> np.ndarray:
        return np.zeros((len(self.c_x), len(self.c_u)))

    @property
    def C_ux(self) -> np.ndarray:
        return np.zeros((len(self.c_u), len(self.c_x)))


class TrajectoryCost:
    """Per-step cost: sum of validation losses plus a Gaussian prior on the weights."""

    def __init__(self, learner: MetaLearner, prior: PriorConfig,
                 order: MetaOrder = MetaOrder.FULL):
        self.learner = learner
        self.prior = prior
        self.order = order

    def prior_mean(self, n_tasks: int) -> np.ndarray:
        return np.full(n_tasks, self.prior.mean(n_tasks))

    def action_penalty(self, u: np.ndarray) -> float:
        deviation = np.asarray(u, dtype=float) - self.prior_mean(len(u))
        return 0.5 * self.prior.beta_u * float(deviation @ deviation)

    def cost_from_losses(self, losses: np.ndarray, u: np.ndarray) -> float:
        if len(losses) != len(u):
            raise ArgumentError(f"{len(u)} weights for {len(losses)} tasks")
        return float(np.sum(losses)) + self.action_penalty(u)

    def cost(self, x: np.ndarray, u: np.ndarray, batch: TaskBatch) -> float:
        """
        Step cost 1^T ell(x) + beta_u/2 ||u - mu_u 1||^2.

        Args:
            x: Meta-parameters
            u: Task weights of length M
            batch: Task batch the losses are taken on

        Returns:
            Scalar cost
        """
        if len(u) != len(batch):
            raise ArgumentError(f"{len(u)} weights for {len(batch)} tasks")
        return self.cost_from_losses(self.learner.validation_loss_vector(x, batch), u)

    def quadraticize(self, x_hat: np.ndarray, u_hat: np.ndarray, batch: TaskBatch,
                     mode: CurvatureMode = CurvatureMode.DIAG,
                     derivatives: Optional[BatchDerivatives] = None) -> QuadraticCost:
        """
        Second-order Taylor model of the step cost about (x_hat, u_hat).

        C_xx uses the unweighted curvature of 1^T ell, unlike F_x which weights
        it by u_hat.

        Raises:
            UnsupportedOperationError: Full mode with a non-linear model
        """
        if mode == CurvatureMode.FULL and not self.learner.spec.is_linear:
            raise UnsupportedOperationError("full quadraticization needs a linear model")
        if derivatives is None or derivatives.curvature is None:
            derivatives = self.learner.evaluate_batch(x_hat, batch, self.order, curvature=mode)
        u_hat = np.asarray(u_hat, dtype=float)
        n_tasks = len(u_hat)
        beta = self.prior.beta_u
        return QuadraticCost(
            C_xx=np.sum(derivatives.curvature, axis=0),
            C_uu=beta * np.eye(n_tasks),
            c_x=np.sum(derivatives.jacobian, axis=0),
            c_u=beta * (u_hat - self.prior_mean(n_tasks)),
        )

    def total_cost(self, states: Sequence[np.ndarray], actions: Sequence[np.ndarray],
                   batches: Sequence[TaskBatch]) -> float:
        """Sum of step costs over a horizon of equal-length sequences."""
        if not (len(states) == len(actions) == len(batches)):
            raise ArgumentError(
                f"horizon mismatch: {len(states)} states, {len(actions)} actions, {len(batches)} batches"
            )
        return float(sum(self.cost(x, u, batch) for x, u, batch in zip(states, actions, batches)))
