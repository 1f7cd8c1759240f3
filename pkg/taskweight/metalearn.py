import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .exceptions import ArgumentError, UnsupportedOperationError
from .models import AdaptationVariant, CurvatureMode, InnerLoopConfig, MetaOrder, ModelSpec
from .predictor import (
    HeadTerms,
    hessian_exact,
    hvp,
    linear_third_contraction,
    loss_and_grad,
    prototypical_terms,
    supervised_terms,
)
from .tasks import Task, TaskBatch
from .utils import ensure_finite

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BatchDerivatives:
    """Validation losses of a batch with their meta-derivatives."""
    losses: np.ndarray                   # (M,)
    jacobian: np.ndarray                 # (M, D)
    accuracies: np.ndarray               # (M,)
    curvature: Optional[np.ndarray] = None   # (M, D) diagonal or (M, D, D) full

    @property
    def n_tasks(self) -> int:
        return len(self.losses)


def weighted_loss(u: np.ndarray, ell: np.ndarray) -> float:
    """
    Weighted meta-objective u^T ell.

    Raises:
        ArgumentError: If the weight and loss vectors differ in length
    """
    u, ell = np.asarray(u, dtype=float), np.asarray(ell, dtype=float)
    if u.shape != ell.shape:
        raise ArgumentError(f"weights {u.shape} and losses {ell.shape} differ in length")
    return float(np.dot(u, ell))


class MetaLearner:
    """Task adaptation, per-task validation losses and their derivatives."""

    def __init__(self, spec: ModelSpec, inner: InnerLoopConfig):
        self.spec = spec
        self.inner = inner

    @property
    def prototypical(self) -> bool:
        return self.inner.variant == AdaptationVariant.PROTOTYPICAL

    def adaptation_path(self, x: np.ndarray, task: Task) -> List[np.ndarray]:
        """Parameters before every inner step plus the adapted result."""
        path = [np.asarray(x, dtype=float)]
        for _ in range(self.inner.n_inner_steps):
            _, grad = loss_and_grad(self.spec, path[-1], task.support)
            path.append(path[-1] - self.inner.gamma * grad)
        return path

    def inner_adapt(self, x: np.ndarray, task: Task) -> np.ndarray:
        """
        Adapt the meta-parameters to one task by gradient steps on its support set.

        Args:
            x: Meta-parameters (left unmodified)
            task: Task whose support set drives the adaptation

        Returns:
            Adapted parameters after n_inner_steps steps of size gamma

        Raises:
            UnsupportedOperationError: For the prototypical variant
            ArgumentError: If the support set is empty
        """
        if self.prototypical:
            raise UnsupportedOperationError("prototypical adaptation has no inner gradient steps")
        return self.adaptation_path(x, task)[-1]

    def _query_terms(self, x: np.ndarray, task: Task) -> Tuple[HeadTerms, List[np.ndarray]]:
        if self.prototypical:
            return prototypical_terms(self.spec, x, task.support, task.query), [np.asarray(x, dtype=float)]
        path = self.adaptation_path(x, task)
        return supervised_terms(self.spec, path[-1], task.query), path

    def score_task(self, x: np.ndarray, task: Task) -> Tuple[float, float]:
        """Query loss and accuracy after adaptation."""
        terms, _ = self._query_terms(x, task)
        return terms.loss, terms.accuracy

    def _task_gradient(self, terms: HeadTerms, path: List[np.ndarray], task: Task,
                       order: MetaOrder) -> np.ndarray:
        grad = terms.gradient
        if order == MetaOrder.FULL and not self.prototypical:
            # chain factor (I - gamma * H_support) of every inner step
            for phi in reversed(path[:-1]):
                grad = grad - self.inner.gamma * hvp(self.spec, phi, task.support, grad)
        return grad

    def _task_curvature(self, terms: HeadTerms, path: List[np.ndarray], task: Task,
                        mode: CurvatureMode, order: MetaOrder) -> np.ndarray:
        if mode == CurvatureMode.DIAG:
            return terms.gauss_newton_diag()
        if self.prototypical:
            raise UnsupportedOperationError("full curvature is not available for prototypical scoring")
        hessian = hessian_exact(self.spec, path[-1], task.query)
        identity = np.eye(self.spec.parameter_count)
        gamma = self.inner.gamma
        if order == MetaOrder.FIRST_ORDER:
            for phi in reversed(path[:-1]):
                hessian = hessian @ (identity - gamma * hessian_exact(self.spec, phi, task.support))
            return hessian
        adjoint = terms.gradient
        for phi in reversed(path[:-1]):
            step = identity - gamma * hessian_exact(self.spec, phi, task.support)
            hessian = (step.T @ hessian @ step
                       - gamma * linear_third_contraction(self.spec, phi, task.support, adjoint))
            adjoint = step.T @ adjoint
        return 0.5 * (hessian + hessian.T)

    def task_loss(self, x: np.ndarray, task: Task) -> float:
        return self._query_terms(x, task)[0].loss

    def validation_loss_vector(self, x: np.ndarray, batch: TaskBatch) -> np.ndarray:
        """Vector of the M query losses at the adapted parameters."""
        return np.array([self.task_loss(x, task) for task in batch])

    def meta_loss_jacobian(self, x: np.ndarray, batch: TaskBatch,
                           order: MetaOrder = MetaOrder.FULL) -> np.ndarray:
        """Matrix whose row i is the gradient of task i's validation loss w.r.t. x."""
        return self.evaluate_batch(x, batch, order).jacobian

    def meta_grad_weighted(self, x: np.ndarray, batch: TaskBatch, u: np.ndarray,
                           order: MetaOrder = MetaOrder.FULL) -> np.ndarray:
        """Gradient of u^T ell(x)."""
        u = np.asarray(u, dtype=float)
        if u.shape != (len(batch),):
            raise ArgumentError(f"expected {len(batch)} weights, got shape {u.shape}")
        return u @ self.meta_loss_jacobian(x, batch, order)

    def evaluate_batch(self, x: np.ndarray, batch: TaskBatch, order: MetaOrder,
                       curvature: Optional[CurvatureMode] = None,
                       timestep: Optional[int] = None) -> BatchDerivatives:
        """
        Losses, meta-gradients and (optionally) curvature for every task in a batch.

        Tasks are processed in batch order so reductions are deterministic.

        Args:
            x: Meta-parameters
            batch: Task batch
            order: Differentiation order through the inner loop
            curvature: Curvature representation to compute, or None to skip it
            timestep: Trajectory step, used in error diagnostics

        Returns:
            BatchDerivatives for the batch

        Raises:
            NumericError: If a loss or gradient is non-finite
        """
        losses, rows, accuracies, curvatures = [], [], [], []
        for task in batch:
            terms, path = self._query_terms(x, task)
            losses.append(terms.loss)
            accuracies.append(terms.accuracy)
            rows.append(self._task_gradient(terms, path, task, order))
            if curvature is not None:
                curvatures.append(self._task_curvature(terms, path, task, curvature, order))
        losses = ensure_finite("validation losses", np.array(losses), timestep)
        jacobian = ensure_finite("meta-gradient", np.stack(rows), timestep)
        stacked = ensure_finite("curvature", np.stack(curvatures), timestep) if curvatures else None
        return BatchDerivatives(losses, jacobian, np.array(accuracies), stacked)
