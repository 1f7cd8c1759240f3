"""
Meta-optimizer steps as trajectory dynamics, with their first-order Taylor models.

Both optimizers move the meta-parameters along a per-coordinate function of
the weighted meta-gradient ``g = J^T u``. Their linearizations therefore share
one structure:

    F_u = -diag(s) J^T,    F_x = I - diag(s) H_u,

where ``s = d(step)/dg`` elementwise and ``H_u`` is the Hessian (or its
Gauss-Newton diagonal) of ``u^T ell``. For Adam the previous moments are held
constant while differentiating, which makes ``s`` an approximation.
"""
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .exceptions import ArgumentError, ConfigurationError, UnsupportedOperationError
from .metalearn import BatchDerivatives, MetaLearner
from .models import CurvatureMode, DynamicsConfig, DynamicsKind, MetaOrder
from .tasks import TaskBatch
from .utils import ensure_finite

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LinearizedDynamics:
    """F_x as a diagonal vector (D,) or dense matrix (D, D); F_u dense (D, M)."""
    F_x: np.ndarray
    F_u: np.ndarray

    @property
    def diagonal(self) -> bool:
        return self.F_x.ndim == 1


class BaseDynamics(ABC):
    """Abstract base class for optimizer dynamics."""

    def __init__(self, config: DynamicsConfig):
        self.config = config

    @property
    @abstractmethod
    def name(self) -> str:
        """Dynamics name identifier."""
        pass

    @abstractmethod
    def apply_gradient(self, x: np.ndarray, g: np.ndarray) -> Tuple[np.ndarray, "BaseDynamics"]:
        """
        Take one optimizer step along gradient g.

        Returns:
            (next parameters, dynamics carrying the updated optimizer state)
        """
        pass

    @abstractmethod
    def sensitivity(self, g: np.ndarray) -> np.ndarray:
        """Elementwise derivative of the parameter decrement w.r.t. g."""
        pass

    def state_arrays(self) -> dict:
        """Optimizer state as named arrays for checkpoints."""
        return {}

    def apply_weights(self, x: np.ndarray, u: np.ndarray, derivatives: BatchDerivatives,
                      timestep: Optional[int] = None) -> Tuple[np.ndarray, "BaseDynamics"]:
        """Step along the weighted meta-gradient of already evaluated derivatives."""
        u = np.asarray(u, dtype=float)
        if u.shape != (derivatives.n_tasks,):
            raise ArgumentError(f"expected {derivatives.n_tasks} weights, got shape {u.shape}")
        g = ensure_finite("weighted meta-gradient", u @ derivatives.jacobian, timestep)
        x_next, dynamics = self.apply_gradient(np.asarray(x, dtype=float), g)
        return ensure_finite("meta-parameters", x_next, timestep), dynamics

    def step(self, x: np.ndarray, u: np.ndarray, batch: TaskBatch, learner: MetaLearner,
             order: MetaOrder = MetaOrder.FULL,
             timestep: Optional[int] = None) -> Tuple[np.ndarray, "BaseDynamics"]:
        """
        One optimizer step on the weighted meta-loss u^T ell(x).

        Args:
            x: Meta-parameters (not modified)
            u: Task weights of length M
            batch: Task batch
            learner: Meta-learner evaluating the batch
            order: Differentiation order of the meta-gradient
            timestep: Trajectory step, used in error diagnostics

        Returns:
            (x', dynamics with updated optimizer state)

        Raises:
            NumericError: If the gradient or the new state is non-finite
        """
        derivatives = learner.evaluate_batch(x, batch, order, timestep=timestep)
        return self.apply_weights(x, u, derivatives, timestep)

    def linearize(self, x_hat: np.ndarray, u_hat: np.ndarray, batch: TaskBatch,
                  learner: MetaLearner, order: MetaOrder = MetaOrder.FULL,
                  mode: CurvatureMode = CurvatureMode.DIAG,
                  derivatives: Optional[BatchDerivatives] = None) -> LinearizedDynamics:
        """
        First-order Taylor coefficients of the step about (x_hat, u_hat).

        In diagonal mode the Hessian of u^T ell is replaced by the u_hat-weighted
        Gauss-Newton diagonals at the adapted parameters. The optimizer state is
        only read.

        Raises:
            UnsupportedOperationError: Full mode with a non-linear model
        """
        if mode == CurvatureMode.FULL and not learner.spec.is_linear:
            raise UnsupportedOperationError("full linearization needs a linear model")
        if derivatives is None or derivatives.curvature is None:
            derivatives = learner.evaluate_batch(x_hat, batch, order, curvature=mode)
        u_hat = np.asarray(u_hat, dtype=float)
        g = u_hat @ derivatives.jacobian
        slope = self.sensitivity(g)
        F_u = -slope[:, None] * derivatives.jacobian.T
        weighted = np.tensordot(u_hat, derivatives.curvature, axes=1)
        if mode == CurvatureMode.DIAG:
            F_x = 1.0 - slope * weighted
        else:
            F_x = np.eye(len(g)) - slope[:, None] * weighted
        return LinearizedDynamics(F_x=F_x, F_u=F_u)


class SGDDynamics(BaseDynamics):
    """x' = x - alpha * g."""

    @property
    def name(self) -> str:
        return "sgd"

    def apply_gradient(self, x: np.ndarray, g: np.ndarray) -> Tuple[np.ndarray, "SGDDynamics"]:
        return x - self.config.alpha * g, self

    def sensitivity(self, g: np.ndarray) -> np.ndarray:
        return np.full(len(g), self.config.alpha)


class AdamDynamics(BaseDynamics):
    """Adam with bias-corrected moments; immutable, each step returns a new state."""

    def __init__(self, config: DynamicsConfig, m: Optional[np.ndarray] = None,
                 v: Optional[np.ndarray] = None, step_index: int = 1):
        super().__init__(config)
        if step_index < 1:
            raise ArgumentError(f"step_index starts at 1, got {step_index}")
        self.m = m
        self.v = v
        self.step_index = step_index

    @property
    def name(self) -> str:
        return "adam"

    def _moments(self, g: np.ndarray) -> Tuple[np.ndarray, np.ndarray, float, float]:
        cfg = self.config
        m = np.zeros_like(g) if self.m is None else self.m
        v = np.zeros_like(g) if self.v is None else self.v
        if m.shape != g.shape:
            raise ArgumentError(f"optimizer state has shape {m.shape}, gradient {g.shape}")
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g
        bc1 = 1.0 - cfg.beta1 ** self.step_index
        bc2 = 1.0 - cfg.beta2 ** self.step_index
        return m, v, bc1, bc2

    def apply_gradient(self, x: np.ndarray, g: np.ndarray) -> Tuple[np.ndarray, "AdamDynamics"]:
        m, v, bc1, bc2 = self._moments(g)
        denom = np.sqrt(v / bc2) + self.config.eps
        x_next = x - self.config.alpha * (m / bc1) / denom
        return x_next, AdamDynamics(self.config, m, v, self.step_index + 1)

    def sensitivity(self, g: np.ndarray) -> np.ndarray:
        cfg = self.config
        m, v, bc1, bc2 = self._moments(g)
        root = np.sqrt(v / bc2)
        denom = root + cfg.eps
        # d(root)/dg, with eps guarding root = 0
        d_root = (1.0 - cfg.beta2) * g / (bc2 * denom)
        return cfg.alpha / bc1 * ((1.0 - cfg.beta1) / denom - m * d_root / (denom * denom))

    def state_arrays(self) -> dict:
        empty = np.zeros(0)
        return {
            "m": empty if self.m is None else self.m,
            "v": empty if self.v is None else self.v,
            "step_index": np.array(self.step_index),
        }


def build_dynamics(config: DynamicsConfig) -> BaseDynamics:
    """Fresh dynamics (zero optimizer state) for the configured optimizer."""
    if config.kind == DynamicsKind.SGD:
        return SGDDynamics(config)
    if config.kind == DynamicsKind.ADAM:
        return AdamDynamics(config)
    raise ConfigurationError(f"Unknown dynamics kind: {config.kind}")
