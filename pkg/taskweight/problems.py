"""
Finite-horizon problems the iterative LQR solver operates on.

A problem exposes the true step (``transition``) and its local
linear-quadratic model (``approximate``). ``MetaWeightingProblem`` is the task
weighting problem. ``LinearQuadraticProblem`` is exactly linear-quadratic and
serves as a reference with a closed-form solution.
"""
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Optional, Sequence, Tuple

import numpy as np

from .cost import QuadraticCost, TrajectoryCost
from .dynamics import BaseDynamics, LinearizedDynamics
from .exceptions import ArgumentError
from .metalearn import MetaLearner
from .models import CurvatureMode, MetaOrder
from .tasks import TaskBatch

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Transition:
    """Outcome of one true step: next state, optimizer state, step cost."""
    state: np.ndarray
    optimizer: Any
    cost: float
    losses: Optional[np.ndarray] = None


class TrajectoryProblem(ABC):
    """Abstract base class for problems solved by the trajectory optimizer."""

    @property
    @abstractmethod
    def horizon(self) -> int:
        pass

    @abstractmethod
    def transition(self, t: int, x: np.ndarray, u: np.ndarray, optimizer: Any) -> Transition:
        """Apply action u at step t from state x."""
        pass

    @abstractmethod
    def approximate(self, t: int, x: np.ndarray, u: np.ndarray,
                    optimizer: Any) -> Tuple[LinearizedDynamics, QuadraticCost]:
        """Linearized dynamics and quadratic cost about (x, u) at step t."""
        pass

    def terminal_cost(self, x: np.ndarray) -> float:
        return 0.0

    def terminal_model(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Value model (V, v) at the end of the horizon."""
        return np.zeros(len(x)), np.zeros(len(x))


class MetaWeightingProblem(TrajectoryProblem):
    """Choose per-task weights over T mini-batches of meta-updates."""

    def __init__(self, learner: MetaLearner, cost: TrajectoryCost, batches: Sequence[TaskBatch],
                 order: MetaOrder = MetaOrder.FULL,
                 curvature: CurvatureMode = CurvatureMode.DIAG):
        if not batches:
            raise ArgumentError("the horizon needs at least one mini-batch")
        self.learner = learner
        self.cost = cost
        self.batches = list(batches)
        self.order = order
        self.curvature = curvature

    @property
    def horizon(self) -> int:
        return len(self.batches)

    @property
    def n_tasks(self) -> int:
        return len(self.batches[0])

    def transition(self, t: int, x: np.ndarray, u: np.ndarray,
                   optimizer: BaseDynamics) -> Transition:
        derivatives = self.learner.evaluate_batch(x, self.batches[t], self.order, timestep=t)
        step_cost = self.cost.cost_from_losses(derivatives.losses, u)
        x_next, optimizer_next = optimizer.apply_weights(x, u, derivatives, timestep=t)
        return Transition(x_next, optimizer_next, step_cost, derivatives.losses)

    def approximate(self, t: int, x: np.ndarray, u: np.ndarray,
                    optimizer: BaseDynamics) -> Tuple[LinearizedDynamics, QuadraticCost]:
        batch = self.batches[t]
        derivatives = self.learner.evaluate_batch(
            x, batch, self.order, curvature=self.curvature, timestep=t
        )
        dynamics = optimizer.linearize(
            x, u, batch, self.learner, self.order, self.curvature, derivatives=derivatives
        )
        quadratic = self.cost.quadraticize(x, u, batch, self.curvature, derivatives=derivatives)
        return dynamics, quadratic


def _apply(matrix: np.ndarray, x: np.ndarray) -> np.ndarray:
    return matrix * x if matrix.ndim == 1 else matrix @ x


def _quadratic(matrix: np.ndarray, x: np.ndarray) -> float:
    return 0.5 * float(x @ _apply(matrix, x))


@dataclass(frozen=True)
class LinearQuadraticProblem(TrajectoryProblem):
    """
    x_{t+1} = A_t x_t + B_t u_t + d_t with stage cost
    1/2 x'Qx + q'x + 1/2 u'Ru + r'u and terminal cost 1/2 x'Q_f x + q_f'x.

    A_t, Q and Q_f may be given as diagonals (vectors).
    """
    A: Tuple[np.ndarray, ...]
    B: Tuple[np.ndarray, ...]
    Q: np.ndarray
    R: np.ndarray
    q: Optional[np.ndarray] = None
    r: Optional[np.ndarray] = None
    d: Optional[Tuple[np.ndarray, ...]] = None
    Q_final: Optional[np.ndarray] = None
    q_final: Optional[np.ndarray] = None

    def __post_init__(self):
        if len(self.A) != len(self.B) or not self.A:
            raise ArgumentError("A and B need one entry per step")

    @property
    def horizon(self) -> int:
        return len(self.A)

    @property
    def state_dim(self) -> int:
        return self.B[0].shape[0]

    @property
    def action_dim(self) -> int:
        return self.B[0].shape[1]

    def offset(self, t: int) -> np.ndarray:
        return np.zeros(self.state_dim) if self.d is None else self.d[t]

    def linear_state_term(self) -> np.ndarray:
        return np.zeros(self.state_dim) if self.q is None else self.q

    def linear_action_term(self) -> np.ndarray:
        return np.zeros(self.action_dim) if self.r is None else self.r

    def transition(self, t: int, x: np.ndarray, u: np.ndarray, optimizer: Any) -> Transition:
        cost = (_quadratic(self.Q, x) + float(self.linear_state_term() @ x)
                + _quadratic(self.R, u) + float(self.linear_action_term() @ u))
        x_next = _apply(self.A[t], x) + self.B[t] @ u + self.offset(t)
        return Transition(x_next, optimizer, cost)

    def approximate(self, t: int, x: np.ndarray, u: np.ndarray,
                    optimizer: Any) -> Tuple[LinearizedDynamics, QuadraticCost]:
        dynamics = LinearizedDynamics(F_x=self.A[t], F_u=self.B[t])
        quadratic = QuadraticCost(
            C_xx=self.Q,
            C_uu=self.R,
            c_x=_apply(self.Q, x) + self.linear_state_term(),
            c_u=self.R @ u + self.linear_action_term(),
        )
        return dynamics, quadratic

    def terminal_cost(self, x: np.ndarray) -> float:
        if self.Q_final is None:
            return 0.0
        linear = 0.0 if self.q_final is None else float(self.q_final @ x)
        return _quadratic(self.Q_final, x) + linear

    def terminal_model(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        if self.Q_final is None:
            return np.zeros(len(x)), np.zeros(len(x))
        linear = np.zeros(len(x)) if self.q_final is None else self.q_final
        return self.Q_final, _apply(self.Q_final, x) + linear

    @classmethod
    def random(cls, rng: np.random.Generator, state_dim: int, action_dim: int,
               horizon: int, decoupled: bool = False) -> "LinearQuadraticProblem":
        """
        Draw a well-posed random problem.

        With ``decoupled`` every action drives exactly one state coordinate and
        all matrices are diagonal, so the value matrices stay diagonal.
        """
        if decoupled:
            if state_dim != action_dim:
                raise ArgumentError("decoupled problems need as many actions as states")
            A = tuple(1.0 + 0.1 * rng.standard_normal(state_dim) for _ in range(horizon))
            B = tuple(np.diag(0.5 + rng.random(state_dim)) for _ in range(horizon))
            Q = 0.5 + rng.random(state_dim)
            R = np.diag(0.5 + rng.random(action_dim))
            Q_final = 0.5 + rng.random(state_dim)
        else:
            A = tuple(np.eye(state_dim) + 0.1 * rng.standard_normal((state_dim, state_dim))
                      for _ in range(horizon))
            B = tuple(rng.standard_normal((state_dim, action_dim)) for _ in range(horizon))
            G = rng.standard_normal((state_dim, state_dim))
            Q = G @ G.T / state_dim + 0.1 * np.eye(state_dim)
            H = rng.standard_normal((action_dim, action_dim))
            R = H @ H.T / action_dim + 0.5 * np.eye(action_dim)
            Q_final = Q.copy()
        return cls(
            A=A,
            B=B,
            Q=Q,
            R=R,
            q=rng.standard_normal(state_dim),
            r=rng.standard_normal(action_dim),
            d=tuple(0.1 * rng.standard_normal(state_dim) for _ in range(horizon)),
            Q_final=Q_final,
            q_final=rng.standard_normal(state_dim),
        )


def dense(matrix: np.ndarray) -> np.ndarray:
    """Dense form of a diagonal-vector or full matrix."""
    return np.diag(matrix) if matrix.ndim == 1 else matrix
