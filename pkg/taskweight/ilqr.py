"""
Iterative LQR over an abstract trajectory problem.

The backward pass builds affine controllers ``u = K (x - x_hat) + eps k + u_hat``
from the local linear-quadratic model. The forward pass rolls the true
dynamics under a controller. ``solve`` alternates both with a backtracking
search on eps that accepts a candidate when

    J(candidate) - J(nominal) <= eps * theta_1 / 2   and every action >= 0,

where ``theta_1 = -sum_t q_u^T Q_uu^{-1} q_u`` is accumulated backward.
"""
import logging
from dataclasses import dataclass
from typing import Any, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, eigvalsh

from .cost import QuadraticCost
from .dynamics import LinearizedDynamics
from .exceptions import NumericError
from .models import ILQRConfig, ILQRIteration, ValueMode
from .problems import LinearQuadraticProblem, TrajectoryProblem, dense
from .utils import ensure_finite, log_execution_time

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Controller:
    K: np.ndarray   # (M, D)
    k: np.ndarray   # (M,)


@dataclass(frozen=True)
class ValueModel:
    V: np.ndarray   # (D,) diagonal or (D, D)
    v: np.ndarray
    theta: float


@dataclass(frozen=True)
class NominalTrajectory:
    """States x_1..x_{T+1}, actions u_1..u_T and the optimizer state before each step."""
    states: Tuple[np.ndarray, ...]
    actions: Tuple[np.ndarray, ...]
    optimizer_states: Tuple[Any, ...]
    costs: Tuple[float, ...]
    terminal_cost: float = 0.0
    losses: Tuple[Optional[np.ndarray], ...] = ()

    @property
    def horizon(self) -> int:
        return len(self.actions)

    @property
    def total_cost(self) -> float:
        return float(sum(self.costs)) + self.terminal_cost


@dataclass(frozen=True)
class BackwardPass:
    controllers: Tuple[Controller, ...]
    values: Tuple[ValueModel, ...]
    theta1: float
    regularization: Tuple[float, ...]


@dataclass(frozen=True)
class ILQRResult:
    trajectory: NominalTrajectory
    iterations: Tuple[ILQRIteration, ...]

    @property
    def actions(self) -> List[np.ndarray]:
        return list(self.trajectory.actions)


def rollout(problem: TrajectoryProblem, x1: np.ndarray, actions: Sequence[np.ndarray],
            optimizer: Any = None) -> NominalTrajectory:
    """Roll the true dynamics forward under a fixed action sequence."""
    x = np.asarray(x1, dtype=float)
    states, optimizers, costs, losses = [x], [optimizer], [], []
    for t, u in enumerate(actions):
        step = problem.transition(t, x, np.asarray(u, dtype=float), optimizer)
        x, optimizer = ensure_finite("state", step.state, t), step.optimizer
        states.append(x)
        optimizers.append(optimizer)
        costs.append(step.cost)
        losses.append(step.losses)
    return NominalTrajectory(
        states=tuple(states),
        actions=tuple(np.asarray(u, dtype=float) for u in actions),
        optimizer_states=tuple(optimizers),
        costs=tuple(costs),
        terminal_cost=problem.terminal_cost(x),
        losses=tuple(losses),
    )


def _regularize(Q_uu: np.ndarray, floor: float) -> Tuple[np.ndarray, float]:
    """Shift Q_uu so its smallest eigenvalue is at least ``floor``."""
    diagonal = np.diag(Q_uu)
    radius = np.sum(np.abs(Q_uu), axis=1) - np.abs(diagonal)
    if np.min(diagonal - radius) >= floor:
        return Q_uu, 0.0
    shift = max(0.0, floor - float(eigvalsh(Q_uu)[0]))
    if shift == 0.0:
        return Q_uu, 0.0
    return Q_uu + shift * np.eye(len(Q_uu)), shift


class IterativeLQR:
    """iLQR solver with backtracking line search."""

    def __init__(self, config: ILQRConfig):
        self.config = config

    def _backward_step(self, t: int, dynamics: LinearizedDynamics, cost: QuadraticCost,
                       V: np.ndarray, v: np.ndarray):
        F_x, F_u = dynamics.F_x, dynamics.F_u
        if dynamics.diagonal and cost.diagonal and V.ndim == 1:
            VF_u = V[:, None] * F_u
            Q_xx = cost.C_xx + F_x * V * F_x
            Q_xu = F_x[:, None] * VF_u
            q_x = cost.c_x + F_x * v
        else:
            F_x_dense, V_dense = dense(F_x), dense(V)
            VF_u = V_dense @ F_u
            Q_xx = dense(cost.C_xx) + F_x_dense.T @ V_dense @ F_x_dense
            Q_xu = F_x_dense.T @ VF_u
            q_x = cost.c_x + F_x_dense.T @ v
        Q_uu = cost.C_uu + F_u.T @ VF_u
        Q_uu = ensure_finite("Q_uu", 0.5 * (Q_uu + Q_uu.T), t)
        q_u = cost.c_u + F_u.T @ v

        Q_uu, shift = _regularize(Q_uu, self.config.quu_floor)
        if shift > 0.0:
            logger.warning(f"Q_uu at step {t} regularized by {shift:.3e}")
        try:
            factor = cho_factor(Q_uu)
        except LinAlgError as e:
            raise NumericError(f"Q_uu factorization failed: {e}", timestep=t)
        K = -cho_solve(factor, Q_xu.T)
        k = -cho_solve(factor, q_u)

        if Q_xx.ndim == 1:
            V_next = Q_xx + np.einsum("dm,md->d", Q_xu, K)
        else:
            V_next = Q_xx + Q_xu @ K
            V_next = 0.5 * (V_next + V_next.T)
            if self.config.value_mode == ValueMode.DIAG:
                V_next = np.diag(V_next).copy()
        v_next = q_x + Q_xu @ k
        ensure_finite("controller gain", K, t)
        ensure_finite("value matrix", V_next, t)
        return Controller(K, k), V_next, v_next, float(q_u @ k), shift

    def backward(self, problem: TrajectoryProblem, nominal: NominalTrajectory) -> BackwardPass:
        """
        Backward value recursion about a nominal trajectory.

        Args:
            problem: Trajectory problem supplying the local models
            nominal: Rollout-consistent nominal trajectory

        Returns:
            BackwardPass with T controllers and theta_1

        Raises:
            NumericError: If an intermediate becomes non-finite (with its timestep)
        """
        V, v = problem.terminal_model(nominal.states[-1])
        if self.config.value_mode == ValueMode.FULL:
            V = dense(V)
        theta = 0.0
        controllers: List[Controller] = []
        values = [ValueModel(V, v, theta)]
        shifts: List[float] = []
        for t in reversed(range(nominal.horizon)):
            dynamics, cost = problem.approximate(
                t, nominal.states[t], nominal.actions[t], nominal.optimizer_states[t]
            )
            controller, V, v, dtheta, shift = self._backward_step(t, dynamics, cost, V, v)
            theta += dtheta
            controllers.append(controller)
            values.append(ValueModel(V, v, theta))
            shifts.append(shift)
        return BackwardPass(
            controllers=tuple(reversed(controllers)),
            values=tuple(reversed(values)),
            theta1=theta,
            regularization=tuple(reversed(shifts)),
        )

    def forward(self, problem: TrajectoryProblem, nominal: NominalTrajectory,
                controllers: Sequence[Controller], epsilon: float) -> NominalTrajectory:
        """
        Roll the true dynamics under the affine controllers.

        u_t = K_t (x_t - x_hat_t) + epsilon k_t + u_hat_t, starting from the
        nominal initial state and optimizer state.

        Raises:
            NumericError: If a state becomes non-finite
        """
        x = nominal.states[0]
        optimizer = nominal.optimizer_states[0]
        states, optimizers, actions, costs, losses = [x], [optimizer], [], [], []
        for t, controller in enumerate(controllers):
            u = controller.K @ (x - nominal.states[t]) + epsilon * controller.k + nominal.actions[t]
            step = problem.transition(t, x, u, optimizer)
            x, optimizer = ensure_finite("state", step.state, t), step.optimizer
            states.append(x)
            optimizers.append(optimizer)
            actions.append(u)
            costs.append(step.cost)
            losses.append(step.losses)
        return NominalTrajectory(
            states=tuple(states),
            actions=tuple(actions),
            optimizer_states=tuple(optimizers),
            costs=tuple(costs),
            terminal_cost=problem.terminal_cost(x),
            losses=tuple(losses),
        )

    def acceptance_slack(self, nominal: NominalTrajectory) -> float:
        return self.config.acceptance_rtol * max(1.0, abs(nominal.total_cost))

    def accepts(self, candidate: NominalTrajectory, nominal: NominalTrajectory,
                theta1: float, epsilon: float) -> bool:
        if self.config.nonnegative_actions and any(np.min(u) < 0.0 for u in candidate.actions):
            return False
        decrease = candidate.total_cost - nominal.total_cost
        return decrease <= 0.5 * epsilon * theta1 + self.acceptance_slack(nominal)

    @log_execution_time
    def solve(self, problem: TrajectoryProblem, x1: np.ndarray,
              nominal_actions: Sequence[np.ndarray], optimizer: Any = None) -> ILQRResult:
        """
        Optimize the action sequence starting from a nominal sequence.

        Each iteration runs a backward pass and then halves epsilon from 2
        before every trial. When no trial is accepted, the current nominal is
        kept and the search stops.

        Args:
            problem: Trajectory problem
            x1: Initial state
            nominal_actions: Initial nominal actions, one per step
            optimizer: Initial optimizer state, restored for every rollout

        Returns:
            ILQRResult with the final trajectory and per-iteration diagnostics
        """
        cfg = self.config
        nominal = rollout(problem, x1, nominal_actions, optimizer)
        iterations: List[ILQRIteration] = []
        for index in range(cfg.n_iterations):
            backward = self.backward(problem, nominal)
            theta1 = backward.theta1
            slack = self.acceptance_slack(nominal)
            epsilon, trials, candidate = 2.0, 0, None
            while trials < cfg.max_line_search_trials:
                epsilon *= 0.5
                if epsilon < cfg.eps_min:
                    break
                trials += 1
                try:
                    trial = self.forward(problem, nominal, backward.controllers, epsilon)
                except NumericError as e:
                    logger.debug(f"trial eps={epsilon:.3e} diverged: {e}")
                    continue
                if self.accepts(trial, nominal, theta1, epsilon):
                    candidate = trial
                    break
                logger.debug(
                    f"trial eps={epsilon:.3e} rejected: dJ={trial.total_cost - nominal.total_cost:.6e}"
                )

            if candidate is None:
                iterations.append(ILQRIteration(
                    theta1=theta1, epsilon=0.0, trials=trials, cost_nominal=nominal.total_cost,
                    cost_candidate=nominal.total_cost, accepted=False, slack=slack,
                ))
                logger.warning(
                    f"line search exhausted after {trials} trials in iteration {index}; keeping nominal"
                )
                break
            iterations.append(ILQRIteration(
                theta1=theta1, epsilon=epsilon, trials=trials, cost_nominal=nominal.total_cost,
                cost_candidate=candidate.total_cost, accepted=True, slack=slack,
            ))
            nominal = candidate
            if theta1 == 0.0:
                break
        return ILQRResult(trajectory=nominal, iterations=tuple(iterations))


def verify_acceptance(iterations: Sequence[ILQRIteration]) -> bool:
    """Re-check the acceptance inequality of every accepted iteration."""
    return all(
        it.cost_candidate - it.cost_nominal <= 0.5 * it.epsilon * it.theta1 + it.slack
        for it in iterations if it.accepted
    )


def lqr_oracle(problem: LinearQuadraticProblem, x1: np.ndarray) -> np.ndarray:
    """
    Exact finite-horizon LQR actions for a linear-quadratic problem.

    Args:
        problem: Linear dynamics with quadratic stage and terminal costs
        x1: Initial state

    Returns:
        Optimal actions, shape (T, M)

    Raises:
        NumericError: If Q_uu is not positive definite at some step
    """
    state_dim = problem.state_dim
    V, v = problem.terminal_model(np.zeros(state_dim))
    V = dense(V)
    gains: List[Tuple[np.ndarray, np.ndarray]] = []
    for t in reversed(range(problem.horizon)):
        A, B, d = dense(problem.A[t]), problem.B[t], problem.offset(t)
        linear = v + V @ d
        Q_xx = dense(problem.Q) + A.T @ V @ A
        Q_ux = B.T @ V @ A
        Q_uu = problem.R + B.T @ V @ B
        q_x = problem.linear_state_term() + A.T @ linear
        q_u = problem.linear_action_term() + B.T @ linear
        try:
            factor = cho_factor(0.5 * (Q_uu + Q_uu.T))
        except LinAlgError:
            raise NumericError("Q_uu is not positive definite", timestep=t)
        K = -cho_solve(factor, Q_ux)
        k = -cho_solve(factor, q_u)
        V = Q_xx + Q_ux.T @ K
        V = 0.5 * (V + V.T)
        v = q_x + Q_ux.T @ k
        gains.append((K, k))
    gains.reverse()

    x = np.asarray(x1, dtype=float)
    actions = []
    for t, (K, k) in enumerate(gains):
        u = K @ x + k
        actions.append(u)
        x = dense(problem.A[t]) @ x + problem.B[t] @ u + problem.offset(t)
    return np.array(actions)
