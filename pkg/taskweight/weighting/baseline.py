"""
Loss-driven baselines with a Dirichlet prior on the simplex.

Exploration favours the hardest tasks by minimising ``-u^T ell``; exploitation
favours the easiest by minimising ``u^T ell``. Both add ``-(kappa - 1) sum ln u``,
which keeps every weight strictly positive.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax, softmax

from .base import PerBatchWeighting, WeightingContext
from ..exceptions import ArgumentError, ConfigurationError
from ..models import StrategyName
from ..utils import ensure_finite

logger = logging.getLogger(__name__)

_SIGNS = {StrategyName.EXPLORATION: 1.0, StrategyName.EXPLOITATION: -1.0}
_MAX_HALVINGS = 60
# objective changes below this fraction of its size are rounding noise
_ROUNDING_SLACK = 64 * np.finfo(float).eps


@dataclass(frozen=True)
class SimplexSolution:
    weights: np.ndarray
    converged: bool
    iterations: int
    residual: float


def _stationarity_residual(u: np.ndarray, gradient: np.ndarray) -> float:
    # on the simplex optimum every partial derivative is equal
    spread = np.max(np.abs(gradient - u @ gradient))
    return float(spread / max(1.0, np.max(np.abs(gradient))))


def _objective(logits: np.ndarray, signed: np.ndarray, concentration: float) -> float:
    log_u = log_softmax(logits)
    return float(-signed @ np.exp(log_u) - concentration * np.sum(log_u))


def solve_simplex_weights(ell: np.ndarray, mode: StrategyName, kappa: float,
                          tol: float = 1e-10, max_iterations: int = 10_000) -> SimplexSolution:
    """
    Minimise -/+ u^T ell - (kappa - 1) sum ln u over the simplex by mirror descent.

    The weights are kept as ``u = softmax(z)`` and each step is an
    exponentiated-gradient update ``ln u <- ln u - eta u * (g - u^T g)``,
    i.e. a gradient step on the logits. Near the optimum the logit Hessian has
    eigenvalues in [kappa - 1, (kappa - 1) M |u|^2], so the trial step is
    1 / ((kappa - 1) M |u|^2), capped at sqrt(2) / |step direction|_inf so no
    log-weight moves by more than sqrt(2), and halved until the objective
    decreases sufficiently.

    Args:
        ell: Task losses
        mode: EXPLORATION or EXPLOITATION
        kappa: Dirichlet concentration, > 1
        tol: Relative stationarity tolerance
        max_iterations: Iteration cap

    Returns:
        SimplexSolution; the best iterate seen when not converged
    """
    if mode not in _SIGNS:
        raise ConfigurationError(f"{mode} is not a loss-driven baseline")
    if kappa <= 1.0:
        raise ArgumentError(f"kappa must exceed 1, got {kappa}")
    ell = ensure_finite("losses", np.asarray(ell, dtype=float))
    if ell.ndim != 1 or ell.size == 0:
        raise ArgumentError("losses must be a non-empty vector")
    signed, concentration = _SIGNS[mode] * ell, kappa - 1.0

    logits = np.zeros(ell.size)
    best, best_residual = softmax(logits), np.inf
    for iteration in range(max_iterations + 1):
        u = softmax(logits)
        gradient = -signed - concentration / u
        residual = _stationarity_residual(u, gradient)
        if residual < best_residual:
            best, best_residual = u, residual
        if residual <= tol:
            return SimplexSolution(u, True, iteration, residual)

        direction = u * (gradient - u @ gradient)
        step = min(1.0 / (concentration * ell.size * (u @ u)),
                   np.sqrt(2.0) / np.max(np.abs(direction)))
        value = _objective(logits, signed, concentration)
        slack = _ROUNDING_SLACK * max(1.0, abs(value))
        decrease = 0.5 * (direction @ direction)
        for _ in range(_MAX_HALVINGS):
            candidate = logits - step * direction
            if _objective(candidate, signed, concentration) <= value - step * decrease + slack:
                break
            step *= 0.5
        logits = candidate - np.max(candidate)
    logger.warning(
        f"{mode.value} weights did not converge in {max_iterations} iterations "
        f"(residual {best_residual:.3e})"
    )
    return SimplexSolution(best, False, max_iterations, best_residual)


def baseline_weights(ell: np.ndarray, mode: StrategyName, kappa: float = 1.2) -> np.ndarray:
    """Exploration or exploitation weights for a loss vector."""
    return solve_simplex_weights(ell, mode, kappa).weights


class ExplorationWeighting(PerBatchWeighting):
    """Up-weights the tasks with the largest validation losses."""

    @property
    def name(self) -> str:
        return "exploration"

    def weights(self, losses: np.ndarray, context: WeightingContext) -> np.ndarray:
        return baseline_weights(losses, StrategyName.EXPLORATION, context.config.kappa)


class ExploitationWeighting(PerBatchWeighting):
    """Up-weights the tasks with the smallest validation losses."""

    @property
    def name(self) -> str:
        return "exploitation"

    def weights(self, losses: np.ndarray, context: WeightingContext) -> np.ndarray:
        return baseline_weights(losses, StrategyName.EXPLOITATION, context.config.kappa)


# Global instances
exploration = ExplorationWeighting()
exploitation = ExploitationWeighting()
