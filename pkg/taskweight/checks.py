"""
Finite-difference and closed-form diagnostics.

Every check returns a ``CheckReport`` with the measured errors and a pass
flag. The finite-difference helpers are shared with the test-suite.
"""
import logging
from typing import Callable, Dict, List, Tuple

import numpy as np

from .cost import TrajectoryCost
from .dynamics import build_dynamics
from .exceptions import ConfigurationError, NumericError
from .ilqr import IterativeLQR, lqr_oracle, rollout
from .metalearn import MetaLearner
from .models import (
    CheckName,
    CheckReport,
    CurvatureMode,
    ExperimentConfig,
    ILQRConfig,
    MetaOrder,
    ValueMode,
)
from .predictor import gauss_newton_diag, hessian_exact, hvp, init_params, loss_and_grad
from .problems import LinearQuadraticProblem, MetaWeightingProblem
from .tasks import TaskBatch, build_environment, sample_task_batch, spawn_streams
from .utils import log_execution_time
from .weighting.uniform import uniform_weights

logger = logging.getLogger(__name__)

# exact Gauss-Newton and closed-form LQR agree with their references to rounding
EXACT_TOLERANCE = 1e-8
CONTROLLER_TOLERANCE = 1e-10


def finite_difference_gradient(func: Callable[[np.ndarray], float], x: np.ndarray,
                               step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros(len(x))
    for j in range(len(x)):
        shifted = x.copy()
        shifted[j] = x[j] + step
        f_plus = func(shifted)
        shifted[j] = x[j] - step
        f_minus = func(shifted)
        grad[j] = (f_plus - f_minus) / (2 * step)
    return grad


def finite_difference_jacobian(func: Callable[[np.ndarray], np.ndarray], x: np.ndarray,
                               step: float = 1e-5) -> np.ndarray:
    """Central-difference Jacobian, shape (len(func(x)), len(x))."""
    x = np.asarray(x, dtype=float)
    columns = []
    for j in range(len(x)):
        shifted = x.copy()
        shifted[j] = x[j] + step
        up = np.asarray(func(shifted), dtype=float)
        shifted[j] = x[j] - step
        down = np.asarray(func(shifted), dtype=float)
        columns.append((up - down) / (2 * step))
    return np.stack(columns, axis=-1)


def relative_error(analytic: np.ndarray, reference: np.ndarray, floor: float = 1e-8) -> float:
    """Max-norm difference relative to the larger of the two max-norms."""
    analytic, reference = np.asarray(analytic, dtype=float), np.asarray(reference, dtype=float)
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(reference)), floor)
    return float(np.max(np.abs(analytic - reference)) / scale)


def _require_small(config: ExperimentConfig) -> None:
    count = config.model.parameter_count
    if count > config.checks.max_parameters:
        raise ConfigurationError(
            f"diagnostics need at most {config.checks.max_parameters} parameters, model has {count}"
        )


def _setups(config: ExperimentConfig) -> List[Tuple[np.random.Generator, MetaLearner, np.ndarray, TaskBatch]]:
    """One (rng, learner, x, batch) per check seed, all derived from the checks stream."""
    _require_small(config)
    master = spawn_streams(config.seed, ("checks",))["checks"]
    env = build_environment(config.environment)
    learner = MetaLearner(config.model, config.inner_loop)
    scale = config.training.init_scale if config.training.init_scale > 0 else 0.1
    setups = []
    for _ in range(config.checks.n_seeds):
        rng = np.random.default_rng(master.integers(2 ** 63))
        x = init_params(config.model, rng, scale)
        setups.append((rng, learner, x, sample_task_batch(env, rng, config.training.batch_size)))
    return setups


def check_gradients(config: ExperimentConfig) -> Dict[str, float]:
    """Meta-gradients, loss gradients and Hessian-vector products against central differences."""
    step = config.checks.step
    meta, model, curvature = [], [], []
    for rng, learner, x, batch in _setups(config):
        jacobian = learner.evaluate_batch(x, batch, MetaOrder.FULL).jacobian
        for row, task in zip(jacobian, batch):
            numeric = finite_difference_gradient(lambda z: learner.task_loss(z, task), x, step)
            meta.append(relative_error(row, numeric))

        if learner.prototypical:
            continue
        support = batch[0].support
        _, grad = loss_and_grad(learner.spec, x, support)
        numeric = finite_difference_gradient(lambda z: loss_and_grad(learner.spec, z, support)[0], x, step)
        model.append(relative_error(grad, numeric))

        direction = rng.standard_normal(len(x))
        plus = loss_and_grad(learner.spec, x + step * direction, support)[1]
        minus = loss_and_grad(learner.spec, x - step * direction, support)[1]
        curvature.append(relative_error(
            hvp(learner.spec, x, support, direction), (plus - minus) / (2 * step)
        ))
    measurements = {"meta_gradient": max(meta)}
    if model:
        measurements.update(loss_gradient=max(model), hvp=max(curvature))
    return measurements


def check_linearization(config: ExperimentConfig) -> Dict[str, float]:
    """F_u (and F_x for linear models) of the optimizer step against central differences."""
    step = config.checks.step
    f_u, f_x = [], []
    for rng, learner, x, batch in _setups(config):
        dynamics = build_dynamics(config.dynamics)
        # a few updates so the optimizer moments are not at their zero start
        for _ in range(3):
            _, dynamics = dynamics.apply_gradient(x, 0.1 * rng.standard_normal(len(x)))
        u_hat = uniform_weights(len(batch))
        linear = dynamics.linearize(x, u_hat, batch, learner, MetaOrder.FULL, CurvatureMode.DIAG)
        numeric = finite_difference_jacobian(
            lambda u: dynamics.step(x, u, batch, learner, MetaOrder.FULL)[0], u_hat, step
        )
        f_u.append(relative_error(linear.F_u, numeric))
        if learner.spec.is_linear and not learner.prototypical:
            full = dynamics.linearize(x, u_hat, batch, learner, MetaOrder.FULL, CurvatureMode.FULL)
            numeric = finite_difference_jacobian(
                lambda z: dynamics.step(z, u_hat, batch, learner, MetaOrder.FULL)[0], x, step
            )
            f_x.append(relative_error(full.F_x, numeric))
    measurements = {"F_u": max(f_u)}
    if f_x:
        measurements["F_x"] = max(f_x)
    return measurements


def check_quadraticization(config: ExperimentConfig) -> Dict[str, float]:
    """Cost gradients against central differences; exact Gauss-Newton for linear models."""
    step = config.checks.step
    c_x, c_u, gauss_newton = [], [], []
    for rng, learner, x, batch in _setups(config):
        cost = TrajectoryCost(learner, config.weighting.prior, MetaOrder.FULL)
        u = uniform_weights(len(batch)) * (1.0 + 0.5 * rng.random(len(batch)))
        model = cost.quadraticize(x, u, batch, CurvatureMode.DIAG)
        c_x.append(relative_error(
            model.c_x, finite_difference_gradient(lambda z: cost.cost(z, u, batch), x, step)
        ))
        c_u.append(relative_error(
            model.c_u, finite_difference_gradient(lambda w: cost.cost(x, w, batch), u, step)
        ))
        if learner.spec.is_linear and not learner.prototypical:
            query = batch[0].query
            gauss_newton.append(relative_error(
                gauss_newton_diag(learner.spec, x, query),
                np.diag(hessian_exact(learner.spec, x, query)),
            ))
    measurements = {"c_x": max(c_x), "c_u": max(c_u)}
    if gauss_newton:
        measurements["gauss_newton"] = max(gauss_newton)
    return measurements


def scalar_lq_problem() -> LinearQuadraticProblem:
    """x' = x + u from x = 1 with cost u^2/2 + x'^2/2, minimized by u = -1/2."""
    return LinearQuadraticProblem(
        A=(np.ones(1),), B=(np.ones((1, 1)),), Q=np.zeros(1), R=np.eye(1), Q_final=np.ones(1),
    )


def check_lqr(config: ExperimentConfig) -> Dict[str, float]:
    """One solver iteration against the closed-form LQR optimum."""
    solver = IterativeLQR(ILQRConfig(
        n_iterations=1, value_mode=ValueMode.FULL, nonnegative_actions=False
    ))
    scalar = solver.solve(scalar_lq_problem(), np.ones(1), [np.zeros(1)])
    measurements = {"scalar": float(abs(scalar.actions[0][0] + 0.5))}

    rng = spawn_streams(config.seed, ("checks",))["checks"]
    errors, gaps = [], []
    for _ in range(config.checks.n_lq_problems):
        state_dim, action_dim = int(rng.integers(1, 7)), int(rng.integers(1, 4))
        horizon = int(rng.integers(1, 9))
        problem = LinearQuadraticProblem.random(rng, state_dim, action_dim, horizon)
        x1 = rng.standard_normal(state_dim)
        start = [rng.standard_normal(action_dim) for _ in range(horizon)]
        result = solver.solve(problem, x1, start)
        errors.append(float(np.max(np.abs(np.array(result.actions) - lqr_oracle(problem, x1)))))

        decoupled = LinearQuadraticProblem.random(rng, state_dim, state_dim, horizon, decoupled=True)
        nominal = rollout(decoupled, x1, [rng.standard_normal(state_dim) for _ in range(horizon)])
        diag = IterativeLQR(ILQRConfig(value_mode=ValueMode.DIAG)).backward(decoupled, nominal)
        full = IterativeLQR(ILQRConfig(value_mode=ValueMode.FULL)).backward(decoupled, nominal)
        gaps.append(max(
            max(float(np.max(np.abs(a.K - b.K))), float(np.max(np.abs(a.k - b.k))))
            for a, b in zip(diag.controllers, full.controllers)
        ))
    measurements["random"] = max(errors)
    measurements["diag_vs_full"] = max(gaps)
    return measurements


def check_theta_sign(config: ExperimentConfig) -> Dict[str, float]:
    """theta_1 < 0 whenever the nominal trajectory is not stationary."""
    env = build_environment(config.environment)
    ilqr = config.weighting.ilqr
    solver = IterativeLQR(ilqr)
    worst, moving = -np.inf, 0
    for rng, learner, x, batch in _setups(config):
        batches = [batch] + [sample_task_batch(env, rng, len(batch))
                             for _ in range(config.training.horizon - 1)]
        cost = TrajectoryCost(learner, config.weighting.prior, ilqr.meta_order)
        problem = MetaWeightingProblem(learner, cost, batches, ilqr.meta_order, ilqr.curvature)
        nominal = rollout(problem, x, [uniform_weights(len(batch))] * len(batches),
                          build_dynamics(config.dynamics))
        backward = solver.backward(problem, nominal)
        if max(float(np.linalg.norm(c.k)) for c in backward.controllers) > 1e-12:
            moving += 1
            worst = max(worst, backward.theta1)
    return {"theta1_max": float(worst) if moving else 0.0, "non_stationary": float(moving)}


_CHECKS = {
    CheckName.GRADIENTS: check_gradients,
    CheckName.LINEARIZATION: check_linearization,
    CheckName.QUADRATICIZATION: check_quadraticization,
    CheckName.LQR: check_lqr,
    CheckName.THETA_SIGN: check_theta_sign,
}


def _passed(name: CheckName, measurements: Dict[str, float], tolerance: float) -> bool:
    if name == CheckName.THETA_SIGN:
        # a horizon with no non-stationary nominal proves nothing
        return measurements["non_stationary"] > 0 and measurements["theta1_max"] < 0.0
    if name == CheckName.LQR:
        return (measurements["scalar"] < EXACT_TOLERANCE and measurements["random"] < EXACT_TOLERANCE
                and measurements["diag_vs_full"] < CONTROLLER_TOLERANCE)
    return all(
        value < (EXACT_TOLERANCE if key == "gauss_newton" else tolerance)
        for key, value in measurements.items()
    )


@log_execution_time
def run_check(config: ExperimentConfig, name: CheckName) -> CheckReport:
    """
    Run one diagnostic check.

    Args:
        config: Experiment configuration (model must be small)
        name: Which check to run

    Returns:
        CheckReport; a numeric failure during the check is reported, not raised

    Raises:
        ConfigurationError: If the model exceeds checks.max_parameters
    """
    name = CheckName(name)
    threshold = EXACT_TOLERANCE if name == CheckName.LQR else config.checks.tolerance
    try:
        measurements = _CHECKS[name](config)
    except NumericError as e:
        logger.error(f"check {name.value} hit a numeric failure: {e}")
        return CheckReport(name=name, passed=False, threshold=threshold, error=str(e))
    passed = _passed(name, measurements, config.checks.tolerance)
    level = logging.INFO if passed else logging.WARNING
    logger.log(level, f"check {name.value}: {'pass' if passed else 'FAIL'} {measurements}")
    return CheckReport(name=name, passed=passed, threshold=threshold, measurements=measurements)
