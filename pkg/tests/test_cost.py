"""
Tests for the trajectory cost and its quadratic model.
"""
import numpy as np
import pytest

from taskweight.checks import finite_difference_gradient, relative_error
from taskweight.cost import TrajectoryCost
from taskweight.exceptions import ArgumentError, UnsupportedOperationError
from taskweight.metalearn import MetaLearner
from taskweight.models import CurvatureMode, PriorConfig
from taskweight.predictor import init_params


class TestTrajectoryCost:
    """Test cases for step costs."""

    def setup_method(self):
        """Set up a prior with precision 10 centred at 1/M."""
        self.prior = PriorConfig(beta_u=10.0)

    def test_uniform_weights_cost_losses(self, mlp_spec, line_batch, inner):
        """Test that uniform weights add no prior penalty."""
        learner = MetaLearner(mlp_spec, inner)
        cost = TrajectoryCost(learner, self.prior)
        x = init_params(mlp_spec, np.random.default_rng(0), 0.5)
        expected = float(np.sum(learner.validation_loss_vector(x, line_batch)))
        assert cost.cost(x, np.array([0.5, 0.5]), line_batch) == pytest.approx(expected)

    def test_prior_penalty(self, linear_spec, line_batch, inner):
        """Test beta_u / 2 * ||u - mu_u||^2 with an explicit prior mean."""
        cost = TrajectoryCost(MetaLearner(linear_spec, inner), PriorConfig(mu_u=0.0, beta_u=4.0))
        assert cost.action_penalty(np.array([1.0, 2.0])) == pytest.approx(10.0)

    def test_length_mismatch(self, linear_spec, line_batch, inner):
        """Test that the number of weights must match the batch."""
        cost = TrajectoryCost(MetaLearner(linear_spec, inner), self.prior)
        with pytest.raises(ArgumentError):
            cost.cost(np.zeros(1), np.ones(3), line_batch)

    def test_total_cost_horizon_mismatch(self, linear_spec, line_batch, inner):
        """Test that states, actions and batches must have equal length."""
        cost = TrajectoryCost(MetaLearner(linear_spec, inner), self.prior)
        with pytest.raises(ArgumentError):
            cost.total_cost([np.zeros(1)] * 2, [np.ones(2) / 2], [line_batch, line_batch])

    def test_total_cost_sums_steps(self, linear_spec, line_batch, inner):
        """Test that the horizon cost is the sum of step costs."""
        cost = TrajectoryCost(MetaLearner(linear_spec, inner), self.prior)
        states = [np.zeros(1), np.ones(1)]
        actions = [np.array([0.5, 0.5]), np.array([1.0, 0.0])]
        expected = sum(cost.cost(x, u, line_batch) for x, u in zip(states, actions))
        assert cost.total_cost(states, actions, [line_batch] * 2) == pytest.approx(expected)


class TestQuadraticize:
    """Test cases for the second-order cost model."""

    def setup_method(self):
        """Set up a prior with precision 10."""
        self.prior = PriorConfig(beta_u=10.0)

    def test_action_terms(self, mlp_spec, line_batch, inner):
        """Test C_uu = beta I and c_u = beta (u - mu)."""
        cost = TrajectoryCost(MetaLearner(mlp_spec, inner), self.prior)
        x = init_params(mlp_spec, np.random.default_rng(1), 0.5)
        u = np.array([0.2, 0.9])
        model = cost.quadraticize(x, u, line_batch)
        np.testing.assert_allclose(model.C_uu, 10.0 * np.eye(2))
        np.testing.assert_allclose(model.c_u, 10.0 * (u - 0.5))
        assert model.C_xu.shape == (33, 2)
        assert not np.any(model.C_xu)

    def test_state_gradient(self, mlp_spec, line_batch, inner):
        """Test c_x against central differences of the step cost."""
        cost = TrajectoryCost(MetaLearner(mlp_spec, inner), self.prior)
        x = init_params(mlp_spec, np.random.default_rng(2), 0.5)
        u = np.array([0.3, 0.6])
        model = cost.quadraticize(x, u, line_batch)
        numeric = finite_difference_gradient(lambda z: cost.cost(z, u, line_batch), x)
        assert relative_error(model.c_x, numeric) < 1e-6

    def test_action_gradient(self, mlp_spec, line_batch, inner):
        """Test c_u against central differences of the step cost."""
        cost = TrajectoryCost(MetaLearner(mlp_spec, inner), self.prior)
        x = init_params(mlp_spec, np.random.default_rng(3), 0.5)
        u = np.array([0.3, 0.6])
        model = cost.quadraticize(x, u, line_batch)
        numeric = finite_difference_gradient(lambda w: cost.cost(x, w, line_batch), u)
        np.testing.assert_allclose(model.c_u, numeric, rtol=1e-6)

    def test_diagonal_curvature_non_negative(self, mlp_spec, line_batch, inner):
        """Test that the diagonal C_xx is a sum of Gauss-Newton diagonals."""
        cost = TrajectoryCost(MetaLearner(mlp_spec, inner), self.prior)
        x = init_params(mlp_spec, np.random.default_rng(4), 0.5)
        model = cost.quadraticize(x, np.array([0.5, 0.5]), line_batch, CurvatureMode.DIAG)
        assert model.diagonal
        assert np.all(model.C_xx >= 0.0)

    def test_full_mode_needs_linear_model(self, mlp_spec, line_batch, inner):
        """Test that a full cost model of an MLP is refused."""
        cost = TrajectoryCost(MetaLearner(mlp_spec, inner), self.prior)
        with pytest.raises(UnsupportedOperationError):
            cost.quadraticize(np.zeros(33), np.array([0.5, 0.5]), line_batch, CurvatureMode.FULL)
