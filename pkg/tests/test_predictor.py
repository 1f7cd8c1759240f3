"""
Tests for predictor forward passes and their exact derivatives.
"""
import numpy as np
import pytest

from taskweight.checks import finite_difference_gradient, finite_difference_jacobian
from taskweight.exceptions import ArgumentError, UnsupportedOperationError
from taskweight.models import ModelSpec
from taskweight.predictor import (
    embed,
    forward,
    gauss_newton_diag,
    hessian_exact,
    hvp,
    init_params,
    loss_and_grad,
    output_jacobian,
    prototypical_terms,
)
from taskweight.tasks import Samples


def _regression_samples(rng, n=5):
    inputs = rng.uniform(-2.0, 2.0, size=(n, 1))
    return Samples(inputs, np.sin(inputs))


class TestForward:
    """Test cases for the forward pass and parameter layout."""

    def test_linear_output(self):
        """Test y = W s for a bias-free linear model."""
        spec = ModelSpec.model_validate(
            {"architecture": {"kind": "linear", "in_dim": 2, "out_dim": 1}}
        )
        np.testing.assert_allclose(forward(spec, np.array([1.0, 2.0]), np.array([[1.0, 1.0]])), [[3.0]])

    def test_single_input(self, mlp_spec):
        """Test that a single input vector gives a single output vector."""
        params = init_params(mlp_spec, np.random.default_rng(0), 0.5)
        assert forward(mlp_spec, params, np.array([0.3])).shape == (1,)

    def test_parameter_count(self, mlp_spec, classifier_spec):
        """Test parameter counts with and without biases."""
        assert mlp_spec.parameter_count == 33
        assert classifier_spec.parameter_count == 9

    def test_wrong_parameter_length(self, mlp_spec):
        """Test that a parameter vector of the wrong length is rejected."""
        with pytest.raises(ArgumentError):
            forward(mlp_spec, np.zeros(5), np.zeros((2, 1)))

    def test_wrong_input_width(self, mlp_spec):
        """Test that inputs of the wrong width are rejected."""
        with pytest.raises(ArgumentError):
            forward(mlp_spec, np.zeros(33), np.zeros((2, 3)))

    def test_output_jacobian(self, mlp_spec):
        """Test the per-sample output Jacobian against central differences."""
        rng = np.random.default_rng(1)
        params = init_params(mlp_spec, rng, 0.5)
        inputs = rng.standard_normal((3, 1))
        numeric = finite_difference_jacobian(lambda p: forward(mlp_spec, p, inputs), params)
        np.testing.assert_allclose(output_jacobian(mlp_spec, params, inputs), numeric, atol=1e-8)


class TestLossAndGrad:
    """Test cases for losses and gradients."""

    def test_hand_computed_mse(self, linear_spec):
        """Test the 1/2-convention mean squared error and its gradient."""
        samples = Samples(np.array([[1.0], [2.0]]), np.array([[0.0], [0.0]]))
        loss, grad = loss_and_grad(linear_spec, np.array([2.0]), samples)
        assert loss == pytest.approx(5.0)
        np.testing.assert_allclose(grad, [5.0])

    def test_mlp_gradient(self, mlp_spec):
        """Test the MLP gradient against central differences."""
        rng = np.random.default_rng(2)
        params = init_params(mlp_spec, rng, 0.5)
        samples = _regression_samples(rng)
        _, grad = loss_and_grad(mlp_spec, params, samples)
        numeric = finite_difference_gradient(lambda p: loss_and_grad(mlp_spec, p, samples)[0], params)
        np.testing.assert_allclose(grad, numeric, rtol=1e-5, atol=1e-8)

    def test_cross_entropy_gradient(self, classifier_spec, classification_task):
        """Test the softmax cross-entropy gradient against central differences."""
        params = init_params(classifier_spec, np.random.default_rng(3), 0.5)
        samples = classification_task.support
        _, grad = loss_and_grad(classifier_spec, params, samples)
        numeric = finite_difference_gradient(
            lambda p: loss_and_grad(classifier_spec, p, samples)[0], params
        )
        np.testing.assert_allclose(grad, numeric, rtol=1e-5, atol=1e-8)

    def test_logistic_gradient(self):
        """Test the logistic loss gradient against central differences."""
        spec = ModelSpec.model_validate(
            {"architecture": {"kind": "mlp", "layer_sizes": [2, 3, 1]}, "loss": "logistic"}
        )
        rng = np.random.default_rng(4)
        params = init_params(spec, rng, 0.5)
        samples = Samples(rng.standard_normal((6, 2)), np.array([0, 1, 1, 0, 1, 0]))
        _, grad = loss_and_grad(spec, params, samples)
        numeric = finite_difference_gradient(lambda p: loss_and_grad(spec, p, samples)[0], params)
        np.testing.assert_allclose(grad, numeric, rtol=1e-5, atol=1e-8)

    def test_uniform_logits_cross_entropy(self, classifier_spec, classification_task):
        """Test that all-zero logits cost ln C per sample."""
        params = np.zeros(classifier_spec.parameter_count)
        loss, _ = loss_and_grad(classifier_spec, params, classification_task.query)
        assert loss == pytest.approx(np.log(3.0), abs=1e-12)

    def test_invalid_class_index(self, classifier_spec):
        """Test that class indices outside [0, C) are rejected."""
        samples = Samples(np.zeros((2, 2)), np.array([0, 3]))
        with pytest.raises(ArgumentError):
            loss_and_grad(classifier_spec, np.zeros(9), samples)

    def test_loss_clip(self, linear_spec):
        """Test that a clipped loss reports the clip value and zero derivatives."""
        spec = linear_spec.model_copy(update={"loss_clip": 1.0})
        samples = Samples(np.array([[1.0], [2.0]]), np.array([[0.0], [0.0]]))
        loss, grad = loss_and_grad(spec, np.array([2.0]), samples)
        assert loss == 1.0
        np.testing.assert_array_equal(grad, [0.0])
        np.testing.assert_array_equal(hvp(spec, np.array([2.0]), samples, np.array([1.0])), [0.0])


class TestCurvature:
    """Test cases for Hessian-vector products, exact Hessians and Gauss-Newton diagonals."""

    def test_hvp_mlp(self, mlp_spec):
        """Test the R-operator product against differences of exact gradients."""
        rng = np.random.default_rng(5)
        params = init_params(mlp_spec, rng, 0.5)
        samples = _regression_samples(rng)
        direction = rng.standard_normal(mlp_spec.parameter_count)
        step = 1e-5
        plus = loss_and_grad(mlp_spec, params + step * direction, samples)[1]
        minus = loss_and_grad(mlp_spec, params - step * direction, samples)[1]
        np.testing.assert_allclose(
            hvp(mlp_spec, params, samples, direction), (plus - minus) / (2 * step), rtol=1e-5, atol=1e-8
        )

    def test_relu_hvp_is_gauss_newton(self):
        """Test that a ReLU network's Hessian has no activation-curvature term."""
        spec = ModelSpec.model_validate(
            {"architecture": {"kind": "mlp", "layer_sizes": [1, 4, 1], "activation": "relu"}}
        )
        rng = np.random.default_rng(6)
        params = init_params(spec, rng, 0.5)
        samples = _regression_samples(rng)
        direction = rng.standard_normal(spec.parameter_count)
        step = 1e-6
        plus = loss_and_grad(spec, params + step * direction, samples)[1]
        minus = loss_and_grad(spec, params - step * direction, samples)[1]
        np.testing.assert_allclose(
            hvp(spec, params, samples, direction), (plus - minus) / (2 * step), rtol=1e-4, atol=1e-7
        )

    def test_gauss_newton_exact_for_linear_mse(self, linear_spec):
        """Test that the Gauss-Newton diagonal equals the exact Hessian diagonal (MSE)."""
        samples = _regression_samples(np.random.default_rng(7))
        params = np.array([0.4])
        np.testing.assert_allclose(
            gauss_newton_diag(linear_spec, params, samples),
            np.diag(hessian_exact(linear_spec, params, samples)),
            rtol=1e-8,
        )

    def test_gauss_newton_exact_for_linear_cross_entropy(self, classifier_spec, classification_task):
        """Test that the Gauss-Newton diagonal equals the exact Hessian diagonal (softmax)."""
        for seed in range(10):
            params = init_params(classifier_spec, np.random.default_rng(seed), 1.0)
            np.testing.assert_allclose(
                gauss_newton_diag(classifier_spec, params, classification_task.query),
                np.diag(hessian_exact(classifier_spec, params, classification_task.query)),
                rtol=1e-8,
                atol=1e-14,
            )

    def test_gauss_newton_non_negative(self, mlp_spec):
        """Test that Gauss-Newton diagonals are never negative."""
        rng = np.random.default_rng(8)
        params = init_params(mlp_spec, rng, 1.0)
        assert np.all(gauss_newton_diag(mlp_spec, params, _regression_samples(rng)) >= 0.0)

    def test_hessian_exact_requires_linear(self, mlp_spec):
        """Test that the exact Hessian is refused for an MLP."""
        samples = _regression_samples(np.random.default_rng(9))
        with pytest.raises(UnsupportedOperationError):
            hessian_exact(mlp_spec, np.zeros(33), samples)

    def test_hessian_symmetric(self, classifier_spec, classification_task):
        """Test that the exact Hessian is symmetric."""
        params = init_params(classifier_spec, np.random.default_rng(10), 1.0)
        hessian = hessian_exact(classifier_spec, params, classification_task.support)
        np.testing.assert_allclose(hessian, hessian.T)


class TestPrototypes:
    """Test cases for prototype scoring."""

    def setup_method(self):
        """Set up a linear 2-D embedding."""
        self.spec = ModelSpec.model_validate(
            {"architecture": {"kind": "linear", "in_dim": 2, "out_dim": 2}, "loss": "cross_entropy"}
        )

    def test_identity_embedding_accuracy(self, classification_task):
        """Test that well separated clusters are classified perfectly."""
        terms = prototypical_terms(self.spec, np.array([1.0, 0.0, 0.0, 1.0]),
                                   classification_task.support, classification_task.query)
        assert terms.accuracy == 1.0

    def test_gradient(self, classification_task):
        """Test the gradient through query and support embeddings."""
        params = np.array([0.7, 0.2, -0.1, 0.9])
        support, query = classification_task.support, classification_task.query
        terms = prototypical_terms(self.spec, params, support, query)
        numeric = finite_difference_gradient(
            lambda p: prototypical_terms(self.spec, p, support, query).loss, params
        )
        np.testing.assert_allclose(terms.gradient, numeric, rtol=1e-5, atol=1e-8)

    def test_missing_class(self, classification_task):
        """Test that a query class without support examples is rejected."""
        support = Samples(classification_task.support.inputs[:2], np.array([0, 1]))
        with pytest.raises(ArgumentError):
            prototypical_terms(self.spec, np.ones(4), support, classification_task.query)

    def test_identity_embedding(self):
        """Test that the identity linear map embeds every input as itself."""
        inputs = np.array([[0.5, -1.0], [2.0, 3.0]])
        np.testing.assert_array_equal(embed(self.spec, np.array([1.0, 0.0, 0.0, 1.0]), inputs), inputs)

    def test_zero_mlp_embedding(self):
        """Test that an all-zero MLP embeds everything at the origin."""
        spec = ModelSpec.model_validate(
            {"architecture": {"kind": "mlp", "layer_sizes": [2, 5, 3]}, "loss": "cross_entropy"}
        )
        embeddings = embed(spec, np.zeros(spec.parameter_count), np.array([[1.0, 2.0], [-3.0, 0.5]]))
        np.testing.assert_array_equal(embeddings, np.zeros((2, 3)))

    def test_embedding_width(self, mlp_spec):
        """Test that the embedding width is the final layer width."""
        params = init_params(mlp_spec, np.random.default_rng(5), 0.5)
        embeddings, jacobian = embed(mlp_spec, params, np.ones((4, 1)), with_jacobian=True)
        assert embeddings.shape == (4, mlp_spec.layer_sizes[-1])
        assert jacobian.shape == (4, mlp_spec.layer_sizes[-1], mlp_spec.parameter_count)
