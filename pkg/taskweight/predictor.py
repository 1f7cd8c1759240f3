"""
Differentiable predictors (linear and small MLP) with exact derivatives.

Parameters are one flat vector laid out layer by layer as ``[W_1.ravel(), b_1,
W_2.ravel(), b_2, ...]`` with each ``W`` of shape (out, in). All losses are
mean-reduced over the batch, and MSE uses the 1/2 convention, so every
gradient, Gauss-Newton and Hessian quantity shares that reduction.

Gauss-Newton quantities use per-sample output Jacobians ``J`` of shape
(N, C, D): ``G = mean_n J_n^T H_n J_n`` where ``H_n`` is the Hessian of the
loss with respect to the network output. Hessian-vector products use an
R-operator pass through the same backpropagation, so they are exact.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy as np
from scipy.special import expit, log_softmax

from .exceptions import ArgumentError, ConfigurationError, UnsupportedOperationError
from .models import Activation, LossKind, ModelSpec
from .tasks import Samples
from .utils import ensure_finite

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Layer:
    weight: np.ndarray
    bias: Optional[np.ndarray]


@dataclass(frozen=True)
class _Trace:
    activations: List[np.ndarray]   # input of every layer
    pre: List[np.ndarray]           # pre-activation of every layer
    slopes: List[np.ndarray]        # first derivative of hidden nonlinearities
    curvatures: List[np.ndarray]    # second derivative of hidden nonlinearities

    @property
    def output(self) -> np.ndarray:
        return self.pre[-1]


@dataclass(frozen=True)
class _Head:
    """Per-sample loss and its derivatives with respect to the network output."""
    kind: LossKind
    losses: np.ndarray       # (N,)
    residual: np.ndarray     # (N, C)
    curvature: np.ndarray    # (N, C, C)
    probs: Optional[np.ndarray] = None

    def hess_apply(self, direction: np.ndarray) -> np.ndarray:
        return np.einsum("ncl,nl->nc", self.curvature, direction)

    def third(self, direction: np.ndarray) -> np.ndarray:
        """Directional derivative of the output Hessian along ``direction``."""
        if self.kind == LossKind.MSE:
            return np.zeros_like(self.curvature)
        p = self.probs
        if self.kind == LossKind.LOGISTIC:
            return (p * (1.0 - p) * (1.0 - 2.0 * p) * direction)[:, :, None]
        dp = p * (direction - np.sum(p * direction, axis=1, keepdims=True))
        eye = np.eye(p.shape[1])
        return (eye * dp[:, None, :]
                - np.einsum("nc,nl->ncl", dp, p)
                - np.einsum("nc,nl->ncl", p, dp))


# ---------------------------------------------------------------------------
# Parameter handling and the forward pass
# ---------------------------------------------------------------------------

def _check_params(spec: ModelSpec, params: np.ndarray) -> np.ndarray:
    params = np.asarray(params, dtype=float)
    if params.ndim != 1 or params.size != spec.parameter_count:
        raise ArgumentError(
            f"expected {spec.parameter_count} parameters, got shape {params.shape}"
        )
    return ensure_finite("parameters", params)


def _check_inputs(spec: ModelSpec, inputs: np.ndarray) -> np.ndarray:
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim != 2 or inputs.shape[1] != spec.in_dim:
        raise ArgumentError(
            f"inputs must have shape (n, {spec.in_dim}), got {inputs.shape}"
        )
    if len(inputs) == 0:
        raise ArgumentError("batch is empty")
    return inputs


def unpack(spec: ModelSpec, params: np.ndarray) -> List[Layer]:
    """Split a flat parameter vector into per-layer weights and biases."""
    params = np.asarray(params, dtype=float)
    sizes = spec.layer_sizes
    layers, offset = [], 0
    for index, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        weight = params[offset:offset + n_out * n_in].reshape(n_out, n_in)
        offset += n_out * n_in
        bias = None
        if spec.layer_has_bias(index):
            bias = params[offset:offset + n_out]
            offset += n_out
        layers.append(Layer(weight, bias))
    return layers


def init_params(spec: ModelSpec, rng: np.random.Generator, scale: float) -> np.ndarray:
    """Draw initial parameters from N(0, scale^2)."""
    return scale * rng.standard_normal(spec.parameter_count)


def _nonlinearity(kind: Activation, z: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    if kind == Activation.TANH:
        a = np.tanh(z)
        slope = 1.0 - a * a
        return a, slope, -2.0 * a * slope
    if kind == Activation.RELU:
        positive = (z > 0).astype(float)
        return z * positive, positive, np.zeros_like(z)
    raise ConfigurationError(f"Unsupported activation: {kind}")


def _forward_trace(spec: ModelSpec, layers: List[Layer], inputs: np.ndarray) -> _Trace:
    activations, pre, slopes, curvatures = [inputs], [], [], []
    a = inputs
    for index, layer in enumerate(layers):
        z = a @ layer.weight.T
        if layer.bias is not None:
            z = z + layer.bias
        pre.append(z)
        if index < len(layers) - 1:
            a, slope, curvature = _nonlinearity(spec.activation, z)
            activations.append(a)
            slopes.append(slope)
            curvatures.append(curvature)
    return _Trace(activations, pre, slopes, curvatures)


def forward(spec: ModelSpec, params: np.ndarray, inputs: np.ndarray) -> np.ndarray:
    """
    Compute pre-nonlinearity network outputs.

    Args:
        spec: Model specification
        params: Flat parameter vector of length D
        inputs: Array (n, in_dim), or a single input vector

    Returns:
        Outputs (n, out_dim), or a single output vector for a single input

    Raises:
        ArgumentError: If parameter or input dimensions do not match the spec
    """
    single = np.ndim(inputs) == 1
    batch = _check_inputs(spec, np.atleast_2d(inputs))
    outputs = _forward_trace(spec, unpack(spec, _check_params(spec, params)), batch).output
    return outputs[0] if single else outputs


def embed(spec: ModelSpec, params: np.ndarray, inputs: np.ndarray,
          with_jacobian: bool = False) -> Union[np.ndarray, Tuple[np.ndarray, np.ndarray]]:
    """
    Embeddings used by prototype scoring: the final-layer outputs.

    With ``with_jacobian`` the inputs must be a batch, and the per-sample
    Jacobian (N, E, D) is returned alongside the embeddings.
    """
    if with_jacobian:
        return _outputs_and_jacobian(spec, params, inputs)
    return forward(spec, params, inputs)


def _jacobian_from_trace(layers: List[Layer], trace: _Trace) -> np.ndarray:
    n, c = trace.output.shape
    delta = np.broadcast_to(np.eye(c), (n, c, c)).copy()
    blocks: List[np.ndarray] = [None] * len(layers)
    for index in reversed(range(len(layers))):
        previous = trace.activations[index]
        weight_block = np.einsum("ncu,ni->ncui", delta, previous).reshape(n, c, -1)
        parts = [weight_block]
        if layers[index].bias is not None:
            parts.append(delta)
        blocks[index] = np.concatenate(parts, axis=2)
        if index > 0:
            delta = (delta @ layers[index].weight) * trace.slopes[index - 1][:, None, :]
    return np.concatenate(blocks, axis=2)


def _outputs_and_jacobian(spec: ModelSpec, params: np.ndarray,
                          inputs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    layers = unpack(spec, _check_params(spec, params))
    trace = _forward_trace(spec, layers, _check_inputs(spec, inputs))
    return trace.output, _jacobian_from_trace(layers, trace)


def output_jacobian(spec: ModelSpec, params: np.ndarray, inputs: np.ndarray) -> np.ndarray:
    """Per-sample Jacobian of the outputs w.r.t. the parameters, shape (N, C, D)."""
    return _outputs_and_jacobian(spec, params, inputs)[1]


# ---------------------------------------------------------------------------
# Loss heads
# ---------------------------------------------------------------------------

def _class_indices(targets: np.ndarray, n_classes: int) -> np.ndarray:
    targets = np.asarray(targets).reshape(-1)
    if targets.size and not np.all(np.equal(np.mod(targets, 1), 0)):
        raise ArgumentError("class targets must be integers")
    indices = targets.astype(np.int64)
    if np.any(indices < 0) or np.any(indices >= n_classes):
        raise ArgumentError(f"class index outside [0, {n_classes})")
    return indices


def _loss_head(kind: LossKind, outputs: np.ndarray, targets: np.ndarray) -> _Head:
    n, c = outputs.shape
    if kind == LossKind.MSE:
        targets = np.asarray(targets, dtype=float).reshape(n, -1)
        if targets.shape != outputs.shape:
            raise ArgumentError(f"targets shape {targets.shape} != outputs shape {outputs.shape}")
        diff = outputs - targets
        curvature = np.broadcast_to(np.eye(c), (n, c, c))
        return _Head(kind, 0.5 * np.sum(diff * diff, axis=1), diff, curvature)
    if kind == LossKind.CROSS_ENTROPY:
        labels = _class_indices(targets, c)
        log_p = log_softmax(outputs, axis=1)
        p = np.exp(log_p)
        residual = p.copy()
        residual[np.arange(n), labels] -= 1.0
        curvature = np.eye(c) * p[:, None, :] - np.einsum("nc,nl->ncl", p, p)
        return _Head(kind, -log_p[np.arange(n), labels], residual, curvature, p)
    if kind == LossKind.LOGISTIC:
        labels = _class_indices(targets, 2).astype(float)[:, None]
        p = expit(outputs)
        losses = np.logaddexp(0.0, outputs) - labels * outputs
        curvature = (p * (1.0 - p))[:, :, None]
        return _Head(kind, losses[:, 0], p - labels, curvature, p)
    raise ConfigurationError(f"Unsupported loss kind: {kind}")


def _reduce(spec: ModelSpec, head: _Head) -> Tuple[float, float]:
    """Mean loss and the derivative scale (1/N, or 0 when the loss is clipped)."""
    loss = float(np.mean(head.losses))
    if spec.loss_clip is not None and loss > spec.loss_clip:
        return float(spec.loss_clip), 0.0
    return loss, 1.0 / len(head.losses)


def _accuracy(kind: LossKind, outputs: np.ndarray, targets: np.ndarray) -> float:
    if kind == LossKind.CROSS_ENTROPY:
        return float(np.mean(np.argmax(outputs, axis=1) == np.asarray(targets).reshape(-1)))
    if kind == LossKind.LOGISTIC:
        return float(np.mean((outputs[:, 0] > 0) == (np.asarray(targets).reshape(-1) > 0.5)))
    return float("nan")


@dataclass(frozen=True)
class HeadTerms:
    """Loss value and output-space derivatives of one scored batch."""
    loss: float
    accuracy: float
    jacobian: np.ndarray
    head: _Head
    scale: float

    @property
    def gradient(self) -> np.ndarray:
        return self.scale * np.einsum("nc,ncd->d", self.head.residual, self.jacobian)

    def gauss_newton_diag(self) -> np.ndarray:
        diag = self.scale * np.einsum("ncd,ncl,nld->d", self.jacobian, self.head.curvature, self.jacobian)
        return np.maximum(diag, 0.0)

    def gauss_newton_matrix(self) -> np.ndarray:
        matrix = self.scale * np.einsum("ncd,ncl,nle->de", self.jacobian, self.head.curvature, self.jacobian)
        return 0.5 * (matrix + matrix.T)

    def third_contraction(self, direction: np.ndarray) -> np.ndarray:
        """Contract the loss third derivative with ``direction`` (linear outputs only)."""
        mu = np.einsum("ncd,d->nc", self.jacobian, direction)
        tensor = self.scale * np.einsum("ncd,ncl,nle->de", self.jacobian, self.head.third(mu), self.jacobian)
        return 0.5 * (tensor + tensor.T)


def _terms(spec: ModelSpec, outputs: np.ndarray, jacobian: np.ndarray,
           targets: np.ndarray, kind: Optional[LossKind] = None) -> HeadTerms:
    kind = kind or spec.loss
    head = _loss_head(kind, outputs, targets)
    loss, scale = _reduce(spec, head)
    return HeadTerms(loss, _accuracy(kind, outputs, targets), jacobian, head, scale)


def supervised_terms(spec: ModelSpec, params: np.ndarray, samples: Samples) -> HeadTerms:
    """Loss and output-space derivatives of a supervised batch."""
    outputs, jacobian = _outputs_and_jacobian(spec, params, samples.inputs)
    return _terms(spec, outputs, jacobian, samples.targets)


# ---------------------------------------------------------------------------
# Public derivative operations
# ---------------------------------------------------------------------------

def loss_and_grad(spec: ModelSpec, params: np.ndarray, samples: Samples) -> Tuple[float, np.ndarray]:
    """
    Mean loss over the batch and its exact gradient.

    Args:
        spec: Model specification
        params: Flat parameter vector
        samples: Non-empty batch

    Returns:
        (loss, gradient of length D)

    Raises:
        ArgumentError: On dimension mismatch or invalid class indices
    """
    terms = supervised_terms(spec, params, samples)
    return terms.loss, terms.gradient


def gauss_newton_diag(spec: ModelSpec, params: np.ndarray, samples: Samples) -> np.ndarray:
    """Diagonal of mean_n J_n^T H_n J_n; every entry is non-negative."""
    return supervised_terms(spec, params, samples).gauss_newton_diag()


def _require_linear(spec: ModelSpec, operation: str) -> None:
    if not spec.is_linear:
        raise UnsupportedOperationError(f"{operation} is only available for linear models")


def hessian_exact(spec: ModelSpec, params: np.ndarray, samples: Samples) -> np.ndarray:
    """
    Exact Hessian of the mean loss for a linear model.

    Raises:
        UnsupportedOperationError: For MLP architectures
    """
    _require_linear(spec, "hessian_exact")
    basis = np.eye(spec.parameter_count)
    columns = [hvp(spec, params, samples, basis[j]) for j in range(spec.parameter_count)]
    hessian = np.stack(columns, axis=1)
    return 0.5 * (hessian + hessian.T)


def linear_third_contraction(spec: ModelSpec, params: np.ndarray, samples: Samples,
                             direction: np.ndarray) -> np.ndarray:
    """Third derivative of the mean loss contracted with ``direction`` (linear models)."""
    _require_linear(spec, "linear_third_contraction")
    return supervised_terms(spec, params, samples).third_contraction(direction)


def hvp(spec: ModelSpec, params: np.ndarray, samples: Samples, vector: np.ndarray) -> np.ndarray:
    """
    Exact Hessian-vector product of the mean loss.

    Args:
        spec: Model specification
        params: Flat parameter vector
        samples: Non-empty batch
        vector: Direction of length D

    Returns:
        H @ vector
    """
    layers = unpack(spec, _check_params(spec, params))
    vector = np.asarray(vector, dtype=float)
    if vector.shape != (spec.parameter_count,):
        raise ArgumentError(f"vector must have length {spec.parameter_count}, got {vector.shape}")
    directions = unpack(spec, vector)
    inputs = _check_inputs(spec, samples.inputs)
    trace = _forward_trace(spec, layers, inputs)
    head = _loss_head(spec.loss, trace.output, samples.targets)
    _, scale = _reduce(spec, head)
    if scale == 0.0:
        return np.zeros(spec.parameter_count)

    # R-operator forward pass
    r_activations, r_pre = [np.zeros_like(inputs)], []
    for index, (layer, direction) in enumerate(zip(layers, directions)):
        rz = trace.activations[index] @ direction.weight.T + r_activations[index] @ layer.weight.T
        if direction.bias is not None:
            rz = rz + direction.bias
        r_pre.append(rz)
        if index < len(layers) - 1:
            r_activations.append(trace.slopes[index] * rz)

    # backward pass and its R-operator image
    g = scale * head.residual
    rg = scale * head.hess_apply(r_pre[-1])
    blocks: List[np.ndarray] = [None] * len(layers)
    for index in reversed(range(len(layers))):
        layer = layers[index]
        parts = [(rg.T @ trace.activations[index] + g.T @ r_activations[index]).ravel()]
        if layer.bias is not None:
            parts.append(rg.sum(axis=0))
        blocks[index] = np.concatenate(parts)
        if index > 0:
            back = g @ layer.weight
            r_back = rg @ layer.weight + g @ directions[index].weight
            rg = (r_back * trace.slopes[index - 1]
                  + back * trace.curvatures[index - 1] * r_pre[index - 1])
            g = back * trace.slopes[index - 1]
    return np.concatenate(blocks)


# ---------------------------------------------------------------------------
# Prototype scoring
# ---------------------------------------------------------------------------

def prototypical_terms(spec: ModelSpec, params: np.ndarray, support: Samples,
                       query: Samples) -> HeadTerms:
    """
    Score query points by negative squared distance to class prototypes.

    Prototypes are mean support embeddings per class. The logits' Jacobian
    carries derivatives through both query and support embeddings.

    Raises:
        ArgumentError: If a query class has no support example
    """
    support_labels = _class_indices(support.targets, np.iinfo(np.int64).max)
    query_labels = _class_indices(query.targets, np.iinfo(np.int64).max)
    n_classes = int(max(support_labels.max(), query_labels.max())) + 1
    counts = np.bincount(support_labels, minlength=n_classes)
    if np.any(counts == 0):
        raise ArgumentError("every class needs at least one support example")

    e_s, j_s = embed(spec, params, support.inputs, with_jacobian=True)
    e_q, j_q = embed(spec, params, query.inputs, with_jacobian=True)
    onehot = np.eye(n_classes)[support_labels] / counts[support_labels][:, None]
    prototypes = onehot.T @ e_s
    proto_jacobian = np.einsum("sk,sed->ked", onehot, j_s)

    diff = e_q[:, None, :] - prototypes[None, :, :]
    logits = -np.sum(diff * diff, axis=2)
    jacobian = -2.0 * np.einsum("qke,qked->qkd", diff, j_q[:, None] - proto_jacobian[None])
    return _terms(spec, logits, jacobian, query_labels, LossKind.CROSS_ENTROPY)
