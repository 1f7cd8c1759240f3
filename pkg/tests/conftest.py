"""
Pytest configuration and fixtures.
"""
import sys
from pathlib import Path

import numpy as np
import pytest

# Add the project root to Python path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from taskweight.config import validate_config, with_overrides  # noqa: E402
from taskweight.models import InnerLoopConfig, ModelSpec  # noqa: E402
from taskweight.tasks import Samples, Task, TaskBatch  # noqa: E402


SMALL_CONFIG = {
    "seed": 0,
    "environment": {
        "kind": "sine",
        "family_probabilities": [0.8, 0.2],
        "m_s": 4,
        "m_q": 6,
        "families": [
            {"amplitude": [0.5, 1.5], "phase": [0.0, 1.0]},
            {"amplitude": [2.0, 3.0], "phase": [1.0, 2.0]},
        ],
    },
    "model": {"architecture": {"kind": "mlp", "layer_sizes": [1, 4, 4, 1]}, "loss": "mse"},
    "inner_loop": {"gamma": 0.05},
    "dynamics": {"kind": "adam", "alpha": 1.0e-2},
    "training": {"n_iterations": 3, "horizon": 2, "batch_size": 3, "init_scale": 0.5},
    "evaluation": {"every": 1, "n_tasks": 4},
    "checks": {"n_seeds": 2, "n_lq_problems": 5},
}


@pytest.fixture
def configs_dir():
    """Directory of the shipped experiment configs."""
    return project_root / "configs"


@pytest.fixture
def small_config():
    """Factory for a fast sine-regression config with optional dotted overrides."""
    base = validate_config(SMALL_CONFIG)

    def build(*overrides):
        return with_overrides(base, list(overrides)) if overrides else base

    return build


@pytest.fixture
def linear_spec():
    """Single-input, single-output linear regressor without bias."""
    return ModelSpec.model_validate(
        {"architecture": {"kind": "linear", "in_dim": 1, "out_dim": 1}, "loss": "mse"}
    )


@pytest.fixture
def mlp_spec():
    """Small tanh MLP for regression."""
    return ModelSpec.model_validate(
        {"architecture": {"kind": "mlp", "layer_sizes": [1, 4, 4, 1]}, "loss": "mse"}
    )


@pytest.fixture
def classifier_spec():
    """3-way linear softmax classifier with bias."""
    return ModelSpec.model_validate(
        {"architecture": {"kind": "linear", "in_dim": 2, "out_dim": 3, "bias": True},
         "loss": "cross_entropy"}
    )


@pytest.fixture
def inner():
    return InnerLoopConfig(gamma=0.1, n_inner_steps=1)


def line_task(slope: float, family_id: int = 0) -> Task:
    """Deterministic regression task y = slope * s."""
    support = np.array([[1.0], [2.0], [-1.0]])
    query = np.array([[0.5], [1.5], [-2.0]])
    return Task(
        support=Samples(support, slope * support),
        query=Samples(query, slope * query),
        family_id=family_id,
    )


@pytest.fixture
def line_batch():
    """Two line-fitting tasks whose query losses differ roughly tenfold at x = 0."""
    return TaskBatch((line_task(3.16), line_task(1.0, family_id=1)))


@pytest.fixture
def classification_task():
    """Deterministic 3-way task with two support points per class."""
    rng = np.random.default_rng(7)
    centers = np.array([[-2.0, 0.0], [0.0, 2.0], [2.0, 0.0]])
    support_labels = np.array([0, 1, 2, 0, 1, 2])
    query_labels = np.array([0, 1, 2, 2, 1, 0])
    return Task(
        support=Samples(centers[support_labels] + 0.3 * rng.standard_normal((6, 2)), support_labels),
        query=Samples(centers[query_labels] + 0.3 * rng.standard_normal((6, 2)), query_labels),
        family_id=0,
    )


# Pytest configuration
def pytest_configure(config):
    """Configure pytest with custom markers."""
    config.addinivalue_line(
        "markers", "slow: marks tests as slow (deselect with '-m \"not slow\"')"
    )
    config.addinivalue_line(
        "markers", "integration: marks tests as integration tests"
    )
    config.addinivalue_line(
        "markers", "unit: marks tests as unit tests"
    )
