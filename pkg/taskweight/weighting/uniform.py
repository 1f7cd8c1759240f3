import numpy as np

from .base import PerBatchWeighting, WeightingContext
from ..exceptions import ArgumentError


def uniform_weights(n_tasks: int) -> np.ndarray:
    """Every task weighted 1/M."""
    if n_tasks < 1:
        raise ArgumentError(f"need at least one task, got {n_tasks}")
    return np.full(n_tasks, 1.0 / n_tasks)


class UniformWeighting(PerBatchWeighting):
    """Plain mini-batch meta-training: weights ignore the losses."""

    @property
    def name(self) -> str:
        return "uniform"

    def weights(self, losses: np.ndarray, context: WeightingContext) -> np.ndarray:
        return uniform_weights(len(losses))


# Global instance
uniform = UniformWeighting()
