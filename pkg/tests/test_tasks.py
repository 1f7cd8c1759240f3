"""
Tests for task environments and mini-batch sampling.
"""
import numpy as np
import pytest

from taskweight.exceptions import ArgumentError
from taskweight.models import ClusterEnvironmentConfig
from taskweight.tasks import (
    ClusterClassificationEnvironment,
    Samples,
    TaskBatch,
    build_environment,
    family_counts,
    sample_task_batch,
    spawn_streams,
    split_support_query,
)


class TestSamplesAndBatches:
    """Test cases for the task containers."""

    def test_mismatched_targets(self):
        """Test that inputs and targets must have the same length."""
        with pytest.raises(ArgumentError):
            Samples(np.zeros((3, 1)), np.zeros(2))

    def test_inputs_must_be_matrix(self):
        """Test that 1-D inputs are rejected."""
        with pytest.raises(ArgumentError):
            Samples(np.zeros(3), np.zeros(3))

    def test_empty_batch(self):
        """Test that a batch needs at least one task."""
        with pytest.raises(ArgumentError):
            TaskBatch(())

    def test_split_sizes(self):
        """Test that the first m_s points become the support set."""
        points = Samples(np.arange(10.0).reshape(10, 1), np.arange(10.0))
        support, query = split_support_query(points, 4, 6)
        assert len(support) == 4
        assert len(query) == 6
        np.testing.assert_array_equal(support.inputs[:, 0], [0, 1, 2, 3])
        np.testing.assert_array_equal(query.targets, [4, 5, 6, 7, 8, 9])

    def test_split_mismatch(self):
        """Test that m_s + m_q must match the number of points."""
        points = Samples(np.zeros((5, 1)), np.zeros(5))
        with pytest.raises(ArgumentError):
            split_support_query(points, 4, 6)


class TestSineEnvironment:
    """Test cases for sine-regression sampling."""

    def test_shapes(self, small_config):
        """Test task shapes and batch size."""
        env = build_environment(small_config().environment)
        batch = sample_task_batch(env, np.random.default_rng(0), 3)
        assert len(batch) == 3
        for task in batch:
            assert task.support.inputs.shape == (4, 1)
            assert task.query.targets.shape == (6, 1)

    def test_deterministic(self, small_config):
        """Test that identical generator states give identical batches."""
        env = build_environment(small_config().environment)
        first = sample_task_batch(env, np.random.default_rng(11), 3)
        second = sample_task_batch(env, np.random.default_rng(11), 3)
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a.support.inputs, b.support.inputs)
            np.testing.assert_array_equal(a.query.targets, b.query.targets)
            assert a.family_id == b.family_id

    def test_degenerate_distribution(self, small_config):
        """Test that a point-mass family distribution only yields that family."""
        env = build_environment(small_config().environment).with_probabilities([0.0, 1.0])
        batch = sample_task_batch(env, np.random.default_rng(3), 20)
        assert all(task.family_id == 1 for task in batch)

    def test_batch_size_validation(self, small_config):
        """Test that the batch size must be positive."""
        env = build_environment(small_config().environment)
        with pytest.raises(ArgumentError):
            sample_task_batch(env, np.random.default_rng(0), 0)

    def test_family_counts(self, small_config):
        """Test counting sampled tasks per family."""
        env = build_environment(small_config().environment)
        rng = np.random.default_rng(5)
        batches = [sample_task_batch(env, rng, 5) for _ in range(4)]
        counts = family_counts(batches, 2)
        assert sum(counts) == 20
        assert counts == [
            sum(task.family_id == f for batch in batches for task in batch) for f in range(2)
        ]

    def test_family_frequency(self, small_config):
        """Test that family draws follow the configured probabilities within three standard deviations."""
        env = build_environment(small_config().environment)
        rng = np.random.default_rng(17)
        n_draws = 10_000
        hits = sum(env.sample_family(rng) == 0 for _ in range(n_draws))
        assert abs(hits - 0.8 * n_draws) <= 3.0 * np.sqrt(n_draws * 0.8 * 0.2)


class TestClusterEnvironment:
    """Test cases for cluster classification sampling."""

    def setup_method(self):
        """Set up a 3-way, two-family environment."""
        self.config = ClusterEnvironmentConfig(
            family_probabilities=[0.5, 0.5],
            m_s=6,
            m_q=9,
            families=[
                {"centers": [[-2.0, 0.0], [0.0, 2.0], [2.0, 0.0]]},
                {"centers": [[0.0, -1.0], [1.0, 1.0], [-1.0, 1.0]]},
            ],
        )
        self.env = ClusterClassificationEnvironment(self.config)

    def test_balanced_labels(self):
        """Test that every class appears equally often in support and query."""
        task = self.env.sample_task(np.random.default_rng(0))
        assert np.bincount(task.support.targets, minlength=3).tolist() == [2, 2, 2]
        assert np.bincount(task.query.targets, minlength=3).tolist() == [3, 3, 3]
        assert task.support.inputs.shape == (6, 2)

    def test_integer_labels(self):
        """Test that labels are integer class indices."""
        task = self.env.sample_task(np.random.default_rng(1))
        assert task.support.targets.dtype == np.int64

    def test_points_near_centers(self):
        """Test that without label permutation points cluster around their class centre."""
        config = self.config.model_copy(update={"permute_labels": False, "cluster_std": 0.01})
        env = ClusterClassificationEnvironment(config)
        task = env.sample_task(np.random.default_rng(2))
        centers = np.asarray(config.families[task.family_id].centers)
        np.testing.assert_allclose(task.support.inputs, centers[task.support.targets], atol=0.1)


class TestSeedStreams:
    """Test cases for master-seed stream derivation."""

    def test_reproducible(self):
        """Test that the same seed yields the same streams."""
        a = spawn_streams(3, ["init", "train"])
        b = spawn_streams(3, ["init", "train"])
        assert a["train"].random() == b["train"].random()

    def test_independent(self):
        """Test that named streams differ from each other."""
        streams = spawn_streams(3, ["init", "train"])
        assert streams["init"].random() != streams["train"].random()
