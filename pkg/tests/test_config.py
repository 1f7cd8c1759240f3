"""
Tests for config loading, overrides and the command-line entry point.
"""
import json

import numpy as np
import pytest
import yaml

from main import main
from taskweight.config import apply_overrides, load_config, parse_override, validate_config, with_overrides
from taskweight.exceptions import ConfigurationError
from taskweight.models import CurvatureMode, StrategyName

from tests.conftest import SMALL_CONFIG


@pytest.fixture
def small_config_file(tmp_path):
    """The small test config written as YAML."""
    path = tmp_path / "small.yaml"
    path.write_text(yaml.safe_dump(SMALL_CONFIG))
    return path


class TestLoadConfig:
    """Test cases for loading and validating experiment configs."""

    @pytest.mark.parametrize(
        "name", ["sine_reference.yaml", "cluster_imbalanced.yaml", "beta_sweep.yaml", "check_small.yaml"]
    )
    def test_shipped_configs(self, configs_dir, name):
        """Test that every shipped config validates."""
        config = load_config(configs_dir / name)
        assert config.model.parameter_count > 0

    def test_check_config_is_small(self, configs_dir):
        """Test that the diagnostics config fits the finite-difference budget."""
        config = load_config(configs_dir / "check_small.yaml")
        assert config.model.parameter_count == 33 <= config.checks.max_parameters

    def test_defaults(self, configs_dir):
        """Test values filled in from the schema defaults."""
        config = load_config(configs_dir / "beta_sweep.yaml")
        assert config.weighting.ilqr.n_iterations == 2
        assert config.weighting.prior.mean(5) == pytest.approx(0.2)
        assert config.evaluation_probabilities() == [0.5, 0.5]

    def test_missing_file(self, tmp_path):
        """Test that a missing file is a configuration error."""
        with pytest.raises(ConfigurationError):
            load_config(tmp_path / "absent.yaml")

    def test_unparsable_file(self, tmp_path):
        """Test that broken YAML is a configuration error."""
        path = tmp_path / "broken.yaml"
        path.write_text("seed: [0\n")
        with pytest.raises(ConfigurationError):
            load_config(path)

    def test_bad_probabilities(self):
        """Test that family probabilities must sum to 1."""
        data = dict(SMALL_CONFIG, environment=dict(SMALL_CONFIG["environment"], family_probabilities=[0.5, 0.6]))
        with pytest.raises(ConfigurationError):
            validate_config(data)

    def test_sine_needs_mse(self):
        """Test that sine regression rejects a classification loss."""
        data = dict(SMALL_CONFIG, model=dict(SMALL_CONFIG["model"], loss="cross_entropy"))
        with pytest.raises(ConfigurationError):
            validate_config(data)

    def test_zero_step_sizes_allowed(self, small_config):
        """Test that zero inner and outer step sizes validate."""
        config = small_config("inner_loop.gamma=0.0", "dynamics.alpha=0.0")
        assert config.inner_loop.gamma == 0.0
        assert config.dynamics.alpha == 0.0

    @pytest.mark.parametrize("override", ["inner_loop.gamma=-0.1", "dynamics.alpha=-1.0e-4"])
    def test_negative_step_sizes(self, small_config, override):
        """Test that negative step sizes are rejected."""
        with pytest.raises(ConfigurationError):
            small_config(override)

    def test_unknown_key(self):
        """Test that keys outside the schema are rejected."""
        with pytest.raises(ConfigurationError):
            validate_config(dict(SMALL_CONFIG, learning_rate=0.1))


class TestOverrides:
    """Test cases for dotted-path overrides."""

    def test_parse(self):
        """Test that values are parsed as YAML."""
        assert parse_override("weighting.prior.beta_u=100") == (["weighting", "prior", "beta_u"], 100)
        assert parse_override("sweep.values=[1, 2]") == (["sweep", "values"], [1, 2])

    def test_malformed(self):
        """Test that an override needs an equals sign and a key."""
        with pytest.raises(ConfigurationError):
            parse_override("seed")
        with pytest.raises(ConfigurationError):
            parse_override("weighting..kappa=2")

    def test_nested_values(self, small_config):
        """Test overriding nested and enum-valued settings."""
        config = small_config("weighting.ilqr.curvature=full", "weighting.strategy=exploration")
        assert config.weighting.ilqr.curvature == CurvatureMode.FULL
        assert config.weighting.strategy == StrategyName.EXPLORATION

    def test_original_untouched(self):
        """Test that applying overrides does not modify the input mapping."""
        data = {"seed": 0, "training": {"horizon": 5}}
        updated = apply_overrides(data, ["training.horizon=2"])
        assert data["training"]["horizon"] == 5
        assert updated["training"]["horizon"] == 2

    def test_creates_sections(self):
        """Test that a missing section is created."""
        assert apply_overrides({}, ["metrics.record_timing=true"]) == {"metrics": {"record_timing": True}}

    def test_descending_into_value(self):
        """Test that a path through a scalar is rejected."""
        with pytest.raises(ConfigurationError):
            apply_overrides({"seed": 0}, ["seed.value=1"])

    def test_unknown_override_key(self, small_config):
        """Test that an unknown override key fails validation."""
        with pytest.raises(ConfigurationError):
            small_config("training.learning_rate=0.1")

    def test_with_overrides_revalidates(self, small_config):
        """Test that an invalid override of a validated config is caught."""
        with pytest.raises(ConfigurationError):
            with_overrides(small_config(), ["training.horizon=0"])


@pytest.mark.integration
class TestCommandLine:
    """Test cases for the CLI entry point."""

    def test_lqr_check(self, configs_dir, tmp_path, capsys):
        """Test that the closed-form check passes and is written to checks.json."""
        code = main(["check", "--config", str(configs_dir / "check_small.yaml"),
                     "--check", "lqr", "--out", str(tmp_path)])
        assert code == 0
        reports = json.loads((tmp_path / "checks.json").read_text())
        assert reports[0]["name"] == "lqr" and reports[0]["passed"]

    def test_missing_config(self, tmp_path):
        """Test that a missing config exits with status 1."""
        assert main(["train", "--config", str(tmp_path / "absent.yaml")]) == 1

    def test_train_writes_outputs(self, small_config_file, tmp_path, capsys):
        """Test that training writes metrics, plot data and parameters."""
        out = tmp_path / "run"
        code = main(["train", "--config", str(small_config_file), "--out", str(out),
                     "--strategy", "uniform", "--override", "training.n_iterations=2"])
        assert code == 0
        for name in ("metrics.csv", "plot_data.csv", "params.npz"):
            assert (out / name).exists()
        summary = json.loads(capsys.readouterr().out)
        assert summary["iterations"] == 2

    def test_eval_from_checkpoint(self, small_config_file, tmp_path, capsys):
        """Test evaluating stored parameters without training."""
        checkpoint = tmp_path / "checkpoint.npz"
        np.savez(checkpoint, params=np.zeros(33))
        code = main(["eval", "--config", str(small_config_file), "--checkpoint", str(checkpoint)])
        assert code == 0
        result = json.loads(capsys.readouterr().out)
        assert result["n_tasks"] == 4

    def test_eval_after_train(self, small_config_file, tmp_path, capsys):
        """Test that eval scores the parameters a finished training run saved."""
        out = tmp_path / "run"
        assert main(["train", "--config", str(small_config_file), "--out", str(out),
                     "--strategy", "uniform", "--override", "training.n_iterations=1"]) == 0
        capsys.readouterr()
        code = main(["eval", "--config", str(small_config_file), "--checkpoint", str(out / "params.npz")])
        assert code == 0
        assert json.loads(capsys.readouterr().out)["n_tasks"] == 4

    def test_eval_from_bare_array(self, small_config_file, tmp_path, capsys):
        """Test that a plain .npy parameter vector is accepted."""
        path = tmp_path / "params.npy"
        np.save(path, np.zeros(33))
        assert main(["eval", "--config", str(small_config_file), "--checkpoint", str(path)]) == 0

    @pytest.mark.parametrize("content", ["missing", "no_params", "not_numpy"])
    def test_eval_unreadable_checkpoint(self, small_config_file, tmp_path, content):
        """Test that unusable parameter files exit with status 1."""
        path = tmp_path / "params.npz"
        if content == "no_params":
            np.savez(path, weights=np.zeros(33))
        elif content == "not_numpy":
            path.write_text("not an array")
        assert main(["eval", "--config", str(small_config_file), "--checkpoint", str(path)]) == 1
