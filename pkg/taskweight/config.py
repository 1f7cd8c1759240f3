import logging
from pathlib import Path
from typing import Any, Dict, Sequence, Union

import yaml
from pydantic import ValidationError

from .exceptions import ConfigurationError
from .models import ExperimentConfig

logger = logging.getLogger(__name__)


def parse_override(override: str) -> tuple:
    """Split ``a.b.c=value`` into the key path and the YAML-parsed value."""
    if "=" not in override:
        raise ConfigurationError(f"override must look like key.subkey=value, got {override!r}")
    key_path, raw = override.split("=", 1)
    keys = key_path.strip().split(".")
    if not all(keys):
        raise ConfigurationError(f"invalid override key {key_path!r}")
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError as e:
        raise ConfigurationError(f"cannot parse override value {raw!r}: {e}")
    return keys, value


def apply_overrides(data: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    """
    Apply dotted-path overrides to a raw config mapping.

    Missing intermediate sections are created; keys the schema does not know
    are rejected when the result is validated.

    Args:
        data: Raw config mapping (not modified)
        overrides: Strings of the form key.subkey=value

    Returns:
        A new mapping with the overrides applied

    Raises:
        ConfigurationError: If an override is malformed or descends into a value
    """
    if not isinstance(data, dict):
        raise ConfigurationError("config must be a mapping of sections")
    data = _deep_copy(data)
    for override in overrides:
        keys, value = parse_override(override)
        current = data
        for depth, key in enumerate(keys[:-1]):
            current = current.setdefault(key, {})
            if not isinstance(current, dict):
                raise ConfigurationError(
                    f"unknown config path {'.'.join(keys)}: {'.'.join(keys[:depth + 1])} is not a section"
                )
        current[keys[-1]] = value
        logger.debug(f"override {'.'.join(keys)} = {value!r}")
    return data


def _deep_copy(data: Any) -> Any:
    if isinstance(data, dict):
        return {key: _deep_copy(value) for key, value in data.items()}
    if isinstance(data, list):
        return [_deep_copy(value) for value in data]
    return data


def validate_config(data: Dict[str, Any]) -> ExperimentConfig:
    """Validate a raw mapping, reporting schema violations as ConfigurationError."""
    if not isinstance(data, dict):
        raise ConfigurationError("config must be a mapping of sections")
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigurationError(f"invalid configuration:\n{e}")


def load_config(path: Union[str, Path], overrides: Sequence[str] = ()) -> ExperimentConfig:
    """
    Load a YAML experiment config and apply command-line overrides.

    Raises:
        ConfigurationError: If the file is missing, unparsable or invalid
    """
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except OSError as e:
        raise ConfigurationError(f"cannot read config {path}: {e.strerror}")
    except yaml.YAMLError as e:
        raise ConfigurationError(f"cannot parse config {path}: {e}")
    config = validate_config(apply_overrides(data or {}, overrides))
    logger.info(f"loaded config {path} ({len(overrides)} overrides)")
    return config


def with_overrides(config: ExperimentConfig, overrides: Sequence[str]) -> ExperimentConfig:
    """Copy of a validated config with overrides applied and re-validated."""
    return validate_config(apply_overrides(config.model_dump(mode="json"), overrides))
