"""YAML config loader."""

from pathlib import Path
from typing import Any, Dict, Union

import yaml

from config import get_settings

_cache: Dict[str, Any] = {}


def load_yaml(filename: Union[str, Path]) -> Dict[str, Any]:
    """Load a YAML file; relative names that do not exist resolve inside AECNR_CONFIG_DIR."""
    path = Path(filename)
    if not path.is_absolute() and not path.exists():
        path = get_settings().config_dir / path
    key = str(path.resolve())
    if key in _cache:
        return _cache[key]

    if not path.exists():
        raise FileNotFoundError(f"Config not found: {path}")

    with open(path, "r", encoding="utf-8") as f:
        data = yaml.safe_load(f) or {}
    if not isinstance(data, dict):
        raise ValueError(f"Config {path} must be a key-value mapping")

    _cache[key] = data
    return data


def get_room_defaults() -> Dict[str, Any]:
    """Room defaults from room.yaml."""
    return load_yaml("room.yaml")


def get_scenario_defaults() -> Dict[str, Any]:
    """Scenario defaults from scenario.yaml."""
    return load_yaml("scenario.yaml")


def get_experiment_defaults() -> Dict[str, Any]:
    """Sweep definition from experiment.yaml."""
    return load_yaml("experiment.yaml")


def get_band_importance() -> Dict[str, Any]:
    """One-third-octave importance table from band_importance.yaml."""
    return load_yaml("band_importance.yaml")


def clear_cache() -> None:
    """Clear the cache (for tests)."""
    _cache.clear()
