"""
Service module for scenario configuration files.
A scenario is a flat `key = value` file with `#` comments. Per-target keys
take the form `target.<i>.<field>`; everything else maps onto ScenarioConfig.
"""

import logging
import os
import re
from typing import Any, Dict, Mapping, Optional

from dotenv import dotenv_values
from pydantic import ValidationError

from app.core.errors import ConfigError
from app.schemas.scenario import ScenarioConfig

logger = logging.getLogger(__name__)

TARGET_KEY = re.compile(r"^target\.(\d+)\.(\w+)$")


def parse_scenario(values: Mapping[str, Optional[str]], overrides: Optional[Mapping[str, Any]] = None) -> ScenarioConfig:
    """
    Build a validated ScenarioConfig from flat key/value pairs.

    Args:
        values: Raw strings as read from the config file.
        overrides: Values that replace file entries (e.g. command-line options).

    Returns:
        ScenarioConfig: The validated scenario.

    Raises:
        ConfigError: On malformed keys, missing values or failed validation.
    """
    fields: Dict[str, Any] = {}
    targets: Dict[int, Dict[str, Any]] = {}
    for key, value in values.items():
        if value is None:
            raise ConfigError(f"config key {key!r} has no value")
        match = TARGET_KEY.match(key)
        if match:
            targets.setdefault(int(match.group(1)), {})[match.group(2)] = value
        elif key.startswith("target."):
            raise ConfigError(f"malformed target key {key!r}, expected target.<index>.<field>")
        else:
            fields[key] = value

    if targets:
        indices = sorted(targets)
        if indices != list(range(len(indices))):
            raise ConfigError(f"target indices must run 0..{len(indices) - 1}, got {indices}")
        fields["targets"] = [targets[index] for index in indices]
    fields.update({key: value for key, value in (overrides or {}).items() if value is not None})

    try:
        return ScenarioConfig(**fields)
    except ValidationError as e:
        raise ConfigError(f"invalid scenario: {e}") from e


def load_scenario(path: str, overrides: Optional[Mapping[str, Any]] = None) -> ScenarioConfig:
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    scenario = parse_scenario(dotenv_values(path), overrides)
    logger.info(f"Loaded scenario {path}: {scenario.M}x{scenario.N} grid, {len(scenario.targets)} targets")
    return scenario
