import json
import logging
import os
from pathlib import Path
from typing import Optional, Dict, Any

from pydantic import ValidationError

from waste_grasp_py import constants
from waste_grasp_py.config_models import PipelineConfig
from waste_grasp_py.exceptions import ConfigError

logger = logging.getLogger(__name__)


def _load_json_config_data(config_path: Path, strict: bool) -> Dict[str, Any]:
    try:
        with open(config_path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        if strict:
            raise ConfigError(f"Could not parse config file {config_path}: {e}") from e
        logger.warning("Could not parse config file %s. Invalid JSON.", config_path)
        return {}
    except OSError as e:
        if strict:
            raise ConfigError(f"Error loading config file {config_path}: {e}") from e
        logger.warning("Error loading config file %s: %s", config_path, e)
        return {}
    if not isinstance(data, dict):
        if strict:
            raise ConfigError(f"Config file {config_path} must contain a JSON object")
        logger.warning("Config file %s does not contain a JSON object.", config_path)
        return {}
    return data


def _config_sources(config_path_override: Optional[str]) -> list[tuple[Path, str, bool]]:
    # (path, description, explicitly requested)
    sources: list[tuple[Path, str, bool]] = []
    if config_path_override:
        sources.append((Path(config_path_override), f"CLI option '{config_path_override}'", True))
    env_path = os.getenv(constants.CONFIG_ENV_VAR)
    if env_path:
        sources.append((Path(env_path), f"environment variable {constants.CONFIG_ENV_VAR}='{env_path}'", True))
    sources.append((constants.GLOBAL_CONFIG_FILE, f"global file '{constants.GLOBAL_CONFIG_FILE}'", False))
    return sources


def load_base_config(config_path_override: Optional[str] = None) -> PipelineConfig:
    for config_path, description, explicit in _config_sources(config_path_override):
        if not (config_path.exists() and config_path.is_file()):
            if explicit:
                raise ConfigError(f"Config file from {description} does not exist")
            continue

        data = _load_json_config_data(config_path, strict=explicit)
        try:
            config = PipelineConfig(**data)
        except ValidationError as e:
            if explicit:
                raise ConfigError(f"Invalid configuration data in {description}: {e}") from e
            logger.warning("Invalid configuration data found in %s: %s", description, e)
            logger.warning("Falling back to complete default configuration.")
            return PipelineConfig()
        logger.debug("Loaded configuration from %s", description)
        return config

    return PipelineConfig()


def validate_final_config(config: PipelineConfig) -> bool:
    """Re-checks cross-field constraints after CLI overrides have been applied."""
    if config.grasp.slice_epsilon >= config.gripper.max_opening:
        raise ConfigError(
            f"grasp.slice_epsilon ({config.grasp.slice_epsilon}) must be smaller than "
            f"gripper.max_opening ({config.gripper.max_opening})"
        )
    if config.outlier_k >= config.grasp.min_points:
        raise ConfigError(
            f"outlier_k ({config.outlier_k}) must be smaller than grasp.min_points ({config.grasp.min_points})"
        )
    if config.normal_k >= config.grasp.min_points:
        raise ConfigError(
            f"normal_k ({config.normal_k}) must be smaller than grasp.min_points ({config.grasp.min_points})"
        )
    return True
