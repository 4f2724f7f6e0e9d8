"""Read and write preset files (configs/presets/<id>.yaml)."""

from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError

REQUIRED_FIELDS = {"name", "description"}


def parse_preset_yaml(path: Path) -> dict[str, Any]:
    """
    Parse a preset file into a dictionary.

    Format:
        name: Desk scale
        description: One-line description
        extends: other_preset_id   # optional
        settings:                  # flat `section.key` map (nested also accepted)
          data.crop_size: 64
          loss.lambda_co: 0.0

    Returns:
        Dict with name, description, extends (or None) and settings
    """
    try:
        data = yaml.safe_load(path.read_text()) or {}
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"Cannot read preset {path}: {e}") from e

    if not isinstance(data, dict):
        raise ConfigError(f"Preset must be a mapping: {path}")
    missing = REQUIRED_FIELDS - set(data)
    if missing:
        raise ConfigError(f"Preset {path} is missing fields: {', '.join(sorted(missing))}")

    settings = data.get("settings") or {}
    if not isinstance(settings, dict):
        raise ConfigError(f"Preset settings must be a mapping: {path}")

    return {
        "name": data["name"],
        "description": data["description"],
        "extends": data.get("extends"),
        "settings": settings,
    }


def write_preset_yaml(preset_id: str, data: dict[str, Any], base_path: Path) -> Path:
    """
    Write a preset definition to base_path/<preset_id>.yaml.

    Keys keep their order; `extends` is omitted when unset.
    """
    data = {k: v for k, v in data.items() if not (k == "extends" and v is None)}
    base_path.mkdir(parents=True, exist_ok=True)

    content = yaml.dump(
        data,
        default_flow_style=False,
        sort_keys=False,
        allow_unicode=True,
    )
    preset_file = base_path / f"{preset_id}.yaml"
    preset_file.write_text(content)
    return preset_file
