"""
Preset Registry - Load preset definitions, build config factories.

- Loads presets from configs/presets/<id>.yaml
- Resolves `extends` chains into one flat settings map per preset
- Builds a factory per preset that turns overrides into a TrainConfig
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping

from .config import TrainConfig, build_config, flatten_mapping
from .errors import ConfigError
from .preset_io import parse_preset_yaml, write_preset_yaml
from .utils import get_presets_base_path


@dataclass
class PresetDefinition:
    """Blueprint for a run configuration - loaded from <id>.yaml."""

    name: str
    description: str
    settings: dict[str, Any] = field(default_factory=dict)
    extends: str | None = None

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "PresetDefinition":
        return cls(
            name=data["name"],
            description=data["description"],
            settings=flatten_mapping(data.get("settings") or {}),
            extends=data.get("extends"),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "description": self.description,
            "extends": self.extends,
            "settings": dict(self.settings),
        }


# Type alias for factory functions
ConfigFactory = Callable[[Mapping[str, Any] | None], TrainConfig]


def build_factory(settings: Mapping[str, Any], preset_id: str) -> ConfigFactory:
    """
    Build a factory from resolved preset settings.

    The factory layers runtime overrides (environment, --set) on top of the
    preset and validates the result. The run name defaults to the preset id.
    """

    def factory(overrides: Mapping[str, Any] | None = None) -> TrainConfig:
        return build_config({"name": preset_id}, settings, overrides or {})

    return factory


class PresetRegistry:
    """
    Central registry for all presets.

    Flow: <id>.yaml -> Definition -> resolved settings -> Factory -> TrainConfig

    Usage:
        registry = PresetRegistry.from_filesystem()
        cfg = registry.create("desk", {"seed": 1})
    """

    def __init__(self):
        self._definitions: dict[str, PresetDefinition] = {}

    def register(self, preset_id: str, definition: PresetDefinition) -> None:
        self._definitions[preset_id] = definition

    def resolve(self, preset_id: str) -> dict[str, Any]:
        """Flat settings of a preset with its `extends` chain applied (parent first)."""
        chain: list[str] = []
        current: str | None = preset_id
        while current is not None:
            if current in chain:
                raise ConfigError(f"Preset inheritance cycle: {' -> '.join(chain + [current])}")
            if current not in self._definitions:
                available = ", ".join(self.list_presets())
                raise ConfigError(f"Preset '{current}' not found. Available: {available}")
            chain.append(current)
            current = self._definitions[current].extends

        settings: dict[str, Any] = {}
        for pid in reversed(chain):
            settings.update(self._definitions[pid].settings)
        return settings

    def factory(self, preset_id: str) -> ConfigFactory:
        return build_factory(self.resolve(preset_id), preset_id)

    def create(self, preset_id: str, overrides: Mapping[str, Any] | None = None) -> TrainConfig:
        """Validated config for a preset plus overrides."""
        return self.factory(preset_id)(overrides)

    def list_presets(self) -> list[str]:
        return list(self._definitions.keys())

    def get_definition(self, preset_id: str) -> PresetDefinition:
        if preset_id not in self._definitions:
            raise ConfigError(f"Preset '{preset_id}' not found")
        return self._definitions[preset_id]

    @classmethod
    def from_filesystem(cls, base_path: Path | None = None) -> "PresetRegistry":
        """Load registry from configs/presets/*.yaml."""
        registry = cls()
        base = base_path or get_presets_base_path()

        if not base.exists():
            return registry

        for preset_file in sorted(base.glob("*.yaml")):
            data = parse_preset_yaml(preset_file)
            registry.register(preset_file.stem, PresetDefinition.from_dict(data))

        return registry

    def save_preset(self, preset_id: str, base_path: Path | None = None) -> Path:
        """Save a single preset to <base_path>/<id>.yaml."""
        defn = self.get_definition(preset_id)
        return write_preset_yaml(preset_id, defn.to_dict(), base_path or get_presets_base_path())
