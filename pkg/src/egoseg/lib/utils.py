"""
Utilities - project paths shared by the CLI and the harness.
"""

from pathlib import Path


def get_project_root() -> Path:
    """Get the project root directory."""
    # Navigate from src/egoseg/lib/ to project root
    return Path(__file__).parent.parent.parent.parent


def get_presets_base_path() -> Path:
    """Get the path to configs/presets/."""
    return get_project_root() / "configs" / "presets"
