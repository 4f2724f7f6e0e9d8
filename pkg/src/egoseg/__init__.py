"""Egoseg - interaction-aware hand and active-object segmentation for egocentric images."""

from .lib import HandObjectSegmenter, PresetRegistry, TrainConfig, build_config, evaluate, predict, train

__all__ = ["HandObjectSegmenter", "PresetRegistry", "TrainConfig", "build_config", "evaluate", "predict", "train"]
