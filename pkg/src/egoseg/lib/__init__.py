"""
Egoseg Library - Framework internals.

This module contains all framework code:
- Domain types, configuration and presets
- Model components (encoder, IPP, DQG, decoder) and losses
- Data loading, synthetic data, training and evaluation
- Logging, checkpoints and utilities
"""

# Domain and errors
from .domain import (
    CLASS_NAMES,
    NUM_CLASSES,
    BoundaryMap,
    FeatureMap,
    FeaturePyramid,
    ImageSample,
    MaskSet,
    labels_to_masks,
    masks_to_labels,
)
from .errors import (
    CheckpointError,
    CheckpointVersionError,
    ConfigError,
    DatasetError,
    EgosegError,
    NonFiniteLossError,
    ShapeError,
    ValidationError,
)

# Configuration and presets
from .config import (
    TrainConfig,
    build_config,
    env_overrides,
    flatten_config,
    load_config_file,
    parse_override,
    write_config_file,
)
from .registry import PresetDefinition, PresetRegistry

# Model
from .encoder import PixelEncoder
from .ipp import InteractionPriorPredictor, IPPOutput, boundary_gt, boundary_loss
from .dqg import (
    DynamicQueryGenerator,
    QuerySet,
    SimilarityMap,
    align_boundary_feature,
    make_queries,
    select_queries,
    similarity_map,
)
from .decoder import (
    DecoderLayer,
    DualContextFeatureSelector,
    PredictionHeads,
    SegmentationOutput,
    compose_masks,
)
from .model import HandObjectSegmenter, ModelOutput

# Losses and metrics
from .losses import (
    LossComponents,
    PixelCounts,
    cls_loss,
    coco_loss,
    ce_mask_loss,
    dice_loss,
    pixel_counts,
    total_loss,
)
from .metrics import MetricReport, accuracy, illusion_rate, iou, read_report, write_report

# Data
from .data import DatasetSpec, SegmentationDataset, load_dataset, masks_from_files, write_label_image
from .synth import SynthSpec, synth_generate

# Harness
from .checkpoint import Checkpoint, load_checkpoint
from .trainer import Trainer, learning_rate, train
from .evaluator import Prediction, evaluate, evaluate_predictions, predict
from .study import StudyResult, run_coco_study

# Logging and utilities
from .run_logger import RunLogger
from .utils import get_presets_base_path, get_project_root

__all__ = [
    # Domain
    "CLASS_NAMES",
    "NUM_CLASSES",
    "BoundaryMap",
    "FeatureMap",
    "FeaturePyramid",
    "ImageSample",
    "MaskSet",
    "labels_to_masks",
    "masks_to_labels",
    # Errors
    "CheckpointError",
    "CheckpointVersionError",
    "ConfigError",
    "DatasetError",
    "EgosegError",
    "NonFiniteLossError",
    "ShapeError",
    "ValidationError",
    # Config
    "TrainConfig",
    "build_config",
    "env_overrides",
    "flatten_config",
    "load_config_file",
    "parse_override",
    "write_config_file",
    "PresetDefinition",
    "PresetRegistry",
    # Model
    "PixelEncoder",
    "InteractionPriorPredictor",
    "IPPOutput",
    "boundary_gt",
    "boundary_loss",
    "DynamicQueryGenerator",
    "QuerySet",
    "SimilarityMap",
    "align_boundary_feature",
    "make_queries",
    "select_queries",
    "similarity_map",
    "DecoderLayer",
    "DualContextFeatureSelector",
    "PredictionHeads",
    "SegmentationOutput",
    "compose_masks",
    "HandObjectSegmenter",
    "ModelOutput",
    # Losses and metrics
    "LossComponents",
    "PixelCounts",
    "cls_loss",
    "coco_loss",
    "ce_mask_loss",
    "dice_loss",
    "pixel_counts",
    "total_loss",
    "MetricReport",
    "accuracy",
    "illusion_rate",
    "iou",
    "read_report",
    "write_report",
    # Data
    "DatasetSpec",
    "SegmentationDataset",
    "load_dataset",
    "masks_from_files",
    "write_label_image",
    "SynthSpec",
    "synth_generate",
    # Harness
    "Checkpoint",
    "load_checkpoint",
    "Trainer",
    "learning_rate",
    "train",
    "Prediction",
    "evaluate",
    "evaluate_predictions",
    "predict",
    "StudyResult",
    "run_coco_study",
    # Logging and utilities
    "RunLogger",
    "get_presets_base_path",
    "get_project_root",
]
