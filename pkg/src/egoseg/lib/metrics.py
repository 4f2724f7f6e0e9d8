"""
Metrics - IoU, recall-style accuracy and the interaction-illusion rate.

Per-sample functions work on MaskSets. Dataset-level numbers come from a
confusion matrix over background + 5 classes accumulated across samples;
classes with an undefined value (empty union / empty ground truth) are
left out of the means.
"""

import json
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
import pydantic
from pydantic import BaseModel, ConfigDict, Field
from torch import Tensor

from .domain import CLASS_NAMES, LH, LO, NUM_CLASSES, RH, RO, TO, MaskSet, class_index, masks_to_labels
from .errors import DatasetError, ShapeError, ValidationError


def _check_shapes(pred: MaskSet, gt: MaskSet):
    if pred.shape != gt.shape:
        raise ShapeError(f"Prediction {pred.shape} and ground truth {gt.shape} differ in size")


def iou(pred: MaskSet, gt: MaskSet, k: int | str) -> float | None:
    """|pred_k & gt_k| / |pred_k | gt_k|, None when the union is empty."""
    _check_shapes(pred, gt)
    p, g = pred[k], gt[k]
    union = int((p | g).sum())
    if union == 0:
        return None
    return int((p & g).sum()) / union


def accuracy(pred: MaskSet, gt: MaskSet, k: int | str) -> float | None:
    """|pred_k & gt_k| / |gt_k|, None when gt_k is empty."""
    _check_shapes(pred, gt)
    p, g = pred[k], gt[k]
    total = int(g.sum())
    if total == 0:
        return None
    return int((p & g).sum()) / total


def is_illusion(counts: Sequence[int], tau: int) -> bool:
    """
    True if an object is predicted without the hand(s) it needs.

    (lo > 0 and lh <= tau) or (ro > 0 and rh <= tau)
    or (to > 0 and not (lh > tau and rh > tau))
    """
    left, right = counts[LH] > tau, counts[RH] > tau
    return (
        (counts[LO] > 0 and not left)
        or (counts[RO] > 0 and not right)
        or (counts[TO] > 0 and not (left and right))
    )


def illusion_rate(predictions: Iterable[MaskSet], tau_presence: int) -> float:
    """Fraction of predictions that are interaction illusions."""
    if tau_presence < 0:
        raise ValidationError(f"Presence threshold must be >= 0, got {tau_presence}")
    flags = [is_illusion(p.counts(), tau_presence) for p in predictions]
    if not flags:
        raise ValidationError("illusion_rate needs at least one prediction")
    return sum(flags) / len(flags)


def _mean_defined(values: Sequence[float | None]) -> float | None:
    defined = [v for v in values if v is not None]
    return sum(defined) / len(defined) if defined else None


class MetricReport(BaseModel):
    """Evaluation summary, written as one JSON object."""

    model_config = ConfigDict(extra="forbid")

    name: str = ""
    class_names: list[str] = Field(default_factory=lambda: list(CLASS_NAMES))
    per_class_iou: list[float | None] = Field(min_length=NUM_CLASSES, max_length=NUM_CLASSES)
    miou: float | None
    per_class_acc: list[float | None] = Field(min_length=NUM_CLASSES, max_length=NUM_CLASSES)
    macc: float | None
    illusion_rate: float = Field(ge=0.0, le=1.0)
    illusion_count: int = Field(0, ge=0)
    illusion_tau: int = Field(0, ge=0)
    sample_count: int = Field(ge=0)
    parameter_count: int | None = None
    config: dict[str, Any] = Field(default_factory=dict)

    def iou_of(self, k: int | str) -> float | None:
        return self.per_class_iou[class_index(k)]

    def summary(self) -> dict[str, float | None]:
        """Flat name -> value view for logging."""
        rows: dict[str, float | None] = {}
        for name, iou_k, acc_k in zip(self.class_names, self.per_class_iou, self.per_class_acc):
            rows[f"iou/{name}"] = iou_k
            rows[f"acc/{name}"] = acc_k
        rows["miou"] = self.miou
        rows["macc"] = self.macc
        rows["illusion_rate"] = self.illusion_rate
        return rows


class MetricAccumulator:
    """Confusion matrix over labels 0..5 plus the illusion tally."""

    def __init__(self, illusion_tau: int):
        self.n_class = NUM_CLASSES + 1
        self.illusion_tau = illusion_tau
        self.confusion = np.zeros((self.n_class, self.n_class), dtype=np.int64)
        self.sample_count = 0
        self.illusion_count = 0

    def add(self, pred: MaskSet, gt: MaskSet):
        _check_shapes(pred, gt)
        self.add_labels(masks_to_labels(pred), masks_to_labels(gt))

    def add_labels(self, pred_labels: Tensor | np.ndarray, gt_labels: Tensor | np.ndarray):
        pred_np, gt_np = np.asarray(pred_labels), np.asarray(gt_labels)
        if pred_np.shape != gt_np.shape:
            raise ShapeError(f"Label maps differ: {pred_np.shape} vs {gt_np.shape}")
        index = self.n_class * gt_np.reshape(-1).astype(np.int64) + pred_np.reshape(-1)
        self.confusion += np.bincount(index, minlength=self.n_class**2).reshape(
            self.n_class, self.n_class
        )

        counts = [int((pred_np == k + 1).sum()) for k in range(NUM_CLASSES)]
        self.illusion_count += int(is_illusion(counts, self.illusion_tau))
        self.sample_count += 1

    def per_class_iou(self) -> list[float | None]:
        inter = np.diag(self.confusion)
        union = self.confusion.sum(axis=0) + self.confusion.sum(axis=1) - inter
        return [float(inter[k] / union[k]) if union[k] else None for k in range(1, self.n_class)]

    def per_class_acc(self) -> list[float | None]:
        inter = np.diag(self.confusion)
        total = self.confusion.sum(axis=1)
        return [float(inter[k] / total[k]) if total[k] else None for k in range(1, self.n_class)]

    def report(self, **extra: Any) -> MetricReport:
        if self.sample_count == 0:
            raise ValidationError("No samples were evaluated")
        ious, accs = self.per_class_iou(), self.per_class_acc()
        return MetricReport(
            per_class_iou=ious,
            miou=_mean_defined(ious),
            per_class_acc=accs,
            macc=_mean_defined(accs),
            illusion_rate=self.illusion_count / self.sample_count,
            illusion_count=self.illusion_count,
            illusion_tau=self.illusion_tau,
            sample_count=self.sample_count,
            **extra,
        )


def write_report(report: MetricReport, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.model_dump_json(indent=2) + "\n")
    return path


def read_report(path: Path) -> MetricReport:
    """Load and validate a metrics JSON file."""
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise DatasetError(f"Cannot read metrics file ({e})", path) from e
    try:
        return MetricReport.model_validate(data)
    except pydantic.ValidationError as e:
        raise ValidationError(f"Invalid metrics file {path}: {e}") from e
