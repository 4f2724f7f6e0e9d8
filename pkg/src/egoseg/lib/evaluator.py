"""
Evaluator - metrics over a dataset split and single-image prediction.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
import torch
from PIL import Image
from torch.utils.data import DataLoader

from .checkpoint import Checkpoint, check_compatible, load_checkpoint
from .config import TrainConfig, flatten_config
from .data import DatasetSpec, SegmentationDataset, center_crop, normalize, read_rgb, write_label_image
from .decoder import labels_from_composed
from .domain import BoundaryMap, MaskSet, labels_to_masks, masks_to_labels
from .metrics import MetricAccumulator, MetricReport
from .model import HandObjectSegmenter
from .run_logger import RunLogger


def load_model(cfg: TrainConfig, checkpoint: Path | Checkpoint) -> HandObjectSegmenter:
    """Model in eval mode with checkpoint weights; the architecture must match cfg."""
    if isinstance(checkpoint, Checkpoint):
        check_compatible(checkpoint, cfg)
        ckpt = checkpoint
    else:
        ckpt = load_checkpoint(checkpoint, cfg)
    model = HandObjectSegmenter(cfg)
    model.load_state_dict(ckpt.model_state)
    return model.to(cfg.device).eval()


def evaluate_predictions(
    pairs: Iterable[tuple[MaskSet, MaskSet]],
    illusion_tau: int,
    name: str = "",
) -> MetricReport:
    """Report over (prediction, ground truth) pairs."""
    acc = MetricAccumulator(illusion_tau)
    for pred, gt in pairs:
        acc.add(pred, gt)
    return acc.report(name=name)


def evaluate(
    cfg: TrainConfig,
    checkpoint: Path | Checkpoint,
    split: str | None = None,
    export_dir: Path | None = None,
    log_dir: Path | None = None,
    echo: bool = True,
) -> MetricReport:
    """
    Evaluate a checkpoint on a dataset split (center crops, basename order).

    With `export_dir` (or `eval.export_dir`) every predicted label map is
    written as <export_dir>/<id>.png. The summary goes to
    <log_dir>/<name>_eval.log.
    """
    model = load_model(cfg, checkpoint)
    spec = DatasetSpec.from_config(cfg.data, split or cfg.data.eval_split)
    dataset = SegmentationDataset(spec)
    ids = dataset.ids()
    export = export_dir or cfg.eval.export_dir
    export = Path(export) if export else None

    h, w = cfg.image_size
    acc = MetricAccumulator(cfg.eval.presence_threshold(cfg.loss.tau, h, w))
    loader = DataLoader(dataset, batch_size=cfg.batch_size, shuffle=False, num_workers=cfg.data.num_workers)

    position = 0
    with torch.no_grad():
        for images, labels in loader:
            composed = model(images.to(cfg.device)).segmentation.composed
            predicted = labels_from_composed(composed, cfg.eval.mask_threshold).cpu()
            for pred, gt in zip(predicted, labels):
                acc.add_labels(pred, gt)
                if export is not None:
                    write_label_image(pred, export / f"{ids[position]}.png")
                position += 1

    report = acc.report(
        name=cfg.name,
        parameter_count=model.parameter_count,
        config=flatten_config(cfg),
    )
    with RunLogger(f"{cfg.name}_eval", Path(log_dir or cfg.log_dir), echo=echo) as logger:
        logger.info(f"Split: {spec.split}  Images: {report.sample_count}  Parameters: {report.parameter_count:,}")
        logger.info(f"Illusions: {report.illusion_count}/{report.sample_count} (tau={report.illusion_tau})")
        logger.metrics(report.summary())
        logger.complete()
    return report


@dataclass(frozen=True)
class Prediction:
    masks: MaskSet
    boundary: BoundaryMap | None

    @property
    def label_map(self) -> torch.Tensor:
        return masks_to_labels(self.masks)


def predict(
    cfg: TrainConfig,
    checkpoint: Path | Checkpoint | HandObjectSegmenter,
    image: Path,
    out_dir: Path | None = None,
) -> Prediction:
    """
    Segment one image (center-cropped / padded to the crop size).

    With `out_dir`, writes <stem>_labels.png (index image) and
    <stem>_boundary.png (boundary probability as 8-bit gray).
    """
    model = checkpoint if isinstance(checkpoint, HandObjectSegmenter) else load_model(cfg, checkpoint)
    model.eval()
    pixels = normalize(read_rgb(image), cfg.data.mean, cfg.data.std)
    dummy = torch.zeros(pixels.shape[1:], dtype=torch.long)
    pixels, _ = center_crop(pixels, dummy, cfg.data.crop_size)

    with torch.no_grad():
        output = model(pixels.unsqueeze(0).to(cfg.device))
    labels = output.segmentation.label_map(0, cfg.eval.mask_threshold).cpu()
    boundary = output.boundary.boundary_map(0) if output.boundary is not None else None
    result = Prediction(masks=labels_to_masks(labels), boundary=boundary)

    if out_dir is not None:
        out_dir = Path(out_dir)
        stem = Path(image).stem
        write_label_image(labels, out_dir / f"{stem}_labels.png")
        if boundary is not None:
            gray = (boundary.map.cpu().numpy() * 255).round().astype(np.uint8)
            Image.fromarray(gray).save(out_dir / f"{stem}_boundary.png")
    return result
