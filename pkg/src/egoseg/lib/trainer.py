"""
Trainer - end-to-end optimization of the segmenter.

One iteration: batch -> model -> loss components -> weighted total ->
AdamW step. The learning rate is set by hand every iteration (linear
warmup, then polynomial decay to 0 at max_iterations). Batches depend only
on (seed, iteration), so a run resumed from a checkpoint continues exactly
where an uninterrupted run would be.
"""

import json
from pathlib import Path
from typing import Any

import torch
from torch import Tensor
from torch.utils.data import DataLoader

from .checkpoint import Checkpoint, checkpoint_name, load_checkpoint
from .config import TrainConfig, flatten_config, write_config_file
from .data import DatasetSpec, IterationBatchSampler, SegmentationDataset
from .domain import batch_labels_to_masks
from .errors import NonFiniteLossError
from .ipp import boundary_loss, boundary_targets
from .losses import (
    LossComponents,
    class_targets,
    cls_loss,
    coco_loss,
    mask_losses,
    pixel_counts,
    total_loss,
)
from .model import HandObjectSegmenter, ModelOutput
from .run_logger import RunLogger

HISTORY_FILE = "history.jsonl"


def learning_rate(iteration: int, cfg: TrainConfig) -> float:
    """peak * t / warmup during warmup, then peak * (1 - progress) ** power."""
    warmup, total = cfg.warmup_iterations, cfg.max_iterations
    if iteration < warmup:
        return cfg.peak_lr * iteration / warmup
    progress = min(1.0, (iteration - warmup) / (total - warmup))
    return cfg.peak_lr * (1.0 - progress) ** cfg.poly_power


def compute_losses(output: ModelOutput, labels: Tensor, cfg: TrainConfig) -> LossComponents:
    """Unweighted loss terms for a batch of (B, H, W) label maps."""
    seg = output.segmentation
    gt_masks = batch_labels_to_masks(labels).to(seg.composed.dtype)

    if output.boundary is not None:
        radius = cfg.ipp.radius_for(labels.shape[-1])
        boundary = boundary_loss(output.boundary.boundary, boundary_targets(gt_masks, radius))
    else:
        boundary = seg.composed.new_zeros(())

    counts = pixel_counts(seg.composed, cfg.loss.presence_threshold, cfg.loss.normalize_counts)
    coco = coco_loss(counts, cfg.loss.tau)

    targets = class_targets(gt_masks, seg.class_scores.shape[1])
    dice, ce = mask_losses(seg.mask_logits.sigmoid(), gt_masks)
    return LossComponents(
        boundary=boundary,
        coco=coco,
        cls=cls_loss(seg.class_scores, targets),
        dice=dice,
        ce=ce,
    )


def truncate_history(path: Path, iteration: int) -> None:
    """Keep only history records before `iteration` (all of them are dropped at 0)."""
    if iteration == 0 or not path.exists():
        path.write_text("")
        return
    kept = [
        line
        for line in path.read_text().splitlines()
        if line.strip() and json.loads(line)["iteration"] < iteration
    ]
    path.write_text("".join(line + "\n" for line in kept))


def seed_everything(cfg: TrainConfig):
    torch.manual_seed(cfg.seed)
    torch.use_deterministic_algorithms(cfg.deterministic, warn_only=True)


class Trainer:
    """
    Owns the model, optimizer and data for one run.

    Usage:
        trainer = Trainer(cfg)
        ckpt = trainer.fit()                      # fresh run
        ckpt = Trainer(cfg).fit(resume_from=p)    # continue from a checkpoint
    """

    def __init__(self, cfg: TrainConfig, log_dir: Path | None = None, echo: bool = True):
        self.cfg = cfg
        self.echo = echo
        self.log_dir = Path(log_dir or cfg.log_dir)
        self.checkpoint_dir = Path(cfg.checkpoint_dir)
        self.history: list[dict[str, Any]] = []

        seed_everything(cfg)
        self.device = torch.device(cfg.device)
        self.model = HandObjectSegmenter(cfg).to(self.device)
        self.optimizer = torch.optim.AdamW(
            self.model.parameters(), lr=cfg.peak_lr, weight_decay=cfg.weight_decay
        )
        self.dataset = SegmentationDataset(
            DatasetSpec.from_config(cfg.data, cfg.data.train_split),
            random_crop=cfg.data.random_crop,
            flip=cfg.data.flip,
        )

    def _restore(self, path: Path) -> int:
        ckpt = load_checkpoint(path, self.cfg)
        self.model.load_state_dict(ckpt.model_state)
        if ckpt.optimizer_state is not None:
            self.optimizer.load_state_dict(ckpt.optimizer_state)
        if ckpt.rng_state is not None:
            torch.set_rng_state(ckpt.rng_state)
        return ckpt.iteration

    def snapshot(self, iteration: int) -> Checkpoint:
        return Checkpoint(
            iteration=iteration,
            config=flatten_config(self.cfg),
            model_state={k: v.detach().cpu().clone() for k, v in self.model.state_dict().items()},
            optimizer_state=self.optimizer.state_dict(),
            rng_state=torch.get_rng_state(),
        )

    def _save(self, iteration: int, logger: RunLogger) -> Checkpoint:
        ckpt = self.snapshot(iteration)
        path = ckpt.save(self.checkpoint_dir / checkpoint_name(iteration))
        logger.checkpoint(path, iteration)
        return ckpt

    def train_step(self, iteration: int, images: Tensor, labels: Tensor) -> dict[str, Any]:
        lr = learning_rate(iteration, self.cfg)
        for group in self.optimizer.param_groups:
            group["lr"] = lr

        output = self.model(images.to(self.device))
        components = compute_losses(output, labels.to(self.device), self.cfg)
        total = total_loss(components, self.cfg.loss, iteration, lr)

        self.optimizer.zero_grad(set_to_none=True)
        total.backward()
        self.optimizer.step()

        return {
            "iteration": iteration,
            "lr": lr,
            "components": components.as_dict(),
            "weighted": components.weighted(self.cfg.loss),
            "total": float(total.detach()),
        }

    def fit(self, resume_from: Path | None = None) -> Checkpoint:
        """Train to max_iterations; returns the final checkpoint."""
        cfg = self.cfg
        start = self._restore(resume_from) if resume_from is not None else 0

        self.checkpoint_dir.mkdir(parents=True, exist_ok=True)
        write_config_file(cfg, self.checkpoint_dir / "config.yaml")
        history_path = self.checkpoint_dir / HISTORY_FILE
        truncate_history(history_path, start)

        sampler = IterationBatchSampler(len(self.dataset), cfg.batch_size, cfg.seed, start, cfg.max_iterations)
        loader = DataLoader(self.dataset, batch_sampler=sampler, num_workers=cfg.data.num_workers)

        self.model.train()
        final: Checkpoint | None = None
        with RunLogger(cfg.name, self.log_dir, echo=self.echo) as logger, open(history_path, "a") as history:
            logger.info(f"Samples: {len(self.dataset)}  Parameters: {self.model.parameter_count}")
            logger.info(f"Iterations {start} -> {cfg.max_iterations}, batch {cfg.batch_size}\n")

            try:
                for iteration, (images, labels) in enumerate(loader, start=start):
                    record = self.train_step(iteration, images, labels)
                    self.history.append(record)
                    history.write(json.dumps(record) + "\n")

                    if iteration % cfg.log_every == 0 or iteration + 1 == cfg.max_iterations:
                        logger.step(iteration, record["lr"], record["weighted"], record["total"])
                    done = iteration + 1
                    if done % cfg.checkpoint_every == 0 or done == cfg.max_iterations:
                        final = self._save(done, logger)
            except NonFiniteLossError as e:
                logger.error(str(e))
                raise

            if final is None or final.iteration != cfg.max_iterations:
                final = self._save(cfg.max_iterations, logger)
            logger.complete(cfg.max_iterations - start)

        return final


def train(
    cfg: TrainConfig,
    resume_from: Path | None = None,
    log_dir: Path | None = None,
    echo: bool = True,
) -> Checkpoint:
    """Train a config end to end and return the final checkpoint."""
    return Trainer(cfg, log_dir=log_dir, echo=echo).fit(resume_from)
