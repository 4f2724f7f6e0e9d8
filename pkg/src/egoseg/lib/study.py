"""
CoCo study - train a preset with and without the co-occurrence loss over
several seeds on synthetic data and compare held-out mIoU and illusion rates.

    <out_dir>/seed_<s>/data/{train,val}/...
    <out_dir>/seed_<s>/<variant>/{checkpoints,logs,metrics.json}
    <out_dir>/study.json
"""

from pathlib import Path
from typing import Any, Sequence

from pydantic import BaseModel, Field

from .evaluator import evaluate
from .metrics import MetricReport, write_report
from .registry import PresetRegistry
from .run_logger import RunLogger
from .synth import SynthSpec, synth_generate
from .trainer import train

MIOU_FLOOR = 0.50
VARIANTS = {"coco": None, "no_coco": 0.0}


class SeedResult(BaseModel):
    seed: int
    miou: dict[str, float | None]
    illusion_rate: dict[str, float]


class StudyResult(BaseModel):
    preset: str
    seeds: list[int]
    train_count: int
    eval_count: int
    miou_floor: float = MIOU_FLOOR
    results: list[SeedResult] = Field(default_factory=list)
    mean_miou: dict[str, float | None] = Field(default_factory=dict)
    mean_illusion_rate: dict[str, float] = Field(default_factory=dict)
    miou_floor_met: bool = False
    coco_reduces_illusions: bool = False

    def summarize(self) -> "StudyResult":
        for variant in VARIANTS:
            mious = [r.miou[variant] for r in self.results]
            rates = [r.illusion_rate[variant] for r in self.results]
            self.mean_miou[variant] = (
                sum(mious) / len(mious) if mious and None not in mious else None
            )
            self.mean_illusion_rate[variant] = sum(rates) / len(rates) if rates else 0.0
        self.miou_floor_met = all(
            m is not None and m >= self.miou_floor for m in self.mean_miou.values()
        )
        self.coco_reduces_illusions = bool(self.results) and all(
            r.illusion_rate["coco"] <= r.illusion_rate["no_coco"] for r in self.results
        )
        return self


def run_coco_study(
    preset: str = "desk",
    seeds: Sequence[int] = (0, 1, 2),
    out_dir: Path = Path("runs/coco_study"),
    train_count: int = 2000,
    eval_count: int = 500,
    overrides: dict[str, Any] | None = None,
    registry: PresetRegistry | None = None,
    echo: bool = True,
    miou_floor: float = MIOU_FLOOR,
) -> StudyResult:
    """Run both variants for every seed, log the summary and write study.json."""
    out_dir = Path(out_dir)
    registry = registry or PresetRegistry.from_filesystem()
    study = StudyResult(
        preset=preset,
        seeds=list(seeds),
        train_count=train_count,
        eval_count=eval_count,
        miou_floor=miou_floor,
    )

    for seed in seeds:
        seed_dir = out_dir / f"seed_{seed}"
        data_root = seed_dir / "data"
        size = registry.create(preset, overrides).data.crop_size
        synth_generate(SynthSpec(seed=seed, count=train_count, size=size, out_dir=str(data_root), split="train"))
        synth_generate(
            SynthSpec(seed=seed + 10_000, count=eval_count, size=size, out_dir=str(data_root), split="val")
        )

        reports: dict[str, MetricReport] = {}
        for variant, lambda_co in VARIANTS.items():
            run_dir = seed_dir / variant
            settings = {
                **(overrides or {}),
                "name": f"{preset}_{variant}_s{seed}",
                "seed": seed,
                "data.root": str(data_root),
                "data.train_split": "train",
                "data.eval_split": "val",
                "checkpoint_dir": str(run_dir / "checkpoints"),
                "log_dir": str(run_dir / "logs"),
            }
            if lambda_co is not None:
                settings["loss.lambda_co"] = lambda_co
            cfg = registry.create(preset, settings)
            ckpt = train(cfg, echo=echo)
            reports[variant] = evaluate(cfg, ckpt, echo=echo)
            write_report(reports[variant], run_dir / "metrics.json")

        study.results.append(
            SeedResult(
                seed=seed,
                miou={v: r.miou for v, r in reports.items()},
                illusion_rate={v: r.illusion_rate for v, r in reports.items()},
            )
        )

    study.summarize()
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "study.json").write_text(study.model_dump_json(indent=2) + "\n")
    log_study(study, out_dir, echo)
    return study


def log_study(study: StudyResult, log_dir: Path, echo: bool = True) -> Path:
    """Write the per-seed table and the verdicts to <log_dir>/<preset>_study.log."""
    with RunLogger(f"{study.preset}_study", log_dir, echo=echo) as logger:
        logger.info(f"Seeds: {study.seeds}  train {study.train_count}  eval {study.eval_count}")
        for r in study.results:
            logger.metrics(
                {
                    **{f"seed {r.seed} miou/{v}": m for v, m in r.miou.items()},
                    **{f"seed {r.seed} illusion/{v}": x for v, x in r.illusion_rate.items()},
                }
            )
        logger.metrics(
            {
                **{f"mean miou/{v}": m for v, m in study.mean_miou.items()},
                **{f"mean illusion/{v}": x for v, x in study.mean_illusion_rate.items()},
            }
        )
        logger.info(f"\n  mIoU floor {study.miou_floor:.2f} met: {study.miou_floor_met}")
        logger.info(f"  CoCo reduces illusions: {study.coco_reduces_illusions}")
        logger.complete()
        return logger.log_file
