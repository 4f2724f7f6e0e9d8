#!/usr/bin/env python3
"""
Egoseg CLI

Hand / active-object segmentation for egocentric images.
Run settings come from presets in configs/presets/<id>.yaml or a YAML file.

Usage:
    egoseg list                                   List presets
    egoseg --preset desk save mine --description D  Save layered settings as a preset
    egoseg --preset desk synth --count 2000       Generate synthetic scenes
    egoseg --preset desk train                    Train a preset
    egoseg --preset desk eval --checkpoint P      Evaluate a checkpoint
    egoseg predict --checkpoint P image.png       Segment one image
    egoseg report a.json b.json --out reports     Tables and scatter deck
    egoseg --preset desk study --seeds 0 1 2      CoCo on/off comparison
    egoseg convert --lh lh.png --lo lo.png out.png

Settings are layered: defaults < preset or --config < EGOSEG_* env < --set.
"""

import argparse
import sys
from pathlib import Path
from typing import Any

# Force line-buffered output so training progress streams
sys.stdout.reconfigure(line_buffering=True) if hasattr(sys.stdout, 'reconfigure') else None

from .lib import (
    ConfigError,
    EgosegError,
    PresetDefinition,
    PresetRegistry,
    SynthSpec,
    TrainConfig,
    build_config,
    env_overrides,
    evaluate,
    load_checkpoint,
    load_config_file,
    masks_from_files,
    parse_override,
    predict,
    run_coco_study,
    synth_generate,
    train,
    write_label_image,
    write_report,
)
from .lib.checkpoint import latest_checkpoint
from .lib.domain import CLASS_NAMES
from .lib.study import MIOU_FLOOR


def collect_overrides(items: list[str] | None) -> dict[str, Any]:
    return dict(parse_override(item) for item in items or [])


def resolve_config(
    args: argparse.Namespace,
    registry: PresetRegistry,
    base: dict[str, Any] | None = None,
) -> TrainConfig:
    """
    Build the run config from the global options.

    `base` (e.g. a checkpoint's stored config) is used only when neither
    --preset nor --config is given.
    """
    layers: list[dict[str, Any]] = []
    if args.preset:
        layers += [{"name": args.preset}, registry.resolve(args.preset)]
    if args.config:
        layers.append(load_config_file(args.config))
    if not layers and base:
        layers.append(base)
    layers += [env_overrides(), collect_overrides(args.set)]
    return build_config(*layers)


def cmd_list(registry: PresetRegistry) -> None:
    """List all available presets."""
    print("\nAvailable presets:\n")

    for preset_id in registry.list_presets():
        defn = registry.get_definition(preset_id)
        settings = registry.resolve(preset_id)
        parent = f"extends {defn.extends}" if defn.extends else "base"
        iterations = settings.get("max_iterations", TrainConfig.model_fields["max_iterations"].default)

        print(f"  {preset_id}")
        print(f"    {defn.description}")
        print(f"    [{parent}] iterations: {iterations}")
        print()


def cmd_save(args: argparse.Namespace, registry: PresetRegistry) -> Path:
    """Store the --config and --set layers as a new preset that extends --preset."""
    if args.id in registry.list_presets() and not args.force:
        raise ConfigError(f"Preset '{args.id}' already exists (use --force to overwrite)")

    settings: dict[str, Any] = {}
    if args.config:
        settings.update(load_config_file(args.config))
    settings.update(collect_overrides(args.set))

    definition = PresetDefinition(
        name=args.name or args.id,
        description=args.description,
        settings=settings,
        extends=args.preset,
    )
    registry.register(args.id, definition)
    registry.create(args.id)
    path = registry.save_preset(args.id, args.dir)
    print(f"Preset saved to: {path}")
    return path


def cmd_train(cfg: TrainConfig, resume: str | None) -> None:
    resume_from = None
    if resume == "latest":
        resume_from = latest_checkpoint(Path(cfg.checkpoint_dir))
        if resume_from is None:
            print(f"No checkpoint in {cfg.checkpoint_dir}, starting fresh")
    elif resume:
        resume_from = Path(resume)

    ckpt = train(cfg, resume_from=resume_from)
    print(f"Final checkpoint: {ckpt.path}")


def cmd_eval(cfg: TrainConfig, checkpoint: Path, split: str | None, export: Path | None, out: Path | None) -> None:
    report = evaluate(cfg, checkpoint, split=split, export_dir=export)
    path = write_report(report, out or Path(cfg.checkpoint_dir) / "metrics.json")
    print(f"Report saved to: {path}")


def cmd_predict(cfg: TrainConfig, checkpoint: Path, image: Path, out: Path) -> None:
    prediction = predict(cfg, checkpoint, image, out_dir=out)
    counts = dict(zip(CLASS_NAMES, prediction.masks.counts()))
    print(f"Pixels per class: {counts}")
    print(f"Outputs saved to: {out}")


def cmd_synth(args: argparse.Namespace, cfg: TrainConfig | None) -> None:
    size = args.size or (cfg.data.crop_size if cfg else SynthSpec.model_fields["size"].default)
    out_dir = args.out or (cfg.data.root if cfg else SynthSpec.model_fields["out_dir"].default)
    spec = SynthSpec(
        seed=args.seed,
        count=args.count,
        size=size,
        out_dir=str(out_dir),
        split=args.split,
        p_left=args.p_left,
        p_right=args.p_right,
        p_object=args.p_object,
        p_distractor=args.p_distractor,
    )
    split_dir = synth_generate(spec)
    print(f"{spec.count} scenes ({spec.size}x{spec.size}) written to: {split_dir}")


def cmd_report(files: list[Path], out: Path, title: str, pdf: bool) -> None:
    # python-pptx is only needed here
    from .presentation import generate_report

    generate_report(files, out, title=title, pdf=pdf)


def cmd_study(args: argparse.Namespace, registry: PresetRegistry) -> None:
    overrides = {**env_overrides(), **collect_overrides(args.set)}
    run_coco_study(
        preset=args.preset or "desk",
        seeds=args.seeds,
        out_dir=args.out,
        train_count=args.train_count,
        eval_count=args.eval_count,
        overrides=overrides,
        registry=registry,
        miou_floor=args.miou_floor,
    )
    print(f"Study saved to: {Path(args.out) / 'study.json'}")


def cmd_convert(args: argparse.Namespace) -> None:
    paths = {name: getattr(args, name) for name in CLASS_NAMES if getattr(args, name)}
    masks = masks_from_files(paths)
    path = write_label_image(masks, args.output)
    print(f"Label image saved to: {path}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="egoseg",
        description="Egoseg - interaction-aware hand and active-object segmentation",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  egoseg list
  egoseg --preset desk synth --count 2000
  egoseg --preset desk synth --count 500 --seed 10000 --split val
  egoseg --preset desk --set loss.lambda_co=0 train
  egoseg --preset desk eval --checkpoint checkpoints/desk/iter_0003000.pt
  egoseg report runs/*/metrics.json --out reports
        """,
    )
    parser.add_argument("--preset", help="Preset id from configs/presets/")
    parser.add_argument("--config", type=Path, help="YAML config file (flat or nested keys)")
    parser.add_argument(
        "--set", action="append", metavar="KEY=VALUE", help="Override one setting (repeatable)"
    )

    subparsers = parser.add_subparsers(dest="command", required=True)

    # list command
    subparsers.add_parser("list", help="List all available presets")

    # save command
    save_parser = subparsers.add_parser("save", help="Save --preset plus --config/--set as a new preset")
    save_parser.add_argument("id", help="New preset id")
    save_parser.add_argument("--description", required=True)
    save_parser.add_argument("--name", help="Display name (default: the id)")
    save_parser.add_argument("--dir", type=Path, help="Preset directory (default: configs/presets)")
    save_parser.add_argument("--force", action="store_true", help="Overwrite an existing preset")

    # train command
    train_parser = subparsers.add_parser("train", help="Train the segmenter")
    train_parser.add_argument("--resume", metavar="PATH|latest", help="Continue from a checkpoint")

    # eval command
    eval_parser = subparsers.add_parser("eval", help="Evaluate a checkpoint on a split")
    eval_parser.add_argument("--checkpoint", type=Path, required=True)
    eval_parser.add_argument("--split", help="Dataset split (default: data.eval_split)")
    eval_parser.add_argument("--export", type=Path, help="Write predicted label maps here")
    eval_parser.add_argument("--out", type=Path, help="Report path (default: <checkpoint_dir>/metrics.json)")

    # predict command
    predict_parser = subparsers.add_parser("predict", help="Segment one image")
    predict_parser.add_argument("image", type=Path)
    predict_parser.add_argument("--checkpoint", type=Path, required=True)
    predict_parser.add_argument("--out", type=Path, default=Path("predictions"))

    # synth command
    synth_parser = subparsers.add_parser("synth", help="Generate synthetic scenes")
    synth_parser.add_argument("--seed", type=int, default=0)
    synth_parser.add_argument("--count", type=int, default=2000)
    synth_parser.add_argument("--size", type=int, help="Image side (default: data.crop_size)")
    synth_parser.add_argument("--out", type=Path, help="Dataset root (default: data.root)")
    synth_parser.add_argument("--split", default="train")
    synth_parser.add_argument("--p-left", type=float, default=0.8)
    synth_parser.add_argument("--p-right", type=float, default=0.8)
    synth_parser.add_argument("--p-object", type=float, default=0.8)
    synth_parser.add_argument("--p-distractor", type=float, default=0.3)

    # report command
    report_parser = subparsers.add_parser("report", help="Render metric files as a deck and table")
    report_parser.add_argument("files", type=Path, nargs="+", help="metrics.json files")
    report_parser.add_argument("--out", type=Path, default=Path("reports"))
    report_parser.add_argument("--title", default="Hand / active-object segmentation")
    report_parser.add_argument("--pdf", action="store_true", help="Also convert to PDF")

    # study command
    study_parser = subparsers.add_parser("study", help="Train with and without CoCo over seeds")
    study_parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    study_parser.add_argument("--out", type=Path, default=Path("runs/coco_study"))
    study_parser.add_argument("--train-count", type=int, default=2000)
    study_parser.add_argument("--eval-count", type=int, default=500)
    study_parser.add_argument(
        "--miou-floor", type=float, default=MIOU_FLOOR, help="Mean mIoU both variants must reach"
    )

    # convert command
    convert_parser = subparsers.add_parser("convert", help="Per-class mask PNGs -> index label PNG")
    for name in CLASS_NAMES:
        convert_parser.add_argument(f"--{name}", type=Path, help=f"Binary mask for {name}")
    convert_parser.add_argument("output", type=Path)

    return parser


def run(args: argparse.Namespace) -> None:
    registry = PresetRegistry.from_filesystem()

    # Dispatch
    if args.command == "list":
        cmd_list(registry)
    elif args.command == "save":
        cmd_save(args, registry)
    elif args.command == "train":
        cmd_train(resolve_config(args, registry), args.resume)
    elif args.command == "eval":
        base = load_checkpoint(args.checkpoint).config
        cmd_eval(resolve_config(args, registry, base), args.checkpoint, args.split, args.export, args.out)
    elif args.command == "predict":
        base = load_checkpoint(args.checkpoint).config
        cmd_predict(resolve_config(args, registry, base), args.checkpoint, args.image, args.out)
    elif args.command == "synth":
        cfg = resolve_config(args, registry) if args.preset or args.config else None
        cmd_synth(args, cfg)
    elif args.command == "report":
        cmd_report(args.files, args.out, args.title, args.pdf)
    elif args.command == "study":
        cmd_study(args, registry)
    elif args.command == "convert":
        cmd_convert(args)


def main(argv: list[str] | None = None):
    args = build_parser().parse_args(argv)
    try:
        run(args)
    except EgosegError as e:
        print(f"Error: {e}", file=sys.stderr)
        sys.exit(1)


if __name__ == "__main__":
    main()
