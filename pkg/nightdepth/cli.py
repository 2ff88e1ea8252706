"""
Command-line entry point.

    nightdepth synth-gen --root data/night
    nightdepth train --data data/night --run-dir runs/full --config full.cfg --set xi=0.02
    nightdepth train-day --data data/night --output runs/day.pt
    nightdepth eval --checkpoint runs/full/checkpoint_last.pt --gt-mode sparse
    nightdepth enhance --checkpoint runs/full/checkpoint_last.pt frame.png --output out/
    nightdepth ablate --data data/night --output runs/ablation --seeds 0 1 2
    nightdepth serve
"""

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional

from dotenv import load_dotenv

from .utils.validation import ValidationError

logger = logging.getLogger("nightdepth")

DATA_ROOT_ENV = "NIGHTDEPTH_DATA_ROOT"
OUTPUT_DIR_ENV = "NIGHTDEPTH_OUTPUT_DIR"
DEVICE_ENV = "NIGHTDEPTH_DEVICE"


def _data_root(value: Optional[str], flag: str = "--data") -> str:
    root = value or os.getenv(DATA_ROOT_ENV)
    if not root:
        raise ValidationError(
            "no dataset root given",
            field=flag,
            suggestions=[f"Pass {flag} or set {DATA_ROOT_ENV} in .env"]
        )
    return root


def _env_defaults() -> Dict[str, str]:
    defaults = {}
    if os.getenv(DEVICE_ENV):
        defaults["device"] = os.getenv(DEVICE_ENV)
    if os.getenv(OUTPUT_DIR_ENV):
        defaults["output_dir"] = os.getenv(OUTPUT_DIR_ENV)
    return defaults


def _train_config(args: argparse.Namespace):
    from .training.config import load_config, parse_overrides

    overrides = parse_overrides(args.set)
    for key in ("epochs", "batch_size", "lr", "seed", "device"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "progress", False):
        overrides["progress"] = True
    return load_config(args.config, overrides, defaults=_env_defaults())


def cmd_synth_gen(args: argparse.Namespace) -> int:
    from .data.synthdata import SyntheticSetConfig, generate_synthetic_set

    root = _data_root(args.root, "--root")
    config = SyntheticSetConfig(num_sequences=args.sequences, frames_per_sequence=args.frames,
                                width=args.width, height=args.height, seed=args.seed)
    generate_synthetic_set(config, root, progress=args.progress)
    print(f"Wrote {config.total_frames} frames in {config.num_sequences} sequences to {root}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    from .data.dataset_io import NightSequenceDataset
    from .evaluation.report import format_metrics_table
    from .training.trainer import train_loop

    config = _train_config(args)
    dataset = NightSequenceDataset(_data_root(args.data))
    eval_dataset = NightSequenceDataset(args.eval_data) if args.eval_data else None
    state = train_loop(config, dataset, args.run_dir, eval_dataset=eval_dataset, resume=args.resume,
                       allow_config_override=args.allow_config_override)
    if state.history:
        print(format_metrics_table({f"epoch {row['epoch']}": row for row in state.history}))
    return 0


def cmd_train_day(args: argparse.Namespace) -> int:
    from .data.dataset_io import read_dataset
    from .models.daytime_prior import DaytimeTrainConfig, train_daytime_model

    config = DaytimeTrainConfig(steps=args.steps, batch_size=args.batch_size, lr=args.lr, seed=args.seed)
    device = args.device or os.getenv(DEVICE_ENV) or "cpu"
    train_daytime_model(read_dataset(_data_root(args.data)), args.output, config, device=device,
                        progress=args.progress)
    print(f"Daytime model written to {args.output}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    from .evaluation.metrics import EvalProtocol
    from .evaluation.report import format_metrics_table, write_metrics_csv
    from .training.trainer import evaluate_checkpoint

    protocol = EvalProtocol(max_depth=args.max_depth, min_depth=args.min_depth,
                            median_scaling=not args.no_median_scaling, gt_mode=args.gt_mode)
    row = evaluate_checkpoint(args.checkpoint, _data_root(args.data), protocol,
                              device=args.device or os.getenv(DEVICE_ENV), beam_count=args.beams)
    print(format_metrics_table({Path(args.checkpoint).stem: row}))
    if args.csv:
        write_metrics_csv(args.csv, [{"run": Path(args.checkpoint).stem, **row}])
    return 0


def _input_images(inputs: List[str]) -> List[Path]:
    paths: List[Path] = []
    for item in inputs:
        path = Path(item)
        paths += sorted(path.glob("*.png")) if path.is_dir() else [path]
    missing = [str(p) for p in paths if not p.is_file()]
    if missing or not paths:
        raise ValidationError(
            f"no readable input image ({', '.join(missing) or 'empty input'})",
            field="inputs",
            value=missing,
        )
    return paths


def cmd_enhance(args: argparse.Namespace) -> int:
    from .data.dataset_io import read_png, to_tensor_image, write_png
    from .enhancement.uncertainty_mask import mask_to_image
    from .training.checkpoint import load_checkpoint
    from .training.trainer import enhance_frame

    state = load_checkpoint(args.checkpoint, device=args.device or os.getenv(DEVICE_ENV))
    output = Path(args.output or os.getenv(OUTPUT_DIR_ENV) or "outputs")
    output.mkdir(parents=True, exist_ok=True)
    for path in _input_images(args.inputs):
        night = to_tensor_image(read_png(path)).unsqueeze(0).to(state.device)
        enhanced, illumination, mask = enhance_frame(state, night)
        write_png(output / f"{path.stem}_enhanced.png", enhanced[0].permute(1, 2, 0).cpu().numpy())
        write_png(output / f"{path.stem}_mask.png", mask_to_image(mask) / 255.0)
        if illumination is not None:
            write_png(output / f"{path.stem}_illumination.png", illumination[0, 0].cpu().numpy())
        logger.info(f"Enhanced {path.name}: luminance {float(night.mean()):.3f} -> {float(enhanced.mean()):.3f}")
    print(f"Wrote enhanced images and masks to {output}")
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    from .data.dataset_io import NightSequenceDataset
    from .evaluation.report import format_metrics_table
    from .training.ablation import PRESETS, run_ablation

    base = _train_config(args)
    train_set = NightSequenceDataset(_data_root(args.data))
    eval_set = NightSequenceDataset(args.eval_data) if args.eval_data else train_set
    presets = args.presets or list(PRESETS)
    _, summary = run_ablation(train_set, eval_set, args.output, presets, args.seeds, base)
    print(format_metrics_table(summary))
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    from .server import create_server

    create_server().run(transport='stdio')
    return 0


def _add_train_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--batch-size", dest="batch_size", type=int)
    parser.add_argument("--lr", type=float)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--device")
    parser.add_argument("--progress", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nightdepth", description=__doc__.split("\n\n")[0].strip())
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-gen", help="render the synthetic day/night set")
    p.add_argument("--root")
    p.add_argument("--sequences", type=int, default=10)
    p.add_argument("--frames", type=int, default=32)
    p.add_argument("--width", type=int, default=160)
    p.add_argument("--height", type=int, default=96)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--progress", action="store_true")
    p.set_defaults(func=cmd_synth_gen)

    p = sub.add_parser("train", help="joint enhancement + depth training")
    p.add_argument("--data")
    p.add_argument("--eval-data", dest="eval_data")
    p.add_argument("--run-dir", dest="run_dir", default="runs/latest")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--allow-config-override", dest="allow_config_override", action="store_true")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("train-day", help="train the daytime depth prior on clean frames")
    p.add_argument("--data")
    p.add_argument("--output", required=True)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=4)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--device")
    p.add_argument("--progress", action="store_true")
    p.set_defaults(func=cmd_train_day)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--max-depth", dest="max_depth", type=float, default=60.0)
    p.add_argument("--min-depth", dest="min_depth", type=float, default=0.1)
    p.add_argument("--gt-mode", dest="gt_mode", choices=["dense", "sparse"], default="dense")
    p.add_argument("--no-median-scaling", dest="no_median_scaling", action="store_true")
    p.add_argument("--beams", type=int, default=32)
    p.add_argument("--csv")
    p.add_argument("--device")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("enhance", help="enhance images and dump their masks")
    p.add_argument("inputs", nargs="+", help="PNG files or directories")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--output")
    p.add_argument("--device")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("ablate", help="train and compare the component presets")
    p.add_argument("--data")
    p.add_argument("--eval-data", dest="eval_data")
    p.add_argument("--output", default="runs/ablation")
    p.add_argument("--presets", nargs="+")
    p.add_argument("--seeds", nargs="+", type=int, default=[0, 1, 2])
    _add_train_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("serve", help="run the MCP tool server over stdio")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValidationError as e:
        logger.error(str(e))
        for suggestion in e.suggestions:
            logger.error(f"  suggestion: {suggestion}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
