"""Command-line entry point: ``boxzoom {gen-data,train,eval,demo}``.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, env
from .data import SceneSpec, generate, load_manifest, split, write_dataset
from .evaluation import evaluate, run_episode_eval, write_curves
from .features import PatchGridExtractor, as_image, image_size
from .geometry import BoundingBox, ModelVariant
from .learning import load_checkpoint
from .metrics import cd, gtc, iou
from .pnm import read_pnm, write_pnm
from .trainer import TrainConfig, run_header, train

log = logging.getLogger("boxzoom")

CONFIG_ENV = "BOXZOOM_CONFIG"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _size(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None
    if w <= 0 or h <= 0:
        raise argparse.ArgumentTypeError(f"image size must be positive, got {text!r}")
    return w, h


def _hidden(text: str) -> tuple[int, ...]:
    try:
        sizes = tuple(int(v) for v in text.replace(",", "x").split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected sizes like 64x64, got {text!r}") from None
    if not sizes or min(sizes) < 1:
        raise argparse.ArgumentTypeError(f"hidden sizes must be positive, got {text!r}")
    return sizes


def _box(text: str) -> BoundingBox:
    try:
        return BoundingBox.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    """One flag per TrainConfig field; defaults stay None so the file can fill them."""
    for f in dataclasses.fields(TrainConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.name == "hidden":
            parser.add_argument(flag, type=_hidden, default=None, help="hidden layer sizes, e.g. 64x64")
        elif f.type in ("bool", bool):
            parser.add_argument(flag, action=argparse.BooleanOptionalAction, default=None)
        elif f.name == "variant":
            parser.add_argument(flag, choices=[v.value for v in ModelVariant], default=None)
        elif f.name == "reward":
            parser.add_argument(flag, choices=["iou", "combined", "combined-sigmoid"], default=None)
        else:
            base = str(f.type).removesuffix(" | None")
            kind = {"int": int, "float": float}.get(base, str)
            parser.add_argument(flag, type=kind, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="boxzoom", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"boxzoom {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="render a synthetic single-object dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=253)
    p.add_argument("--size", type=_size, default=(64, 64), help="image size WxH")
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--distractors", type=int, default=2)

    p = sub.add_parser("train", help="train zoom (and refinement) networks")
    p.add_argument("--config", help=f"JSON config file (default: ${CONFIG_ENV} if set)")
    _add_config_flags(p)

    p = sub.add_parser("eval", help="greedy evaluation of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="manifest CSV")
    p.add_argument("--variant", choices=[v.value for v in ModelVariant], help="expected model variant")
    p.add_argument("--out", help="curve CSV to write (epoch,tp,fp,fn)")
    p.add_argument("--log", help="per-image outcome log (JSON lines)")

    p = sub.add_parser("demo", help="trace one greedy episode on an image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True, help="PPM/PGM image")
    p.add_argument("--gt", type=_box, help="ground truth x0,y0,x1,y1")
    p.add_argument("--trajectory", help="trajectory log path (default: stdout only)")
    p.add_argument("--annotated", help="PPM with the box path drawn in")
    return parser


def load_config(args: argparse.Namespace) -> TrainConfig:
    values: dict = {}
    path = args.config or os.environ.get(CONFIG_ENV)
    if path:
        try:
            values = json.loads(Path(path).read_text())
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc.strerror or exc}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(values, dict):
            raise UsageError(f"config {path} must hold a flat JSON object")
    for f in dataclasses.fields(TrainConfig):
        flag_value = getattr(args, f.name, None)
        if flag_value is not None:
            values[f.name] = flag_value
    try:
        return TrainConfig.from_dict(values)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from None


def cmd_gen_data(args) -> int:
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    w, h = args.size
    try:
        spec = SceneSpec(width=w, height=h, noise=args.noise, distractors=args.distractors, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    samples = generate(spec, args.count)
    manifest = write_dataset(samples, args.out)
    record = dataclasses.asdict(spec) | {"count": args.count, "version": __version__}
    (Path(args.out) / "spec.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(samples)} images and {manifest}")
    return 0


def _datasets(config: TrainConfig):
    if config.train_data:
        train_set = load_manifest(config.train_data)
        test_set = load_manifest(config.test_data) if config.test_data else None
        return train_set, test_set
    spec = SceneSpec(width=config.image_size, height=config.image_size, seed=config.data_seed)
    train_set, test_set = split(spec, config.synthetic_train, config.synthetic_test)
    if config.test_data:
        test_set = load_manifest(config.test_data)
    return train_set, test_set


def cmd_train(args) -> int:
    config = load_config(args)
    if config.train_data and not Path(config.train_data).is_file():
        raise UsageError(f"training manifest not found: {config.train_data}")
    train_set, test_set = _datasets(config)
    header = run_header(config.recorded())
    print(f"# boxzoom {header['version']} seed={header['seed']} config={header['config_hash']}")
    report = train(config, train_set, test_set)
    if config.out_dir and report.evaluations:
        write_curves(report.evaluations, Path(config.out_dir) / "curves.csv")
    for r in report.evaluations:
        print(f"epoch {r.epoch}: TP {r.tp} FP {r.fp} FN {r.fn} (tp_rate {r.tp_rate:.3f})")
    if config.out_dir:
        print(f"checkpoints and report in {config.out_dir}")
    print(f"done in {report.wall_clock:.1f}s")
    return 0


def _load_agent(path, expected: str | None = None):
    networks, meta = load_checkpoint(path)
    try:
        variant = ModelVariant.parse(meta["variant"])
    except (KeyError, ValueError):
        raise ValueError(f"{path}: checkpoint metadata names no valid model variant") from None
    zoom_net, _ = networks["zoom"]
    if expected is not None:
        want = ModelVariant.parse(expected)
        if len(want.zoom_actions) != zoom_net.output_dim or want.two_stage != ("refine" in networks):
            raise ValueError(
                f"{path}: checkpoint has {zoom_net.output_dim} zoom actions "
                f"({variant.value}), incompatible with {want.value}"
            )
        variant = want
    if zoom_net.output_dim != len(variant.zoom_actions):
        raise ValueError(f"{path}: zoom network output does not match {variant.value}")
    refine_net = networks["refine"][0] if "refine" in networks else None
    extractor = PatchGridExtractor(int(meta.get("grid", 16)))
    if zoom_net.input_dim != env.state_dim(extractor, zoom_net.output_dim):
        raise ValueError(f"{path}: zoom network input size does not match the feature extractor")
    return variant, (zoom_net, refine_net), extractor


def cmd_eval(args) -> int:
    variant, nets, extractor = _load_agent(args.checkpoint, args.variant)
    dataset = load_manifest(args.data)
    if not dataset:
        raise ValueError(f"{args.data}: manifest lists no images")
    record = evaluate(dataset, nets, variant, extractor, outcome_log=args.log)
    print(f"TP {record.tp} FP {record.fp} FN {record.fn}")
    print(f"tp_rate {record.tp_rate:.4f} over {record.total} images")
    if args.out:
        write_curves([record], args.out)
    return 0


def _draw_outline(canvas: np.ndarray, box: BoundingBox, colour) -> None:
    h, w = canvas.shape[:2]
    x0 = min(max(int(np.floor(box.x0)), 0), w - 1)
    y0 = min(max(int(np.floor(box.y0)), 0), h - 1)
    x1 = min(max(int(np.ceil(box.x1)) - 1, 0), w - 1)
    y1 = min(max(int(np.ceil(box.y1)) - 1, 0), h - 1)
    canvas[y0, x0 : x1 + 1] = colour
    canvas[y1, x0 : x1 + 1] = colour
    canvas[y0 : y1 + 1, x0] = colour
    canvas[y0 : y1 + 1, x1] = colour


def cmd_demo(args) -> int:
    variant, nets, extractor = _load_agent(args.checkpoint)
    image = as_image(read_pnm(args.image))
    size = image_size(image)
    if args.gt is not None and not args.gt.inside(size):
        raise UsageError(f"--gt box {args.gt.serialize()} lies outside the image")

    episode = run_episode_eval(image, nets, variant, extractor)
    lines = ["# kind action box iou gtc cd"]
    for t in episode.transitions:
        if args.gt is not None:
            metrics = f"{iou(t.box, args.gt):.4f} {gtc(t.box, args.gt):.4f} {cd(t.box, args.gt, size):.4f}"
        else:
            metrics = "- - -"
        lines.append(f"{t.kind} {t.action} {t.box.serialize()} {metrics}")
    print("\n".join(lines))
    if args.trajectory:
        env.write_trajectory(episode.transitions, args.trajectory)
    if args.annotated:
        canvas = np.repeat(image[:, :, None], 3, axis=2) if image.ndim == 2 else image.copy()
        zooms = [t for t in episode.transitions if t.kind != "R"]
        for i, t in enumerate(zooms):
            shade = (i + 1) / max(len(zooms), 1)
            _draw_outline(canvas, t.box, (1.0, 1.0 - shade, 0.0))
        if args.gt is not None:
            _draw_outline(canvas, args.gt, (0.0, 1.0, 0.0))
        write_pnm(args.annotated, canvas)
    return 0


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval, "demo": cmd_demo}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"boxzoom {args.command}: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"boxzoom {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
