"""Command-line entry point: ``honeyscan <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from honeyscan import __version__, prng
from honeyscan.augment import FluctuationSpec, augment_dataset
from honeyscan.dataset import Manifest, ManifestError, generate_synthetic, load_manifest, save_manifest, split_manifest
from honeyscan.imaging import EmptyMaskError, ImageFormatError, preprocess, read_image, write_image
from honeyscan.optim import NonFiniteGradientError
from honeyscan.trainkit.checkpoint import FORMAT_NAME, CheckpointError, load_checkpoint, save_checkpoint
from honeyscan.trainkit.history import export_history, read_history_csv
from honeyscan.trainkit.model import DEFAULT_MODEL
from honeyscan.trainkit.train import TrainConfig, TrainingDiverged, evaluate, load_images, predict, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3
METRIC_KEYS = ("accuracy", "precision", "recall", "loss", "tp", "tn", "fp", "fn")

log = logging.getLogger("honeyscan")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit with 2
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def version_text() -> str:
    """Everything needed to reproduce a run, one key=value per line."""
    lines = [
        f"honeyscan={__version__}",
        f"prng={prng.NAME}",
        f"checkpoint={FORMAT_NAME}",
        f"model={DEFAULT_MODEL.describe()}",
        f"python={platform.python_version()}",
        f"numpy={np.__version__}",
    ]
    return "\n".join(lines) + "\n"


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _fmt(value) -> str:
    return str(value) if isinstance(value, (int, np.integer)) else f"{value:.6f}"


# --------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    manifest = generate_synthetic(args.per_class, args.seed, args.out, workers=args.workers)
    neg, pos = manifest.class_counts()
    print(f"wrote {len(manifest)} images ({neg} unadulterated, {pos} adulterated) to {args.out}")
    return EXIT_OK


def cmd_preprocess(args) -> int:
    manifest = load_manifest(args.manifest)
    out = _out_dir(args.out)

    def run(rec):
        img = read_image(manifest.resolve(rec))
        name = Path(rec.path).with_suffix(".ppm").name
        write_image(out / name, preprocess(img))
        return replace(rec, path=name)

    try:
        with ThreadPoolExecutor(max_workers=max(1, args.workers)) as pool:
            records = list(pool.map(run, manifest.records))
    except EmptyMaskError as exc:
        raise DataError(str(exc)) from exc
    result = Manifest(records, manifest.provenance, out)
    save_manifest(result, out / "manifest.csv")
    print(f"preprocessed {len(records)} images into {out}")
    return EXIT_OK


def cmd_augment(args) -> int:
    manifest = load_manifest(args.manifest)
    out = _out_dir(args.out)
    folds = ("train", "unassigned", "val") if args.include_val else ("train", "unassigned")
    spec = FluctuationSpec(amplitude=args.amplitude, mode=args.mode, seed=args.seed)
    result, report = augment_dataset(manifest, spec, out, folds)
    save_manifest(result, out / "manifest.csv")
    for err in report.errors:
        print(f"error: {err}", file=sys.stderr)
    neg, pos = result.class_counts()
    print(f"augmented {report.written} images; manifest now {len(result)} ({neg} unadulterated, {pos} adulterated)")
    return EXIT_DATA if report.errors else EXIT_OK


def cmd_split(args) -> int:
    manifest = load_manifest(args.manifest)
    result = split_manifest(manifest, args.val_fraction, args.seed)
    target = Path(args.out) if args.out else Path(args.manifest)
    save_manifest(result.rebased(target.parent), target)
    train_n, val_n = len(result.fold("train")), len(result.fold("val"))
    print(f"split {len(result)} records: {train_n} train, {val_n} val")
    return EXIT_OK


def _history_paths(model_path: Path) -> tuple[Path, Path]:
    stem = model_path.with_suffix("")
    return Path(f"{stem}.history.csv"), Path(f"{stem}.history.svg")


def cmd_train(args) -> int:
    config = TrainConfig(
        learning_rate=args.lr, batch_size=args.batch_size, epochs=args.epochs,
        steps_per_epoch=args.steps, seed=args.seed, threshold=args.threshold,
        record_time=not args.no_timing,
    )
    print(config.header(), flush=True)
    manifest = load_manifest(args.manifest)
    train_fold, val_fold = manifest.fold("train"), manifest.fold("val")
    if len(train_fold) == 0 or len(val_fold) == 0:
        raise DataError("manifest needs records in both the train and val folds (run `split` first)")

    def report(row):
        print(
            f"epoch {row.epoch}/{config.epochs} train_loss={row.train_loss:.4f} train_acc={row.train_acc:.4f} "
            f"val_loss={row.val_loss:.4f} val_acc={row.val_acc:.4f}",
            flush=True,
        )

    try:
        net, history = train(config, train_fold, val_fold, on_epoch=report)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out, net, config.as_dict())
    if history.rows:
        csv_path, svg_path = _history_paths(out)
        export_history(history, csv_path, svg_path)
        print(f"history written to {csv_path} and {svg_path}")
    print(f"model written to {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    net, _ = load_checkpoint(args.model)
    manifest = load_manifest(args.manifest)
    if args.fold != "all":
        manifest = manifest.fold(args.fold)
    try:
        report = evaluate(net, manifest, args.threshold)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    values = report.as_dict()
    if args.json:
        print(json.dumps({k: values[k] for k in METRIC_KEYS}))
    else:
        for key in METRIC_KEYS:
            print(f"{key}={_fmt(values[key])}")
    if args.out:
        Path(args.out).write_text(
            ",".join(METRIC_KEYS) + "\n" + ",".join(_fmt(values[k]) for k in METRIC_KEYS) + "\n",
            encoding="utf-8",
        )
    return EXIT_OK


def cmd_predict(args) -> int:
    net, config = load_checkpoint(args.model)
    img = read_image(args.image)
    if args.raw:
        try:
            img = preprocess(img)
        except EmptyMaskError as exc:
            raise DataError(str(exc)) from exc
    shape = net.model_def.input_shape
    if (img.channels, img.height, img.width) != shape:
        raise DataError(f"image is {img.width}x{img.height}x{img.channels}; the model expects "
                        f"{shape[2]}x{shape[1]}x{shape[0]} (use --raw to preprocess)")
    threshold = args.threshold if args.threshold is not None else config.get("threshold", 0.5)
    prob = float(predict(net, img.pixels[None])[0])
    verdict = "adulterated" if prob >= threshold else "unadulterated"
    if args.json:
        print(json.dumps({"probability": prob, "verdict": verdict}))
    else:
        print(f"probability={prob:.6f}\nverdict={verdict}")
    return EXIT_OK


def cmd_plot(args) -> int:
    try:
        history = read_history_csv(args.history)
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"cannot read history {args.history}: {exc}") from exc
    if not history.rows:
        raise DataError(f"history {args.history} has no rows")
    export_history(history, None, args.out)
    print(f"chart written to {args.out}")
    return EXIT_OK


def cmd_version(args) -> int:
    sys.stdout.write(version_text())
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="honeyscan", description="Thermal-image honey adulteration screening.")
    parser.add_argument("--version", action="store_true", help="print version and reproducibility info")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic thermal dataset")
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="ROI-mask and resize every image of a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("augment", help="append temperature-fluctuation copies")
    p.add_argument("--manifest", required=True)
    p.add_argument("--amplitude", type=int, default=5)
    p.add_argument("--mode", choices=("per-pixel", "per-image"), default="per-pixel")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--include-val", action="store_true", help="also augment the validation fold")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("split", help="grouped train/val split by sample id")
    p.add_argument("--manifest", required=True)
    p.add_argument("--val-fraction", type=float, default=0.25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="write here instead of updating --manifest")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train the CNN (Adam, lr 0.001, batch 32, 50 epochs of 15 steps by default)")
    p.add_argument("--manifest", required=True)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--steps", type=int, default=15)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--no-timing", action="store_true", help="write 0 in the seconds column for byte-stable histories")
    p.add_argument("--out", default="model.thml")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metrics of a checkpoint on a manifest")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--fold", choices=("all", "train", "val", "unassigned"), default="all")
    p.add_argument("--out", default=None, help="metrics CSV path")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="classify one image")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--threshold", type=float, default=None, help="default: the threshold stored in the checkpoint")
    p.add_argument("--raw", action="store_true", help="run ROI preprocessing first")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("plot", help="render a history CSV as an SVG chart")
    p.add_argument("--history", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("version", help="print version and reproducibility info")
    p.set_defaults(func=cmd_version)
    return parser


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.version:
            return cmd_version(args)
        if args.command is None:
            raise UsageError(parser.format_usage())
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DataError, ManifestError, ImageFormatError, CheckpointError, EmptyMaskError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDiverged, NonFiniteGradientError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run())
