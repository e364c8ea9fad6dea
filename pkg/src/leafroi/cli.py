"""Command-line entry point.

Every subcommand reads the dataset from ``--data-dir`` and reads or writes
checkpoints and metrics under ``--out``.  Exit codes: 0 success, 1 usage
error, 2 data or format error, 3 training error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .baselines.runner import METHODS, run_baseline
from .data import gen_dataset
from .errors import FormatError, LeafRoiError, NonFiniteError, TrainingError
from .imaging import colorize_mask, montage
from .networks import build_classifier, build_roi_subnet, fuse
from .training import (
    METHOD_NAMES,
    evaluate,
    predict_masks,
    split_dataset,
    train_cls_stage,
    train_end_to_end,
    train_plain_classifier,
    train_roi_stage,
)

logger = logging.getLogger("leafroi")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_TRAINING = 0, 1, 2, 3
METRICS_FILE = "metrics.csv"
CHECKPOINTS = {"roi": "roi.ckpt", "cls": "cls.ckpt", "fused": "fused.ckpt", "plain": "plain.ckpt"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="leafroi", description="ROI-aware leaf disease classification on synthetic scenes.")
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--seed", type=int, help="training seed (overrides train.seed and baseline.seed)")
    p.add_argument("--data-dir", default="data", help="dataset directory (default: data)")
    p.add_argument("--out", default="runs", help="output directory for checkpoints and metrics")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    sub.add_parser("gen-data", help="generate the synthetic dataset and its manifest")
    sub.add_parser("train-roi", help="Stage A: train the ROI subnet on pixel labels")
    tc = sub.add_parser("train-cls", help="Stage B: train the classifier on image + frozen ROI maps")
    tc.add_argument("--plain", action="store_true", help="train the 3-channel reference classifier instead")
    sub.add_parser("train-e2e", help="Stage C: fine-tune the fused network end to end")
    ev = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--split", choices=("train", "test"), default="test")
    ev.add_argument("--method", help="method name for the metrics row")
    bl = sub.add_parser("baseline", help="run a comparison method")
    bl.add_argument("method", choices=METHODS)
    bl.add_argument("--checkpoint", help="classifier checkpoint for deep-feature baselines")
    rp = sub.add_parser("report", help="aggregate metric CSVs into one table")
    rp.add_argument("inputs", nargs="*", help="CSV files (default: OUT/metrics.csv)")
    rr = sub.add_parser("render-roi", help="write predicted ROI masks and a comparison montage")
    rr.add_argument("--checkpoint", help="ROI subnet or fused checkpoint (default: OUT/roi.ckpt)")
    rr.add_argument("--count", type=int, default=6, help="number of test images to render")
    return p


# ---------------------------------------------------------------------------
# helpers


def _config(args) -> io.RunConfig:
    cfg = io.load_config(args.config) if args.config else io.RunConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _split(args, cfg):
    ds = io.load_dataset(args.data_dir)
    return split_dataset(ds, cfg.train.split_ratio, cfg.train.seed)


def _out(args) -> Path:
    return io.ensure_dir(args.out)


def _ckpt(args, key) -> Path:
    return Path(args.out) / CHECKPOINTS[key]


def _train_cfg(args, cfg):
    return replace(cfg.train, log_path=str(Path(args.out) / "train_log.txt"))


def _emit(args, report) -> None:
    io.write_metrics_csv([report], Path(args.out) / METRICS_FILE)
    row = report.row()
    parts = [f"{k}={row[k]:.4f}" for k in ("accuracy", "mean_pixel_acc", "mean_iou") if row[k] is not None]
    print(f"{report.method} seed={report.seed} n_test={report.n_test} " + " ".join(parts))


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args, cfg):
    ds = gen_dataset(cfg.data)
    path = io.save_dataset(ds, args.data_dir, cfg.data)
    print(f"wrote {len(ds)} samples and {path}")


def cmd_train_roi(args, cfg):
    train, test = _split(args, cfg)
    _out(args)
    tcfg = _train_cfg(args, cfg)
    roi = train_roi_stage(build_roi_subnet(train.images.shape[-1], seed=tcfg.seed), train, tcfg)
    io.save_checkpoint(roi, _ckpt(args, "roi"))
    _emit(args, evaluate(roi, test, "segmentation", METHOD_NAMES["roi"], tcfg.seed))


def cmd_train_cls(args, cfg):
    train, test = _split(args, cfg)
    _out(args)
    tcfg = _train_cfg(args, cfg)
    size = train.images.shape[-1]
    if args.plain:
        plain = train_plain_classifier(build_classifier(3, 3, size, seed=tcfg.seed + 1), train, tcfg)
        io.save_checkpoint(plain, _ckpt(args, "plain"))
        _emit(args, evaluate(plain, test, "classification", METHOD_NAMES["plain"], tcfg.seed))
        return
    roi = io.load_checkpoint(_ckpt(args, "roi"))
    cls = train_cls_stage(build_classifier(6, 3, size, seed=tcfg.seed + 1), roi, train, tcfg)
    io.save_checkpoint(cls, _ckpt(args, "cls"))
    _emit(args, evaluate(fuse(roi, cls), test, "classification", METHOD_NAMES["cls"], tcfg.seed))


def cmd_train_e2e(args, cfg):
    train, test = _split(args, cfg)
    _out(args)
    tcfg = _train_cfg(args, cfg)
    fused = fuse(io.load_checkpoint(_ckpt(args, "roi")), io.load_checkpoint(_ckpt(args, "cls")))
    train_end_to_end(fused, train, tcfg)
    io.save_checkpoint(fused, _ckpt(args, "fused"))
    _emit(args, evaluate(fused, test, "classification", METHOD_NAMES["e2e"], tcfg.seed))


def cmd_eval(args, cfg):
    net = io.load_checkpoint(args.checkpoint)
    if net.spec.kind == "classifier" and net.spec.in_channels == 6:
        net = fuse(io.load_checkpoint(_ckpt(args, "roi")), net)
    train, test = _split(args, cfg)
    data = test if args.split == "test" else train
    mode = "segmentation" if net.spec.kind == "roi" else "classification"
    method = args.method or Path(args.checkpoint).stem
    _out(args)
    _emit(args, evaluate(net, data, mode, method, cfg.train.seed))


def cmd_baseline(args, cfg):
    train, test = _split(args, cfg)
    _out(args)
    net = roi = None
    if args.method == "mdfep":
        net = io.load_checkpoint(args.checkpoint or _ckpt(args, "plain"))
    elif args.method == "bilinear":
        net = io.load_checkpoint(args.checkpoint or _ckpt(args, "cls"))
    if net is not None and net.spec.in_channels == 6:
        roi = io.load_checkpoint(_ckpt(args, "roi"))
    _emit(args, run_baseline(args.method, train, test, cfg.baseline, net, roi))


def cmd_report(args, cfg):
    paths = args.inputs or [str(Path(args.out) / METRICS_FILE)]
    rows = []
    for p in paths:
        try:
            rows += io.read_metrics_csv(p)
        except OSError as exc:
            raise FormatError(f"cannot read metrics file {p}: {exc}") from exc
    table = io.format_table(rows)
    print(table)
    (_out(args) / "report.txt").write_text(table + "\n", encoding="ascii")


def cmd_render_roi(args, cfg):
    if args.count < 1:
        raise UsageError("--count must be positive")
    net = io.load_checkpoint(args.checkpoint or _ckpt(args, "roi"))
    if net.spec.kind == "fused":
        net = net.subnetwork("roi/")
    _, test = _split(args, cfg)
    test = test.subset(np.arange(min(args.count, len(test))))
    pred = predict_masks(net, test.images)
    target = io.ensure_dir(Path(args.out) / "render")
    rows = []
    for i, name in enumerate(test.names):
        io.write_mask(target / f"{name}_pred.pgm", pred[i])
        rows.append(montage([test.images[i], colorize_mask(test.masks[i]), colorize_mask(pred[i])]))
    io.write_image(target / "montage.ppm", np.concatenate(rows, axis=1))
    print(f"wrote {len(test)} predicted masks and {target / 'montage.ppm'}")


COMMANDS = {
    "gen-data": cmd_gen_data, "train-roi": cmd_train_roi, "train-cls": cmd_train_cls,
    "train-e2e": cmd_train_e2e, "eval": cmd_eval, "baseline": cmd_baseline,
    "report": cmd_report, "render-roi": cmd_render_roi,
}


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = _config(args)
        COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except (TrainingError, NonFiniteError) as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except (LeafRoiError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
