"""Command line entry point: ``synthfridge generate|encode|evaluate|sweep``.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 validation
failure (unreadable labels, mismatched image ids).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import tempfile
from pathlib import Path

from . import dataset
from .annotate import parse_kitti
from .config import ConfigError, SweepConfig, load_config
from .evalkit import evaluate, parse_detections, report_document

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_VALIDATION = 0, 2, 3, 4

log = logging.getLogger("synthfridge")


class ValidationError(Exception):
    pass


def _writable(path: Path) -> None:
    try:
        path.mkdir(parents=True, exist_ok=True)
        with tempfile.NamedTemporaryFile(dir=path):
            pass
    except OSError as e:
        raise OSError(f"output directory {path} is not writable: {e}") from None


def _config(args, out_is_dataset=True):
    cfg = load_config(args.config)
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.workers is not None:
        over["workers"] = args.workers
    if args.out is not None and out_is_dataset:
        over["output_dir"] = args.out
    try:
        return cfg.replace(**over) if over else cfg
    except ValueError as e:
        raise ConfigError(str(e)) from None


def cmd_generate(args) -> int:
    cfg = _config(args)
    if args.size is not None:
        cfg = cfg.replace(dataset_size=args.size)
    out = Path(cfg.output_dir)
    _writable(out)
    entries = dataset.generate(cfg, out)
    print(f"wrote {len(entries)} images to {out}")
    return EXIT_OK


def cmd_encode(args) -> int:
    cfg = _config(args)
    root = Path(args.dataset or cfg.output_dir)
    stride = args.stride or cfg.stride
    size = cfg.scene.image_size
    if size % stride:
        raise ConfigError(f"stride {stride} must divide image size {size}")
    done, errors = dataset.encode_dataset(root, stride, (size, size))
    print(f"encoded {len(done)} label files into {root / 'coverage'}")
    for name, msg in sorted(errors.items()):
        print(f"error: {name}: {msg}", file=sys.stderr)
    return EXIT_VALIDATION if errors else EXIT_OK


def _read_dir(path: Path, parse) -> dict:
    out = {}
    for p in sorted(path.glob("*.txt")):
        try:
            out[p.stem] = parse(p.read_text())
        except ValueError as e:
            raise ValidationError(f"{p}: {e}") from None
    return out


def cmd_evaluate(args) -> int:
    # --out names the report directory here, not the dataset
    cfg = _config(args, out_is_dataset=False)
    gt_dir = Path(args.gt or cfg.gt_dir or Path(cfg.output_dir) / "labels")
    det_dir = args.det or cfg.det_dir
    if det_dir is None:
        raise ConfigError("no detection directory given (--det or det_dir)")
    det_dir = Path(det_dir)
    for d in (gt_dir, det_dir):
        if not d.is_dir():
            raise OSError(f"{d} is not a directory")
    iou_t = args.iou if args.iou is not None else cfg.iou_thresh
    if not 0 < iou_t < 1:
        raise ConfigError("iou threshold must lie in (0, 1)")
    gts = _read_dir(gt_dir, parse_kitti)
    dets = _read_dir(det_dir, parse_detections)
    if not dets:
        dets = {k: [] for k in gts}
    try:
        report = evaluate(dets, gts, iou_t)
    except KeyError as e:
        raise ValidationError(e.args[0]) from None
    out = Path(args.out) if args.out else Path(cfg.output_dir) / "eval"
    _writable(out)
    doc = report_document(report, {"gt_dir": str(gt_dir), "det_dir": str(det_dir), "iou_thresh": iou_t})
    (out / "report.json").write_text(json.dumps(doc, indent=1) + "\n")
    if args.csv:
        (out / "per_image.csv").write_text(report.per_image_csv())
    print(report.summary())
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    sweep = cfg.sweep
    if args.axis or args.values:
        try:
            sweep = SweepConfig(args.axis or sweep.axis, tuple(args.values or sweep.values))
        except ValueError as e:
            raise ConfigError(str(e)) from None
    if not sweep.values:
        raise ConfigError("sweep needs at least one value")
    root = Path(cfg.output_dir)
    _writable(root)
    if sweep.axis == "dataset_size":
        big = cfg.replace(dataset_size=sweep.values[-1])
        top = root / f"dataset_size_{sweep.values[-1]}"
        entries = dataset.generate(big, top)
        for v in sweep.values[:-1]:
            dataset.copy_prefix(top, root / f"dataset_size_{v}", cfg.replace(dataset_size=v), entries[:v])
    else:
        limit = cfg.repository_size if cfg.repository_dir is None else None
        if limit is not None and sweep.values[-1] > limit:
            raise ConfigError(f"dictionary size {sweep.values[-1]} exceeds repository_size {limit}")
        for v in sweep.values:
            dataset.generate(cfg.replace(dictionary_size=v), root / f"dictionary_size_{v}")
    print(f"sweep over {sweep.axis} {list(sweep.values)} written to {root}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="config file (YAML/JSON); default $SYNTHFRIDGE_CONFIG_DIR/synthfridge.yaml")
    common.add_argument("--seed", type=int, help="override master seed")
    common.add_argument("--workers", type=int, help="override worker process count")
    common.add_argument("--out", help="override output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="synthfridge", description="Synthetic refrigerator detection datasets.")
    sub = p.add_subparsers(dest="command", required=True)
    g = sub.add_parser("generate", parents=[common], help="render and annotate a dataset")
    g.add_argument("--size", type=int, help="override dataset_size")
    g.set_defaults(func=cmd_generate)
    e = sub.add_parser("encode", parents=[common], help="write coverage grids for a dataset's labels")
    e.add_argument("--dataset", help="dataset directory (default: output_dir)")
    e.add_argument("--stride", type=int)
    e.set_defaults(func=cmd_encode)
    v = sub.add_parser("evaluate", parents=[common], help="score detections against KITTI ground truth")
    v.add_argument("--gt", help="ground-truth label directory (default: <output_dir>/labels)")
    v.add_argument("--det", help="detection directory: KITTI lines with a 16th confidence field")
    v.add_argument("--iou", type=float)
    v.add_argument("--csv", action="store_true", help="also write per_image.csv")
    v.set_defaults(func=cmd_evaluate)
    s = sub.add_parser("sweep", parents=[common], help="nested datasets along one experiment axis")
    s.add_argument("--axis", choices=["dataset_size", "dictionary_size"])
    s.add_argument("--values", type=int, nargs="+")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ValidationError as e:
        print(f"validation error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
