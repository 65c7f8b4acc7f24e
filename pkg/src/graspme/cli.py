"""``graspme`` command line: generate, baseline, evaluate, inspect.

Exit codes: 0 success, 1 usage error, 2 validation or schema error, 3 I/O error.
Progress goes to stderr, summaries and tables to stdout.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from .baselines import random_baseline
from .dataset import read_coco, read_predictions, write_predictions
from .errors import GraspMEError
from .metrics import EvalConfig, evaluate
from .overlay import draw_overlay
from .pipeline import default_jobs, generate_dataset
from .scene import GenerationConfig

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_IO = 0, 1, 2, 3


class InputError(Exception):
    """Validation failure detected by the CLI itself (exit 2)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _read_text(path: str) -> str:
    return Path(path).read_text()


def _require_file(path: str) -> None:
    if not Path(path).is_file():
        raise FileNotFoundError(f"no such file: {path}")


def _require_writable_parent(path: str) -> None:
    parent = Path(path).resolve().parent
    if not parent.is_dir():
        raise FileNotFoundError(f"output directory does not exist: {parent}")


def cmd_generate(args) -> int:
    config = GenerationConfig()
    if args.config:
        _require_file(args.config)
        config = GenerationConfig.from_json(_read_text(args.config))
    if args.scenes < 10:
        raise InputError(f"--scenes must be at least 10, got {args.scenes}")
    if args.seed < 0:
        raise InputError(f"--seed must be non-negative, got {args.seed}")
    if args.mesh_dir and not Path(args.mesh_dir).is_dir():
        raise FileNotFoundError(f"no such directory: {args.mesh_dir}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = args.jobs or default_jobs()
    summary = generate_dataset(out, args.scenes, args.seed, args.family, config, jobs, args.mesh_dir)
    print(json.dumps({
        "scenes": summary.scenes,
        "annotations": summary.annotations,
        "splits": dict(zip(("train", "val", "test"), summary.split_sizes)),
        "jobs": jobs,
        "elapsed_s": round(summary.elapsed_s, 3),
        "scenes_per_second": round(summary.scenes_per_second, 3),
    }))
    return EXIT_OK


def cmd_baseline(args) -> int:
    _require_file(args.gt)
    if args.boxes:
        _require_file(args.boxes)
    _require_writable_parent(args.out)
    gt = read_coco(_read_text(args.gt))
    boxes = read_predictions(_read_text(args.boxes), gt) if args.boxes else None
    preds = random_baseline(gt, np.random.default_rng(args.seed), boxes)
    Path(args.out).write_text(write_predictions(preds))
    print(json.dumps({"predictions": len(preds), "out": args.out}))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    _require_file(args.gt)
    _require_file(args.pred)
    _require_writable_parent(args.out)
    try:
        config = EvalConfig(oks_kappa=args.kappa, stroke_px=args.stroke, merge_classes=args.merge_classes)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    gt = read_coco(_read_text(args.gt))
    preds = read_predictions(_read_text(args.pred), gt)
    report = evaluate(gt, preds, config)
    Path(args.out).write_text(report.to_json())
    print(report.format_table(args.label))
    return EXIT_OK


def cmd_inspect(args) -> int:
    root = Path(args.dataset)
    index_path = root / args.split / "annotations.json"
    _require_file(str(index_path))
    if args.pred:
        _require_file(args.pred)
    _require_writable_parent(args.out)
    gt = read_coco(index_path.read_text())
    if not 0 <= args.index < len(gt.images):
        raise InputError(f"--index {args.index} out of range for {len(gt.images)} images in split {args.split!r}")
    image = gt.images[args.index]
    rgb = np.array(Image.open(root / "images" / image["file_name"]).convert("RGB"))
    anns = [a for a in gt.annotations if a["image_id"] == image["id"]]
    preds = None
    if args.pred:
        preds = [p for p in read_predictions(_read_text(args.pred), gt).records if p["image_id"] == image["id"]]
    overlay = draw_overlay(rgb, anns, {c["id"]: c for c in gt.categories}, preds)
    Image.fromarray(overlay, "RGB").save(args.out)
    print(json.dumps({"image_id": image["id"], "objects": len(anns), "out": args.out}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="graspme", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="render a synthetic dataset")
    g.add_argument("--config", help="GenerationConfig JSON file (defaults when omitted)")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--scenes", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--family", choices=("simple", "complex"), default="simple")
    g.add_argument("--jobs", type=int, default=None, help="worker processes (default: $GRASPME_JOBS or all cores)")
    g.add_argument("--mesh-dir", help="extra complex-family meshes: <name>.obj + <name>.manifold.json")
    g.set_defaults(func=cmd_generate)

    b = sub.add_parser("baseline", help="write Random-baseline predictions")
    b.add_argument("--gt", required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--boxes", help="prediction file supplying the boxes instead of the ground truth")
    b.set_defaults(func=cmd_baseline)

    e = sub.add_parser("evaluate", help="score predictions against ground truth")
    e.add_argument("--gt", required=True)
    e.add_argument("--pred", required=True)
    e.add_argument("--out", required=True, help="JSON report path")
    e.add_argument("--merge-classes", action="store_true", help="class-agnostic evaluation")
    e.add_argument("--stroke", type=float, default=3.0, help="manifold stroke width in pixels")
    e.add_argument("--kappa", type=float, default=0.1, help="OKS constant")
    e.add_argument("--label", default="Model", help="row label in the printed table")
    e.set_defaults(func=cmd_evaluate)

    i = sub.add_parser("inspect", help="draw annotations over one dataset image")
    i.add_argument("--dataset", required=True)
    i.add_argument("--split", choices=("train", "val", "test"), default="test")
    i.add_argument("--index", type=int, required=True, help="position of the image within the split")
    i.add_argument("--out", required=True)
    i.add_argument("--pred", help="prediction file to overlay")
    i.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (GraspMEError, InputError, ValueError) as exc:
        print(f"graspme: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"graspme: error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
