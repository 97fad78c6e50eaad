"""Command-line interface: count, eval, sweep, render-debug.

Every config key is also a flag (``--matching.theta 0.3``); precedence is
flags > ``--config`` file > defaults. Errors exit with the code of their class.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from PIL import Image

from .config import RunConfig, apply_overrides, flat_keys, load_config
from .datasets import load_carpk, load_fsc147, scenes_to_samples
from .errors import CountingError, IngestionError, InvalidInputError
from .eval import Evaluator, run_sweep, summary_table
from .pipeline import Counter
from .proposals import ReferenceSpec
from .render import render_overlay, save_png, write_debug
from .structures import as_image
from .synthetic import generate_corpus

logger = logging.getLogger("tfcount")


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="YAML or JSON config file")
    p.add_argument("--mock", action="store_true", help="use the deterministic mock backends")
    g = p.add_argument_group("config keys")
    for key, default in flat_keys().items():
        kind = type(default).__name__ if default is not None else "str"
        g.add_argument(f"--{key}", dest=f"cfg:{key}", default=None, metavar=kind.upper(),
                       help=f"(default: {default})")
    p.add_argument("-v", "--verbose", action="store_true")


def build_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides: Dict[str, object] = {}
    if args.mock:
        overrides.update({"segmenter.backend": "mock", "semantic.backend": "mock"})
    for name, value in vars(args).items():
        if name.startswith("cfg:") and value is not None:
            value = None if value.lower() in ("none", "null") and name.endswith("weights_path") else value
            overrides[name[4:]] = value
    return apply_overrides(cfg, overrides) if overrides else cfg.validate()


def _parse_numbers(text: str, n: int, what: str) -> List[float]:
    try:
        vals = [float(v) for v in text.replace(" ", "").split(",")]
    except ValueError:
        raise InvalidInputError(f"cannot parse {what} {text!r}") from None
    if len(vals) != n:
        raise InvalidInputError(f"{what} needs {n} comma-separated numbers, got {text!r}")
    return vals


def parse_refs(boxes: Sequence[str], points: Sequence[str], refs_file: Optional[str]) -> ReferenceSpec:
    if refs_file:
        try:
            data = json.loads(Path(refs_file).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidInputError(f"cannot read references from {refs_file}: {exc}") from exc
        boxes = [",".join(map(str, b)) for b in data.get("boxes", [])]
        points = [",".join(map(str, p)) for p in data.get("points", [])]
    if boxes and points:
        raise InvalidInputError("give either boxes or points, not both")
    if not boxes and not points:
        raise InvalidInputError("at least one reference (--box or --point) is required")
    if boxes:
        return ReferenceSpec("box", [_parse_numbers(b, 4, "box") for b in boxes])
    return ReferenceSpec("point", [_parse_numbers(p, 2, "point") for p in points])


def read_image(path: str) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return as_image(np.asarray(im.convert("RGB")))
    except (OSError, ValueError) as exc:
        raise InvalidInputError(f"cannot read image {path}: {exc}") from exc


def cmd_count(args) -> int:
    cfg = build_config(args)
    image = read_image(args.image)
    refs = parse_refs(args.box or [], args.point or [], args.refs)
    result = Counter(cfg).count(image, refs)
    out = {"image": args.image, "count": result.count, "n_ref": result.n_ref,
           "n_selected": len(result.selected), "n_candidates": len(result.scored)}
    if args.render:
        save_png(render_overlay(image, result, refs.items), args.render)
        out["overlay"] = args.render
    print(json.dumps(out) if args.json else result.count)
    return 0


def load_dataset(args, cfg: RunConfig):
    """Samples and shared exemplars for ``args.dataset``."""
    if args.dataset == "mock":
        scenes = generate_corpus(cfg.seed, args.n_scenes)
        return scenes_to_samples(scenes), []
    if not args.root:
        raise IngestionError(f"--root is required for dataset {args.dataset}")
    if args.dataset == "fsc147":
        return load_fsc147(args.root, args.split, limit=args.limit), []
    return load_carpk(args.root, args.split, n_exemplars=args.n_exemplars, seed=cfg.seed, limit=args.limit)


def cmd_eval(args) -> int:
    cfg = build_config(args)
    samples, exemplars = load_dataset(args, cfg)
    report = Evaluator(cfg, exemplars=exemplars).run(samples, label=args.dataset, progress_path=args.progress)
    if args.out:
        report.save(args.out)
    print(f"{args.dataset}: n={len(report.per_sample)} MAE={report.mae:.4f} RMSE={report.rmse:.4f}")
    return 0


def _parse_values(axis: str, text: str) -> List:
    vals = [v.strip() for v in text.split(",") if v.strip()]
    if axis in ("theta", "delta"):
        return [float(v) for v in vals]
    if axis == "tpu_rounds":
        return [int(v) for v in vals]
    if axis == "components" and vals == ["matrix"]:
        return [format(i, "04b") for i in range(16)]
    return vals


def cmd_sweep(args) -> int:
    cfg = build_config(args)
    samples, exemplars = load_dataset(args, cfg)
    try:
        values = _parse_values(args.axis, args.values)
    except ValueError:
        raise InvalidInputError(f"bad values for axis {args.axis}: {args.values!r}") from None
    reports = run_sweep(samples, args.axis, values, cfg, exemplars)
    table = summary_table(reports)
    if args.out_dir:
        out = Path(args.out_dir)
        for r in reports:
            r.save(out / f"{r.label.replace('=', '_')}.json")
        (out / "summary.txt").write_text(table + "\n")
    print(table)
    return 0


def cmd_render_debug(args) -> int:
    cfg = build_config(args)
    image = read_image(args.image)
    counter = Counter(cfg)
    emb = counter.segmenter.encode(image)
    prompts, _ = counter.prompts_for(image)
    proposals, superpixels = counter.propose(image, emb)
    paths = write_debug(args.out_dir, image, superpixels, proposals, prompts)
    print(f"{len(proposals)} proposals, {len(superpixels)} superpixel maps -> {args.out_dir}")
    for p in paths:
        logger.info("wrote %s", p)
    return 0


def _add_dataset_args(p: argparse.ArgumentParser, positional: bool = True):
    if positional:
        p.add_argument("dataset", choices=["fsc147", "carpk", "mock"])
    else:
        p.add_argument("--dataset", choices=["fsc147", "carpk", "mock"], default="mock")
    p.add_argument("--root", help="dataset root directory")
    p.add_argument("--split", default="test")
    p.add_argument("--limit", type=int, default=None, help="evaluate only the first N samples")
    p.add_argument("--n-exemplars", type=int, default=12, help="CARPK cross-image exemplars")
    p.add_argument("--n-scenes", type=int, default=5, help="size of the generated mock dataset")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tfcount", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("count", help="count objects in one image")
    p.add_argument("image")
    p.add_argument("--box", action="append", metavar="X0,Y0,X1,Y1", help="reference box (repeatable)")
    p.add_argument("--point", action="append", metavar="X,Y", help="reference point (repeatable)")
    p.add_argument("--refs", metavar="JSON", help='file with {"boxes": [...]} or {"points": [...]}')
    p.add_argument("--render", metavar="PNG", help="write an overlay of the counted masks")
    p.add_argument("--json", action="store_true", help="print a JSON summary instead of the bare count")
    _add_config_flags(p)
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("eval", help="evaluate on a dataset and write a report")
    _add_dataset_args(p)
    p.add_argument("--out", help="report path (JSON)")
    p.add_argument("--progress", help="JSONL progress file; reruns skip finished samples")
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="one report per value along an axis")
    p.add_argument("axis", choices=["theta", "delta", "tpu_rounds", "components", "backbone", "semantic"])
    p.add_argument("values", help="comma-separated values; for components, 4-bit strings "
                                  "(SP, semantic, TPU, MS) or 'matrix' for all 16")
    _add_dataset_args(p, positional=False)
    p.add_argument("--out-dir", help="directory for per-value reports and summary.txt")
    _add_config_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("render-debug", help="dump superpixel label maps and raw mask proposals")
    p.add_argument("image")
    p.add_argument("--out-dir", required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_render_debug)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CountingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
