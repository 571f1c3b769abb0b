"""Command-line surface: synth, crop, detect, eval, report.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 per-tile
failures above the configured policy.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__, formats, synthgen
from .errors import ConfigError, DataError, MoldspotError
from .metrics import EvalConfig, evaluate
from .model import CATEGORIES, Family
from .overlay import render_overlay
from .pipeline import FAMILY_TILE_SIZES, run_pipeline
from .tiler import TilerConfig, TilingMode, export_crop_dataset


class _Parser(argparse.ArgumentParser):
    # usage problems are configuration errors -> exit code 1
    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _apply_set_overrides(cfg: dict, pairs: list[str]) -> None:
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set path {key!r} crosses a non-object value")
        node[parts[-1]] = value


def _cmd_synth(args) -> int:
    library = synthgen.default_library()
    cfg = synthgen.SynthConfig(
        seed=args.seed,
        width=args.width,
        height=args.height,
        parts=args.parts,
        clutter=not args.no_clutter,
    )
    dataset, manifest = synthgen.generate_dataset(
        library, cfg, args.drawings, Path(args.out), train_fraction=args.train_fraction
    )
    print(
        f"wrote {len(dataset.images)} drawings, {len(dataset.annotations)} annotations "
        f"to {args.out} (train {len(manifest['train'])} / test {len(manifest['test'])})"
    )
    return 0


def _cmd_crop(args) -> int:
    dataset = formats.load_dataset(Path(args.dataset))
    family = Family(args.family)
    default_w, default_h = FAMILY_TILE_SIZES[family]
    keep = {c.id for c in CATEGORIES if c.family is family}
    dataset.annotations = [a for a in dataset.annotations if a.category.id in keep]
    try:
        config = TilerConfig(
            tile_w=args.tile_w or default_w,
            tile_h=args.tile_h or default_h,
            overlap=args.overlap,
            visibility_threshold=args.theta,
            mode=TilingMode.TRAINING_CROP if args.mode == "training" else TilingMode.INFERENCE,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    images_root = Path(args.images_dir) if args.images_dir else Path(args.dataset).parent
    crops, errors = export_crop_dataset(dataset, images_root, Path(args.out), config)
    print(
        f"wrote {len(crops.images)} tiles with {len(crops.annotations)} annotations to {args.out}"
    )
    for message in errors:
        print(f"error: {message}", file=sys.stderr)
    return 2 if errors else 0


def _cmd_detect(args) -> int:
    config_path = Path(args.config)
    try:
        cfg = json.loads(config_path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {config_path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{config_path}: not valid JSON: {exc}") from exc
    _apply_set_overrides(cfg, args.set or [])
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.family is not None:
        cfg["family"] = args.family
    if args.reproducible:
        cfg["reproducible"] = True
    run = run_pipeline(cfg, base_dir=config_path.parent)
    out_path = Path(args.output) if args.output else config_path.parent / cfg.get(
        "output", "results.json"
    )
    formats.save_results(run.results_doc, out_path)
    print(
        f"{len(run.results_doc['detections'])} detections over "
        f"{run.total_tiles} tiles ({run.failed_tiles} failed) -> {out_path}"
    )
    if run.report is not None:
        print(run.report.render_table())
    return run.exit_code


def _cmd_eval(args) -> int:
    dataset = formats.load_dataset(Path(args.dataset))
    results = formats.load_results(Path(args.results))
    family = Family(results["meta"]["family"])
    dets_by_image = formats.detections_from_results(results)
    gts = {rec.id: dataset.annotations_for(rec.id) for rec in dataset.images}
    report = evaluate(
        dets_by_image, gts, family, EvalConfig(max_detections=args.max_detections)
    )
    print(report.render_table())
    if args.output:
        results["eval"] = report.to_doc()
        formats.save_results(results, Path(args.output))
        print(f"wrote evaluated results to {args.output}")
    return 0


def _render_eval_doc(doc: dict) -> str:
    def show(v) -> str:
        return "--" if v is None else f"{v:.3f}"

    lines = [f"family: {doc['family']}"]
    for name in sorted(doc["ap_per_category"]):
        lines.append(
            f"  {name:<16} AP {show(doc['ap_per_category'][name])} "
            f"AR {show(doc['ar_per_category'][name])}"
        )
    lines.append(f"  mean AP {show(doc['mean_ap'])}  mean AR {show(doc['mean_ar'])}")
    lines.append(
        f"  orientation accuracy {show(doc['orientation_accuracy'])} "
        f"over {doc['orientation_pairs']} matches"
    )
    return "\n".join(lines)


def _cmd_report(args) -> int:
    dataset = formats.load_dataset(Path(args.dataset))
    results = formats.load_results(Path(args.results))
    dets_by_image = formats.detections_from_results(results)
    images_root = Path(args.images_dir) if args.images_dir else Path(args.dataset).parent
    out_dir = Path(args.out)
    count = 0
    for rec in sorted(dataset.images, key=lambda r: r.id):
        dets = dets_by_image.get(rec.id, [])
        pixels = formats.load_image(images_root / rec.file_name)
        overlay = render_overlay(pixels, dets)
        formats.save_image(overlay, out_dir / f"{rec.id}_overlay.png")
        count += 1
    print(f"wrote {count} overlays to {out_dir}")
    if "eval" in results:
        print(_render_eval_doc(results["eval"]))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="moldspot", description=__doc__)
    parser.add_argument("--version", action="version", version=f"moldspot {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a seeded synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--drawings", type=int, default=10)
    p.add_argument("--parts", type=int, default=25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=int, default=4000)
    p.add_argument("--height", type=int, default=2400)
    p.add_argument("--train-fraction", type=float, default=0.75)
    p.add_argument("--no-clutter", action="store_true")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("crop", help="export overlapping training/inference crops")
    p.add_argument("--dataset", required=True)
    p.add_argument("--images-dir")
    p.add_argument("--out", required=True)
    p.add_argument("--family", required=True, choices=["injection", "press"])
    p.add_argument("--tile-w", type=int)
    p.add_argument("--tile-h", type=int)
    p.add_argument("--overlap", type=float, default=0.9)
    p.add_argument("--theta", type=float, default=0.7)
    p.add_argument("--mode", choices=["training", "inference"], default="training")
    p.set_defaults(func=_cmd_crop)

    p = sub.add_parser("detect", help="run the full pipeline from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--seed", type=int)
    p.add_argument("--family", choices=["injection", "press"])
    p.add_argument("--reproducible", action="store_true")
    p.add_argument("--output")
    p.set_defaults(func=_cmd_detect)

    p = sub.add_parser("eval", help="evaluate an existing results file")
    p.add_argument("--dataset", required=True)
    p.add_argument("--results", required=True)
    p.add_argument("--max-detections", type=int, default=100)
    p.add_argument("--output")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("report", help="render overlays and print the metric table")
    p.add_argument("--dataset", required=True)
    p.add_argument("--results", required=True)
    p.add_argument("--images-dir")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except MoldspotError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
