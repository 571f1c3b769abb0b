"""End-to-end run: plan -> detect -> merge -> orient -> evaluate -> serialize."""

from __future__ import annotations

import copy
import hashlib
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

from . import __version__, formats, synthgen
from .backends import (
    ExternalDetector,
    NoiseConfig,
    OracleDetector,
    TemplateDetector,
    detect_tiles,
)
from .errors import ConfigError
from .merger import MergeConfig, MergeStats, merge_pipeline
from .metrics import EvalConfig, EvalReport, evaluate
from .model import Annotation, DrawingImage, Family
from .orientation import (
    ExternalOrientationClassifier,
    OracleOrientationClassifier,
    OrientationCropConfig,
    OrientationStats,
    TemplateOrientationClassifier,
    assign_orientation,
)
from .tiler import TilerConfig, TilingMode, plan_tiles

# Paper-scale crop windows per family; overridable in the tiler section.
FAMILY_TILE_SIZES = {Family.INJECTION: (1333, 800), Family.PRESS: (2666, 1600)}

DEFAULT_CONFIG: dict = {
    "family": None,
    "dataset": None,
    "images_dir": None,
    "output": "results.json",
    "seed": 0,
    "reproducible": False,
    "workers": 1,
    "backend": {
        "name": "oracle",
        "noise": {"jitter_sigma": 0.0, "drop_rate": 0.0, "false_positive_rate": 0.0},
        "command": None,
        "timeout_s": 10.0,
        "pool_size": 1,
        "tau": 0.8,
        "stride": 1,
    },
    "tiler": {
        "tile_w": None,
        "tile_h": None,
        "overlap": 0.2,
        "mode": "inference",
        "visibility_threshold": 0.7,
    },
    "merge": {"nms_iou": 0.5, "score_floor": 0.05, "class_aware": True},
    "orientation": {
        "backend": "oracle",
        "padding": 0.1,
        "confidence_floor": 0.2,
        "source": "detections",  # or "ground_truth": classify GT-box crops
        "command": None,
        "timeout_s": 10.0,
    },
    "eval": {"enabled": True, "max_detections": 100},
    "tile_failure_policy": {"mode": "threshold", "max_fraction": 0.1},
}

_BACKEND_NAMES = {"oracle", "template", "external"}
_POLICY_MODES = {"fail-any", "fail-none", "threshold"}


def _merge_section(defaults: dict, override: dict, path: str) -> dict:
    out = copy.deepcopy(defaults)
    for key, value in override.items():
        if key not in defaults:
            raise ConfigError(f"unknown config key {path}{key}")
        if isinstance(defaults[key], dict) and isinstance(value, dict):
            out[key] = _merge_section(defaults[key], value, f"{path}{key}.")
        else:
            out[key] = value
    return out


def resolve_config(user: dict) -> dict:
    """Merge with defaults and fail fast on anything malformed."""
    cfg = _merge_section(DEFAULT_CONFIG, user, "")
    if cfg["family"] not in ("injection", "press"):
        raise ConfigError(f"family must be 'injection' or 'press', got {cfg['family']!r}")
    if not cfg["dataset"]:
        raise ConfigError("config must name a dataset file")
    if cfg["backend"]["name"] not in _BACKEND_NAMES:
        raise ConfigError(
            f"unknown detector backend {cfg['backend']['name']!r}; "
            f"known: {sorted(_BACKEND_NAMES)}"
        )
    if cfg["orientation"]["backend"] not in _BACKEND_NAMES:
        raise ConfigError(
            f"unknown orientation backend {cfg['orientation']['backend']!r}; "
            f"known: {sorted(_BACKEND_NAMES)}"
        )
    if cfg["backend"]["name"] == "external" and not cfg["backend"]["command"]:
        raise ConfigError("external detector needs backend.command")
    if cfg["orientation"]["backend"] == "external" and not cfg["orientation"]["command"]:
        raise ConfigError("external classifier needs orientation.command")
    if cfg["tiler"]["mode"] not in ("training", "inference"):
        raise ConfigError(f"tiler.mode must be training|inference, got {cfg['tiler']['mode']!r}")
    if cfg["orientation"]["source"] not in ("detections", "ground_truth"):
        raise ConfigError(
            f"orientation.source must be detections|ground_truth, "
            f"got {cfg['orientation']['source']!r}"
        )
    policy = cfg["tile_failure_policy"]
    if policy["mode"] not in _POLICY_MODES:
        raise ConfigError(
            f"tile_failure_policy.mode must be one of {sorted(_POLICY_MODES)}"
        )
    if not isinstance(cfg["workers"], int) or cfg["workers"] < 1:
        raise ConfigError("workers must be a positive integer")
    return cfg


def tiler_config_from(cfg: dict, family: Family) -> TilerConfig:
    section = cfg["tiler"]
    tile_w, tile_h = FAMILY_TILE_SIZES[family]
    try:
        return TilerConfig(
            tile_w=section["tile_w"] or tile_w,
            tile_h=section["tile_h"] or tile_h,
            overlap=section["overlap"],
            visibility_threshold=section["visibility_threshold"],
            mode=TilingMode.TRAINING_CROP
            if section["mode"] == "training"
            else TilingMode.INFERENCE,
        )
    except ValueError as exc:
        raise ConfigError(f"tiler: {exc}") from exc


def _build_detector(cfg: dict, family: Family, gts: dict[str, list[Annotation]]):
    section = cfg["backend"]
    name = section["name"]
    if name == "oracle":
        noise = NoiseConfig(seed=cfg["seed"], **section["noise"])
        return OracleDetector(gts, family, noise=noise)
    if name == "template":
        bank = synthgen.export_template_bank(
            synthgen.default_library(), family,
            tau=section["tau"], stride=section["stride"],
        )
        return TemplateDetector(bank)
    return ExternalDetector(
        section["command"], family,
        timeout=section["timeout_s"], pool_size=section["pool_size"],
    )


def _build_classifier(cfg: dict, family: Family, gts: dict[str, list[Annotation]]):
    section = cfg["orientation"]
    name = section["backend"]
    crop_cfg = OrientationCropConfig(padding=section["padding"])
    if name == "oracle":
        return OracleOrientationClassifier(gts), crop_cfg
    if name == "template":
        bank = synthgen.export_template_bank(synthgen.default_library(), family)
        return TemplateOrientationClassifier(bank, crop_cfg), crop_cfg
    return (
        ExternalOrientationClassifier(section["command"], family, timeout=section["timeout_s"]),
        crop_cfg,
    )


def _with_ground_truth_boxes(detections, annotations):
    """Swap each detection's box for its best-overlapping same-category GT box.

    Used when the orientation stage is configured to classify ground-truth
    crops; detections without a 0.5-IoU match keep their own box.
    """
    from dataclasses import replace

    from .model import iou as box_iou

    out = []
    for det in detections:
        best, best_iou = None, 0.5
        for ann in annotations:
            if ann.category.id != det.category.id:
                continue
            overlap = box_iou(det.box, ann.box)
            if overlap >= best_iou:
                best, best_iou = ann, overlap
        out.append(replace(det, box=best.box) if best is not None else det)
    return out


@dataclass
class PipelineRun:
    results_doc: dict
    report: EvalReport | None
    exit_code: int
    total_tiles: int
    failed_tiles: int


def _failure_exit_code(policy: dict, failed: int, total: int) -> int:
    if failed == 0 or policy["mode"] == "fail-none":
        return 0
    if policy["mode"] == "fail-any":
        return 3
    return 3 if total > 0 and failed / total > policy["max_fraction"] else 0


def run_pipeline(user_config: dict, base_dir: Path) -> PipelineRun:
    """Run the full detection pipeline described by a config document."""
    cfg = resolve_config(user_config)
    base_dir = Path(base_dir)
    family = Family(cfg["family"])
    dataset_path = base_dir / cfg["dataset"]
    dataset = formats.load_dataset(dataset_path)
    images_root = (
        base_dir / cfg["images_dir"] if cfg["images_dir"] else dataset_path.parent
    )
    gts = {rec.id: dataset.annotations_for(rec.id) for rec in dataset.images}
    detector = _build_detector(cfg, family, gts)
    classifier, crop_cfg = _build_classifier(cfg, family, gts)
    tiler_cfg = tiler_config_from(cfg, family)
    merge_cfg = MergeConfig(
        nms_iou=cfg["merge"]["nms_iou"],
        score_floor=cfg["merge"]["score_floor"],
        class_aware=cfg["merge"]["class_aware"],
    )

    detections_doc: list[dict] = []
    failures_doc: list[dict] = []
    per_image_stats: dict[str, dict] = {}
    dets_by_image = {}
    orient_totals = OrientationStats()
    total_tiles = 0
    failed_tiles = 0
    stats_total = MergeStats(0, 0)
    try:
        for rec in sorted(dataset.images, key=lambda r: r.id):
            pixels = formats.load_image(images_root / rec.file_name)
            image = DrawingImage(id=rec.id, pixels=pixels)
            plan = plan_tiles((rec.width, rec.height), tiler_cfg, drawing_id=rec.id)
            total_tiles += len(plan)
            tile_results = detect_tiles(plan, image, detector, workers=cfg["workers"])
            failed_tiles += len(tile_results.failures)
            for failure in tile_results.failures:
                failures_doc.append(
                    {"image_id": rec.id, "tile_index": failure.tile_index, "error": failure.error}
                )
            merged, mstats = merge_pipeline(plan, tile_results.by_tile, merge_cfg)
            to_classify = merged
            if cfg["orientation"]["source"] == "ground_truth":
                to_classify = _with_ground_truth_boxes(merged, gts.get(rec.id, []))
            classified, ostats = assign_orientation(
                image, to_classify, classifier, crop_cfg,
                confidence_floor=cfg["orientation"]["confidence_floor"],
            )
            # rotations come from the classified crops; boxes stay the
            # detector's own
            oriented = [
                d.with_rotation(c.rotation) for d, c in zip(merged, classified)
            ]
            dets_by_image[rec.id] = oriented
            detections_doc.extend(formats.detection_to_doc(rec.id, d) for d in oriented)
            per_image_stats[rec.id] = {"pre_nms": mstats.pre_nms, "post_nms": mstats.post_nms}
            stats_total = MergeStats(
                stats_total.pre_nms + mstats.pre_nms, stats_total.post_nms + mstats.post_nms
            )
            orient_totals.classified += ostats.classified
            orient_totals.mismatches += ostats.mismatches
            orient_totals.low_confidence += ostats.low_confidence
            orient_totals.failures += ostats.failures
    finally:
        for obj in (detector, classifier):
            close = getattr(obj, "close", None)
            if close is not None:
                close()

    report = None
    if cfg["eval"]["enabled"] and dataset.annotations:
        report = evaluate(
            dets_by_image, gts, family,
            EvalConfig(max_detections=cfg["eval"]["max_detections"]),
        )

    meta = {
        "tool": f"moldspot {__version__}",
        "family": family.value,
        "seed": cfg["seed"],
        "config_hash": hashlib.sha256(
            formats.canonical_dumps(cfg).encode("utf-8")
        ).hexdigest(),
    }
    if not cfg["reproducible"]:
        meta["created_at"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
    doc = {
        "meta": meta,
        "detections": detections_doc,
        "tile_failures": failures_doc,
        "merge_stats": {
            "pre_nms": stats_total.pre_nms,
            "post_nms": stats_total.post_nms,
            "per_image": per_image_stats,
        },
        "orientation_stats": orient_totals.to_doc(),
    }
    if report is not None:
        doc["eval"] = report.to_doc()
    exit_code = _failure_exit_code(cfg["tile_failure_policy"], failed_tiles, total_tiles)
    return PipelineRun(
        results_doc=doc,
        report=report,
        exit_code=exit_code,
        total_tiles=total_tiles,
        failed_tiles=failed_tiles,
    )
