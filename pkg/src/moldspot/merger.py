"""Remap tile-local detections to drawing coordinates and dedupe with NMS.

Heavy window overlap means one physical part is detected in many tiles;
greedy class-aware NMS with a full tie-break chain removes the duplicates
the same way on every run, regardless of tile processing order.
"""

from __future__ import annotations

from dataclasses import dataclass

from .model import Detection, iou, to_global
from .tiler import TilePlan


@dataclass(frozen=True)
class MergeConfig:
    nms_iou: float = 0.5
    score_floor: float = 0.0
    class_aware: bool = True

    def __post_init__(self) -> None:
        if not (0.0 < self.nms_iou < 1.0):
            raise ValueError(f"nms_iou must be in (0, 1), got {self.nms_iou}")
        if not (0.0 <= self.score_floor <= 1.0):
            raise ValueError(f"score_floor must be in [0, 1], got {self.score_floor}")


@dataclass(frozen=True)
class MergeStats:
    pre_nms: int
    post_nms: int


def _canonical_key(det: Detection) -> tuple:
    return (-det.score, det.box.x, det.box.y, det.category.id, det.box.w, det.box.h)


def remap_all(
    plan: TilePlan, tile_detections: list[tuple[int, list[Detection]]]
) -> list[Detection]:
    """Translate every tile-local detection into drawing coordinates."""
    size = (float(plan.width), float(plan.height))
    out: list[Detection] = []
    for tile_index, dets in tile_detections:
        tile = plan.tiles[tile_index]
        assert tile.index == tile_index
        for det in dets:
            out.append(to_global(det, (tile.x0, tile.y0), drawing_size=size))
    return out


def nms(detections: list[Detection], cfg: MergeConfig) -> list[Detection]:
    """Greedy score-first suppression with deterministic tie-breaking.

    Survivor boxes are never altered; two same-category survivors always
    have IoU below cfg.nms_iou.
    """
    alive = sorted(
        (d for d in detections if d.score >= cfg.score_floor), key=_canonical_key
    )
    kept: list[Detection] = []
    while alive:
        head = alive.pop(0)
        kept.append(head)
        alive = [
            d
            for d in alive
            if (cfg.class_aware and d.category.id != head.category.id)
            or iou(d.box, head.box) < cfg.nms_iou
        ]
    return kept


def merge_pipeline(
    plan: TilePlan,
    tile_detections: list[tuple[int, list[Detection]]],
    cfg: MergeConfig,
) -> tuple[list[Detection], MergeStats]:
    """remap_all then nms, returning detections in canonical order."""
    remapped = remap_all(plan, tile_detections)
    kept = sorted(nms(remapped, cfg), key=_canonical_key)
    return kept, MergeStats(pre_nms=len(remapped), post_nms=len(kept))
