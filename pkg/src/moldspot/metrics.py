"""Detection evaluation: AP over an IoU-threshold sweep, AR, rotation accuracy.

AP uses 101-point interpolated precision (the de-facto convention that makes
the 0.50:0.05:0.95 sweep well defined); AR is TP/GT averaged over the same
sweep with a per-image detection cap. Rotation accuracy counts only
rotation-variant categories, matched at IoU 0.5.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import Annotation, Detection, Family, PartCategory, family_categories, iou


def default_iou_thresholds() -> tuple[float, ...]:
    return tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


@dataclass(frozen=True)
class EvalConfig:
    iou_thresholds: tuple[float, ...] = field(default_factory=default_iou_thresholds)
    recall_points: int = 101
    max_detections: int = 100

    def __post_init__(self) -> None:
        ts = self.iou_thresholds
        if not ts or any(not (0.0 < t < 1.0) for t in ts):
            raise ValueError(f"thresholds must lie in (0, 1): {ts}")
        if any(a >= b for a, b in zip(ts, ts[1:])):
            raise ValueError(f"thresholds must be strictly increasing: {ts}")
        if self.recall_points < 2:
            raise ValueError("recall_points must be >= 2")
        if self.max_detections < 1:
            raise ValueError("max_detections must be >= 1")


def _det_key(det: Detection) -> tuple:
    return (-det.score, det.box.x, det.box.y, det.category.id, det.box.w, det.box.h)


def _gt_key(ann: Annotation) -> tuple:
    return (ann.box.x, ann.box.y, ann.box.w, ann.box.h, ann.rotation)


@dataclass
class MatchedPair:
    detection: Detection
    annotation: Annotation
    overlap: float


def match_detections(
    detections: list[Detection], ground_truth: list[Annotation], iou_threshold: float
) -> tuple[list[tuple[Detection, bool]], list[MatchedPair]]:
    """Greedy score-order matching; each GT is consumed by at most one detection.

    Returns per-detection TP/FP flags (in score order) plus the matched pairs.
    """
    dets = sorted(detections, key=_det_key)
    gts = sorted(ground_truth, key=_gt_key)
    taken = [False] * len(gts)
    flags: list[tuple[Detection, bool]] = []
    pairs: list[MatchedPair] = []
    for det in dets:
        best_i = -1
        best_iou = 0.0
        for i, ann in enumerate(gts):
            if taken[i]:
                continue
            overlap = iou(det.box, ann.box)
            if overlap > best_iou:
                best_i, best_iou = i, overlap
        if best_i >= 0 and best_iou >= iou_threshold:
            taken[best_i] = True
            flags.append((det, True))
            pairs.append(MatchedPair(det, gts[best_i], best_iou))
        else:
            flags.append((det, False))
    return flags, pairs


def ap_from_flags(flags: list[bool], n_gt: int, recall_points: int = 101) -> float | None:
    """Interpolated AP from score-ranked TP/FP flags.

    None when there is nothing to measure (no GT and no detections); 0 when
    detections exist for a category with no GT, or GT exists with no TP.
    """
    if n_gt == 0:
        return 0.0 if flags else None
    if not flags:
        return 0.0
    tp = np.cumsum(np.asarray(flags, dtype=np.float64))
    ranks = np.arange(1, len(flags) + 1, dtype=np.float64)
    recall = tp / n_gt
    precision = tp / ranks
    # precision envelope: best precision at any recall >= r
    for i in range(len(precision) - 1, 0, -1):
        precision[i - 1] = max(precision[i - 1], precision[i])
    samples = np.linspace(0.0, 1.0, recall_points)
    idx = np.searchsorted(recall, samples, side="left")
    sampled = np.where(idx < len(precision), precision[np.minimum(idx, len(precision) - 1)], 0.0)
    return float(sampled.mean())


@dataclass
class _CategoryAtThreshold:
    ap: float | None
    recall: float | None
    tp: int
    fp: int
    fn: int


def _eval_category(
    dets_by_image: dict[str, list[Detection]],
    gts_by_image: dict[str, list[Annotation]],
    cat: PartCategory,
    threshold: float,
    cfg: EvalConfig,
) -> _CategoryAtThreshold:
    ranked: list[tuple[tuple, bool]] = []
    n_gt = 0
    image_ids = sorted(set(dets_by_image) | set(gts_by_image))
    for image_id in image_ids:
        gts = [a for a in gts_by_image.get(image_id, []) if a.category.id == cat.id]
        dets = sorted(
            (d for d in dets_by_image.get(image_id, []) if d.category.id == cat.id),
            key=_det_key,
        )[: cfg.max_detections]
        n_gt += len(gts)
        flags, _ = match_detections(dets, gts, threshold)
        for det, is_tp in flags:
            ranked.append(((-det.score, image_id, det.box.x, det.box.y), is_tp))
    ranked.sort(key=lambda r: r[0])
    flag_list = [tp for _, tp in ranked]
    tp_total = sum(flag_list)
    ap = ap_from_flags(flag_list, n_gt, cfg.recall_points)
    recall = (tp_total / n_gt) if n_gt > 0 else None
    return _CategoryAtThreshold(
        ap=ap,
        recall=recall,
        tp=tp_total,
        fp=len(flag_list) - tp_total,
        fn=n_gt - tp_total,
    )


def orientation_accuracy(
    dets_by_image: dict[str, list[Detection]],
    gts_by_image: dict[str, list[Annotation]],
    family: Family,
    iou_threshold: float = 0.5,
) -> tuple[float | None, int]:
    """Fraction of matched rotation-variant parts whose rotation is right.

    Symmetric categories are excluded from both numerator and denominator;
    (None, 0) when no rotation-variant pair matches at all.
    """
    correct = 0
    total = 0
    cats = [c for c in family_categories(family) if c.rotation_variant]
    image_ids = sorted(set(dets_by_image) | set(gts_by_image))
    for image_id in image_ids:
        for cat in cats:
            gts = [a for a in gts_by_image.get(image_id, []) if a.category.id == cat.id]
            dets = [d for d in dets_by_image.get(image_id, []) if d.category.id == cat.id]
            _, pairs = match_detections(dets, gts, iou_threshold)
            for pair in pairs:
                total += 1
                if pair.detection.rotation == pair.annotation.rotation:
                    correct += 1
    if total == 0:
        return None, 0
    return correct / total, total


_NOTES = (
    "AR is recall averaged over the IoU threshold sweep at the per-image detection cap.",
    "Headline values average per-category means (macro); the per-threshold marginal is recorded alongside.",
)


@dataclass
class EvalReport:
    """Per-category AP/AR tables with both averaging marginals recorded."""

    family: Family
    iou_thresholds: tuple[float, ...]
    ap: dict[str, dict[float, float | None]]
    recall: dict[str, dict[float, float | None]]
    counts: dict[float, dict[str, int]]
    orientation_accuracy: float | None
    orientation_pairs: int
    max_detections: int
    recall_points: int
    notes: tuple[str, ...] = _NOTES

    def _per_category(self, table: dict[str, dict[float, float | None]]) -> dict[str, float | None]:
        out: dict[str, float | None] = {}
        for name, row in table.items():
            defined = [v for v in row.values() if v is not None]
            out[name] = float(np.mean(defined)) if defined else None
        return out

    def _per_threshold(self, table: dict[str, dict[float, float | None]]) -> dict[float, float | None]:
        out: dict[float, float | None] = {}
        for t in self.iou_thresholds:
            defined = [row[t] for row in table.values() if row[t] is not None]
            out[t] = float(np.mean(defined)) if defined else None
        return out

    @property
    def ap_per_category(self) -> dict[str, float | None]:
        return self._per_category(self.ap)

    @property
    def ap_per_threshold(self) -> dict[float, float | None]:
        return self._per_threshold(self.ap)

    @property
    def mean_ap(self) -> float | None:
        defined = [v for v in self.ap_per_category.values() if v is not None]
        return float(np.mean(defined)) if defined else None

    @property
    def ar_per_category(self) -> dict[str, float | None]:
        return self._per_category(self.recall)

    @property
    def mean_ar(self) -> float | None:
        defined = [v for v in self.ar_per_category.values() if v is not None]
        return float(np.mean(defined)) if defined else None

    def to_doc(self) -> dict:
        def fmt_t(t: float) -> str:
            return f"{t:.2f}"

        def clean(v: float | None) -> float | None:
            return None if v is None else round(v, 6)

        return {
            "family": self.family.value,
            "iou_thresholds": [fmt_t(t) for t in self.iou_thresholds],
            "ap": {
                name: {fmt_t(t): clean(v) for t, v in row.items()}
                for name, row in self.ap.items()
            },
            "recall": {
                name: {fmt_t(t): clean(v) for t, v in row.items()}
                for name, row in self.recall.items()
            },
            "ap_per_category": {k: clean(v) for k, v in self.ap_per_category.items()},
            "ap_per_threshold": {fmt_t(t): clean(v) for t, v in self.ap_per_threshold.items()},
            "mean_ap": clean(self.mean_ap),
            "ar_per_category": {k: clean(v) for k, v in self.ar_per_category.items()},
            "mean_ar": clean(self.mean_ar),
            "orientation_accuracy": clean(self.orientation_accuracy),
            "orientation_pairs": self.orientation_pairs,
            "counts": {
                fmt_t(t): dict(c) for t, c in self.counts.items()
            },
            "max_detections": self.max_detections,
            "recall_points": self.recall_points,
            "notes": list(self.notes),
        }

    def render_table(self) -> str:
        def show(v: float | None) -> str:
            return "   --" if v is None else f"{v:.3f}"

        lines = [
            f"family: {self.family.value}   "
            f"(thresholds {self.iou_thresholds[0]:.2f}..{self.iou_thresholds[-1]:.2f}, "
            f"max {self.max_detections} det/img)",
        ]
        for note in self.notes:
            lines.append(f"  note: {note}")
        header = f"{'category':<16} {'AP@sweep':>9} {'AR':>7}"
        lines.append(header)
        lines.append("-" * len(header))
        ap_cat = self.ap_per_category
        ar_cat = self.ar_per_category
        for name in sorted(self.ap):
            lines.append(f"{name:<16} {show(ap_cat[name]):>9} {show(ar_cat[name]):>7}")
        lines.append("-" * len(header))
        lines.append(f"{'mean':<16} {show(self.mean_ap):>9} {show(self.mean_ar):>7}")
        acc = self.orientation_accuracy
        pairs = self.orientation_pairs
        lines.append(
            f"orientation accuracy: {show(acc)} over {pairs} rotation-variant matches"
        )
        return "\n".join(lines)


def evaluate(
    dets_by_image: dict[str, list[Detection]],
    gts_by_image: dict[str, list[Annotation]],
    family: Family,
    cfg: EvalConfig | None = None,
) -> EvalReport:
    """Score one family's detections against ground truth."""
    cfg = cfg or EvalConfig()
    cats = family_categories(family)
    gts_by_image = {
        image_id: [a for a in anns if a.category.family is family]
        for image_id, anns in gts_by_image.items()
    }
    ap: dict[str, dict[float, float | None]] = {c.name: {} for c in cats}
    recall: dict[str, dict[float, float | None]] = {c.name: {} for c in cats}
    counts: dict[float, dict[str, int]] = {}
    for t in cfg.iou_thresholds:
        tp = fp = fn = 0
        for cat in cats:
            cell = _eval_category(dets_by_image, gts_by_image, cat, t, cfg)
            ap[cat.name][t] = cell.ap
            recall[cat.name][t] = cell.recall
            tp += cell.tp
            fp += cell.fp
            fn += cell.fn
        counts[t] = {"tp": tp, "fp": fp, "fn": fn}
    accuracy, pairs = orientation_accuracy(dets_by_image, gts_by_image, family)
    return EvalReport(
        family=family,
        iou_thresholds=cfg.iou_thresholds,
        ap=ap,
        recall=recall,
        counts=counts,
        orientation_accuracy=accuracy,
        orientation_pairs=pairs,
        max_detections=cfg.max_detections,
        recall_points=cfg.recall_points,
    )
