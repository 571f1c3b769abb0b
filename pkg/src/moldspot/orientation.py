"""Rotation prediction over square crops, with symmetry-aware label spaces.

Only rotation-variant categories are ever classified; the composite label
spaces are 8-way for injection (two 4-rotation parts) and 6-way for press
(one 2-rotation part, one 4-rotation part). Symmetric parts take rotation 0
without a classifier call.
"""

from __future__ import annotations

import base64
import math
from dataclasses import dataclass

import cv2
import numpy as np

from .backends import ncc_score, to_gray
from .bridge import LineBridge
from .errors import BridgeError, MoldspotError
from .model import (
    Annotation,
    Detection,
    DrawingImage,
    Family,
    PartCategory,
    PixelBox,
    category,
    iou,
)

INJECTION_LABELS: tuple[tuple[str, int], ...] = (
    ("Hook", 0), ("Hook", 90), ("Hook", 180), ("Hook", 270),
    ("Undercut", 0), ("Undercut", 90), ("Undercut", 180), ("Undercut", 270),
)

PRESS_LABELS: tuple[tuple[str, int], ...] = (
    ("DPS", 0), ("DPS", 90),
    ("EmboScrewless", 0), ("EmboScrewless", 90),
    ("EmboScrewless", 180), ("EmboScrewless", 270),
)

_LABELS = {Family.INJECTION: INJECTION_LABELS, Family.PRESS: PRESS_LABELS}


class OrientationError(MoldspotError):
    """Classification of one detection failed; rotation stays unset."""


def label_space(family: Family) -> tuple[tuple[str, int], ...]:
    return _LABELS[family]


def encode_label(cat: PartCategory, rotation: int) -> int:
    """Composite label index of (category, rotation) within its family."""
    if not cat.rotation_variant:
        raise ValueError(f"{cat.name} is symmetric and has no orientation label")
    try:
        return _LABELS[cat.family].index((cat.name, rotation))
    except ValueError:
        raise ValueError(
            f"rotation {rotation} not in {cat.name} group {sorted(cat.rotation_group)}"
        ) from None


def decode_label(family: Family, index: int) -> tuple[PartCategory, int]:
    labels = _LABELS[family]
    if not (0 <= index < len(labels)):
        raise ValueError(f"label index {index} outside {family.value} space of {len(labels)}")
    name, rotation = labels[index]
    return category(name), rotation


@dataclass(frozen=True)
class OrientationCropConfig:
    """Crop geometry feeding the classifier: pad, letterbox square, resize."""

    target_side: int = 224
    padding: float = 0.1  # context fraction added per side
    fill: int = 255

    def __post_init__(self) -> None:
        if self.target_side < 1:
            raise ValueError("target_side must be >= 1")
        if self.padding < 0:
            raise ValueError("padding must be >= 0")


def crop_for_orientation(
    pixels: np.ndarray, box: PixelBox, cfg: OrientationCropConfig
) -> np.ndarray:
    """Cut the padded box, letterbox it square with fill, resize bilinear."""
    gray = to_gray(pixels)
    height, width = gray.shape
    pad_w = cfg.padding * box.w
    pad_h = cfg.padding * box.h
    x0 = max(0, int(math.floor(box.x - pad_w)))
    y0 = max(0, int(math.floor(box.y - pad_h)))
    x1 = min(width, int(math.ceil(box.x2 + pad_w)))
    y1 = min(height, int(math.ceil(box.y2 + pad_h)))
    if x1 - x0 < 1 or y1 - y0 < 1:
        raise OrientationError(f"degenerate crop for box {box.as_xywh()}")
    crop = gray[y0:y1, x0:x1]
    ch, cw = crop.shape
    side = max(ch, cw)
    canvas = np.full((side, side), cfg.fill, dtype=np.uint8)
    oy = (side - ch) // 2
    ox = (side - cw) // 2
    canvas[oy : oy + ch, ox : ox + cw] = crop
    if side == cfg.target_side:
        return canvas
    return cv2.resize(
        canvas, (cfg.target_side, cfg.target_side), interpolation=cv2.INTER_LINEAR
    )


@dataclass(frozen=True)
class OrientationContext:
    """What the oracle needs that a patch cannot carry."""

    image_id: str
    detection: Detection


class OracleOrientationClassifier:
    """Reads rotation straight from ground truth via best-overlap lookup."""

    name = "oracle"
    needs_pixels = False

    def __init__(self, annotations_by_image: dict[str, list[Annotation]]):
        self._annotations = annotations_by_image

    def classify(
        self, patch: np.ndarray | None, family: Family, context: OrientationContext
    ) -> tuple[int, float]:
        det = context.detection
        best: Annotation | None = None
        best_iou = 0.0
        candidates = [
            a
            for a in self._annotations.get(context.image_id, [])
            if a.category.rotation_variant and a.category.family is family
        ]
        candidates.sort(key=lambda a: (a.box.x, a.box.y, a.box.w, a.box.h, a.rotation))
        for ann in candidates:
            overlap = iou(det.box, ann.box)
            if overlap > best_iou:
                best, best_iou = ann, overlap
        if best is None:
            return encode_label(det.category, 0), 0.0
        return encode_label(best.category, best.rotation), 1.0


class TemplateOrientationClassifier:
    """Argmax of whole-patch NCC against per-label reference patches.

    References are built by pushing each bank template through the same
    crop path the pipeline uses, so classifying a clean render of a
    template returns its own label at correlation exactly 1.
    """

    name = "template"
    needs_pixels = True

    def __init__(self, bank, cfg: OrientationCropConfig | None = None):
        self.cfg = cfg or OrientationCropConfig()
        self.family: Family = bank.family
        labels = label_space(self.family)
        self._refs = [
            self._reference_patch(bank.templates[(name, rotation)])
            for name, rotation in labels
        ]

    def _reference_patch(self, template: np.ndarray) -> np.ndarray:
        th, tw = template.shape
        pad_x = int(math.ceil(self.cfg.padding * tw)) + 4
        pad_y = int(math.ceil(self.cfg.padding * th)) + 4
        canvas = np.full((th + 2 * pad_y, tw + 2 * pad_x), self.cfg.fill, dtype=np.uint8)
        canvas[pad_y : pad_y + th, pad_x : pad_x + tw] = template
        return crop_for_orientation(canvas, PixelBox(pad_x, pad_y, tw, th), self.cfg)

    def classify(
        self, patch: np.ndarray | None, family: Family, context: OrientationContext
    ) -> tuple[int, float]:
        assert patch is not None
        if family is not self.family:
            raise OrientationError(
                f"classifier bank is {self.family.value}, asked for {family.value}"
            )
        scores = np.array([ncc_score(patch, ref) for ref in self._refs])
        index = int(np.argmax(scores))  # ties resolve to the lowest index
        return index, float(min(max(scores[index], 0.0), 1.0))


class ExternalOrientationClassifier:
    """Bridges 224x224 patches to an external classifier process."""

    name = "external"
    needs_pixels = True

    def __init__(self, cmd: list[str], family: Family, timeout: float = 10.0):
        self.family = family
        self.bridge = LineBridge(cmd, timeout=timeout)

    def classify(
        self, patch: np.ndarray | None, family: Family, context: OrientationContext
    ) -> tuple[int, float]:
        assert patch is not None
        response = self.bridge.request(
            {
                "family": family.value,
                "pixels_b64": base64.b64encode(patch.tobytes()).decode("ascii"),
            }
        )
        try:
            index = int(response["label_index"])
            confidence = float(response["confidence"])
        except (KeyError, TypeError, ValueError) as exc:
            raise OrientationError(f"bad classifier response {response!r}") from exc
        if not (0 <= index < len(label_space(family))):
            raise OrientationError(f"label index {index} outside {family.value} space")
        if not (0.0 <= confidence <= 1.0):
            raise OrientationError(f"confidence {confidence} outside [0, 1]")
        return index, confidence

    def close(self) -> None:
        self.bridge.close()


@dataclass
class OrientationStats:
    classified: int = 0
    mismatches: int = 0
    low_confidence: int = 0
    failures: int = 0

    def to_doc(self) -> dict:
        return {
            "classified": self.classified,
            "mismatches": self.mismatches,
            "low_confidence": self.low_confidence,
            "failures": self.failures,
        }


def assign_orientation(
    image: DrawingImage,
    detections: list[Detection],
    classifier,
    cfg: OrientationCropConfig | None = None,
    confidence_floor: float = 0.2,
) -> tuple[list[Detection], OrientationStats]:
    """Attach a rotation to every detection.

    Symmetric categories get rotation 0 with no classifier call. When the
    classifier answers with a different category's label, the detection
    keeps its category and takes only the rotation component (folded into
    the category's group); the mismatch is counted, not hidden.
    """
    cfg = cfg or OrientationCropConfig()
    stats = OrientationStats()
    out: list[Detection] = []
    for det in detections:
        if not det.category.rotation_variant:
            out.append(det.with_rotation(0))
            continue
        family = det.category.family
        try:
            patch = (
                crop_for_orientation(image.pixels, det.box, cfg)
                if classifier.needs_pixels
                else None
            )
            index, confidence = classifier.classify(
                patch, family, OrientationContext(image_id=image.id, detection=det)
            )
            predicted_cat, rotation = decode_label(family, index)
        except (OrientationError, BridgeError):
            stats.failures += 1
            out.append(det)
            continue
        stats.classified += 1
        if confidence < confidence_floor:
            stats.low_confidence += 1
        if predicted_cat.name != det.category.name:
            stats.mismatches += 1
            rotation = det.category.normalize_rotation(rotation)
        out.append(det.with_rotation(rotation))
    return out, stats
