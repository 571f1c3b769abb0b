"""Core domain types and box geometry shared by every pipeline stage."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

# Tolerance for float dust in bounds checks; coordinates are continuous pixels.
EPS = 1e-6


class Family(str, Enum):
    INJECTION = "injection"
    PRESS = "press"


@dataclass(frozen=True)
class PartCategory:
    """One of the seven detectable part types.

    rotation_group lists the 90-degree multiples that produce visually
    distinct appearances; fully symmetric parts have group {0}.
    """

    id: int
    name: str
    family: Family
    rotation_group: frozenset[int]

    @property
    def rotation_variant(self) -> bool:
        return len(self.rotation_group) > 1

    @property
    def rotation_period(self) -> int:
        # {0} -> 90, {0,90} -> 180, {0,90,180,270} -> 360
        return 90 * len(self.rotation_group)

    def normalize_rotation(self, degrees: int) -> int:
        """Fold an arbitrary 90-degree multiple into this category's group."""
        if degrees % 90 != 0:
            raise ValueError(f"rotation must be a multiple of 90, got {degrees}")
        return degrees % self.rotation_period

    def __str__(self) -> str:
        return self.name


_FULL = frozenset({0, 90, 180, 270})
_HALF = frozenset({0, 90})
_NONE = frozenset({0})

CATEGORIES: tuple[PartCategory, ...] = (
    PartCategory(1, "Hook", Family.INJECTION, _FULL),
    PartCategory(2, "Boss", Family.INJECTION, _NONE),
    PartCategory(3, "Undercut", Family.INJECTION, _FULL),
    PartCategory(4, "DPS", Family.PRESS, _HALF),
    PartCategory(5, "EmboScrewless", Family.PRESS, _FULL),
    PartCategory(6, "EmboBurring", Family.PRESS, _NONE),
    PartCategory(7, "Embo", Family.PRESS, _NONE),
)

_BY_NAME = {c.name: c for c in CATEGORIES}
_BY_ID = {c.id: c for c in CATEGORIES}

ROTATIONS = (0, 90, 180, 270)


def category(name: str) -> PartCategory:
    try:
        return _BY_NAME[name]
    except KeyError:
        raise KeyError(f"unknown category {name!r}; known: {sorted(_BY_NAME)}") from None


def category_by_id(cat_id: int) -> PartCategory:
    try:
        return _BY_ID[cat_id]
    except KeyError:
        raise KeyError(f"unknown category id {cat_id}") from None


def family_categories(family: Family) -> tuple[PartCategory, ...]:
    return tuple(c for c in CATEGORIES if c.family is family)


@dataclass(frozen=True)
class PixelBox:
    """Axis-aligned rectangle in continuous pixel coordinates.

    (x, y) is the top-left corner; area is w*h with no +1 pixel convention.
    """

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"degenerate box: w={self.w}, h={self.h}")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    def shift(self, dx: float, dy: float) -> PixelBox:
        return PixelBox(self.x + dx, self.y + dy, self.w, self.h)

    def intersect(self, other: PixelBox) -> PixelBox | None:
        """Intersection rectangle, or None when the boxes are disjoint."""
        x1 = max(self.x, other.x)
        y1 = max(self.y, other.y)
        x2 = min(self.x2, other.x2)
        y2 = min(self.y2, other.y2)
        if x2 <= x1 or y2 <= y1:
            return None
        return PixelBox(x1, y1, x2 - x1, y2 - y1)

    def within(self, width: float, height: float, tol: float = EPS) -> bool:
        return (
            self.x >= -tol
            and self.y >= -tol
            and self.x2 <= width + tol
            and self.y2 <= height + tol
        )

    def as_xywh(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)


def intersection_area(a: PixelBox, b: PixelBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    return iw * ih


def _edge_area(b: PixelBox) -> float:
    # same edge arithmetic as intersection_area, so iou(a, a) == 1.0 exactly
    return (b.x2 - b.x) * (b.y2 - b.y)


def iou(a: PixelBox, b: PixelBox) -> float:
    """Intersection over union; 0 for disjoint boxes, 1 for identical ones."""
    inter = intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    return inter / (_edge_area(a) + _edge_area(b) - inter)


def visible_fraction(box: PixelBox, window: PixelBox) -> float:
    """Fraction of box area lying inside window."""
    return intersection_area(box, window) / _edge_area(box)


@dataclass(frozen=True)
class Annotation:
    """Ground-truth part instance in drawing coordinates."""

    image_id: str
    box: PixelBox
    category: PartCategory
    rotation: int = 0

    def __post_init__(self) -> None:
        if self.rotation not in self.category.rotation_group:
            raise ValueError(
                f"rotation {self.rotation} not in {self.category.name} group "
                f"{sorted(self.category.rotation_group)}"
            )


@dataclass(frozen=True)
class Detection:
    """Scored prediction; rotation stays None until the orientation stage."""

    box: PixelBox
    category: PartCategory
    score: float
    rotation: int | None = None
    source_tile: int | None = None

    def __post_init__(self) -> None:
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score {self.score} outside [0, 1]")
        if self.rotation is not None and self.rotation not in self.category.rotation_group:
            raise ValueError(
                f"rotation {self.rotation} not in {self.category.name} group "
                f"{sorted(self.category.rotation_group)}"
            )

    def with_rotation(self, rotation: int | None) -> Detection:
        return replace(self, rotation=rotation)


@dataclass
class DrawingImage:
    """A raster drawing: 8-bit grayscale (H, W) or RGB (H, W, 3)."""

    id: str
    pixels: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        p = self.pixels
        if p.dtype != np.uint8:
            raise ValueError(f"pixels must be uint8, got {p.dtype}")
        if p.ndim not in (2, 3) or (p.ndim == 3 and p.shape[2] != 3):
            raise ValueError(f"pixels must be (H, W) or (H, W, 3), got {p.shape}")
        if p.shape[0] < 1 or p.shape[1] < 1:
            raise ValueError(f"empty image {p.shape}")

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def size(self) -> tuple[int, int]:
        return (self.width, self.height)


def to_global(
    det: Detection,
    tile_origin: tuple[float, float],
    drawing_size: tuple[float, float] | None = None,
) -> Detection:
    """Translate a tile-local detection into drawing coordinates.

    When drawing_size is given, a result outside the drawing is rejected:
    it signals an inconsistent tile plan, not a recoverable condition.
    """
    moved = replace(det, box=det.box.shift(tile_origin[0], tile_origin[1]))
    if drawing_size is not None and not moved.box.within(*drawing_size):
        raise ValueError(
            f"remapped box {moved.box.as_xywh()} exceeds drawing {drawing_size}"
        )
    return moved


def to_local(det: Detection, tile_origin: tuple[float, float]) -> Detection:
    """Inverse of to_global; exact for integer or dyadic-rational origins."""
    return replace(det, box=det.box.shift(-tile_origin[0], -tile_origin[1]))


def round_half_up(value: float) -> int:
    """Round with ties going up (1333*0.1 -> 133, 266.5 -> 267)."""
    return int(math.floor(value + 0.5))
