"""Overlapping crop-window planning, extraction, and annotation assignment."""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

import numpy as np

from . import formats
from .errors import DataError
from .model import (
    EPS,
    Annotation,
    DrawingImage,
    PixelBox,
    round_half_up,
    visible_fraction,
)


class TilingMode(str, Enum):
    TRAINING_CROP = "training"
    INFERENCE = "inference"


@dataclass(frozen=True)
class TilerConfig:
    """Sliding-window geometry plus the annotation visibility cutoff."""

    tile_w: int = 1333
    tile_h: int = 800
    overlap: float = 0.9
    visibility_threshold: float = 0.7
    mode: TilingMode = TilingMode.TRAINING_CROP

    def __post_init__(self) -> None:
        if self.tile_w < 1 or self.tile_h < 1:
            raise ValueError(f"tile size must be >= 1, got {self.tile_w}x{self.tile_h}")
        if not (0.0 <= self.overlap < 1.0):
            raise ValueError(f"overlap must be in [0, 1), got {self.overlap}")
        if not (0.0 < self.visibility_threshold <= 1.0):
            raise ValueError(
                f"visibility_threshold must be in (0, 1], got {self.visibility_threshold}"
            )

    @property
    def stride_x(self) -> int:
        return max(1, round_half_up(self.tile_w * (1.0 - self.overlap)))

    @property
    def stride_y(self) -> int:
        return max(1, round_half_up(self.tile_h * (1.0 - self.overlap)))


@dataclass(frozen=True)
class Tile:
    """One crop window; origin is in drawing coordinates."""

    index: int
    x0: int
    y0: int
    w: int
    h: int

    @property
    def origin(self) -> tuple[int, int]:
        return (self.x0, self.y0)

    @property
    def box(self) -> PixelBox:
        return PixelBox(self.x0, self.y0, self.w, self.h)


@dataclass(frozen=True)
class TilePlan:
    """Deterministic row-major tile layout covering a whole drawing."""

    drawing_id: str
    width: int
    height: int
    config: TilerConfig
    tiles: tuple[Tile, ...]

    def __len__(self) -> int:
        return len(self.tiles)


def _axis_positions(extent: int, window: int, stride: int) -> list[int]:
    """Grid positions 0, s, 2s, ... while they fit, plus a clamp at the far edge."""
    positions = list(range(0, extent - window + 1, stride))
    if not positions:
        positions = [0]
    if positions[-1] + window < extent:
        positions.append(extent - window)
    return positions


def plan_tiles(
    drawing_size: tuple[int, int], config: TilerConfig, drawing_id: str = ""
) -> TilePlan:
    """Lay out clamped crop windows over a drawing, row-major (y outer, x inner).

    A drawing smaller than the tile in an axis gets a single window clamped
    to the drawing extent in that axis; windows are never padded.
    """
    width, height = int(drawing_size[0]), int(drawing_size[1])
    if width < 1 or height < 1:
        raise ValueError(f"drawing size must be positive, got {width}x{height}")
    tw = min(config.tile_w, width)
    th = min(config.tile_h, height)
    xs = _axis_positions(width, tw, config.stride_x)
    ys = _axis_positions(height, th, config.stride_y)
    tiles = tuple(
        Tile(index=i, x0=x, y0=y, w=tw, h=th)
        for i, (y, x) in enumerate((y, x) for y in ys for x in xs)
    )
    return TilePlan(drawing_id=drawing_id, width=width, height=height, config=config, tiles=tiles)


def extract_tile(image: DrawingImage, tile: Tile) -> np.ndarray:
    """Pixel-exact copy of the tile window; no resampling, no padding."""
    if tile.x0 < 0 or tile.y0 < 0 or tile.x0 + tile.w > image.width or tile.y0 + tile.h > image.height:
        raise ValueError(
            f"tile {tile} exceeds image {image.width}x{image.height}"
        )
    return image.pixels[tile.y0 : tile.y0 + tile.h, tile.x0 : tile.x0 + tile.w].copy()


def assign_annotations(
    annotations: list[Annotation], tile: Tile, visibility_threshold: float
) -> list[Annotation]:
    """Clip sufficiently visible annotations to the tile, in tile-local coords."""
    kept: list[Annotation] = []
    window = tile.box
    for ann in annotations:
        if visible_fraction(ann.box, window) < visibility_threshold - EPS:
            continue
        clipped = ann.box.intersect(window)
        if clipped is None:
            continue
        kept.append(replace(ann, box=clipped.shift(-tile.x0, -tile.y0)))
    return kept


def tile_image_id(drawing_id: str, tile_index: int) -> str:
    return f"{drawing_id}_t{tile_index:04d}"


def export_crop_dataset(
    dataset: formats.Dataset,
    images_root: Path,
    out_dir: Path,
    config: TilerConfig,
) -> tuple[formats.Dataset, list[str]]:
    """Write crop rasters and a tile-level dataset file under out_dir.

    Inference mode keeps every tile; training mode drops tiles that retain
    no annotations. A missing drawing file fails that drawing only; the
    errors come back with the (still written) crop dataset.
    """
    images_root = Path(images_root)
    out_dir = Path(out_dir)
    crops = formats.Dataset()
    errors: list[str] = []
    for rec in sorted(dataset.images, key=lambda r: r.id):
        try:
            pixels = formats.load_image(images_root / rec.file_name)
        except DataError as exc:
            errors.append(f"{rec.id}: {exc}")
            continue
        image = DrawingImage(id=rec.id, pixels=pixels)
        if (image.width, image.height) != (rec.width, rec.height):
            errors.append(
                f"{rec.id}: file is {image.width}x{image.height}, "
                f"dataset says {rec.width}x{rec.height}"
            )
            continue
        anns = dataset.annotations_for(rec.id)
        plan = plan_tiles((rec.width, rec.height), config, drawing_id=rec.id)
        for tile in plan.tiles:
            local = assign_annotations(anns, tile, config.visibility_threshold)
            if config.mode is TilingMode.TRAINING_CROP and not local:
                continue
            crop_id = tile_image_id(rec.id, tile.index)
            file_name = f"tiles/{rec.id}/{tile.index:04d}.png"
            formats.save_image(extract_tile(image, tile), out_dir / file_name)
            crops.images.append(
                formats.ImageRecord(
                    id=crop_id,
                    file_name=file_name,
                    width=tile.w,
                    height=tile.h,
                    origin=(tile.x0, tile.y0),
                    source_image_id=rec.id,
                    source_tile_index=tile.index,
                )
            )
            crops.annotations.extend(replace(a, image_id=crop_id) for a in local)
    formats.save_dataset(crops, out_dir / "crops.json")
    return crops, errors
