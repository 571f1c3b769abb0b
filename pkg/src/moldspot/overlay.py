"""Box/label overlay rendering for drawings (a pure view, never an input)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .model import Annotation, Detection, Family

_DEFAULT_COLORS = {
    Family.INJECTION: (204, 32, 56),  # red family
    Family.PRESS: (24, 88, 204),  # blue family
}


@dataclass(frozen=True)
class OverlayStyle:
    family_colors: dict[Family, tuple[int, int, int]] = field(
        default_factory=lambda: dict(_DEFAULT_COLORS)
    )
    line_width: int = 3
    draw_legend: bool = True


def _label_text(item: Detection | Annotation) -> str:
    rotation = item.rotation
    if rotation is None:
        return item.category.name
    return f"{item.category.name} {rotation}\N{DEGREE SIGN}"


def render_overlay(
    pixels: np.ndarray,
    items: list[Detection] | list[Annotation],
    style: OverlayStyle | None = None,
) -> np.ndarray:
    """Return an RGB copy of the image with boxes, tags, and a legend drawn."""
    style = style or OverlayStyle()
    if pixels.ndim == 2:
        rgb = np.stack([pixels] * 3, axis=-1)
    else:
        rgb = pixels.copy()
    img = Image.fromarray(rgb, mode="RGB")
    draw = ImageDraw.Draw(img)
    font = ImageFont.load_default()
    for item in items:
        box = item.box
        color = style.family_colors[item.category.family]
        draw.rectangle(
            [box.x, box.y, box.x2 - 1, box.y2 - 1],
            outline=color,
            width=style.line_width,
        )
        text = _label_text(item)
        ty = box.y - 14 if box.y >= 14 else box.y2 + 2
        draw.text((box.x, ty), text, fill=color, font=font)
    if style.draw_legend:
        families = sorted({i.category.family for i in items}, key=lambda f: f.value)
        if not families:
            families = sorted(style.family_colors, key=lambda f: f.value)
        pad, swatch, row_h = 6, 12, 18
        legend_w = 150
        legend_h = pad * 2 + row_h * len(families)
        draw.rectangle([0, 0, legend_w, legend_h], fill=(255, 255, 255), outline=(0, 0, 0))
        for i, family in enumerate(families):
            y = pad + i * row_h
            draw.rectangle(
                [pad, y, pad + swatch, y + swatch], fill=style.family_colors[family]
            )
            draw.text((pad * 2 + swatch, y), family.value, fill=(0, 0, 0), font=font)
    return np.asarray(img, dtype=np.uint8).copy()
