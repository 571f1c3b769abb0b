"""Seeded synthetic drawing generator with exact-symmetry part glyphs.

Each category's glyph realizes its rotation group: fully symmetric glyphs
are pixel-identical under every 90-degree rotation, the 2-fold glyph under
180 degrees, and the rotation-variant glyphs under none. Rotations are
rendered as lossless np.rot90 turns of the base raster, so rotation ground
truth is well defined by construction.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import formats
from .backends import TemplateBank
from .errors import PlacementError
from .model import (
    CATEGORIES,
    Annotation,
    DrawingImage,
    Family,
    PartCategory,
    PixelBox,
    category,
    round_half_up,
)

INK = 0
PAPER = 255


def _radial_sq(n: int) -> np.ndarray:
    """Squared distance to the canvas center; exactly rot90-invariant."""
    c = (n - 1) / 2.0
    yy, xx = np.ogrid[0:n, 0:n]
    return (yy - c) ** 2 + (xx - c) ** 2


def _to_raster(ink: np.ndarray) -> np.ndarray:
    return np.where(ink, INK, PAPER).astype(np.uint8)


def _crop_to_ink(raster: np.ndarray) -> np.ndarray:
    ys, xs = np.nonzero(raster < PAPER)
    return raster[ys.min() : ys.max() + 1, xs.min() : xs.max() + 1].copy()


def _hook() -> np.ndarray:
    # U shape: thin walls and base, open at the top
    ink = np.zeros((48, 48), dtype=bool)
    ink[:, 0:9] = True
    ink[:, 39:48] = True
    ink[39:48, :] = True
    return _to_raster(ink)


def _undercut() -> np.ndarray:
    # solid block with a recess bitten out of the top-right corner
    ink = np.ones((48, 48), dtype=bool)
    ink[0:30, 18:48] = False
    return _to_raster(ink)


def _boss() -> np.ndarray:
    # two concentric rings, hollow center
    d2 = _radial_sq(48)
    ink = ((d2 <= 23.5**2) & (d2 >= 19.0**2)) | ((d2 <= 11.0**2) & (d2 >= 7.5**2))
    return _to_raster(ink)


def _embo() -> np.ndarray:
    # plain filled disc
    d2 = _radial_sq(40)
    return _to_raster(d2 <= 18.5**2)


def _embo_burring() -> np.ndarray:
    # single ring with a filled center dot
    d2 = _radial_sq(44)
    ink = ((d2 <= 21.5**2) & (d2 >= 16.0**2)) | (d2 <= 6.5**2)
    return _to_raster(ink)


def _embo_screwless() -> np.ndarray:
    # ring with a solid tab sticking out to the right
    h, w = 44, 58
    d2 = _radial_sq(44)
    ink = np.zeros((h, w), dtype=bool)
    ink[:, :44] = (d2 <= 19.5**2) & (d2 >= 13.5**2)
    ink[16:28, 38:58] = True
    return _to_raster(ink)


def _dps() -> np.ndarray:
    # wide bar with centered notches cut from the top and bottom edges;
    # pixel-identical under 180 degrees, distinct under 90
    h, w = 18, 64
    ink = np.ones((h, w), dtype=bool)
    ink[0:6, 26:38] = False
    ink[12:18, 26:38] = False
    return _to_raster(ink)


_GLYPH_BUILDERS = {
    "Hook": _hook,
    "Boss": _boss,
    "Undercut": _undercut,
    "DPS": _dps,
    "EmboScrewless": _embo_screwless,
    "EmboBurring": _embo_burring,
    "Embo": _embo,
}


@dataclass(frozen=True)
class GlyphLibrary:
    """Base raster per category; rotations are exact np.rot90 turns."""

    base: dict[str, np.ndarray]

    def render(self, cat: PartCategory | str, rotation: int = 0) -> np.ndarray:
        name = cat if isinstance(cat, str) else cat.name
        if rotation % 90 != 0:
            raise ValueError(f"rotation must be a multiple of 90, got {rotation}")
        return np.rot90(self.base[name], (rotation % 360) // 90).copy()

    def nominal_size(self, name: str) -> tuple[int, int]:
        h, w = self.base[name].shape
        return (w, h)


def default_library() -> GlyphLibrary:
    return GlyphLibrary(base={name: _crop_to_ink(fn()) for name, fn in _GLYPH_BUILDERS.items()})


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for one synthetic drawing (desk scale by default)."""

    seed: int = 0
    width: int = 4000
    height: int = 2400
    parts: int = 25
    category_mix: tuple[tuple[str, float], ...] | None = None  # None = uniform, all 7
    min_separation: int = 24
    margin: int = 24
    clutter: bool = True
    clutter_lines: int = 12
    max_attempts: int = 200

    def mix(self) -> tuple[list[str], np.ndarray]:
        pairs = self.category_mix or tuple((c.name, 1.0) for c in CATEGORIES)
        names = [name for name, weight in pairs if weight > 0]
        weights = np.array([w for _, w in pairs if w > 0], dtype=np.float64)
        if not names:
            raise ValueError("category_mix selects no categories")
        for name in names:
            category(name)  # raises on unknown names
        return names, weights / weights.sum()


def _draw_clutter(canvas: np.ndarray, cfg: SynthConfig, rng: np.random.Generator) -> None:
    h, w = canvas.shape
    # border frame
    canvas[8:10, 8 : w - 8] = INK
    canvas[h - 10 : h - 8, 8 : w - 8] = INK
    canvas[8 : h - 8, 8:10] = INK
    canvas[8 : h - 8, w - 10 : w - 8] = INK
    # sparse dimension-line strokes
    for _ in range(cfg.clutter_lines):
        thickness = int(rng.integers(1, 3))
        if rng.random() < 0.5:
            y = int(rng.integers(cfg.margin, h - cfg.margin))
            x0 = int(rng.integers(12, w // 2))
            x1 = int(rng.integers(x0 + 50, min(x0 + w // 2, w - 12) + 1))
            canvas[y : y + thickness, x0:x1] = INK
        else:
            x = int(rng.integers(cfg.margin, w - cfg.margin))
            y0 = int(rng.integers(12, h // 2))
            y1 = int(rng.integers(y0 + 50, min(y0 + h // 2, h - 12) + 1))
            canvas[y0:y1, x : x + thickness] = INK


def _conflicts(
    box: tuple[int, int, int, int], placed: list[tuple[int, int, int, int]], gap: int
) -> bool:
    x, y, w, h = box
    for px, py, pw, ph in placed:
        if x < px + pw + gap and px < x + w + gap and y < py + ph + gap and py < y + h + gap:
            return True
    return False


def generate_drawing(
    library: GlyphLibrary, cfg: SynthConfig, drawing_id: str = "synthetic"
) -> tuple[DrawingImage, list[Annotation]]:
    """Render one seeded drawing; annotations exactly match blit rectangles."""
    rng = np.random.default_rng(cfg.seed)
    canvas = np.full((cfg.height, cfg.width), PAPER, dtype=np.uint8)
    names, probs = cfg.mix()
    for name in names:
        gw, gh = library.nominal_size(name)
        if cfg.width < gw + 2 * cfg.margin or cfg.height < gh + 2 * cfg.margin:
            raise ValueError(
                f"drawing {cfg.width}x{cfg.height} too small for {name} glyph plus margins"
            )
    if cfg.clutter:
        _draw_clutter(canvas, cfg, rng)
    placed: list[tuple[int, int, int, int]] = []
    annotations: list[Annotation] = []
    for _ in range(cfg.parts):
        cat = category(names[int(rng.choice(len(names), p=probs))])
        rotation = int(rng.choice(sorted(cat.rotation_group)))
        glyph = library.render(cat, rotation)
        gh, gw = glyph.shape
        for _attempt in range(cfg.max_attempts):
            x = int(rng.integers(cfg.margin, cfg.width - gw - cfg.margin + 1))
            y = int(rng.integers(cfg.margin, cfg.height - gh - cfg.margin + 1))
            if _conflicts((x, y, gw, gh), placed, cfg.min_separation):
                continue
            canvas[y : y + gh, x : x + gw] = glyph
            placed.append((x, y, gw, gh))
            annotations.append(
                Annotation(
                    image_id=drawing_id,
                    box=PixelBox(x, y, gw, gh),
                    category=cat,
                    rotation=rotation,
                )
            )
            break
        else:
            raise PlacementError(cfg.parts, len(annotations))
    return DrawingImage(id=drawing_id, pixels=canvas), annotations


def generate_dataset(
    library: GlyphLibrary,
    base: SynthConfig,
    count: int,
    out_dir: Path,
    id_prefix: str = "drawing",
    train_fraction: float = 0.75,
) -> tuple[formats.Dataset, dict]:
    """Generate count drawings plus dataset and split-manifest files."""
    out_dir = Path(out_dir)
    dataset = formats.Dataset()
    for i in range(count):
        drawing_id = f"{id_prefix}_{i:04d}"
        cfg = dataclasses.replace(base, seed=base.seed + i)
        image, annotations = generate_drawing(library, cfg, drawing_id=drawing_id)
        file_name = f"images/{drawing_id}.png"
        formats.save_image(image.pixels, out_dir / file_name)
        dataset.images.append(
            formats.ImageRecord(
                id=drawing_id,
                file_name=file_name,
                width=image.width,
                height=image.height,
            )
        )
        dataset.annotations.extend(annotations)
    formats.save_dataset(dataset, out_dir / "dataset.json")
    ids = [rec.id for rec in dataset.images]
    n_train = min(count, round_half_up(count * train_fraction))
    manifest = {
        "seed": base.seed,
        "count": count,
        "train_fraction": round(train_fraction, 6),
        "train": ids[:n_train],
        "test": ids[n_train:],
        "drawing": {
            "width": base.width,
            "height": base.height,
            "parts": base.parts,
            "clutter": base.clutter,
        },
    }
    formats.atomic_write_text(out_dir / "manifest.json", formats.canonical_dumps(manifest))
    return dataset, manifest


def export_template_bank(
    library: GlyphLibrary,
    family: Family,
    tau: float = 0.8,
    stride: int = 1,
) -> TemplateBank:
    """Bank with one template per (rotation-variant category, rotation) and
    one per symmetric category; rendered by the same glyph code the
    generator blits, so clean renders match at correlation exactly 1."""
    templates = {}
    for cat in CATEGORIES:
        if cat.family is not family:
            continue
        for rotation in sorted(cat.rotation_group):
            templates[(cat.name, rotation)] = library.render(cat, rotation)
    return TemplateBank(family=family, templates=templates, tau=tau, stride=stride)
