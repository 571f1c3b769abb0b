"""Detector backends: ground-truth oracle, NCC template matcher, external bridge.

Every backend honors the same contract: tile raster in, tile-local scored
detections out, deterministic for a fixed configuration. Outputs are
validated centrally in detect_tiles, never trusted.
"""

from __future__ import annotations

import base64
import queue
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import cv2
import numpy as np

from .bridge import LineBridge
from .errors import BridgeError, MoldspotError
from .model import (
    EPS,
    Annotation,
    Detection,
    DrawingImage,
    Family,
    PartCategory,
    PixelBox,
    category,
    family_categories,
    iou,
    visible_fraction,
)
from .tiler import Tile, TilePlan, extract_tile


class DetectionValidationError(MoldspotError):
    """A backend emitted something outside the detector contract."""


@dataclass(frozen=True)
class TileFailure:
    tile_index: int
    error: str


def to_gray(pixels: np.ndarray) -> np.ndarray:
    if pixels.ndim == 3:
        return cv2.cvtColor(pixels, cv2.COLOR_RGB2GRAY)
    return pixels


def ncc_score(window: np.ndarray, template: np.ndarray) -> float:
    """Zero-mean, unit-variance correlation of two equal-shaped patches.

    Patches with zero variance on either side score 0 by definition, which
    keeps blank paper regions out of the peak lists.
    """
    if window.shape != template.shape:
        raise ValueError(f"shape mismatch {window.shape} vs {template.shape}")
    w = window.astype(np.float64)
    t = template.astype(np.float64)
    wz = w - w.mean()
    tz = t - t.mean()
    wn = float((wz * wz).sum())
    tn = float((tz * tz).sum())
    if wn <= 0.0 or tn <= 0.0:
        return 0.0
    return float((wz * tz).sum() / np.sqrt(wn * tn))


@dataclass(frozen=True)
class NoiseConfig:
    """Deterministic perturbation of oracle output (all off by default)."""

    jitter_sigma: float = 0.0
    drop_rate: float = 0.0
    false_positive_rate: float = 0.0
    seed: int = 0

    @property
    def enabled(self) -> bool:
        return self.jitter_sigma > 0 or self.drop_rate > 0 or self.false_positive_rate > 0


class OracleDetector:
    """Emits one score-1.0 detection per fully visible ground-truth part.

    With zero noise the merged pipeline output reproduces ground truth
    exactly, which is what makes plumbing failures attributable.
    """

    name = "oracle"
    needs_pixels = False
    parallel_safe = True

    def __init__(
        self,
        annotations_by_image: dict[str, list[Annotation]],
        family: Family,
        noise: NoiseConfig = NoiseConfig(),
    ):
        self.family = family
        self.noise = noise
        self._annotations = {
            image_id: [a for a in anns if a.category.family is family]
            for image_id, anns in annotations_by_image.items()
        }

    def _rng(self, image_id: str, tile_index: int) -> np.random.Generator:
        # keyed per tile so results are independent of processing order
        return np.random.default_rng(
            [self.noise.seed, zlib.crc32(image_id.encode()), tile_index]
        )

    def detect(self, pixels: np.ndarray | None, tile: Tile, image_id: str) -> list[Detection]:
        anns = self._annotations.get(image_id, [])
        rng = self._rng(image_id, tile.index) if self.noise.enabled else None
        out: list[Detection] = []
        window = tile.box
        for ann in anns:
            if visible_fraction(ann.box, window) < 1.0 - EPS:
                continue
            if rng is not None and self.noise.drop_rate > 0:
                if rng.random() < self.noise.drop_rate:
                    continue
            box = ann.box.shift(-tile.x0, -tile.y0)
            if rng is not None and self.noise.jitter_sigma > 0:
                dx, dy, dw, dh = rng.normal(0.0, self.noise.jitter_sigma, 4)
                x = min(max(box.x + dx, 0.0), tile.w - 1.0)
                y = min(max(box.y + dy, 0.0), tile.h - 1.0)
                w = min(max(box.w + dw, 1.0), tile.w - x)
                h = min(max(box.h + dh, 1.0), tile.h - y)
                box = PixelBox(x, y, w, h)
            out.append(Detection(box=box, category=ann.category, score=1.0))
        if rng is not None and self.noise.false_positive_rate > 0:
            cats = family_categories(self.family)
            for _ in range(rng.poisson(self.noise.false_positive_rate)):
                w = float(rng.uniform(16, min(96, tile.w)))
                h = float(rng.uniform(16, min(96, tile.h)))
                x = float(rng.uniform(0, tile.w - w))
                y = float(rng.uniform(0, tile.h - h))
                cat = cats[int(rng.integers(len(cats)))]
                out.append(
                    Detection(
                        box=PixelBox(x, y, w, h),
                        category=cat,
                        score=float(rng.uniform(0.1, 0.9)),
                    )
                )
        return out


@dataclass
class TemplateBank:
    """Per (category, rotation) reference rasters for the NCC matcher."""

    family: Family
    templates: dict[tuple[str, int], np.ndarray]
    tau: float = 0.8
    stride: int = 1
    peak_iou: float = 0.3

    def __post_init__(self) -> None:
        if not (0.0 < self.tau <= 1.0):
            raise ValueError(f"tau must be in (0, 1], got {self.tau}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        for cat in family_categories(self.family):
            have = {r for (name, r) in self.templates if name == cat.name}
            if have != set(cat.rotation_group):
                raise ValueError(
                    f"{cat.name}: templates for rotations {sorted(have)}, "
                    f"need {sorted(cat.rotation_group)}"
                )
            base = self.templates[(cat.name, 0)]
            for r in sorted(cat.rotation_group):
                tmpl = self.templates[(cat.name, r)]
                if tmpl.dtype != np.uint8 or tmpl.ndim != 2:
                    raise ValueError(f"template ({cat.name}, {r}) must be 2D uint8")
                if not np.array_equal(np.rot90(base, r // 90), tmpl):
                    raise ValueError(
                        f"template ({cat.name}, {r}) is not the exact rotation of its base"
                    )

    def categories(self) -> tuple[PartCategory, ...]:
        return family_categories(self.family)


# Margin below tau for the fast correlation scan; exact rescoring decides.
_SCAN_SLACK = 0.02


class TemplateDetector:
    """Deterministic detector: NCC sweep per template, exact rescoring at peaks,
    then per-category local-maximum suppression inside the tile."""

    name = "template"
    needs_pixels = True
    parallel_safe = True

    def __init__(self, bank: TemplateBank):
        self.bank = bank
        self.family = bank.family

    def detect(self, pixels: np.ndarray | None, tile: Tile, image_id: str) -> list[Detection]:
        assert pixels is not None
        gray = to_gray(pixels)
        gray32 = gray.astype(np.float32)
        raw: list[tuple[float, int, int, int, int, str]] = []
        for (name, rot), tmpl in sorted(self.bank.templates.items()):
            th, tw = tmpl.shape
            if th > gray.shape[0] or tw > gray.shape[1]:
                continue  # template cannot fit this tile
            ncc_map = cv2.matchTemplate(gray32, tmpl.astype(np.float32), cv2.TM_CCOEFF_NORMED)
            ncc_map = np.nan_to_num(ncc_map, nan=-1.0, posinf=-1.0, neginf=-1.0)
            if self.bank.stride > 1:
                keep = np.zeros_like(ncc_map, dtype=bool)
                keep[:: self.bank.stride, :: self.bank.stride] = True
                ncc_map = np.where(keep, ncc_map, -1.0)
            for y, x in np.argwhere(ncc_map >= self.bank.tau - _SCAN_SLACK):
                score = ncc_score(gray[y : y + th, x : x + tw], tmpl)
                if score >= self.bank.tau:
                    raw.append((score, int(x), int(y), tw, th, name))
        return self._reduce_peaks(raw)

    def _reduce_peaks(self, raw: list[tuple[float, int, int, int, int, str]]) -> list[Detection]:
        raw.sort(key=lambda r: (-r[0], r[1], r[2], r[3], r[4], r[5]))
        kept: list[Detection] = []
        for score, x, y, w, h, name in raw:
            box = PixelBox(x, y, w, h)
            if any(
                d.category.name == name and iou(d.box, box) >= self.bank.peak_iou
                for d in kept
            ):
                continue
            kept.append(Detection(box=box, category=category(name), score=min(score, 1.0)))
        return kept


class ExternalDetector:
    """Bridges tiles to an external detector process (the real-model plug-in).

    Single-flight per child process; a pool_size above 1 spawns that many
    children and lets tiles run concurrently, one request in flight each.
    """

    name = "external"
    needs_pixels = True

    def __init__(
        self, cmd: list[str], family: Family, timeout: float = 10.0, pool_size: int = 1
    ):
        if pool_size < 1:
            raise ValueError(f"pool_size must be >= 1, got {pool_size}")
        self.family = family
        self.parallel_safe = pool_size > 1
        self._pool: queue.Queue[LineBridge] = queue.Queue()
        for _ in range(pool_size):
            self._pool.put(LineBridge(cmd, timeout=timeout))

    def detect(self, pixels: np.ndarray | None, tile: Tile, image_id: str) -> list[Detection]:
        assert pixels is not None
        gray = to_gray(pixels)
        bridge = self._pool.get()
        try:
            response = bridge.request(
                {
                    "width": int(gray.shape[1]),
                    "height": int(gray.shape[0]),
                    "pixels_b64": base64.b64encode(gray.tobytes()).decode("ascii"),
                }
            )
        finally:
            self._pool.put(bridge)
        entries = response.get("detections")
        if not isinstance(entries, list):
            raise DetectionValidationError(f"missing detections list in {response!r}")
        allowed = {c.name for c in family_categories(self.family)}
        out = []
        for entry in entries:
            try:
                name = entry["category"]
                if name not in allowed:
                    raise DetectionValidationError(
                        f"category {name!r} outside {self.family.value} family"
                    )
                det = Detection(
                    box=PixelBox(
                        float(entry["x"]), float(entry["y"]),
                        float(entry["w"]), float(entry["h"]),
                    ),
                    category=category(name),
                    score=float(entry["score"]),
                )
            except DetectionValidationError:
                raise
            except (KeyError, TypeError, ValueError) as exc:
                raise DetectionValidationError(f"bad detection entry {entry!r}: {exc}") from exc
            out.append(det)
        return out

    def close(self) -> None:
        while not self._pool.empty():
            self._pool.get_nowait().close()


def validate_detections(dets: list[Detection], tile: Tile, allowed: set[str]) -> None:
    for det in dets:
        if det.category.name not in allowed:
            raise DetectionValidationError(
                f"category {det.category.name} not declared by this backend"
            )
        if not det.box.within(tile.w, tile.h):
            raise DetectionValidationError(
                f"box {det.box.as_xywh()} outside tile {tile.w}x{tile.h}"
            )


@dataclass
class TileResults:
    """Per-tile detections (keyed by tile index) plus isolated failures."""

    by_tile: list[tuple[int, list[Detection]]] = field(default_factory=list)
    failures: list[TileFailure] = field(default_factory=list)


def detect_tiles(
    plan: TilePlan, image: DrawingImage, backend, workers: int = 1
) -> TileResults:
    """Run a backend over every tile of a plan.

    Results are keyed and sorted by tile index, so the content is identical
    no matter how many workers ran or in what order tiles finished.
    """
    allowed = {c.name for c in family_categories(backend.family)}

    def run_one(tile: Tile) -> tuple[int, list[Detection] | None, str | None]:
        pixels = extract_tile(image, tile) if backend.needs_pixels else None
        try:
            dets = backend.detect(pixels, tile, image.id)
            validate_detections(dets, tile, allowed)
        except (BridgeError, DetectionValidationError) as exc:
            return tile.index, None, str(exc)
        stamped = [
            replace(d, source_tile=tile.index) if d.source_tile is None else d
            for d in dets
        ]
        return tile.index, stamped, None

    if workers > 1 and backend.parallel_safe:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run_one, plan.tiles))
    else:
        rows = [run_one(tile) for tile in plan.tiles]

    results = TileResults()
    for index, dets, error in sorted(rows, key=lambda r: r[0]):
        if error is not None:
            results.failures.append(TileFailure(tile_index=index, error=error))
        else:
            assert dets is not None
            results.by_tile.append((index, dets))
    return results
