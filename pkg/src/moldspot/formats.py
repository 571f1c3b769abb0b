"""Dataset and results files: canonical JSON, schema validation, image IO.

Canonical form: UTF-8, sorted keys, 2-space indent, trailing newline, box
coordinates rounded to 4 decimals and scores to 6. Writing the same document
twice yields identical bytes, which the golden tests rely on.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np
from PIL import Image

from .errors import DataError
from .model import (
    CATEGORIES,
    Annotation,
    Detection,
    PixelBox,
    category_by_id,
)

_ROTATIONS = [0, 90, 180, 270]

DATASET_SCHEMA = {
    "type": "object",
    "required": ["images", "categories", "annotations"],
    "properties": {
        "images": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "file_name", "width", "height"],
                "properties": {
                    "id": {"type": "string", "minLength": 1},
                    "file_name": {"type": "string", "minLength": 1},
                    "width": {"type": "integer", "minimum": 1},
                    "height": {"type": "integer", "minimum": 1},
                    "origin": {
                        "type": "array",
                        "items": {"type": "integer"},
                        "minItems": 2,
                        "maxItems": 2,
                    },
                    "source_image_id": {"type": "string"},
                    "source_tile_index": {"type": "integer", "minimum": 0},
                },
                "additionalProperties": False,
            },
        },
        "categories": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "name", "family", "rotation_group"],
                "properties": {
                    "id": {"type": "integer"},
                    "name": {"type": "string"},
                    "family": {"enum": ["injection", "press"]},
                    "rotation_group": {
                        "type": "array",
                        "items": {"enum": _ROTATIONS},
                        "minItems": 1,
                    },
                },
                "additionalProperties": False,
            },
        },
        "annotations": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "image_id", "category_id", "bbox", "rotation"],
                "properties": {
                    "id": {"type": "integer"},
                    "image_id": {"type": "string"},
                    "category_id": {"type": "integer"},
                    "bbox": {
                        "type": "array",
                        "items": {"type": "number"},
                        "minItems": 4,
                        "maxItems": 4,
                    },
                    "rotation": {"enum": _ROTATIONS},
                },
                "additionalProperties": False,
            },
        },
    },
    "additionalProperties": False,
}

RESULTS_SCHEMA = {
    "type": "object",
    "required": ["meta", "detections", "tile_failures", "merge_stats"],
    "properties": {
        "meta": {
            "type": "object",
            "required": ["tool", "family", "seed", "config_hash"],
            "properties": {
                "tool": {"type": "string"},
                "family": {"enum": ["injection", "press"]},
                "seed": {"type": "integer"},
                "config_hash": {"type": "string"},
                "created_at": {"type": "string"},
            },
            "additionalProperties": False,
        },
        "detections": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["image_id", "category_id", "bbox", "score"],
                "properties": {
                    "image_id": {"type": "string"},
                    "category_id": {"type": "integer"},
                    "bbox": {
                        "type": "array",
                        "items": {"type": "number"},
                        "minItems": 4,
                        "maxItems": 4,
                    },
                    "score": {"type": "number", "minimum": 0, "maximum": 1},
                    "rotation": {"anyOf": [{"enum": _ROTATIONS}, {"type": "null"}]},
                    "source_tile": {
                        "anyOf": [{"type": "integer", "minimum": 0}, {"type": "null"}]
                    },
                },
                "additionalProperties": False,
            },
        },
        "tile_failures": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["image_id", "tile_index", "error"],
                "properties": {
                    "image_id": {"type": "string"},
                    "tile_index": {"type": "integer", "minimum": 0},
                    "error": {"type": "string"},
                },
                "additionalProperties": False,
            },
        },
        "merge_stats": {
            "type": "object",
            "required": ["pre_nms", "post_nms"],
            "properties": {
                "pre_nms": {"type": "integer", "minimum": 0},
                "post_nms": {"type": "integer", "minimum": 0},
                "per_image": {"type": "object"},
            },
            "additionalProperties": False,
        },
        "orientation_stats": {"type": "object"},
        "eval": {"type": "object"},
    },
    "additionalProperties": False,
}


@dataclass
class ImageRecord:
    """One entry of a dataset's image table; extras carry tile provenance."""

    id: str
    file_name: str
    width: int
    height: int
    origin: tuple[int, int] | None = None
    source_image_id: str | None = None
    source_tile_index: int | None = None


@dataclass
class Dataset:
    """In-memory dataset: image table plus annotations in image coordinates."""

    images: list[ImageRecord] = field(default_factory=list)
    annotations: list[Annotation] = field(default_factory=list)

    def image(self, image_id: str) -> ImageRecord:
        for rec in self.images:
            if rec.id == image_id:
                return rec
        raise KeyError(image_id)

    def annotations_for(self, image_id: str) -> list[Annotation]:
        return [a for a in self.annotations if a.image_id == image_id]


def round4(v: float) -> float:
    return round(float(v), 4)


def round6(v: float) -> float:
    return round(float(v), 6)


def canonical_dumps(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def atomic_write_text(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _schema_errors(doc: dict, schema: dict) -> list[str]:
    validator = jsonschema.Draft202012Validator(schema)
    errors = []
    for err in sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path)):
        loc = "$" + "".join(
            f"[{p}]" if isinstance(p, int) else f".{p}" for p in err.absolute_path
        )
        errors.append(f"{loc}: {err.message}")
    return errors


def canonical_categories_doc() -> list[dict]:
    return [
        {
            "id": c.id,
            "name": c.name,
            "family": c.family.value,
            "rotation_group": sorted(c.rotation_group),
        }
        for c in CATEGORIES
    ]


def dataset_to_doc(dataset: Dataset) -> dict:
    images = []
    for rec in sorted(dataset.images, key=lambda r: r.id):
        entry: dict = {
            "id": rec.id,
            "file_name": rec.file_name,
            "width": rec.width,
            "height": rec.height,
        }
        if rec.origin is not None:
            entry["origin"] = [int(rec.origin[0]), int(rec.origin[1])]
        if rec.source_image_id is not None:
            entry["source_image_id"] = rec.source_image_id
        if rec.source_tile_index is not None:
            entry["source_tile_index"] = rec.source_tile_index
        images.append(entry)
    annotations = [
        {
            "id": i + 1,
            "image_id": a.image_id,
            "category_id": a.category.id,
            "bbox": [round4(v) for v in a.box.as_xywh()],
            "rotation": a.rotation,
        }
        for i, a in enumerate(dataset.annotations)
    ]
    return {
        "images": images,
        "categories": canonical_categories_doc(),
        "annotations": annotations,
    }


def _check_dataset_integrity(doc: dict) -> list[str]:
    problems: list[str] = []
    known = {c.id: c for c in CATEGORIES}
    for cat in doc["categories"]:
        ref = known.get(cat["id"])
        if ref is None:
            problems.append(f"category id {cat['id']}: not part of the taxonomy")
            continue
        if cat["name"] != ref.name or cat["family"] != ref.family.value:
            problems.append(f"category id {cat['id']}: name/family mismatch with taxonomy")
        if sorted(cat["rotation_group"]) != sorted(ref.rotation_group):
            problems.append(f"category id {cat['id']}: rotation_group mismatch")
    images = {}
    for img in doc["images"]:
        if img["id"] in images:
            problems.append(f"image id {img['id']!r}: duplicate")
        images[img["id"]] = img
    declared = {c["id"] for c in doc["categories"]}
    for ann in doc["annotations"]:
        label = f"annotation {ann['id']}"
        img = images.get(ann["image_id"])
        if img is None:
            problems.append(f"{label}: image_id {ann['image_id']!r} not found")
            continue
        if ann["category_id"] not in declared:
            problems.append(f"{label}: category_id {ann['category_id']} not declared")
            continue
        cat = known.get(ann["category_id"])
        if cat is None:
            continue
        x, y, w, h = ann["bbox"]
        if w <= 0 or h <= 0:
            problems.append(f"{label}: degenerate bbox {ann['bbox']}")
        elif x < 0 or y < 0 or x + w > img["width"] + 1e-6 or y + h > img["height"] + 1e-6:
            problems.append(f"{label}: bbox {ann['bbox']} outside image bounds")
        if ann["rotation"] not in cat.rotation_group:
            problems.append(
                f"{label}: rotation {ann['rotation']} not in {cat.name} group"
            )
    return problems


def dataset_from_doc(doc: dict) -> Dataset:
    errors = _schema_errors(doc, DATASET_SCHEMA)
    if errors:
        raise DataError("dataset schema violations", errors)
    errors = _check_dataset_integrity(doc)
    if errors:
        raise DataError("dataset integrity violations", errors)
    images = [
        ImageRecord(
            id=img["id"],
            file_name=img["file_name"],
            width=img["width"],
            height=img["height"],
            origin=tuple(img["origin"]) if "origin" in img else None,
            source_image_id=img.get("source_image_id"),
            source_tile_index=img.get("source_tile_index"),
        )
        for img in doc["images"]
    ]
    annotations = [
        Annotation(
            image_id=ann["image_id"],
            box=PixelBox(*ann["bbox"]),
            category=category_by_id(ann["category_id"]),
            rotation=ann["rotation"],
        )
        for ann in sorted(doc["annotations"], key=lambda a: a["id"])
    ]
    return Dataset(images=images, annotations=annotations)


def load_dataset(path: Path) -> Dataset:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not valid JSON: {exc}") from exc
    return dataset_from_doc(doc)


def save_dataset(dataset: Dataset, path: Path) -> None:
    doc = dataset_to_doc(dataset)
    problems = _schema_errors(doc, DATASET_SCHEMA) + _check_dataset_integrity(doc)
    if problems:  # self-check: never write an invalid file
        raise DataError("refusing to write invalid dataset", problems)
    atomic_write_text(Path(path), canonical_dumps(doc))


def detection_to_doc(image_id: str, det: Detection) -> dict:
    return {
        "image_id": image_id,
        "category_id": det.category.id,
        "bbox": [round4(v) for v in det.box.as_xywh()],
        "score": round6(det.score),
        "rotation": det.rotation,
        "source_tile": det.source_tile,
    }


def detections_from_results(doc: dict) -> dict[str, list[Detection]]:
    """Group a results document's detections by image id."""
    by_image: dict[str, list[Detection]] = {}
    for entry in doc["detections"]:
        det = Detection(
            box=PixelBox(*entry["bbox"]),
            category=category_by_id(entry["category_id"]),
            score=entry["score"],
            rotation=entry.get("rotation"),
            source_tile=entry.get("source_tile"),
        )
        by_image.setdefault(entry["image_id"], []).append(det)
    return by_image


def validate_results_doc(doc: dict) -> None:
    errors = _schema_errors(doc, RESULTS_SCHEMA)
    if errors:
        raise DataError("results schema violations", errors)
    for entry in doc["detections"]:
        cat = None
        try:
            cat = category_by_id(entry["category_id"])
        except KeyError:
            errors.append(f"detection: unknown category_id {entry['category_id']}")
        rot = entry.get("rotation")
        if cat is not None and rot is not None and rot not in cat.rotation_group:
            errors.append(
                f"detection: rotation {rot} not in {cat.name} group"
            )
    if errors:
        raise DataError("results integrity violations", errors)


def load_results(path: Path) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not valid JSON: {exc}") from exc
    validate_results_doc(doc)
    return doc


def save_results(doc: dict, path: Path) -> None:
    validate_results_doc(doc)
    atomic_write_text(Path(path), canonical_dumps(doc))


def load_image(path: Path) -> np.ndarray:
    """Read a PNG as uint8 grayscale (H, W) or RGB (H, W, 3)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"image file not found: {path}")
    with Image.open(path) as img:
        if img.mode not in ("L", "RGB"):
            img = img.convert("RGB" if img.mode in ("RGBA", "P", "CMYK") else "L")
        return np.asarray(img, dtype=np.uint8).copy()


def save_image(pixels: np.ndarray, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "L" if pixels.ndim == 2 else "RGB"
    Image.fromarray(pixels, mode=mode).save(path, format="PNG")
