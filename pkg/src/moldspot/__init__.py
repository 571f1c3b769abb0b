"""moldspot: mold-part detection in very large 2D engineering drawings.

Tiles gigantic rasters into overlapping crop windows, runs a pluggable
detector per tile, merges tile-local results back into drawing coordinates
with deterministic NMS, classifies part orientation with symmetry-aware
label spaces, and scores everything with an AP/AR/accuracy harness. A
seeded synthetic generator provides oracle-verified test data.
"""

__version__ = "0.1.0"

from .errors import (
    BridgeError,
    ConfigError,
    DataError,
    MoldspotError,
    PlacementError,
)
from .model import (
    CATEGORIES,
    Annotation,
    Detection,
    DrawingImage,
    Family,
    PartCategory,
    PixelBox,
    category,
    category_by_id,
    family_categories,
    iou,
    to_global,
    to_local,
    visible_fraction,
)

__all__ = [
    "__version__",
    "Annotation",
    "BridgeError",
    "CATEGORIES",
    "ConfigError",
    "DataError",
    "Detection",
    "DrawingImage",
    "Family",
    "MoldspotError",
    "PartCategory",
    "PixelBox",
    "PlacementError",
    "category",
    "category_by_id",
    "family_categories",
    "iou",
    "to_global",
    "to_local",
    "visible_fraction",
]
