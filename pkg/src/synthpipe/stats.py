"""Per-category layout statistics fitted from a reference dataset.

The layout adjustment step blends each instance's size toward the width and
aspect-ratio distribution of real boxes of the same category. Fitting reads
standard COCO instance annotations, normalizes every box by its own image's
dimensions, and keeps a normal fit (mean + population std) per category.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

logger = logging.getLogger(__name__)

# Number of draws averaged per empirical sample; the mean of this many
# normal draws is what the size adjustment blends against.
EMPIRICAL_DRAWS = 100

# Lower clamp for sampled widths/aspects so degenerate draws stay usable.
SAMPLE_FLOOR = 0.01

# Stand-in entry for categories missing from the fitted table.
DEFAULT_CATEGORY = "__default__"


class AnnotationParseError(ValueError):
    """Raised when a reference annotation file is malformed."""


@dataclass(frozen=True)
class CategoryStats:
    """Normal fit of one category's normalized box widths and aspect ratios."""

    category: str
    width_mean: float
    width_std: float
    aspect_mean: float
    aspect_std: float
    sample_count: int

    def __post_init__(self):
        if not self.category:
            raise ValueError("category name must be non-empty")
        if not (0 < self.width_mean <= 1):
            raise ValueError(f"width_mean out of (0,1]: {self.width_mean}")
        if self.aspect_mean <= 0:
            raise ValueError(f"aspect_mean must be positive: {self.aspect_mean}")
        if self.width_std < 0 or self.aspect_std < 0:
            raise ValueError("standard deviations must be nonnegative")
        if self.sample_count < 1:
            raise ValueError("sample_count must be at least 1")
        if self.sample_count < 2 and (self.width_std != 0 or self.aspect_std != 0):
            raise ValueError("single-sample stats must have zero std")


def default_category_stats() -> CategoryStats:
    """Fallback entry used when a requested category was never fitted."""
    return CategoryStats(
        category=DEFAULT_CATEGORY,
        width_mean=0.25,
        width_std=0.08,
        aspect_mean=1.2,
        aspect_std=0.4,
        sample_count=2,
    )


@dataclass
class StatsTable:
    """Fitted stats for every category found in one reference dataset."""

    entries: dict[str, CategoryStats] = field(default_factory=dict)
    source: str = ""
    rejected_records: int = 0

    def __post_init__(self):
        for name in self.entries:
            if not name:
                raise ValueError("category names must be non-empty")

    def get(self, category: str) -> CategoryStats | None:
        found = self.entries.get(category)
        if found is None:
            found = self.entries.get(category.lower())
        return found

    def get_or_default(self, category: str) -> CategoryStats:
        return self.get(category) or default_category_stats()

    def __contains__(self, category: str) -> bool:
        return self.get(category) is not None

    def __len__(self) -> int:
        return len(self.entries)


def parse_coco_annotations(path: str | Path) -> dict:
    """Load a COCO instance-annotation file, checking the pieces fitting needs.

    Raises:
        AnnotationParseError: file is not valid JSON or a required record
            field is missing; the message names the offending record.
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise AnnotationParseError(f"cannot parse {path}: {exc}") from exc
    for key in ("images", "annotations", "categories"):
        if key not in data or not isinstance(data[key], list):
            raise AnnotationParseError(f"{path}: missing or non-list '{key}' section")
    for img in data["images"]:
        for field_name in ("id", "width", "height"):
            if field_name not in img:
                raise AnnotationParseError(f"image record missing '{field_name}': {img}")
    for ann in data["annotations"]:
        for field_name in ("image_id", "category_id", "bbox"):
            if field_name not in ann:
                raise AnnotationParseError(f"annotation record missing '{field_name}': {ann}")
        if len(ann["bbox"]) != 4:
            raise AnnotationParseError(f"annotation bbox must have 4 values: {ann}")
    for cat in data["categories"]:
        for field_name in ("id", "name"):
            if field_name not in cat:
                raise AnnotationParseError(f"category record missing '{field_name}': {cat}")
    return data


def _population_stats(values: list[float]) -> tuple[float, float]:
    mean = math.fsum(values) / len(values)
    var = math.fsum((v - mean) ** 2 for v in values) / len(values)
    return mean, math.sqrt(var)


def fit_category_stats(
    annotations: str | Path | dict,
    categories: Iterable[str] | None = None,
    source: str = "",
) -> StatsTable:
    """Fit per-category width/aspect normal distributions from COCO annotations.

    Boxes are normalized by their own image's width/height before fitting so
    images of mixed sizes can be combined. Records referencing an image with
    zero width or height, or with a non-positive box extent, are rejected and
    counted in the result's ``rejected_records``.

    Args:
        annotations: path to a COCO instance-annotation file, or the already
            parsed dict.
        categories: optional whitelist of category names to fit.
        source: dataset identifier stored on the table; defaults to the file
            path when one was given.
    """
    if isinstance(annotations, (str, Path)):
        source = source or str(annotations)
        data = parse_coco_annotations(annotations)
    else:
        data = annotations

    cat_names = {c["id"]: c["name"] for c in data["categories"]}
    image_dims = {img["id"]: (img["width"], img["height"]) for img in data["images"]}
    wanted = set(categories) if categories else None

    widths: dict[str, list[float]] = {}
    aspects: dict[str, list[float]] = {}
    rejected = 0
    for ann in data["annotations"]:
        name = cat_names.get(ann["category_id"])
        if name is None:
            raise AnnotationParseError(f"annotation references unknown category: {ann}")
        if wanted is not None and name not in wanted:
            continue
        dims = image_dims.get(ann["image_id"])
        if dims is None:
            raise AnnotationParseError(f"annotation references unknown image: {ann}")
        img_w, img_h = dims
        if img_w <= 0 or img_h <= 0:
            rejected += 1
            continue
        _, _, bw, bh = ann["bbox"]
        if bw <= 0 or bh <= 0:
            rejected += 1
            continue
        w = bw / img_w
        h = bh / img_h
        widths.setdefault(name, []).append(w)
        aspects.setdefault(name, []).append(h / w)

    if rejected:
        logger.warning("fit_category_stats: rejected %d degenerate records", rejected)

    entries = {}
    for name in widths:
        w_mean, w_std = _population_stats(widths[name])
        a_mean, a_std = _population_stats(aspects[name])
        n = len(widths[name])
        if n < 2:
            w_std = a_std = 0.0
        entries[name] = CategoryStats(
            category=name,
            width_mean=w_mean,
            width_std=w_std,
            aspect_mean=a_mean,
            aspect_std=a_std,
            sample_count=n,
        )
    return StatsTable(entries=entries, source=source, rejected_records=rejected)


def sample_empirical(stats: CategoryStats, rng: np.random.Generator) -> tuple[float, float]:
    """Draw a smoothed (width, aspect) pair from a category's fitted normals.

    Averages ``EMPIRICAL_DRAWS`` independent draws per quantity, so the
    returned values concentrate around the fitted means; each is clamped
    below at ``SAMPLE_FLOOR``.
    """
    width = float(np.mean(rng.normal(stats.width_mean, stats.width_std, EMPIRICAL_DRAWS)))
    aspect = float(np.mean(rng.normal(stats.aspect_mean, stats.aspect_std, EMPIRICAL_DRAWS)))
    return max(width, SAMPLE_FLOOR), max(aspect, SAMPLE_FLOOR)


def save_stats(table: StatsTable, path: str | Path) -> None:
    """Write a stats file; floats round-trip exactly through JSON."""
    doc = {
        "source": table.source,
        "rejected_records": table.rejected_records,
        "categories": {
            name: {
                "width_mean": s.width_mean,
                "width_std": s.width_std,
                "aspect_mean": s.aspect_mean,
                "aspect_std": s.aspect_std,
                "sample_count": s.sample_count,
            }
            for name, s in sorted(table.entries.items())
        },
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_stats(path: str | Path) -> StatsTable:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    entries = {
        name: CategoryStats(
            category=name,
            width_mean=rec["width_mean"],
            width_std=rec["width_std"],
            aspect_mean=rec["aspect_mean"],
            aspect_std=rec["aspect_std"],
            sample_count=rec["sample_count"],
        )
        for name, rec in doc.get("categories", {}).items()
    }
    return StatsTable(
        entries=entries,
        source=doc.get("source", ""),
        rejected_records=doc.get("rejected_records", 0),
    )
