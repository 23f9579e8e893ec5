"""Normalized bounding-box arithmetic shared by every other module.

All boxes are corner-form (x_min, y_min, x_max, y_max) fractions of the
canvas, so a full-canvas box is (0, 0, 1, 1). Pixel-space and center-form
boxes are converted at I/O boundaries only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence


@dataclass(frozen=True)
class BBox:
    """Axis-aligned rectangle in normalized canvas coordinates.

    Coordinates may lie outside [0, 1] for intermediate boxes (for example
    a box shifted past the border before clamping); zero- or negative-area
    boxes are rejected at construction.
    """

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(
                f"degenerate box: ({self.x_min}, {self.y_min}, {self.x_max}, {self.y_max})"
            )

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x_min + self.x_max) / 2, (self.y_min + self.y_max) / 2)

    @property
    def aspect(self) -> float:
        """Height/width ratio."""
        return self.height / self.width

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    @staticmethod
    def from_center(cx: float, cy: float, width: float, height: float) -> "BBox":
        return BBox(cx - width / 2, cy - height / 2, cx + width / 2, cy + height / 2)

    def recenter(self, cx: float, cy: float) -> "BBox":
        """Same extent, moved so its center sits at (cx, cy)."""
        return BBox.from_center(cx, cy, self.width, self.height)

    def inside_canvas(self, tol: float = 1e-9) -> bool:
        return (
            self.x_min >= -tol
            and self.y_min >= -tol
            and self.x_max <= 1 + tol
            and self.y_max <= 1 + tol
        )


def intersection_area(a: BBox, b: BBox) -> float:
    """Area of the overlap rectangle, 0.0 when disjoint."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0 or iy <= 0:
        return 0.0
    return ix * iy


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes, in [0, 1]."""
    inter = intersection_area(a, b)
    union = a.area + b.area - inter
    return inter / union


def overlap_ratio(target: BBox, others: Iterable[BBox]) -> float:
    """Sum of the target's pairwise intersection areas over its own area.

    The sum may exceed 1 when the other boxes overlap each other on top of
    the target; the value is monotone in the set of others, which is all the
    layout adjustment needs for ranking candidate positions.
    """
    total = sum(intersection_area(target, other) for other in others)
    return total / target.area


def clamp_to_canvas(b: BBox) -> BBox:
    """Clip a box into the unit canvas.

    A box that would be collapsed by plain coordinate clipping is shifted
    inward instead, preserving its extent; extents wider/taller than the
    canvas degrade to the full canvas span on that axis.
    """
    def clamp_axis(lo: float, hi: float) -> tuple[float, float]:
        extent = hi - lo
        if extent >= 1.0:
            return 0.0, 1.0
        lo = min(max(lo, 0.0), 1.0 - extent)
        return lo, lo + extent

    x_min, x_max = clamp_axis(b.x_min, b.x_max)
    y_min, y_max = clamp_axis(b.y_min, b.y_max)
    return BBox(x_min, y_min, x_max, y_max)


def corner_to_center(b: BBox) -> tuple[float, float, float, float]:
    """(cx, cy, w, h) form used by YOLO-style emitters."""
    cx, cy = b.center
    return (cx, cy, b.width, b.height)


def center_to_corner(cx: float, cy: float, w: float, h: float) -> BBox:
    return BBox.from_center(cx, cy, w, h)


def mean_overlap(boxes: Sequence[BBox]) -> float:
    """Mean overlap_ratio of each box against all the others."""
    if not boxes:
        return 0.0
    ratios = [
        overlap_ratio(box, [o for j, o in enumerate(boxes) if j != i])
        for i, box in enumerate(boxes)
    ]
    return sum(ratios) / len(ratios)
