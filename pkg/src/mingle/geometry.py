"""Axis-aligned bounding-box arithmetic shared by all pipeline stages."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence, Tuple

from .errors import EmptyGroupError, ValidationError


@dataclass(frozen=True)
class ImageGeometry:
    """Pixel dimensions of an image."""

    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValidationError(
                f"image dimensions must be >= 1, got {self.width}x{self.height}"
            )

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box: (x1, y1) top-left, (x2, y2) bottom-right, in pixels.

    Coordinates are real-valued, finite, non-negative, and the box has
    strictly positive area. Invalid boxes are rejected at construction.
    """

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(c) for c in coords):
            raise ValidationError(f"box coordinates must be finite, got {coords}")
        if min(coords) < 0:
            raise ValidationError(f"box coordinates must be >= 0, got {coords}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValidationError(f"box must have strictly positive area, got {coords}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> Tuple[float, float]:
        return (self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0

    def contains(self, other: "BBox") -> bool:
        return (
            self.x1 <= other.x1
            and self.y1 <= other.y1
            and other.x2 <= self.x2
            and other.y2 <= self.y2
        )

    def as_list(self) -> list:
        return [self.x1, self.y1, self.x2, self.y2]

    @classmethod
    def from_sequence(cls, coords: Sequence[float]) -> "BBox":
        if len(coords) != 4:
            raise ValidationError(f"expected 4 box coordinates, got {len(coords)}")
        return cls(float(coords[0]), float(coords[1]), float(coords[2]), float(coords[3]))


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes; 0.0 when disjoint."""
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def bbox_union(a: BBox, b: BBox) -> BBox:
    """Smallest box containing both inputs."""
    return BBox(
        min(a.x1, b.x1), min(a.y1, b.y1), max(a.x2, b.x2), max(a.y2, b.y2)
    )


def pad_bbox(box: BBox, fraction: float, img: ImageGeometry) -> BBox:
    """Expand each side by ``fraction`` of the box's own dimension, clamped to the image.

    A 10x10 box with fraction 0.1 grows by 1 pixel on every side.
    """
    if fraction < 0:
        raise ValidationError(f"pad fraction must be >= 0, got {fraction}")
    dx = fraction * box.width
    dy = fraction * box.height
    return BBox(
        max(0.0, box.x1 - dx),
        max(0.0, box.y1 - dy),
        min(float(img.width), box.x2 + dx),
        min(float(img.height), box.y2 + dy),
    )


def center_distance(a: BBox, b: BBox, img: ImageGeometry) -> float:
    """Euclidean distance between box centers, normalized by the image diagonal.

    Lies in [0, 1] for boxes inside the image.
    """
    ax, ay = a.center
    bx, by = b.center
    return math.hypot(ax - bx, ay - by) / img.diagonal


def enclosing_bbox(boxes: Iterable[BBox]) -> BBox:
    """Coordinate-wise min/max over all member boxes."""
    boxes = list(boxes)
    if not boxes:
        raise EmptyGroupError("cannot compute the enclosing box of zero boxes")
    return BBox(
        min(b.x1 for b in boxes),
        min(b.y1 for b in boxes),
        max(b.x2 for b in boxes),
        max(b.y2 for b in boxes),
    )


def pixel_bounds(box: BBox, img: ImageGeometry) -> Tuple[int, int, int, int]:
    """Integer pixel window covering the box, rounded outward and clamped.

    Mins are floored and maxes are ceiled so the window never truncates the
    box; the result is (x0, y0, x1, y1) with exclusive maxes, suitable for
    array slicing. The window may be empty only for boxes outside the image.
    """
    x0 = max(0, math.floor(box.x1))
    y0 = max(0, math.floor(box.y1))
    x1 = min(img.width, math.ceil(box.x2))
    y1 = min(img.height, math.ceil(box.y2))
    return x0, y0, x1, y1
