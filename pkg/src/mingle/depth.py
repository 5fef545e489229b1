"""Depth-map loading and per-person median depth cues."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (
    DimensionMismatchError,
    EmptyRegionError,
    MissingFileError,
    UnsupportedFormatError,
    ValidationError,
)
from .geometry import BBox, ImageGeometry, pixel_bounds


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Single-channel 8-bit depth image, one value in [0, 255] per pixel."""

    values: np.ndarray  # uint8, shape (height, width)

    def __post_init__(self):
        if self.values.ndim != 2:
            raise UnsupportedFormatError(
                f"depth map must be single-channel, got array shape {self.values.shape}"
            )
        if self.values.dtype != np.uint8:
            raise UnsupportedFormatError(
                f"depth map must be 8-bit, got dtype {self.values.dtype}"
            )

    @property
    def geometry(self) -> ImageGeometry:
        h, w = self.values.shape
        return ImageGeometry(width=w, height=h)


@dataclass(frozen=True)
class DepthCue:
    """Median depths of two person boxes plus their absolute difference."""

    z_a: int
    z_b: int
    abs_diff: int

    def __post_init__(self):
        for name, value in (("z_a", self.z_a), ("z_b", self.z_b)):
            if not 0 <= value <= 255:
                raise ValidationError(f"{name} must be in [0, 255], got {value}")
        if self.abs_diff != abs(self.z_a - self.z_b):
            raise ValidationError(
                f"abs_diff {self.abs_diff} != |{self.z_a} - {self.z_b}|"
            )


def load_depth_map(path: Union[str, Path], expected: ImageGeometry) -> DepthMap:
    """Read an 8-bit single-channel depth image (PNG or PGM) and verify its size."""
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"depth map not found: {path}")
    try:
        with Image.open(path) as im:
            if im.mode != "L":
                raise UnsupportedFormatError(
                    f"depth map must be 8-bit single-channel, got mode {im.mode!r}: {path}"
                )
            values = np.asarray(im, dtype=np.uint8)
    except UnidentifiedImageError as exc:
        raise UnsupportedFormatError(f"unreadable depth map {path}: {exc}") from exc
    h, w = values.shape
    if (w, h) != (expected.width, expected.height):
        raise DimensionMismatchError(
            f"depth map {path} is {w}x{h}, expected {expected.width}x{expected.height}"
        )
    return DepthMap(values)


def median_depth(depth: DepthMap, box: BBox) -> int:
    """Lower median of all depth pixels inside the box.

    The pixel window is rounded outward (see ``pixel_bounds``); the lower
    median is the element at index (n - 1) // 2 of the sorted values, so the
    result is always an attained pixel value.
    """
    x0, y0, x1, y1 = pixel_bounds(box, depth.geometry)
    region = depth.values[y0:y1, x0:x1]
    if region.size == 0:
        raise EmptyRegionError(
            f"box {box.as_list()} covers zero depth pixels in a "
            f"{depth.geometry.width}x{depth.geometry.height} map"
        )
    flat = region.ravel()
    k = (flat.size - 1) // 2
    return int(np.partition(flat, k)[k])


def depth_cue(depth: DepthMap, a: BBox, b: BBox) -> DepthCue:
    """Median depths of two boxes and their absolute difference."""
    z_a = median_depth(depth, a)
    z_b = median_depth(depth, b)
    return DepthCue(z_a=z_a, z_b=z_b, abs_diff=abs(z_a - z_b))
