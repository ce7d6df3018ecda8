"""Axis-aligned box arithmetic shared by every other module.

Coordinates are continuous pixels: x grows right, y grows down. Geometric
area is (x_max - x_min) * (y_max - y_min); half-open pixel semantics only
apply at raster I/O, never in this module. Degenerate (zero-area) boxes
are legal values; their IoU against anything is 0.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle in pixel coordinates."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        if not (self.x_min <= self.x_max and self.y_min <= self.y_max):
            raise ValueError(
                f"invalid box extents ({self.x_min}, {self.y_min}, "
                f"{self.x_max}, {self.y_max})"
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
        return (self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def contains_box(self, other: "Box") -> bool:
        """True when ``other`` lies entirely inside this box."""
        return (
            other.x_min >= self.x_min
            and other.y_min >= self.y_min
            and other.x_max <= self.x_max
            and other.y_max <= self.y_max
        )


@dataclass(frozen=True)
class Circle:
    """Circular annotation: center and radius in pixels."""

    cx: float
    cy: float
    r: float

    def __post_init__(self) -> None:
        if not self.r > 0:
            raise ValueError(f"circle radius must be positive, got {self.r}")


@dataclass(frozen=True)
class Size:
    """Integer raster dimensions."""

    width: int
    height: int

    def __post_init__(self) -> None:
        for name in ("width", "height"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ValueError(f"{name} must be an integer >= 1, got {value!r}")

    def as_box(self) -> Box:
        return Box(0.0, 0.0, float(self.width), float(self.height))


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two boxes; 0 when disjoint or degenerate."""
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return inter / union


def circle_to_box(c: Circle) -> Box:
    """Bounding box of a circle: width = height = 2r, unclipped."""
    return Box(c.cx - c.r, c.cy - c.r, c.cx + c.r, c.cy + c.r)


def intersect_box(a: Box, b: Box) -> Box | None:
    """Intersection of two boxes, or None when it has zero area."""
    x_min = max(a.x_min, b.x_min)
    y_min = max(a.y_min, b.y_min)
    x_max = min(a.x_max, b.x_max)
    y_max = min(a.y_max, b.y_max)
    if x_max - x_min <= 0 or y_max - y_min <= 0:
        return None
    return Box(x_min, y_min, x_max, y_max)


def clip_box(b: Box, bounds: Size) -> Box | None:
    """Clip a box to raster bounds; None when nothing with area remains."""
    return intersect_box(b, bounds.as_box())


def translate_box(b: Box, dx: float, dy: float) -> Box:
    """Shift all four coordinates by (dx, dy)."""
    return Box(b.x_min + dx, b.y_min + dy, b.x_max + dx, b.y_max + dy)


def scale_box(b: Box, factor: float) -> Box:
    """Multiply all coordinates by a positive factor."""
    if not factor > 0:
        raise ValueError(f"scale factor must be positive, got {factor}")
    return Box(b.x_min * factor, b.y_min * factor, b.x_max * factor, b.y_max * factor)
