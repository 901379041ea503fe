"""Bounding boxes and the box-deforming actions of the zoom and refinement stages.

Boxes live in continuous image coordinates: origin top-left, x to the right,
y downward. A box is stored as its top-left corner plus its size, so that a
translation never touches the width or height.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum, IntEnum

ZOOM_SCALE = 0.75
ASPECT_SCALE = 0.5625  # ZOOM_SCALE**2: same area reduction as a corner zoom
REFINE_STEP = 0.1
MIN_BOX_SIZE = 3.0


class ZoomAction(IntEnum):
    TOP_LEFT = 0
    TOP_RIGHT = 1
    BOTTOM_LEFT = 2
    BOTTOM_RIGHT = 3
    CENTER = 4
    COMPRESS_WIDTH = 5
    COMPRESS_HEIGHT = 6
    TERMINAL = 7


class RefineAction(IntEnum):
    MOVE_LEFT = 0
    MOVE_RIGHT = 1
    MOVE_UP = 2
    MOVE_DOWN = 3
    STAY = 4


REFINE_ACTIONS: tuple[RefineAction, ...] = tuple(RefineAction)
MOVE_ACTIONS: tuple[RefineAction, ...] = REFINE_ACTIONS[:4]


class ModelVariant(Enum):
    """Which zoom actions exist and whether a refinement stage follows each zoom."""

    ONE_STAGE = "1-stage"
    ONE_STAGE_AR = "1-stage-ar"
    TWO_STAGE = "2-stage"
    TWO_STAGE_AR = "2-stage-ar"

    @property
    def aspect_ratio(self) -> bool:
        return self in (ModelVariant.ONE_STAGE_AR, ModelVariant.TWO_STAGE_AR)

    @property
    def two_stage(self) -> bool:
        return self in (ModelVariant.TWO_STAGE, ModelVariant.TWO_STAGE_AR)

    @property
    def zoom_actions(self) -> tuple[ZoomAction, ...]:
        """Zoom actions in network-output order; Terminal is always last."""
        base = (
            ZoomAction.TOP_LEFT,
            ZoomAction.TOP_RIGHT,
            ZoomAction.BOTTOM_LEFT,
            ZoomAction.BOTTOM_RIGHT,
            ZoomAction.CENTER,
        )
        if self.aspect_ratio:
            base += (ZoomAction.COMPRESS_WIDTH, ZoomAction.COMPRESS_HEIGHT)
        return base + (ZoomAction.TERMINAL,)

    @classmethod
    def parse(cls, name: str) -> "ModelVariant":
        try:
            return cls(name)
        except ValueError:
            choices = ", ".join(v.value for v in cls)
            raise ValueError(f"unknown model variant {name!r} (choose from {choices})") from None


@dataclass(frozen=True)
class ImageSize:
    width: float
    height: float

    def __post_init__(self) -> None:
        if not (self.width > 0 and self.height > 0):
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)


class BoundingBox:
    """Axis-aligned box given by corners ``(x0, y0)`` and ``(x1, y1)``.

    Internally the box keeps ``x0, y0, width, height``; ``x1`` and ``y1`` are
    derived. Instances are immutable and hashable.
    """

    __slots__ = ("x0", "y0", "width", "height")

    def __init__(self, x0: float, y0: float, x1: float, y1: float) -> None:
        self._set(float(x0), float(y0), float(x1) - float(x0), float(y1) - float(y0))

    def _set(self, x0: float, y0: float, width: float, height: float) -> None:
        if not (width > 0 and height > 0) or not all(map(math.isfinite, (x0, y0, width, height))):
            raise ValueError(
                f"invalid box: x0={x0}, y0={y0}, width={width}, height={height}"
            )
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "y0", y0)
        object.__setattr__(self, "width", width)
        object.__setattr__(self, "height", height)

    @classmethod
    def from_origin(cls, x0: float, y0: float, width: float, height: float) -> "BoundingBox":
        box = cls.__new__(cls)
        box._set(float(x0), float(y0), float(width), float(height))
        return box

    @classmethod
    def full(cls, image: ImageSize) -> "BoundingBox":
        return cls.from_origin(0.0, 0.0, image.width, image.height)

    @classmethod
    def parse(cls, text: str) -> "BoundingBox":
        """Parse the ``"x0,y0,x1,y1"`` serialization."""
        parts = text.split(",")
        if len(parts) != 4:
            raise ValueError(f"expected 'x0,y0,x1,y1', got {text!r}")
        try:
            x0, y0, x1, y1 = (float(p) for p in parts)
        except ValueError:
            raise ValueError(f"non-numeric box coordinates in {text!r}") from None
        return cls(x0, y0, x1, y1)

    def __setattr__(self, name, value):
        raise AttributeError("BoundingBox is immutable")

    def __reduce__(self):
        return (BoundingBox.from_origin, (self.x0, self.y0, self.width, self.height))

    @property
    def x1(self) -> float:
        return self.x0 + self.width

    @property
    def y1(self) -> float:
        return self.y0 + self.height

    @property
    def corners(self) -> tuple[float, float, float, float]:
        return (self.x0, self.y0, self.x1, self.y1)

    def __iter__(self):
        return iter(self.corners)

    def __eq__(self, other) -> bool:
        if not isinstance(other, BoundingBox):
            return NotImplemented
        return (self.x0, self.y0, self.width, self.height) == (
            other.x0,
            other.y0,
            other.width,
            other.height,
        )

    def __hash__(self) -> int:
        return hash((self.x0, self.y0, self.width, self.height))

    def __repr__(self) -> str:
        return "BoundingBox({:g}, {:g}, {:g}, {:g})".format(*self.corners)

    def __str__(self) -> str:
        return ",".join(repr(c) for c in self.corners)

    def serialize(self) -> str:
        return str(self)

    def inside(self, image: ImageSize) -> bool:
        return self.x0 >= 0 and self.y0 >= 0 and self.x1 <= image.width and self.y1 <= image.height

    def contains(self, other: "BoundingBox") -> bool:
        return (
            other.x0 >= self.x0
            and other.y0 >= self.y0
            and other.x1 <= self.x1
            and other.y1 <= self.y1
        )

    def below_floor(self, min_size: float = MIN_BOX_SIZE) -> bool:
        return self.width < min_size or self.height < min_size


def area(box: BoundingBox) -> float:
    return box.width * box.height


def _overlap(a0: float, alen: float, b0: float, blen: float) -> float:
    a1 = a0 + alen
    b1 = b0 + blen
    # nested spans reuse the stored length so that intersection(a, a) == area(a)
    if a0 >= b0 and a1 <= b1:
        return alen
    if b0 >= a0 and b1 <= a1:
        return blen
    return min(a1, b1) - max(a0, b0)


def intersection(a: BoundingBox, b: BoundingBox) -> float:
    w = _overlap(a.x0, a.width, b.x0, b.width)
    h = _overlap(a.y0, a.height, b.y0, b.height)
    if w <= 0 or h <= 0:
        return 0.0
    return w * h


def center(box: BoundingBox) -> tuple[float, float]:
    return (box.x0 + 0.5 * box.width, box.y0 + 0.5 * box.height)


def _place(start: float, size: float, lo: float, hi: float) -> float:
    """Largest start <= ``start`` with ``start + size <= hi`` in floating point, but >= ``lo``."""
    if start >= lo and start + size <= hi:
        return start
    start = max(start, lo)
    while start + size > hi and start > lo:
        start = math.nextafter(start, -math.inf)
    return start


def _check_box(box: BoundingBox, image: ImageSize) -> None:
    if not isinstance(box, BoundingBox):
        raise TypeError(f"expected BoundingBox, got {type(box).__name__}")
    if not box.inside(image):
        raise ValueError(f"box {box!r} lies outside the {image.width}x{image.height} image")


# action -> (width scale, height scale, x anchor, y anchor); anchors 0 = left/top, 1 = right/bottom
_ZOOM_TABLE = {
    ZoomAction.TOP_LEFT: (ZOOM_SCALE, ZOOM_SCALE, 0.0, 0.0),
    ZoomAction.TOP_RIGHT: (ZOOM_SCALE, ZOOM_SCALE, 1.0, 0.0),
    ZoomAction.BOTTOM_LEFT: (ZOOM_SCALE, ZOOM_SCALE, 0.0, 1.0),
    ZoomAction.BOTTOM_RIGHT: (ZOOM_SCALE, ZOOM_SCALE, 1.0, 1.0),
    ZoomAction.CENTER: (ZOOM_SCALE, ZOOM_SCALE, 0.5, 0.5),
    ZoomAction.COMPRESS_WIDTH: (ASPECT_SCALE, 1.0, 0.5, 0.5),
    ZoomAction.COMPRESS_HEIGHT: (1.0, ASPECT_SCALE, 0.5, 0.5),
}


def apply_zoom(box: BoundingBox, action: ZoomAction, image: ImageSize) -> BoundingBox:
    """Shrink ``box`` onto one of its subregions.

    Corner and center zooms keep 75% of width and height; the aspect zooms keep
    56.25% of one side with the center fixed. The result always lies inside
    ``box``. May produce a box below :data:`MIN_BOX_SIZE`; callers decide what
    to do with it.
    """
    _check_box(box, image)
    if type(action) is not ZoomAction:
        action = ZoomAction(action)
    if action is ZoomAction.TERMINAL:
        raise ValueError("the terminal action does not deform the box")

    sx, sy, ax, ay = _ZOOM_TABLE[action]
    w, h = box.width, box.height
    nw, nh = sx * w, sy * h
    x = box.x0 + ax * (w - nw)
    y = box.y0 + ay * (h - nh)
    # keep the child inside the parent under rounding
    x = _place(x, nw, box.x0, box.x0 + w)
    y = _place(y, nh, box.y0, box.y0 + h)
    return BoundingBox.from_origin(x, y, nw, nh)


# action -> (x direction, y direction) in units of REFINE_STEP times the box side
_REFINE_TABLE = {
    RefineAction.MOVE_LEFT: (-1.0, 0.0),
    RefineAction.MOVE_RIGHT: (1.0, 0.0),
    RefineAction.MOVE_UP: (0.0, -1.0),
    RefineAction.MOVE_DOWN: (0.0, 1.0),
    RefineAction.STAY: (0.0, 0.0),
}


def refine_offset(box: BoundingBox, action: RefineAction) -> tuple[float, float]:
    """Unclamped translation requested by a refinement action."""
    if type(action) is not RefineAction:
        action = RefineAction(action)
    ux, uy = _REFINE_TABLE[action]
    return (ux * REFINE_STEP * box.width, uy * REFINE_STEP * box.height)


def apply_refine(box: BoundingBox, action: RefineAction, image: ImageSize) -> BoundingBox:
    """Translate ``box`` by 10% of its width or height, sliding to the image border if needed."""
    _check_box(box, image)
    dx, dy = refine_offset(box, action)
    if dx == 0.0 and dy == 0.0:
        return box
    x = min(box.x0 + dx, image.width - box.width)
    y = min(box.y0 + dy, image.height - box.height)
    x = _place(x, box.width, 0.0, image.width)
    y = _place(y, box.height, 0.0, image.height)
    return BoundingBox.from_origin(x, y, box.width, box.height)
