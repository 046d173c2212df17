"""
Geometry Service - bounding-box primitives and overlap computation.

Corner form (x1, y1, x2, y2) is canonical everywhere in the toolkit.
``from_xywh`` builds boxes from a top-left corner plus width/height (the
synthetic generator places people that way); ``to_xywh`` is its inverse for
callers exporting to width/height annotation formats.
"""

from dataclasses import dataclass
from typing import Iterable, Sequence, Tuple
import math
import logging

import numpy as np

from app.back.exceptions import InvalidBoxError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, slots=True)
class BBox:
    """Axis-aligned rectangle in image pixels, corner form."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        coords = tuple(float(c) for c in (self.x1, self.y1, self.x2, self.y2))
        for name, value in zip(("x1", "y1", "x2", "y2"), coords):
            object.__setattr__(self, name, value)
        if not all(math.isfinite(c) for c in coords):
            raise InvalidBoxError(f"non-finite box coordinates: {coords}")
        if self.x2 < self.x1 or self.y2 < self.y1:
            raise InvalidBoxError(f"negative box extent: {coords}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def center(self) -> Tuple[float, float]:
        return ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)

    def shift(self, dx: float, dy: float) -> "BBox":
        """Returns the box translated by (dx, dy)."""
        return BBox(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)

    def as_list(self) -> list:
        return [self.x1, self.y1, self.x2, self.y2]

    def inside(self, width: float, height: float) -> bool:
        """Whether the box lies within [0, width] x [0, height]."""
        return self.x1 >= 0 and self.y1 >= 0 and self.x2 <= width and self.y2 <= height


def from_xywh(x: float, y: float, w: float, h: float) -> BBox:
    """Builds a corner-form box from top-left corner plus width/height."""
    return BBox(x, y, x + w, y + h)


def to_xywh(box: BBox) -> Tuple[float, float, float, float]:
    """Converts a corner-form box to (x, y, width, height)."""
    return (box.x1, box.y1, box.width, box.height)


def area(box: BBox) -> float:
    """
    Area of a box.

    Args:
        box (BBox): A valid box.

    Returns:
        float: (x2 - x1) * (y2 - y1), never negative.
    """
    return (box.x2 - box.x1) * (box.y2 - box.y1)


def iou(a: BBox, b: BBox) -> float:
    """
    Intersection over union of two boxes.

    Two degenerate boxes (union area 0) have IoU 0, so the function is total.

    Args:
        a (BBox): First box.
        b (BBox): Second box.

    Returns:
        float: Overlap ratio in [0, 1].
    """
    iw = max(0.0, min(a.x2, b.x2) - max(a.x1, b.x1))
    ih = max(0.0, min(a.y2, b.y2) - max(a.y1, b.y1))
    inter = iw * ih
    union = area(a) + area(b) - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def boxes_to_array(boxes: Iterable[BBox]) -> np.ndarray:
    """Stacks boxes into an (n, 4) float64 array."""
    rows = [box.as_list() for box in boxes]
    if not rows:
        return np.zeros((0, 4), dtype=np.float64)
    return np.asarray(rows, dtype=np.float64)


def array_areas(arr: np.ndarray) -> np.ndarray:
    """Row-wise areas of an (n, 4) corner-form array."""
    return (arr[:, 2] - arr[:, 0]) * (arr[:, 3] - arr[:, 1])


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """
    Pairwise IoU between two (n, 4) and (k, 4) corner-form arrays.

    Performs the same floating-point operations, in the same order, as
    :func:`iou`, so both agree bit for bit.

    Returns:
        np.ndarray: (n, k) matrix of IoU values.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    iw = np.maximum(
        0.0, np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    )
    ih = np.maximum(
        0.0, np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    )
    inter = iw * ih
    union = array_areas(a)[:, None] + array_areas(b)[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0.0)
    return out


def iou_one_to_many(box: np.ndarray, others: np.ndarray) -> np.ndarray:
    """IoU of a single (4,) box against every row of an (k, 4) array."""
    return iou_matrix(np.asarray(box).reshape(1, 4), others)[0]


def pairwise_max_iou(boxes: Sequence[BBox]) -> np.ndarray:
    """
    For every box, the maximum IoU with any *other* box in the list.

    An isolated box (no other boxes) gets 0.

    Returns:
        np.ndarray: (n,) array.
    """
    n = len(boxes)
    if n < 2:
        return np.zeros(n, dtype=np.float64)
    mat = iou_matrix(boxes_to_array(boxes), boxes_to_array(boxes))
    np.fill_diagonal(mat, -np.inf)
    return np.maximum(mat.max(axis=1), 0.0)
